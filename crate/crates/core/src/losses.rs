//! Classification, reconstruction and adversarial losses with analytic gradients.
//!
//! Every loss returns its value together with the gradient with respect to
//! the probabilities or images it was computed from; callers feed those
//! gradients into [`ComputationGraph::backward`](crate::graph::ComputationGraph::backward).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;
/// Allowed deviation of a probability row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-5;

/// Weights of the combined objective and stabilizers of the SSIM term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Reconstruction weight `λ1`.
    pub lambda1: f64,
    /// Adversarial weight `λ2`.
    pub lambda2: f64,
    /// Discrimination vs classification balance `λ` inside the adversarial loss.
    pub lambda: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 1.0,
            lambda: 0.5,
            eps1: 1e-6,
            eps2: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(Error::Config("SSIM stabilizers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { gamma: 1.5, alpha: 0.25 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "focal gamma {} must be >= 0 and alpha {} in (0, 1)",
                self.gamma, self.alpha
            )));
        }
        Ok(())
    }
}

/// A batch-mean loss, its gradient and the per-sample terms.
#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Tensor<T>,
    pub per_sample: Vec<T>,
}

fn glog<T: Scalar>(p: T) -> T {
    p.max(T::lit(LOG_FLOOR)).ln()
}

/// Derivative of the guarded log.
fn dglog<T: Scalar>(p: T) -> T {
    if p > T::lit(LOG_FLOOR) {
        T::one() / p
    } else {
        T::zero()
    }
}

fn check_probs<T: Scalar>(op: &str, p: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    if p.rank() != 2 || p.dim(0) != labels.len() {
        return Err(Error::shape(
            op,
            format!("probabilities {:?} vs {} labels", p.shape(), labels.len()),
        ));
    }
    let k = p.dim(1);
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("{op}: label {bad} outside [0, {k})")));
    }
    for (i, row) in p.data().chunks(k).enumerate() {
        let s: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&v| v < T::zero()) {
            return Err(Error::Input(format!("{op}: row {i} is not a probability vector (sum {s})")));
        }
    }
    Ok(k)
}

/// Recovers class indices from one-hot rows.
pub fn one_hot_labels<T: Scalar>(y: &Tensor<T>) -> Result<Vec<usize>> {
    if y.rank() != 2 {
        return Err(Error::shape("one_hot", format!("{:?}", y.shape())));
    }
    y.data()
        .chunks(y.dim(1))
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = (0..row.len()).filter(|&j| row[j] == T::one()).collect();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones.len() == 1 && zeros == row.len() - 1 {
                Ok(ones[0])
            } else {
                Err(Error::Input(format!("label row {i} is not one-hot")))
            }
        })
        .collect()
}

/// Mean over the batch of `-log P[y]`.
pub fn cross_entropy_loss<T: Scalar>(p: &Tensor<T>, labels: &[usize]) -> Result<LossValue<T>> {
    let k = check_probs("cross_entropy", p, labels)?;
    let n = T::lit(labels.len() as f64);
    let mut grad = Tensor::zeros(p.shape());
    let mut per_sample = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let pt = p.data()[i * k + y];
        per_sample.push(-glog(pt));
        grad.data_mut()[i * k + y] = -dglog(pt) / n;
    }
    let value = per_sample.iter().copied().sum::<T>() / n;
    Ok(LossValue {
        value,
        grad,
        per_sample,
    })
}

/// Class-head loss of the discriminator; same contract as [`cross_entropy_loss`].
pub fn adversarial_classification_loss<T: Scalar>(p: &Tensor<T>, labels: &[usize]) -> Result<LossValue<T>> {
    cross_entropy_loss(p, labels)
}

/// Mean over the batch of `-α (1 - p_t)^γ log p_t` with `p_t = P[y]`.
pub fn focal_loss<T: Scalar>(p: &Tensor<T>, labels: &[usize], params: FocalParams) -> Result<LossValue<T>> {
    params.validate()?;
    let k = check_probs("focal", p, labels)?;
    let n = T::lit(labels.len() as f64);
    let (alpha, gamma) = (T::lit(params.alpha), T::lit(params.gamma));
    let mut grad = Tensor::zeros(p.shape());
    let mut per_sample = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let pt = p.data()[i * k + y];
        let q = (T::one() - pt).max(T::zero());
        let lp = glog(pt);
        let modulator = q.powf(gamma);
        per_sample.push(-alpha * modulator * lp);
        // d/dp of (1-p)^γ is -γ (1-p)^(γ-1); the product with log p vanishes at p = 1.
        let dmod = if gamma == T::zero() || q == T::zero() {
            T::zero()
        } else {
            -gamma * q.powf(gamma - T::one())
        };
        let d = -alpha * (dmod * lp + modulator * dglog(pt));
        grad.data_mut()[i * k + y] = d / n;
    }
    let value = per_sample.iter().copied().sum::<T>() / n;
    Ok(LossValue {
        value,
        grad,
        per_sample,
    })
}

fn check_unit_range<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<()> {
    if let Some(i) = t.data().iter().position(|&v| v < T::zero() || v > T::one()) {
        return Err(Error::Input(format!(
            "{op}: element {i} = {} outside [0, 1]",
            t.data()[i]
        )));
    }
    Ok(())
}

/// Global structural similarity of two equally sized images from whole-image
/// means, variances and covariance.
pub fn ssim<T: Scalar>(x: &[T], y: &[T], eps1: f64, eps2: f64) -> T {
    ssim_with_grads(x, y, eps1, eps2, false).0
}

#[allow(clippy::type_complexity)]
fn ssim_with_grads<T: Scalar>(x: &[T], y: &[T], eps1: f64, eps2: f64, grads: bool) -> (T, Vec<T>, Vec<T>) {
    let n = T::lit(x.len() as f64);
    let two = T::lit(2.0);
    let (c1, c2) = (T::lit(eps1), T::lit(eps2));
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut vx, mut vy, mut cxy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx = vx + da * da;
        vy = vy + db * db;
        cxy = cxy + da * db;
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let a = two * mx * my + c1;
    let b = two * cxy + c2;
    let c = mx * mx + my * my + c1;
    let d = vx + vy + c2;
    let s = a * b / (c * d);
    if !grads {
        return (s, Vec::new(), Vec::new());
    }
    let cd = c * d;
    // Derivative with respect to one image `u`, the other being `v`.
    let side = |u: &[T], mu: T, v: &[T], mv: T| -> Vec<T> {
        u.iter()
            .zip(v)
            .map(|(&ui, &vi)| {
                let da = two * mv / n;
                let db = two * (vi - mv) / n;
                let dc = two * mu / n;
                let dd = two * (ui - mu) / n;
                (da * b + a * db) / cd - s * (dc / c + dd / d)
            })
            .collect()
    };
    (s, side(x, mx, y, my), side(y, my, x, mx))
}

#[derive(Clone, Debug)]
pub struct ReconstructionLoss<T> {
    /// Mean over the batch of `(1 - SSIM) / 2`.
    pub value: T,
    pub ssim: Vec<T>,
    pub grad_input: Tensor<T>,
    pub grad_reconstruction: Tensor<T>,
}

pub fn reconstruction_loss<T: Scalar>(
    x: &Tensor<T>,
    xhat: &Tensor<T>,
    eps1: f64,
    eps2: f64,
) -> Result<ReconstructionLoss<T>> {
    if x.shape() != xhat.shape() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("{:?} vs {:?}", x.shape(), xhat.shape()),
        ));
    }
    check_unit_range("reconstruction_loss", x)?;
    check_unit_range("reconstruction_loss", xhat)?;
    let batch = x.dim(0);
    let item = x.item_len();
    let scale = -T::lit(0.5) / T::lit(batch as f64);
    let mut gx = Vec::with_capacity(x.len());
    let mut gy = Vec::with_capacity(x.len());
    let mut values = Vec::with_capacity(batch);
    for (a, b) in x.data().chunks(item).zip(xhat.data().chunks(item)) {
        let (s, dx, dy) = ssim_with_grads(a, b, eps1, eps2, true);
        values.push(s);
        gx.extend(dx.into_iter().map(|v| v * scale));
        gy.extend(dy.into_iter().map(|v| v * scale));
    }
    let value = values.iter().map(|&s| (T::one() - s) / T::lit(2.0)).sum::<T>() / T::lit(batch as f64);
    Ok(ReconstructionLoss {
        value,
        ssim: values,
        grad_input: Tensor::from_raw(x.shape().to_vec(), gx),
        grad_reconstruction: Tensor::from_raw(x.shape().to_vec(), gy),
    })
}

#[derive(Clone, Debug)]
pub struct DiscriminationValue<T> {
    /// `E[log D(X)] + E[log(1 - D(X̂))]`, means over batch and patches.
    pub value: T,
    pub grad_real: Tensor<T>,
    pub grad_fake: Tensor<T>,
}

pub fn adversarial_discrimination_value<T: Scalar>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<DiscriminationValue<T>> {
    check_unit_range("adversarial_discrimination_value", real)?;
    check_unit_range("adversarial_discrimination_value", fake)?;
    let (nr, nf) = (T::lit(real.len() as f64), T::lit(fake.len() as f64));
    let er = real.data().iter().map(|&p| glog(p)).sum::<T>() / nr;
    let ef = fake.data().iter().map(|&p| glog(T::one() - p)).sum::<T>() / nf;
    Ok(DiscriminationValue {
        value: er + ef,
        grad_real: real.map(|p| dglog(p) / nr),
        grad_fake: fake.map(|p| -dglog(T::one() - p) / nf),
    })
}

/// Binary cross-entropy of a patch map against one target per batch item,
/// averaged over every element.
pub fn binary_cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[T]) -> Result<LossValue<T>> {
    check_unit_range("binary_cross_entropy", probs)?;
    if probs.dim(0) != targets.len() {
        return Err(Error::shape(
            "binary_cross_entropy",
            format!("{:?} vs {} targets", probs.shape(), targets.len()),
        ));
    }
    let item = probs.item_len();
    let total = T::lit(probs.len() as f64);
    let mut grad = Vec::with_capacity(probs.len());
    let mut per_sample = Vec::with_capacity(targets.len());
    for (row, &t) in probs.data().chunks(item).zip(targets) {
        let mut s = T::zero();
        for &p in row {
            s = s - (t * glog(p) + (T::one() - t) * glog(T::one() - p));
            grad.push((-t * dglog(p) + (T::one() - t) * dglog(T::one() - p)) / total);
        }
        per_sample.push(s / T::lit(item as f64));
    }
    let value = per_sample.iter().copied().sum::<T>() / T::lit(targets.len() as f64);
    Ok(LossValue {
        value,
        grad: Tensor::from_raw(probs.shape().to_vec(), grad),
        per_sample,
    })
}

/// Generator-side discrimination term `-E[log D(X̂)]`.
pub fn non_saturating_loss<T: Scalar>(fake: &Tensor<T>) -> Result<LossValue<T>> {
    let ones = vec![T::one(); fake.dim(0)];
    binary_cross_entropy(fake, &ones)
}

/// `λ · disc + (1 - λ) · cls`.
pub fn adversarial_loss<T: Scalar>(disc_term: T, cls_term: T, lambda: f64) -> T {
    let l = T::lit(lambda);
    l * disc_term + (T::one() - l) * cls_term
}

/// `L_cls + λ1 · L_rec + λ2 · L_adv`.
pub fn combined_loss<T: Scalar>(cls: T, rec: T, adv: T, lambda1: f64, lambda2: f64) -> T {
    cls + T::lit(lambda1) * rec + T::lit(lambda2) * adv
}
