//! Batch and instance normalization.

use super::{Mode, Needs, OpCache, StatUpdate, NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `(n, c, plane)` view of a rank-2 or rank-4 tensor.
fn dims<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize) {
    let (n, c) = (x.dim(0), x.dim(1));
    (n, c, x.len() / (n * c))
}

#[allow(clippy::type_complexity)]
pub fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> (Tensor<T>, OpCache<T>, Option<StatUpdate<T>>) {
    let (n, c, plane) = dims(x);
    let eps = T::lit(NORM_EPS);
    let count = n * plane;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let inv_count = T::one() / T::lit(count as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    s = s + x.data()[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().copied().sum();
                }
                let m = s * inv_count;
                let mut q = T::zero();
                for i in 0..n {
                    for &v in &x.data()[(i * c + ch) * plane..(i * c + ch + 1) * plane] {
                        q = q + (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = q * inv_count;
            }
            (mean, var)
        }
        Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let (a, b) = (scale.data()[ch] * inv_std[ch], shift.data()[ch]);
            let off = (i * c + ch) * plane;
            for (o, &v) in y[off..off + plane].iter_mut().zip(&x.data()[off..off + plane]) {
                *o = (v - mean[ch]) * a + b;
            }
        }
    }
    let stats = (mode == Mode::Train).then(|| {
        let correction = if count > 1 {
            T::lit(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        StatUpdate {
            mean: mean.clone(),
            var: var.iter().map(|&v| v * correction).collect(),
        }
    });
    (
        Tensor::from_raw(x.shape().to_vec(), y),
        OpCache::Norm { mean, inv_std },
        stats,
    )
}

#[allow(clippy::type_complexity)]
pub fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    running_var: &Tensor<T>,
    cache: &OpCache<T>,
    g: &Tensor<T>,
    mode: Mode,
    needs: Needs,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let OpCache::Norm { mean, inv_std } = cache else {
        return Err(Error::MissingCache("batch_norm needs its statistics".into()));
    };
    let (n, c, plane) = dims(x);
    let count = T::lit((n * plane) as f64);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            for (&v, &gv) in x.data()[off..off + plane].iter().zip(&g.data()[off..off + plane]) {
                sum_g[ch] = sum_g[ch] + gv;
                sum_gx[ch] = sum_gx[ch] + gv * (v - mean[ch]) * inv_std[ch];
            }
        }
    }
    let dx = needs.inputs.then(|| {
        let mut dx = vec![T::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let gamma = scale.data()[ch];
                let rows = dx[off..off + plane]
                    .iter_mut()
                    .zip(&x.data()[off..off + plane])
                    .zip(&g.data()[off..off + plane]);
                match mode {
                    Mode::Train => {
                        let k = gamma * inv_std[ch] / count;
                        for ((d, &v), &gv) in rows {
                            let xhat = (v - mean[ch]) * inv_std[ch];
                            *d = k * (count * gv - sum_g[ch] - xhat * sum_gx[ch]);
                        }
                    }
                    Mode::Eval => {
                        let k = gamma / (running_var.data()[ch] + T::lit(NORM_EPS)).sqrt();
                        for ((d, _), &gv) in rows {
                            *d = k * gv;
                        }
                    }
                }
            }
        }
        Tensor::from_raw(x.shape().to_vec(), dx)
    });
    let (dgamma, dbeta) = if needs.params {
        (
            Some(Tensor::from_raw(vec![c], sum_gx)),
            Some(Tensor::from_raw(vec![c], sum_g)),
        )
    } else {
        (None, None)
    };
    Ok((dx, dgamma, dbeta))
}

pub fn instance_norm_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, OpCache<T>) {
    let (n, c, plane) = dims(x);
    let inv_plane = T::one() / T::lit(plane as f64);
    let eps = T::lit(NORM_EPS);
    let mut mean = Vec::with_capacity(n * c);
    let mut inv_std = Vec::with_capacity(n * c);
    let mut y = vec![T::zero(); x.len()];
    for (src, dst) in x.data().chunks(plane).zip(y.chunks_mut(plane)) {
        let m = src.iter().copied().sum::<T>() * inv_plane;
        let var = src.iter().map(|&v| (v - m) * (v - m)).sum::<T>() * inv_plane;
        let is = T::one() / (var + eps).sqrt();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - m) * is;
        }
        mean.push(m);
        inv_std.push(is);
    }
    (Tensor::from_raw(x.shape().to_vec(), y), OpCache::Norm { mean, inv_std })
}

pub fn instance_norm_backward<T: Scalar>(x: &Tensor<T>, cache: &OpCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let OpCache::Norm { mean, inv_std } = cache else {
        return Err(Error::MissingCache("instance_norm needs its statistics".into()));
    };
    let (_, _, plane) = dims(x);
    let count = T::lit(plane as f64);
    let mut dx = vec![T::zero(); x.len()];
    for (p, ((src, gs), dst)) in x
        .data()
        .chunks(plane)
        .zip(g.data().chunks(plane))
        .zip(dx.chunks_mut(plane))
        .enumerate()
    {
        let (m, is) = (mean[p], inv_std[p]);
        let sum_g: T = gs.iter().copied().sum();
        let sum_gx: T = src.iter().zip(gs).map(|(&v, &gv)| gv * (v - m) * is).sum();
        let k = is / count;
        for ((d, &v), &gv) in dst.iter_mut().zip(src).zip(gs) {
            *d = k * (count * gv - sum_g - (v - m) * is * sum_gx);
        }
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), dx))
}
