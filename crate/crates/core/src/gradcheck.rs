//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Backprop, ComputationGraph};
use crate::ops::Mode;
use crate::params::{GroupSet, ParameterStore};
use crate::tensor::Tensor;

/// Floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;
/// Indices checked per tensor when it has more elements than this.
pub const MIN_CHECKED_INDICES: usize = 200;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `max|a - n| / max(max|a|, max|n|, 1e-8)` over checked indices.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<TensorCheck>,
    pub inputs: Vec<TensorCheck>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn from_checks(params: Vec<TensorCheck>, inputs: Vec<TensorCheck>, tol: f64) -> Self {
        let passed = params.iter().chain(&inputs).all(|c| c.max_rel_err <= tol);
        GradCheckReport {
            params,
            inputs,
            tol,
            passed,
        }
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .chain(&self.inputs)
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// Checks above tolerance, worst first.
    pub fn offenders(&self) -> Vec<&TensorCheck> {
        let mut v: Vec<&TensorCheck> = self
            .params
            .iter()
            .chain(&self.inputs)
            .filter(|c| c.max_rel_err > self.tol)
            .collect();
        v.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
        v
    }
}

/// Indices to probe: all when the tensor is small, else a seeded sample.
pub fn probe_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= MIN_CHECKED_INDICES {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, MIN_CHECKED_INDICES).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares analytic and numeric derivatives at `indices`.
pub fn compare(name: &str, analytic: &[f64], numeric: &[(usize, f64)]) -> TensorCheck {
    let mut worst = (0, 0.0, 0.0, -1.0);
    let mut max_diff = 0.0f64;
    let mut scale = REL_ERR_FLOOR;
    for &(i, n) in numeric {
        let a = analytic[i];
        let d = (a - n).abs();
        scale = scale.max(a.abs()).max(n.abs());
        if d > worst.3 {
            worst = (i, a, n, d);
        }
        max_diff = max_diff.max(d);
    }
    TensorCheck {
        name: name.to_string(),
        checked: numeric.len(),
        max_rel_err: max_diff / scale,
        worst_index: worst.0,
        analytic: worst.1,
        numeric: worst.2,
    }
}

/// Central differences of a scalar function of several tensors.
pub fn numeric_grads(
    f: &mut dyn FnMut(&[Tensor<f64>]) -> Result<f64>,
    inputs: &[Tensor<f64>],
    which: usize,
    indices: &[usize],
    h: f64,
) -> Result<Vec<(usize, f64)>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + h;
        let plus = f(&work)?;
        work[which].data_mut()[i] = orig - h;
        let minus = f(&work)?;
        work[which].data_mut()[i] = orig;
        out.push((i, (plus - minus) / (2.0 * h)));
    }
    Ok(out)
}

/// Checks a scalar function `f` against its analytic gradients `grads`
/// (one per input tensor).
pub fn grad_check_fn(
    names: &[&str],
    inputs: &[Tensor<f64>],
    grads: &[Tensor<f64>],
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (k, inp) in inputs.iter().enumerate() {
        let idx = probe_indices(inp.len(), &mut rng);
        let num = numeric_grads(&mut f, inputs, k, &idx, h)?;
        checks.push(compare(names[k], grads[k].data(), &num));
    }
    Ok(GradCheckReport::from_checks(Vec::new(), checks, tol))
}

/// Verifies a graph's backward rules on the objective `L = Σ r ⊙ output`
/// with a seeded random projection `r`. Normalization layers use batch
/// statistics of the fixed input batch; running buffers are never touched.
pub fn grad_check(
    graph: &ComputationGraph,
    store: &mut ParameterStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let acts = graph.forward(store, &refs, Mode::Train)?;
    let proj = Tensor::from_fn(acts.output().shape(), |_| rng.gen_range(-1.0..1.0));
    let objective = |out: &Tensor<f64>| -> f64 { out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum() };

    store.zero_grads(GroupSet::ALL);
    let input_grads = graph.backward(store, &acts, &proj, Backprop::all())?;

    let mut input_checks = Vec::new();
    for (k, inp) in inputs.iter().enumerate() {
        let idx = probe_indices(inp.len(), &mut rng);
        let snapshot = &*store;
        let mut f = |xs: &[Tensor<f64>]| -> Result<f64> {
            let r: Vec<&Tensor<f64>> = xs.iter().collect();
            Ok(objective(graph.forward(snapshot, &r, Mode::Train)?.output()))
        };
        let num = numeric_grads(&mut f, inputs, k, &idx, h)?;
        let analytic = input_grads[k].as_ref().expect("input gradients requested");
        input_checks.push(compare(&format!("{}.input{k}", graph.name()), analytic.data(), &num));
    }

    let mut param_checks = Vec::new();
    let mut ids = graph.param_ids();
    ids.retain(|id| !store.info(*id).is_buffer());
    for id in ids {
        let len = store.value(id).len();
        let idx = probe_indices(len, &mut rng);
        let mut num = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = objective(graph.forward(store, &refs, Mode::Train)?.output());
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = objective(graph.forward(store, &refs, Mode::Train)?.output());
            store.value_mut(id).data_mut()[i] = orig;
            num.push((i, (plus - minus) / (2.0 * h)));
        }
        param_checks.push(compare(&store.info(id).name, store.grad(id).data(), &num));
    }
    Ok(GradCheckReport::from_checks(param_checks, input_checks, tol))
}

/// One named check of [`suite`].
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

/// Finite-difference step used by [`suite`].
pub const SUITE_STEP: f64 = 1e-6;

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = 0.1 + 0.9 * rng.gen::<f64>();
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    })
}

fn unit_interval(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.05..0.95))
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|v| v / s));
    }
    Tensor::new(vec![n, k], data).expect("finite probabilities")
}

fn single_op(
    name: &str,
    spec: crate::ops::OpSpec,
    item_shapes: &[&[usize]],
    batch: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<SuiteEntry> {
    use crate::graph::GraphBuilder;
    use crate::params::OwnerGroup;
    let mut store = ParameterStore::<f64>::new();
    let mut b = GraphBuilder::new(&mut store, name, OwnerGroup::F);
    let ins: Vec<_> = item_shapes.iter().map(|s| b.input(s)).collect();
    let out = b.op("op", spec, &ins)?;
    let graph = b.finish(out)?;
    randomize(&mut store, rng);
    let inputs: Vec<Tensor<f64>> = item_shapes
        .iter()
        .map(|s| {
            let mut shape = vec![batch];
            shape.extend_from_slice(s);
            away_from_zero(rng, &shape)
        })
        .collect();
    Ok(SuiteEntry {
        name: name.to_string(),
        report: grad_check(&graph, &mut store, &inputs, SUITE_STEP, SUITE_TOL, seed)?,
    })
}

/// Relative-error tolerance of [`suite`].
pub const SUITE_TOL: f64 = 1e-4;

fn randomize(store: &mut ParameterStore<f64>, rng: &mut ChaCha8Rng) {
    use crate::ops::ParamRole;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let role = store.info(id).role;
        let shape = store.value(id).shape().to_vec();
        let t = match role {
            ParamRole::RunningVar => Tensor::full(&shape, 1.0),
            ParamRole::RunningMean => Tensor::zeros(&shape),
            ParamRole::NormScale => Tensor::from_fn(&shape, |_| rng.gen_range(0.5..1.5)),
            _ => Tensor::from_fn(&shape, |_| rng.gen_range(-0.5..0.5)),
        };
        store.set_value(id, t).expect("registered shape");
    }
}

fn network(name: &str, graph: &ComputationGraph, store: &mut ParameterStore<f64>, input: Tensor<f64>, seed: u64) -> Result<SuiteEntry> {
    Ok(SuiteEntry {
        name: name.to_string(),
        report: grad_check(graph, store, &[input], SUITE_STEP, SUITE_TOL, seed)?,
    })
}

/// Gradient checks of every engine primitive, small instances of the four
/// networks, and every loss, at 64-bit precision.
pub fn suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    use crate::losses;
    use crate::networks::{build_classifier, build_dnet, build_fnet, build_rnet, DNetConfig, FNetConfig, RNetConfig};
    use crate::ops::{ConvSpec, OpSpec};

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut out = Vec::new();
    let prims: Vec<(&str, OpSpec, Vec<Vec<usize>>)> = vec![
        ("dense", OpSpec::Dense { in_features: 5, out_features: 4, bias: true }, vec![vec![5]]),
        ("dense_nobias", OpSpec::Dense { in_features: 5, out_features: 3, bias: false }, vec![vec![5]]),
        ("conv3x3", OpSpec::Conv2d(ConvSpec::new(2, 3, 3, 1, 1)), vec![vec![2, 5, 5]]),
        ("conv4x4_s2", OpSpec::Conv2d(ConvSpec::k4s2(2, 2)), vec![vec![2, 6, 6]]),
        ("conv7x7_s2_nobias", OpSpec::Conv2d(ConvSpec::new(1, 2, 7, 2, 3).without_bias()), vec![vec![1, 8, 8]]),
        ("conv1x1", OpSpec::Conv2d(ConvSpec::new(3, 2, 1, 1, 0)), vec![vec![3, 3, 3]]),
        ("deconv4x4_s2", OpSpec::Deconv2d(ConvSpec::k4s2(3, 2)), vec![vec![3, 3, 3]]),
        ("batch_norm_spatial", OpSpec::BatchNorm { channels: 3 }, vec![vec![3, 4, 4]]),
        ("batch_norm_dense", OpSpec::BatchNorm { channels: 6 }, vec![vec![6]]),
        ("instance_norm", OpSpec::InstanceNorm, vec![vec![2, 4, 4]]),
        ("relu", OpSpec::Relu, vec![vec![3, 4]]),
        ("leaky_relu", OpSpec::LeakyRelu { slope: crate::ops::LEAKY_SLOPE }, vec![vec![3, 4]]),
        ("tanh", OpSpec::Tanh, vec![vec![7]]),
        ("sigmoid", OpSpec::Sigmoid, vec![vec![7]]),
        ("softmax", OpSpec::Softmax, vec![vec![5]]),
        ("avg_pool", OpSpec::AvgPool { kernel: 2 }, vec![vec![2, 4, 4]]),
        ("global_avg_pool", OpSpec::GlobalAvgPool, vec![vec![3, 3, 3]]),
        ("reshape", OpSpec::Reshape { shape: vec![4, 3] }, vec![vec![2, 6]]),
        ("add", OpSpec::Add, vec![vec![2, 3], vec![2, 3]]),
        ("affine_rescale", OpSpec::AffineRescale { scale: 0.5, shift: 0.5 }, vec![vec![6]]),
    ];
    for (name, spec, shapes) in prims {
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let batch = if matches!(spec, OpSpec::BatchNorm { .. }) { 4 } else { 2 };
        out.push(single_op(name, spec, &refs, batch, &mut rng, seed)?);
    }

    let mut fcfg = FNetConfig::new(12, 16);
    fcfg.base_width = 4;
    fcfg.feature_width = 8;
    let mut store = ParameterStore::<f64>::new();
    let fnet = build_fnet(&mut store, &fcfg)?;
    let classifier = build_classifier(&mut store, 8, 3)?;
    let mut rcfg = RNetConfig::for_image(16, 4, 8)?;
    rcfg.hidden = 16;
    rcfg.channels = 8;
    let rnet = build_rnet(&mut store, &rcfg)?;
    let mut dcfg = DNetConfig::new(16, 3);
    dcfg.base_channels = 4;
    dcfg.n_down = 2;
    let dnet = build_dnet(&mut store, &dcfg)?;
    randomize(&mut store, &mut rng);
    out.push(network("fnet_resnet12", &fnet, &mut store, unit_interval(&mut rng, &[3, 1, 16, 16]), seed)?);
    out.push(network("classifier", &classifier, &mut store, away_from_zero(&mut rng, &[3, 8]), seed)?);
    out.push(network("rnet", &rnet, &mut store, away_from_zero(&mut rng, &[3, 8]), seed)?);
    out.push(network("dnet_body", &dnet.body, &mut store, unit_interval(&mut rng, &[3, 1, 16, 16]), seed)?);
    let feat = away_from_zero(&mut rng, &[3, dcfg.feature_channels(), 2, 2]);
    out.push(network("dnet_disc", &dnet.disc, &mut store, feat.clone(), seed)?);
    out.push(network("dnet_cls", &dnet.cls, &mut store, feat, seed)?);

    let labels = [0usize, 2, 1, 2];
    let p = random_probs(&mut rng, 4, 3);
    let ce = losses::cross_entropy_loss(&p, &labels)?;
    let report = grad_check_fn(&["P"], &[p], &[ce.grad], |x| Ok(losses::cross_entropy_loss(&x[0], &labels)?.value), SUITE_STEP, SUITE_TOL, seed)?;
    out.push(SuiteEntry { name: "loss_cross_entropy".into(), report });

    let p = random_probs(&mut rng, 4, 3);
    let fp = losses::FocalParams::default();
    let fl = losses::focal_loss(&p, &labels, fp)?;
    let report = grad_check_fn(&["P"], &[p], &[fl.grad], |x| Ok(losses::focal_loss(&x[0], &labels, fp)?.value), SUITE_STEP, SUITE_TOL, seed)?;
    out.push(SuiteEntry { name: "loss_focal".into(), report });

    let (x, y) = (unit_interval(&mut rng, &[2, 1, 6, 6]), unit_interval(&mut rng, &[2, 1, 6, 6]));
    let rec = losses::reconstruction_loss(&x, &y, 1e-6, 1e-6)?;
    let report = grad_check_fn(
        &["X", "X_hat"],
        &[x, y],
        &[rec.grad_input, rec.grad_reconstruction],
        |t| Ok(losses::reconstruction_loss(&t[0], &t[1], 1e-6, 1e-6)?.value),
        SUITE_STEP,
        SUITE_TOL,
        seed,
    )?;
    out.push(SuiteEntry { name: "loss_reconstruction".into(), report });

    let (r, f) = (unit_interval(&mut rng, &[2, 1, 3, 3]), unit_interval(&mut rng, &[2, 1, 3, 3]));
    let adv = losses::adversarial_discrimination_value(&r, &f)?;
    let report = grad_check_fn(
        &["D(X)", "D(X_hat)"],
        &[r, f],
        &[adv.grad_real, adv.grad_fake],
        |t| Ok(losses::adversarial_discrimination_value(&t[0], &t[1])?.value),
        SUITE_STEP,
        SUITE_TOL,
        seed,
    )?;
    out.push(SuiteEntry { name: "loss_adversarial_discrimination".into(), report });

    let p = random_probs(&mut rng, 4, 3);
    let ac = losses::adversarial_classification_loss(&p, &labels)?;
    let report = grad_check_fn(&["P_cls"], &[p], &[ac.grad], |x| Ok(losses::adversarial_classification_loss(&x[0], &labels)?.value), SUITE_STEP, SUITE_TOL, seed)?;
    out.push(SuiteEntry { name: "loss_adversarial_classification".into(), report });

    let d = unit_interval(&mut rng, &[4, 1, 2, 2]);
    let targets = [1.0, 1.0, 0.0, 0.0];
    let bce = losses::binary_cross_entropy(&d, &targets)?;
    let report = grad_check_fn(&["D"], &[d], &[bce.grad], |x| Ok(losses::binary_cross_entropy(&x[0], &targets)?.value), SUITE_STEP, SUITE_TOL, seed)?;
    out.push(SuiteEntry { name: "loss_binary_cross_entropy".into(), report });

    let d = unit_interval(&mut rng, &[3, 1, 2, 2]);
    let ns = losses::non_saturating_loss(&d)?;
    let report = grad_check_fn(&["D(X_hat)"], &[d], &[ns.grad], |x| Ok(losses::non_saturating_loss(&x[0])?.value), SUITE_STEP, SUITE_TOL, seed)?;
    out.push(SuiteEntry { name: "loss_non_saturating".into(), report });
    Ok(out)
}
