//! Differentiable primitives: each [`OpSpec`] kind has a forward rule and an
//! exact analytic backward rule.

mod conv;
mod dense;
mod elementwise;
mod norm;
mod pool;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use conv::{conv_output_size, deconv_output_size};

/// Variance guard for batch and instance normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Negative slope of leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: true,
        }
    }

    /// Kernel 4, stride 2, padding 1: halves (conv) or doubles (deconv) the side.
    pub fn k4s2(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 4, 2, 1)
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpSpec {
    /// `(N, in) -> (N, out)`; params `[weight (out, in), bias (out)]`.
    Dense {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Params `[weight (out, in, k, k), bias (out)?]`.
    Conv2d(ConvSpec),
    /// Transposed convolution; params `[weight (in, out, k, k), bias (out)?]`.
    Deconv2d(ConvSpec),
    /// Over `(N, C)` or `(N, C, H, W)`; params `[scale, shift]`, buffers `[running mean, running var]`.
    BatchNorm { channels: usize },
    /// Per-sample, per-channel normalization without affine parameters.
    InstanceNorm,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    /// Along axis 1 of an `(N, K)` tensor.
    Softmax,
    /// Non-overlapping average pooling, stride equal to the kernel.
    AvgPool { kernel: usize },
    GlobalAvgPool,
    /// Reshape of every batch item to `shape`.
    Reshape { shape: Vec<usize> },
    /// Element-wise sum of two inputs (residual shortcut).
    Add,
    /// `scale * x + shift`.
    AffineRescale { scale: f64, shift: f64 },
}

/// What a parameter tensor is used for; drives initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize, fan_out: usize },
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Saved state a backward rule needs beyond inputs and output.
#[derive(Clone, Debug, Default)]
pub enum OpCache<T> {
    #[default]
    None,
    /// Per-channel (batch norm) or per-(sample, channel) (instance norm) statistics.
    Norm { mean: Vec<T>, inv_std: Vec<T> },
}

/// Batch statistics a training-mode batch norm proposes for its running buffers.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

#[derive(Debug)]
pub struct Forward<T> {
    pub output: Tensor<T>,
    pub cache: OpCache<T>,
    pub stats: Option<StatUpdate<T>>,
}

#[derive(Debug)]
pub struct Gradients<T> {
    /// One entry per op input; `None` when not requested.
    pub inputs: Vec<Option<Tensor<T>>>,
    /// One entry per op parameter; `None` when not requested.
    pub params: Vec<Option<Tensor<T>>>,
}

#[derive(Clone, Copy, Debug)]
pub struct Needs {
    pub inputs: bool,
    pub params: bool,
}

impl Needs {
    pub const ALL: Needs = Needs {
        inputs: true,
        params: true,
    };
}

impl OpSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OpSpec::Dense { .. } => "dense",
            OpSpec::Conv2d(_) => "conv2d",
            OpSpec::Deconv2d(_) => "deconv2d",
            OpSpec::BatchNorm { .. } => "batch_norm",
            OpSpec::InstanceNorm => "instance_norm",
            OpSpec::Relu => "relu",
            OpSpec::LeakyRelu { .. } => "leaky_relu",
            OpSpec::Tanh => "tanh",
            OpSpec::Sigmoid => "sigmoid",
            OpSpec::Softmax => "softmax",
            OpSpec::AvgPool { .. } => "avg_pool",
            OpSpec::GlobalAvgPool => "global_avg_pool",
            OpSpec::Reshape { .. } => "reshape",
            OpSpec::Add => "add",
            OpSpec::AffineRescale { .. } => "affine_rescale",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpSpec::Add => 2,
            _ => 1,
        }
    }

    /// Trainable parameters as `(suffix, role, shape)`.
    pub fn param_specs(&self) -> Vec<(&'static str, ParamRole, Vec<usize>)> {
        match *self {
            OpSpec::Dense {
                in_features,
                out_features,
                bias,
            } => {
                let mut v = vec![(
                    "weight",
                    ParamRole::Weight {
                        fan_in: in_features,
                        fan_out: out_features,
                    },
                    vec![out_features, in_features],
                )];
                if bias {
                    v.push(("bias", ParamRole::Bias, vec![out_features]));
                }
                v
            }
            OpSpec::Conv2d(c) => {
                let kk = c.kernel * c.kernel;
                let mut v = vec![(
                    "weight",
                    ParamRole::Weight {
                        fan_in: c.in_channels * kk,
                        fan_out: c.out_channels * kk,
                    },
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                )];
                if c.bias {
                    v.push(("bias", ParamRole::Bias, vec![c.out_channels]));
                }
                v
            }
            OpSpec::Deconv2d(c) => {
                let kk = c.kernel * c.kernel;
                let mut v = vec![(
                    "weight",
                    ParamRole::Weight {
                        fan_in: c.out_channels * kk,
                        fan_out: c.in_channels * kk,
                    },
                    vec![c.in_channels, c.out_channels, c.kernel, c.kernel],
                )];
                if c.bias {
                    v.push(("bias", ParamRole::Bias, vec![c.out_channels]));
                }
                v
            }
            OpSpec::BatchNorm { channels } => vec![
                ("scale", ParamRole::NormScale, vec![channels]),
                ("shift", ParamRole::NormShift, vec![channels]),
            ],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state tensors as `(suffix, role, shape)`.
    pub fn buffer_specs(&self) -> Vec<(&'static str, ParamRole, Vec<usize>)> {
        match *self {
            OpSpec::BatchNorm { channels } => vec![
                ("running_mean", ParamRole::RunningMean, vec![channels]),
                ("running_var", ParamRole::RunningVar, vec![channels]),
            ],
            _ => Vec::new(),
        }
    }

    /// Output shape for the given input shapes.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let name = self.kind_name();
        if inputs.len() != self.arity() {
            return Err(Error::shape(
                name,
                format!("expected {} inputs, got {}", self.arity(), inputs.len()),
            ));
        }
        let x = inputs[0];
        let bad = |detail: String| Err(Error::shape(name, detail));
        match self {
            OpSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                if x.len() != 2 || x[1] != *in_features {
                    return bad(format!("input {x:?}, expected (N, {in_features})"));
                }
                Ok(vec![x[0], *out_features])
            }
            OpSpec::Conv2d(c) => {
                if x.len() != 4 || x[1] != c.in_channels {
                    return bad(format!("input {x:?}, expected (N, {}, H, W)", c.in_channels));
                }
                let h = conv_output_size(x[2], c.kernel, c.stride, c.padding);
                let w = conv_output_size(x[3], c.kernel, c.stride, c.padding);
                match (h, w) {
                    (Some(h), Some(w)) => Ok(vec![x[0], c.out_channels, h, w]),
                    _ => bad(format!("input {x:?} too small for kernel {}", c.kernel)),
                }
            }
            OpSpec::Deconv2d(c) => {
                if x.len() != 4 || x[1] != c.in_channels {
                    return bad(format!("input {x:?}, expected (N, {}, H, W)", c.in_channels));
                }
                let h = deconv_output_size(x[2], c.kernel, c.stride, c.padding);
                let w = deconv_output_size(x[3], c.kernel, c.stride, c.padding);
                match (h, w) {
                    (Some(h), Some(w)) => Ok(vec![x[0], c.out_channels, h, w]),
                    _ => bad(format!("input {x:?} yields an empty output")),
                }
            }
            OpSpec::BatchNorm { channels } => {
                if !(x.len() == 2 || x.len() == 4) || x[1] != *channels {
                    return bad(format!("input {x:?}, expected (N, {channels}[, H, W])"));
                }
                Ok(x.to_vec())
            }
            OpSpec::InstanceNorm => {
                if x.len() != 4 {
                    return bad(format!("input {x:?}, expected rank 4"));
                }
                Ok(x.to_vec())
            }
            OpSpec::Softmax => {
                if x.len() != 2 {
                    return bad(format!("input {x:?}, expected (N, K)"));
                }
                Ok(x.to_vec())
            }
            OpSpec::AvgPool { kernel } => {
                if x.len() != 4 || *kernel == 0 || x[2] < *kernel || x[3] < *kernel {
                    return bad(format!("input {x:?} vs kernel {kernel}"));
                }
                Ok(vec![x[0], x[1], x[2] / kernel, x[3] / kernel])
            }
            OpSpec::GlobalAvgPool => {
                if x.len() != 4 {
                    return bad(format!("input {x:?}, expected rank 4"));
                }
                Ok(vec![x[0], x[1], 1, 1])
            }
            OpSpec::Reshape { shape } => {
                let have: usize = x[1..].iter().product();
                let want: usize = shape.iter().product();
                if have != want || shape.contains(&0) {
                    return bad(format!("{x:?} cannot become (N, {shape:?})"));
                }
                let mut out = vec![x[0]];
                out.extend_from_slice(shape);
                Ok(out)
            }
            OpSpec::Add => {
                if inputs[0] != inputs[1] {
                    return bad(format!("{:?} vs {:?}", inputs[0], inputs[1]));
                }
                Ok(x.to_vec())
            }
            OpSpec::Relu
            | OpSpec::LeakyRelu { .. }
            | OpSpec::Tanh
            | OpSpec::Sigmoid
            | OpSpec::AffineRescale { .. } => Ok(x.to_vec()),
        }
    }
}

fn check_params<T: Scalar>(op: &OpSpec, params: &[&Tensor<T>], buffers: &[&Tensor<T>]) -> Result<()> {
    let specs = op.param_specs();
    let bufs = op.buffer_specs();
    if specs.len() != params.len() || bufs.len() != buffers.len() {
        return Err(Error::shape(
            op.kind_name(),
            format!(
                "expected {} params / {} buffers, got {} / {}",
                specs.len(),
                bufs.len(),
                params.len(),
                buffers.len()
            ),
        ));
    }
    for ((name, _, shape), t) in specs.iter().chain(bufs.iter()).zip(params.iter().chain(buffers)) {
        if t.shape() != shape.as_slice() {
            return Err(Error::shape(
                op.kind_name(),
                format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
            ));
        }
    }
    Ok(())
}

/// Applies `op` to `inputs`.
pub fn forward_op<T: Scalar>(
    op: &OpSpec,
    inputs: &[&Tensor<T>],
    params: &[&Tensor<T>],
    buffers: &[&Tensor<T>],
    mode: Mode,
) -> Result<Forward<T>> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let out_shape = op.output_shape(&shapes)?;
    check_params(op, params, buffers)?;
    let x = inputs[0];
    let mut cache = OpCache::None;
    let mut stats = None;
    let output = match op {
        OpSpec::Dense { .. } => dense::forward(x, params[0], params.get(1).copied(), out_shape),
        OpSpec::Conv2d(c) => conv::conv_forward(c, x, params[0], params.get(1).copied(), out_shape),
        OpSpec::Deconv2d(c) => conv::deconv_forward(c, x, params[0], params.get(1).copied(), out_shape),
        OpSpec::BatchNorm { .. } => {
            let r = norm::batch_norm_forward(x, params[0], params[1], buffers[0], buffers[1], mode);
            cache = r.1;
            stats = r.2;
            r.0
        }
        OpSpec::InstanceNorm => {
            let (y, c) = norm::instance_norm_forward(x);
            cache = c;
            y
        }
        OpSpec::Relu => elementwise::relu(x),
        OpSpec::LeakyRelu { slope } => elementwise::leaky_relu(x, T::lit(*slope)),
        OpSpec::Tanh => x.map(|v| v.tanh()),
        OpSpec::Sigmoid => elementwise::sigmoid(x),
        OpSpec::Softmax => elementwise::softmax(x),
        OpSpec::AvgPool { kernel } => pool::avg_pool_forward(x, *kernel, out_shape),
        OpSpec::GlobalAvgPool => {
            let k = (x.dim(2), x.dim(3));
            pool::global_avg_pool_forward(x, k)
        }
        OpSpec::Reshape { .. } => x.clone().reshape(out_shape)?,
        OpSpec::Add => {
            let mut y = x.clone();
            y.add_assign(inputs[1])?;
            y
        }
        OpSpec::AffineRescale { scale, shift } => {
            let (a, b) = (T::lit(*scale), T::lit(*shift));
            x.map(|v| a * v + b)
        }
    };
    output.ensure_finite(op.kind_name())?;
    Ok(Forward {
        output,
        cache,
        stats,
    })
}

/// Gradients of `op` with respect to its inputs and parameters given
/// `upstream = dL/d(output)`.
#[allow(clippy::too_many_arguments)]
pub fn backward_op<T: Scalar>(
    op: &OpSpec,
    inputs: &[&Tensor<T>],
    params: &[&Tensor<T>],
    buffers: &[&Tensor<T>],
    output: &Tensor<T>,
    cache: &OpCache<T>,
    upstream: &Tensor<T>,
    mode: Mode,
    needs: Needs,
) -> Result<Gradients<T>> {
    let name = op.kind_name();
    if inputs.len() != op.arity() {
        return Err(Error::shape(name, "wrong number of inputs"));
    }
    check_params(op, params, buffers)?;
    if upstream.shape() != output.shape() {
        return Err(Error::shape(
            name,
            format!("upstream {:?} vs output {:?}", upstream.shape(), output.shape()),
        ));
    }
    let x = inputs[0];
    let n_params = params.len();
    let mut grads = Gradients {
        inputs: vec![None; inputs.len()],
        params: vec![None; n_params],
    };
    let single = |g: Tensor<T>| vec![Some(g)];
    match op {
        OpSpec::Dense { bias, .. } => {
            let (dx, dw, db) = dense::backward(x, params[0], upstream, needs);
            grads.inputs = vec![dx];
            grads.params = if *bias { vec![dw, db] } else { vec![dw] };
        }
        OpSpec::Conv2d(c) => {
            let (dx, dw, db) = conv::conv_backward(c, x, params[0], upstream, needs);
            grads.inputs = vec![dx];
            grads.params = if c.bias { vec![dw, db] } else { vec![dw] };
        }
        OpSpec::Deconv2d(c) => {
            let (dx, dw, db) = conv::deconv_backward(c, x, params[0], upstream, needs);
            grads.inputs = vec![dx];
            grads.params = if c.bias { vec![dw, db] } else { vec![dw] };
        }
        OpSpec::BatchNorm { .. } => {
            let (dx, dg, db) =
                norm::batch_norm_backward(x, params[0], buffers[1], cache, upstream, mode, needs)?;
            grads.inputs = vec![dx];
            grads.params = vec![dg, db];
        }
        OpSpec::InstanceNorm => {
            if needs.inputs {
                grads.inputs = single(norm::instance_norm_backward(x, cache, upstream)?);
            }
        }
        _ if !needs.inputs => {}
        OpSpec::Relu => grads.inputs = single(elementwise::relu_backward(x, upstream)),
        OpSpec::LeakyRelu { slope } => {
            grads.inputs = single(elementwise::leaky_relu_backward(x, upstream, T::lit(*slope)))
        }
        OpSpec::Tanh => {
            grads.inputs = single(elementwise::zip(output, upstream, |y, g| g * (T::one() - y * y)))
        }
        OpSpec::Sigmoid => {
            grads.inputs = single(elementwise::zip(output, upstream, |y, g| g * y * (T::one() - y)))
        }
        OpSpec::Softmax => grads.inputs = single(elementwise::softmax_backward(output, upstream)),
        OpSpec::AvgPool { kernel } => {
            grads.inputs = single(pool::avg_pool_backward(x.shape(), *kernel, upstream))
        }
        OpSpec::GlobalAvgPool => grads.inputs = single(pool::global_avg_pool_backward(x.shape(), upstream)),
        OpSpec::Reshape { .. } => grads.inputs = single(upstream.clone().reshape(x.shape().to_vec())?),
        OpSpec::Add => grads.inputs = vec![Some(upstream.clone()), Some(upstream.clone())],
        OpSpec::AffineRescale { scale, .. } => grads.inputs = single(upstream.scale(T::lit(*scale))),
    }
    if !needs.inputs {
        grads.inputs.iter_mut().for_each(|g| *g = None);
    }
    for g in grads.inputs.iter().chain(grads.params.iter()).flatten() {
        g.ensure_finite(name)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn fwd(op: &OpSpec, x: &Tensor<f64>) -> Tensor<f64> {
        forward_op(op, &[x], &[], &[], Mode::Train).unwrap().output
    }

    #[test]
    fn relu_definition() {
        let y = fwd(&OpSpec::Relu, &t(&[1, 3], &[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = fwd(&OpSpec::Softmax, &t(&[1, 3], &[0.0, 0.0, 0.0]));
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 5, 7], |i| (i as f64 * 0.37).sin());
        let op = OpSpec::Conv2d(ConvSpec::new(1, 1, 1, 1, 0));
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = forward_op(&op, &[&x], &[&w, &b], &[], Mode::Train).unwrap().output;
        assert_eq!(y, x);
    }

    #[test]
    fn tanh_and_sigmoid_derivatives_at_zero() {
        let x = t(&[1, 1], &[0.0]);
        let g = t(&[1, 1], &[1.0]);
        for (op, expected) in [(OpSpec::Tanh, 1.0), (OpSpec::Sigmoid, 0.25)] {
            let f = forward_op(&op, &[&x], &[], &[], Mode::Train).unwrap();
            let gr = backward_op(&op, &[&x], &[], &[], &f.output, &f.cache, &g, Mode::Train, Needs::ALL)
                .unwrap();
            assert_eq!(gr.inputs[0].as_ref().unwrap().data()[0], expected);
        }
    }

    #[test]
    fn k4s2_halves_and_doubles_every_supported_side() {
        let mut h = 4;
        while h <= 448 {
            let down = OpSpec::Conv2d(ConvSpec::k4s2(1, 1));
            let up = OpSpec::Deconv2d(ConvSpec::k4s2(1, 1));
            assert_eq!(down.output_shape(&[&[1, 1, h, h]]).unwrap(), vec![1, 1, h / 2, h / 2]);
            assert_eq!(up.output_shape(&[&[1, 1, h, h]]).unwrap(), vec![1, 1, 2 * h, 2 * h]);
            h += 4;
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let op = OpSpec::Dense {
            in_features: 3,
            out_features: 2,
            bias: true,
        };
        let x = Tensor::<f64>::zeros(&[1, 4]);
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(
            forward_op(&op, &[&x], &[&w, &b], &[], Mode::Train),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn batch_norm_backward_without_cache_fails() {
        let op = OpSpec::BatchNorm { channels: 1 };
        let x = t(&[2, 1], &[1.0, 2.0]);
        let one = t(&[1], &[1.0]);
        let zero = t(&[1], &[0.0]);
        let r = backward_op(
            &op,
            &[&x],
            &[&one, &zero],
            &[&zero, &one],
            &x,
            &OpCache::None,
            &x,
            Mode::Train,
            Needs::ALL,
        );
        assert!(matches!(r, Err(Error::MissingCache(_))));
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let x = t(&[1, 1], &[1e308]);
        let op = OpSpec::AffineRescale { scale: 10.0, shift: 0.0 };
        assert!(matches!(
            forward_op(&op, &[&x], &[], &[], Mode::Train),
            Err(Error::NonFinite(_))
        ));
    }
}
