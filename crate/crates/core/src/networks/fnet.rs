//! Residual feature extractor.
//!
//! | depth | stem                         | block      | blocks per stage |
//! |-------|------------------------------|------------|------------------|
//! | 12    | conv3×3 s1                   | basic      | 2, 2, 1          |
//! | 18    | conv7×7 s2 + 2×2 avg pool    | basic      | 2, 2, 2, 2       |
//! | 34    | conv7×7 s2 + 2×2 avg pool    | basic      | 3, 4, 6, 3       |
//! | 44    | conv3×3 s1                   | basic      | 7, 7, 7          |
//! | 50    | conv7×7 s2 + 2×2 avg pool    | bottleneck | 3, 4, 6, 3       |
//!
//! Stage `i` has width `base_width · 2^i` (×4 at the output of bottleneck
//! blocks) and every stage after the first starts with a stride-2 block. The
//! trunk ends in global average pooling and a linear layer of `feature_width`
//! units.

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, GraphBuilder, NodeId};
use crate::ops::{ConvSpec, OpSpec};
use crate::params::{OwnerGroup, ParameterStore};
use crate::tensor::Scalar;

pub const SUPPORTED_DEPTHS: [usize; 5] = [12, 18, 34, 44, 50];

#[derive(Clone, Debug, PartialEq)]
pub struct FNetConfig {
    pub depth: usize,
    pub input_size: usize,
    pub feature_width: usize,
    pub input_channels: usize,
    pub base_width: usize,
}

impl FNetConfig {
    pub fn new(depth: usize, input_size: usize) -> Self {
        FNetConfig {
            depth,
            input_size,
            feature_width: 128,
            input_channels: 1,
            base_width: 64,
        }
    }

    pub fn layout(&self) -> Result<ResNetLayout> {
        ResNetLayout::for_depth(self.depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stem {
    /// 3×3 stride-1 convolution, for small inputs.
    Narrow,
    /// 7×7 stride-2 convolution followed by 2×2 average pooling.
    Wide,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    pub fn conv_layers(self) -> usize {
        match self {
            BlockKind::Basic => 2,
            BlockKind::Bottleneck => 3,
        }
    }

    fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResNetLayout {
    pub stem: Stem,
    pub block: BlockKind,
    pub stages: Vec<usize>,
}

impl ResNetLayout {
    pub fn for_depth(depth: usize) -> Result<Self> {
        let (stem, block, stages) = match depth {
            12 => (Stem::Narrow, BlockKind::Basic, vec![2, 2, 1]),
            18 => (Stem::Wide, BlockKind::Basic, vec![2, 2, 2, 2]),
            34 => (Stem::Wide, BlockKind::Basic, vec![3, 4, 6, 3]),
            44 => (Stem::Narrow, BlockKind::Basic, vec![7, 7, 7]),
            50 => (Stem::Wide, BlockKind::Bottleneck, vec![3, 4, 6, 3]),
            other => {
                return Err(Error::Config(format!(
                    "unsupported ResNet depth {other}; expected one of {SUPPORTED_DEPTHS:?}"
                )))
            }
        };
        Ok(ResNetLayout { stem, block, stages })
    }

    pub fn residual_blocks(&self) -> usize {
        self.stages.iter().sum()
    }

    /// Convolutions on the main path plus the stem and the final linear layer.
    pub fn weighted_layers(&self) -> usize {
        self.residual_blocks() * self.block.conv_layers() + 2
    }

    pub fn total_stride(&self) -> usize {
        let stem = match self.stem {
            Stem::Narrow => 1,
            Stem::Wide => 4,
        };
        stem << (self.stages.len() - 1)
    }
}

pub fn build_fnet<T: Scalar>(store: &mut ParameterStore<T>, cfg: &FNetConfig) -> Result<ComputationGraph> {
    let layout = cfg.layout()?;
    let stride = layout.total_stride();
    if cfg.input_size < stride || !cfg.input_size.is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "F-Net depth {} needs an input size divisible by {stride}, got {}",
            cfg.depth, cfg.input_size
        )));
    }
    if cfg.feature_width == 0 || cfg.input_channels == 0 || cfg.base_width == 0 {
        return Err(Error::Config("F-Net widths must be positive".into()));
    }
    let mut b = GraphBuilder::new(store, "fnet", OwnerGroup::F);
    let m = cfg.input_size;
    let mut x = b.input(&[cfg.input_channels, m, m]);
    let w0 = cfg.base_width;
    x = match layout.stem {
        Stem::Narrow => b.conv("stem.conv", x, ConvSpec::new(cfg.input_channels, w0, 3, 1, 1).without_bias())?,
        Stem::Wide => b.conv("stem.conv", x, ConvSpec::new(cfg.input_channels, w0, 7, 2, 3).without_bias())?,
    };
    x = b.batch_norm("stem.bn", x)?;
    x = b.relu("stem.relu", x)?;
    if layout.stem == Stem::Wide {
        x = b.op("stem.pool", OpSpec::AvgPool { kernel: 2 }, &[x])?;
    }
    let mut channels = w0;
    for (s, &blocks) in layout.stages.iter().enumerate() {
        let width = w0 << s;
        for i in 0..blocks {
            let stride = if s > 0 && i == 0 { 2 } else { 1 };
            let prefix = format!("s{}.b{}", s + 1, i + 1);
            x = residual_block(&mut b, &prefix, x, channels, width, stride, layout.block)?;
            channels = width * layout.block.expansion();
        }
    }
    x = b.op("pool", OpSpec::GlobalAvgPool, &[x])?;
    x = b.op("flatten", OpSpec::Reshape { shape: vec![channels] }, &[x])?;
    let f = b.dense("fc", x, cfg.feature_width)?;
    b.finish(f)
}

fn residual_block<T: Scalar>(
    b: &mut GraphBuilder<'_, T>,
    prefix: &str,
    x: NodeId,
    in_ch: usize,
    width: usize,
    stride: usize,
    kind: BlockKind,
) -> Result<NodeId> {
    let out_ch = width * kind.expansion();
    let mut y = x;
    match kind {
        BlockKind::Basic => {
            y = b.conv(&format!("{prefix}.conv1"), y, ConvSpec::new(in_ch, width, 3, stride, 1).without_bias())?;
            y = b.batch_norm(&format!("{prefix}.bn1"), y)?;
            y = b.relu(&format!("{prefix}.relu1"), y)?;
            y = b.conv(&format!("{prefix}.conv2"), y, ConvSpec::new(width, width, 3, 1, 1).without_bias())?;
            y = b.batch_norm(&format!("{prefix}.bn2"), y)?;
        }
        BlockKind::Bottleneck => {
            y = b.conv(&format!("{prefix}.conv1"), y, ConvSpec::new(in_ch, width, 1, 1, 0).without_bias())?;
            y = b.batch_norm(&format!("{prefix}.bn1"), y)?;
            y = b.relu(&format!("{prefix}.relu1"), y)?;
            y = b.conv(&format!("{prefix}.conv2"), y, ConvSpec::new(width, width, 3, stride, 1).without_bias())?;
            y = b.batch_norm(&format!("{prefix}.bn2"), y)?;
            y = b.relu(&format!("{prefix}.relu2"), y)?;
            y = b.conv(&format!("{prefix}.conv3"), y, ConvSpec::new(width, out_ch, 1, 1, 0).without_bias())?;
            y = b.batch_norm(&format!("{prefix}.bn3"), y)?;
        }
    }
    let shortcut = if stride != 1 || in_ch != out_ch {
        let s = b.conv(
            &format!("{prefix}.down.conv"),
            x,
            ConvSpec::new(in_ch, out_ch, 1, stride, 0).without_bias(),
        )?;
        b.batch_norm(&format!("{prefix}.down.bn"), s)?
    } else {
        x
    };
    let sum = b.op(&format!("{prefix}.add"), OpSpec::Add, &[y, shortcut])?;
    b.relu(&format!("{prefix}.relu_out"), sum)
}

/// Single linear layer of `classes` units followed by softmax.
pub fn build_classifier<T: Scalar>(
    store: &mut ParameterStore<T>,
    feature_width: usize,
    classes: usize,
) -> Result<ComputationGraph> {
    if feature_width == 0 || classes == 0 {
        return Err(Error::Config("classifier sizes must be positive".into()));
    }
    let mut b = GraphBuilder::new(store, "cls", OwnerGroup::C);
    let f = b.input(&[feature_width]);
    let logits = b.dense("fc", f, classes)?;
    let p = b.op("softmax", OpSpec::Softmax, &[logits])?;
    b.finish(p)
}
