//! Patch discriminator with a real/reconstructed head and a class head.

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, GraphBuilder};
use crate::ops::{ConvSpec, OpSpec};
use crate::params::{OwnerGroup, ParameterStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DNetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    /// Down-sampling blocks after the stem (`N_down`).
    pub n_down: usize,
    /// Output channels of the stem convolution, doubled per down-sampling block.
    pub base_channels: usize,
    pub classes: usize,
}

impl DNetConfig {
    pub fn new(input_size: usize, classes: usize) -> Self {
        DNetConfig {
            input_size,
            input_channels: 1,
            n_down: 3,
            base_channels: 64,
            classes,
        }
    }

    /// Side of the patch probability map, `M / 2^(N_down+1)`.
    pub fn patch_side(&self) -> usize {
        self.input_size >> (self.n_down + 1)
    }

    pub fn feature_channels(&self) -> usize {
        self.base_channels << self.n_down
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << (self.n_down + 1);
        if self.input_size < div || !self.input_size.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "D-Net input size {} is not divisible by 2^({}+1)",
                self.input_size, self.n_down
            )));
        }
        if self.base_channels == 0 || self.classes == 0 || self.input_channels == 0 {
            return Err(Error::Config("D-Net sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The three D-Net graphs: backbone `D` producing `f_D`, and the two heads.
#[derive(Clone, Debug)]
pub struct DNetGraphs {
    pub body: ComputationGraph,
    /// `f_D -> (N, 1, s, s)` sigmoid patch map.
    pub disc: ComputationGraph,
    /// `f_D -> (N, K)` softmax.
    pub cls: ComputationGraph,
}

pub fn build_dnet<T: Scalar>(store: &mut ParameterStore<T>, cfg: &DNetConfig) -> Result<DNetGraphs> {
    cfg.validate()?;
    let m = cfg.input_size;
    let mut b = GraphBuilder::new(store, "dnet", OwnerGroup::D);
    let x = b.input(&[cfg.input_channels, m, m]);
    let mut ch = cfg.base_channels;
    let mut y = b.conv("stem.conv", x, ConvSpec::k4s2(cfg.input_channels, ch))?;
    y = b.leaky_relu("stem.lrelu", y)?;
    for i in 1..=cfg.n_down {
        y = b.conv(&format!("down{i}.conv"), y, ConvSpec::k4s2(ch, ch * 2).without_bias())?;
        y = b.batch_norm(&format!("down{i}.bn"), y)?;
        y = b.leaky_relu(&format!("down{i}.lrelu"), y)?;
        ch *= 2;
    }
    y = b.conv("feat.conv", y, ConvSpec::new(ch, ch, 3, 1, 1).without_bias())?;
    y = b.batch_norm("feat.bn", y)?;
    y = b.leaky_relu("feat.lrelu", y)?;
    let body = b.finish(y)?;
    let s = cfg.patch_side();

    let mut b = GraphBuilder::new(store, "dnet.disc", OwnerGroup::DDisc);
    let f = b.input(&[ch, s, s]);
    let z = b.conv("conv", f, ConvSpec::new(ch, 1, 3, 1, 1))?;
    let p = b.op("sigmoid", OpSpec::Sigmoid, &[z])?;
    let disc = b.finish(p)?;

    let mut b = GraphBuilder::new(store, "dnet.cls", OwnerGroup::DCls);
    let f = b.input(&[ch, s, s]);
    let z = b.op("pool", OpSpec::GlobalAvgPool, &[f])?;
    let z = b.conv("conv", z, ConvSpec::new(ch, cfg.classes, 1, 1, 0))?;
    let z = b.op("flatten", OpSpec::Reshape { shape: vec![cfg.classes] }, &[z])?;
    let p = b.op("softmax", OpSpec::Softmax, &[z])?;
    let cls = b.finish(p)?;
    Ok(DNetGraphs { body, disc, cls })
}
