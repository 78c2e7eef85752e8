//! Reconstruction generator: two FC blocks, a reshape to `C_r × D_r × D_r`,
//! `N_up` up-sampling blocks and a final transposed convolution with tanh.
//! The tanh output is mapped affinely from `[-1, 1]` onto `[0, 1]`.

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, GraphBuilder};
use crate::ops::{ConvSpec, OpSpec};
use crate::params::{OwnerGroup, ParameterStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct RNetConfig {
    pub feature_width: usize,
    /// Units of the first FC block.
    pub hidden: usize,
    /// Channels after the reshape (`C_r`).
    pub channels: usize,
    /// Side of the reshaped map (`D_r`).
    pub side: usize,
    /// Number of up-sampling blocks (`N_up`).
    pub n_up: usize,
    pub output_size: usize,
    pub output_channels: usize,
}

/// `log2(M / D_r) - 1` when `M / D_r` is a power of two of at least 2.
pub fn upsample_count(image_size: usize, side: usize) -> Option<usize> {
    if side == 0 || !image_size.is_multiple_of(side) {
        return None;
    }
    let ratio = image_size / side;
    (ratio >= 2 && ratio.is_power_of_two()).then(|| ratio.trailing_zeros() as usize - 1)
}

/// Default reshape side: 7, except 8 for 32-pixel inputs where 7 cannot tile.
pub fn default_side(image_size: usize) -> usize {
    if image_size == 32 {
        8
    } else {
        7
    }
}

impl RNetConfig {
    /// Infers `N_up` from the image size and reshape side.
    pub fn for_image(image_size: usize, side: usize, feature_width: usize) -> Result<Self> {
        let n_up = upsample_count(image_size, side).ok_or_else(|| {
            Error::Config(format!(
                "image size {image_size} is not {side}·2^(N_up+1) for any N_up"
            ))
        })?;
        Ok(RNetConfig {
            feature_width,
            hidden: 1024,
            channels: 128,
            side,
            n_up,
            output_size: image_size,
            output_channels: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.side << (self.n_up + 1) != self.output_size {
            return Err(Error::Config(format!(
                "R-Net geometry: {}·2^({}+1) != {}",
                self.side, self.n_up, self.output_size
            )));
        }
        if self.channels >> self.n_up == 0 || self.hidden == 0 || self.feature_width == 0 {
            return Err(Error::Config(format!(
                "R-Net: {} channels cannot be halved {} times",
                self.channels, self.n_up
            )));
        }
        Ok(())
    }
}

pub fn build_rnet<T: Scalar>(store: &mut ParameterStore<T>, cfg: &RNetConfig) -> Result<ComputationGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new(store, "rnet", OwnerGroup::R);
    let f = b.input(&[cfg.feature_width]);
    let mut x = b.dense_with("fc1", f, cfg.hidden, false)?;
    x = b.batch_norm("fc1.bn", x)?;
    x = b.relu("fc1.relu", x)?;
    x = b.dense_with("fc2", x, cfg.channels * cfg.side * cfg.side, false)?;
    x = b.batch_norm("fc2.bn", x)?;
    x = b.relu("fc2.relu", x)?;
    x = b.op(
        "reshape",
        OpSpec::Reshape {
            shape: vec![cfg.channels, cfg.side, cfg.side],
        },
        &[x],
    )?;
    let mut ch = cfg.channels;
    for i in 1..=cfg.n_up {
        x = b.deconv(&format!("up{i}.deconv"), x, ConvSpec::k4s2(ch, ch / 2).without_bias())?;
        x = b.instance_norm(&format!("up{i}.in"), x)?;
        x = b.relu(&format!("up{i}.relu"), x)?;
        ch /= 2;
    }
    x = b.deconv("out.deconv", x, ConvSpec::k4s2(ch, cfg.output_channels))?;
    x = b.op("out.tanh", OpSpec::Tanh, &[x])?;
    let y = b.op("out.rescale", OpSpec::AffineRescale { scale: 0.5, shift: 0.5 }, &[x])?;
    b.finish(y)
}
