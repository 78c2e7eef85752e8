//! Builders for the feature extractor, classifier, generator and
//! discriminator, and the [`ModelBundle`] tying them to one parameter store.

mod dnet;
mod fnet;
mod rnet;

pub use dnet::{build_dnet, DNetConfig, DNetGraphs};
pub use fnet::{build_classifier, build_fnet, BlockKind, FNetConfig, ResNetLayout, Stem, SUPPORTED_DEPTHS};
pub use rnet::{build_rnet, default_side, upsample_count, RNetConfig};

use crate::error::{Error, Result};
use crate::graph::ComputationGraph;
use crate::ops::Mode;
use crate::params::ParameterStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct BundleConfig {
    pub fnet: FNetConfig,
    pub classes: usize,
    pub rnet: Option<RNetConfig>,
    pub dnet: Option<DNetConfig>,
}

impl BundleConfig {
    /// Feature extractor and classifier only.
    pub fn classifier_only(fnet: FNetConfig, classes: usize) -> Self {
        BundleConfig {
            fnet,
            classes,
            rnet: None,
            dnet: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        let m = self.fnet.input_size;
        if let Some(r) = &self.rnet {
            if r.output_size != m || r.feature_width != self.fnet.feature_width {
                return Err(Error::Config(format!(
                    "R-Net maps {} features to {}px but F-Net emits {} features from {m}px",
                    r.feature_width, r.output_size, self.fnet.feature_width
                )));
            }
            if r.output_channels != self.fnet.input_channels {
                return Err(Error::Config("R-Net output channels differ from the input".into()));
            }
        }
        if let Some(d) = &self.dnet {
            if self.rnet.is_none() {
                return Err(Error::Config("a D-Net requires an R-Net".into()));
            }
            if d.input_size != m || d.classes != self.classes || d.input_channels != self.fnet.input_channels {
                return Err(Error::Config("D-Net input or class count disagrees with F-Net".into()));
            }
        }
        Ok(())
    }
}

/// The four networks over one parameter store.
#[derive(Clone, Debug)]
pub struct ModelBundle<T> {
    pub store: ParameterStore<T>,
    pub fnet: ComputationGraph,
    pub classifier: ComputationGraph,
    pub rnet: Option<ComputationGraph>,
    pub dnet: Option<DNetGraphs>,
    config: BundleConfig,
}

impl<T: Scalar> ModelBundle<T> {
    /// Builds every configured network; parameters start uninitialized.
    pub fn build(config: BundleConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let fnet = build_fnet(&mut store, &config.fnet)?;
        let classifier = build_classifier(&mut store, config.fnet.feature_width, config.classes)?;
        let rnet = config.rnet.as_ref().map(|c| build_rnet(&mut store, c)).transpose()?;
        let dnet = config.dnet.as_ref().map(|c| build_dnet(&mut store, c)).transpose()?;
        Ok(ModelBundle {
            store,
            fnet,
            classifier,
            rnet,
            dnet,
            config,
        })
    }

    pub fn config(&self) -> &BundleConfig {
        &self.config
    }

    pub fn image_size(&self) -> usize {
        self.config.fnet.input_size
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// `f = F(X)` in evaluation mode; `(N, N_f)`.
    pub fn extract_features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.fnet.forward(&self.store, &[images], Mode::Eval)?.output().clone())
    }

    /// `P = C(f)`; rows sum to one.
    pub fn classify(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.classifier.forward(&self.store, &[features], Mode::Eval)?.output().clone())
    }

    /// Class probabilities and arg-max labels using only F-Net and the classifier.
    pub fn predict(&self, images: &Tensor<T>) -> Result<(Vec<usize>, Tensor<T>)> {
        let p = self.classify(&self.extract_features(images)?)?;
        Ok((predict_label(&p), p))
    }

    /// `X̂ = R(f)`, already rescaled to `[0, 1]`.
    pub fn reconstruct(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self
            .rnet
            .as_ref()
            .ok_or_else(|| Error::Config("model has no R-Net".into()))?;
        Ok(r.forward(&self.store, &[features], Mode::Eval)?.output().clone())
    }

    /// Patch probabilities `(N, s, s)` and class probabilities `(N, K)`.
    pub fn discriminate(&self, images: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let d = self
            .dnet
            .as_ref()
            .ok_or_else(|| Error::Config("model has no D-Net".into()))?;
        let f = d.body.forward(&self.store, &[images], Mode::Eval)?;
        let patches = d.disc.forward(&self.store, &[f.output()], Mode::Eval)?.output().clone();
        let s = patches.dim(2);
        let patches = patches.reshape(vec![images.dim(0), s, s])?;
        let classes = d.cls.forward(&self.store, &[f.output()], Mode::Eval)?.output().clone();
        Ok((patches, classes))
    }

    /// Architecture listing of every graph.
    pub fn summary(&self) -> String {
        let mut s = self.fnet.summary();
        s.push_str(&self.classifier.summary());
        if let Some(r) = &self.rnet {
            s.push_str(&r.summary());
        }
        if let Some(d) = &self.dnet {
            s.push_str(&d.body.summary());
            s.push_str(&d.disc.summary());
            s.push_str(&d.cls.summary());
        }
        s
    }
}

/// Arg-max per row; the lowest index wins ties.
pub fn predict_label<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.dim(1);
    probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
