//! The two alternating updates of one training iteration.

use crate::error::{Error, Result};
use crate::graph::{Backprop, ComputationGraph};
use crate::losses::{
    adversarial_classification_loss, adversarial_loss, binary_cross_entropy, combined_loss, cross_entropy_loss,
    focal_loss, non_saturating_loss, reconstruction_loss, FocalParams, LossWeights,
};
use crate::networks::ModelBundle;
use crate::ops::Mode;
use crate::params::{GroupSet, ParameterStore};
use crate::tensor::Tensor;

use super::adam::AdamState;

/// Component losses of one iteration. Absent terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub cls: f32,
    pub rec: f32,
    pub adv: f32,
    pub cmb: f32,
    pub disc: f32,
}

/// Classification loss used by the generator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassLoss {
    CrossEntropy,
    Focal(FocalParams),
}

pub(crate) struct GeneratorOutput {
    pub losses: StepLosses,
    /// Per-sample classification losses, for hard-example mining.
    pub per_sample: Vec<f32>,
}

fn check(name: &str, v: f32) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} = {v}")))
    }
}

fn backward(
    g: &ComputationGraph,
    store: &mut ParameterStore<f32>,
    acts: &crate::graph::Activations<f32>,
    upstream: &Tensor<f32>,
    opts: Backprop,
) -> Result<Option<Tensor<f32>>> {
    Ok(g.backward(store, acts, upstream, opts)?.into_iter().next().flatten())
}

/// Discriminator update: real images and their reconstructions, with the
/// generator side held fixed, train both D-Net heads. Returns the D loss.
pub(crate) fn discriminator_update(
    bundle: &mut ModelBundle<f32>,
    adam: &mut AdamState<f32>,
    x: &Tensor<f32>,
    labels: &[usize],
    weights: &LossWeights,
    lr: f64,
) -> Result<f32> {
    let m = x.dim(0);
    let store = &mut bundle.store;
    // No running statistics are committed on the generator side here.
    let fa = bundle.fnet.forward(store, &[x], Mode::Train)?;
    let xhat = rnet_of_graph(&bundle.rnet)?
        .forward(store, &[fa.output()], Mode::Train)?
        .output()
        .clone();
    let joint = Tensor::concat_batch(&[x, &xhat])?;
    let d = bundle
        .dnet
        .as_ref()
        .ok_or_else(|| Error::Config("the discriminator update needs a D-Net".into()))?;
    let body = d.body.forward(store, &[&joint], Mode::Train)?;
    let disc = d.disc.forward(store, &[body.output()], Mode::Train)?;
    let cls = d.cls.forward(store, &[body.output()], Mode::Train)?;
    let targets: Vec<f32> = (0..2 * m).map(|i| if i < m { 1.0 } else { 0.0 }).collect();
    let bce = binary_cross_entropy(disc.output(), &targets)?;
    let both: Vec<usize> = labels.iter().chain(labels).copied().collect();
    let ce = adversarial_classification_loss(cls.output(), &both)?;
    let lam = weights.lambda as f32;
    let loss = check("D loss", lam * bce.value + (1.0 - lam) * ce.value)?;

    store.zero_grads(GroupSet::DISCRIMINATOR);
    let through = Backprop {
        groups: GroupSet::DISCRIMINATOR,
        input_grads: true,
    };
    let mut g = backward(&d.disc, store, &disc, &bce.grad.map(|v| v * lam), through)?
        .expect("input gradient requested");
    let g2 = backward(&d.cls, store, &cls, &ce.grad.map(|v| v * (1.0 - lam)), through)?
        .expect("input gradient requested");
    g.add_assign(&g2)?;
    backward(&d.body, store, &body, &g, Backprop::params(GroupSet::DISCRIMINATOR))?;
    body.commit_stats(store);
    disc.commit_stats(store);
    cls.commit_stats(store);
    adam.step(store, GroupSet::DISCRIMINATOR, lr)?;
    Ok(loss)
}

fn rnet_of_graph(r: &Option<ComputationGraph>) -> Result<&ComputationGraph> {
    r.as_ref()
        .ok_or_else(|| Error::Config("reconstruction needs an R-Net".into()))
}

/// Generator update of F-Net, classifier and (when present) R-Net through a
/// fixed D-Net. `lambda2` of 0 or a missing D-Net drops the adversarial term.
/// A zero-weighted term is still evaluated but contributes no gradient.
pub(crate) fn generator_update(
    bundle: &mut ModelBundle<f32>,
    adam: &mut AdamState<f32>,
    x: &Tensor<f32>,
    labels: &[usize],
    weights: &LossWeights,
    class_loss: ClassLoss,
    lr: f64,
) -> Result<GeneratorOutput> {
    let use_rnet = bundle.rnet.is_some();
    let use_dnet = bundle.dnet.is_some();
    let (l1, l2) = (weights.lambda1 as f32, weights.lambda2 as f32);
    let store = &mut bundle.store;

    let fa = bundle.fnet.forward(store, &[x], Mode::Train)?;
    let ca = bundle.classifier.forward(store, &[fa.output()], Mode::Train)?;
    let cls = match class_loss {
        ClassLoss::CrossEntropy => cross_entropy_loss(ca.output(), labels)?,
        ClassLoss::Focal(p) => focal_loss(ca.output(), labels, p)?,
    };
    let mut losses = StepLosses {
        cls: check("L_cls", cls.value)?,
        ..StepLosses::default()
    };
    store.zero_grads(GroupSet::GENERATOR);
    let through = Backprop {
        groups: GroupSet::GENERATOR,
        input_grads: true,
    };

    let mut feature_grad = None;
    if use_rnet {
        let r = rnet_of_graph(&bundle.rnet)?;
        let ra = r.forward(store, &[fa.output()], Mode::Train)?;
        let xhat = ra.output();
        let rec = reconstruction_loss(x, xhat, weights.eps1, weights.eps2)?;
        losses.rec = check("L_rec", rec.value)?;
        let mut xhat_grad: Option<Tensor<f32>> = None;
        if l1 != 0.0 {
            xhat_grad = Some(rec.grad_reconstruction.map(|v| v * l1));
        }
        if use_dnet {
            let d = bundle.dnet.as_ref().expect("checked above");
            let body = d.body.forward(store, &[xhat], Mode::Train)?;
            let disc = d.disc.forward(store, &[body.output()], Mode::Train)?;
            let dcls = d.cls.forward(store, &[body.output()], Mode::Train)?;
            let ns = non_saturating_loss(disc.output())?;
            let ce = adversarial_classification_loss(dcls.output(), labels)?;
            let lam = weights.lambda as f32;
            losses.adv = check("L_adv", adversarial_loss(ns.value, ce.value, weights.lambda))?;
            if l2 != 0.0 {
                let only = Backprop::inputs_only();
                let mut g = backward(&d.disc, store, &disc, &ns.grad.map(|v| v * lam * l2), only)?
                    .expect("input gradient requested");
                let g2 = backward(&d.cls, store, &dcls, &ce.grad.map(|v| v * (1.0 - lam) * l2), only)?
                    .expect("input gradient requested");
                g.add_assign(&g2)?;
                let gx = backward(&d.body, store, &body, &g, only)?.expect("input gradient requested");
                match &mut xhat_grad {
                    Some(acc) => acc.add_assign(&gx)?,
                    None => xhat_grad = Some(gx),
                }
            }
        }
        if let Some(g) = xhat_grad {
            feature_grad = backward(r, store, &ra, &g, through)?;
        }
        ra.commit_stats(store);
    }
    let gc = backward(&bundle.classifier, store, &ca, &cls.grad, through)?.expect("input gradient requested");
    let gf = match feature_grad {
        Some(fr) => {
            let mut g = gc;
            g.add_assign(&fr)?;
            g
        }
        None => gc,
    };
    backward(&bundle.fnet, store, &fa, &gf, Backprop::params(GroupSet::GENERATOR))?;
    fa.commit_stats(store);
    ca.commit_stats(store);
    let l2_eff = if use_dnet { weights.lambda2 } else { 0.0 };
    losses.cmb = check("L_cmb", combined_loss(losses.cls, losses.rec, losses.adv, weights.lambda1, l2_eff))?;
    adam.step(store, GroupSet::GENERATOR, lr)?;
    Ok(GeneratorOutput {
        losses,
        per_sample: cls.per_sample,
    })
}
