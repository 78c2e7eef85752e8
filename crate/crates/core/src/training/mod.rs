//! Alternating discriminator/generator training, its baselines, and model
//! selection by validation accuracy.

mod adam;
mod checkpoint;
mod init;
mod step;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{epoch_batches, images_to_tensor, preprocess, AugmentConfig, Dataset, Image, SamplerMode};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, confusion_matrix, roc_auc, MetricsReport};
use crate::losses::{FocalParams, LossWeights};
use crate::networks::{default_side, predict_label, BundleConfig, DNetConfig, FNetConfig, ModelBundle, RNetConfig};
use crate::params::{GroupSet, OwnerGroup, ParameterStore};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_matching, read_checkpoint, save_checkpoint, StoredTensor, MAGIC};
pub use init::init_parameters;
pub use step::{ClassLoss, StepLosses};

/// Training arm. Only the adversarial arm builds a D-Net; the last two build an R-Net.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Baseline,
    Ros,
    Focal,
    Hem,
    RNet,
    RNetDNet,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim_start_matches('+') {
            "baseline" => Some(Method::Baseline),
            "ros" => Some(Method::Ros),
            "focal" => Some(Method::Focal),
            "hem" => Some(Method::Hem),
            "rnet" => Some(Method::RNet),
            "rnet+dnet" => Some(Method::RNetDNet),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Ros => "ros",
            Method::Focal => "focal",
            Method::Hem => "hem",
            Method::RNet => "rnet",
            Method::RNetDNet => "rnet+dnet",
        }
    }

    pub fn uses_rnet(self) -> bool {
        matches!(self, Method::RNet | Method::RNetDNet)
    }

    pub fn uses_dnet(self) -> bool {
        self == Method::RNetDNet
    }
}

/// Sizes of the four networks, independent of the training arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub depth: usize,
    pub image_size: usize,
    pub base_width: usize,
    pub feature_width: usize,
    pub rnet_hidden: usize,
    pub rnet_channels: usize,
    /// Side of the first R-Net feature map; the default depends on the image size.
    pub rnet_side: Option<usize>,
    pub dnet_base_channels: usize,
    pub dnet_n_down: usize,
}

impl ModelSpec {
    pub fn new(depth: usize, image_size: usize) -> Self {
        ModelSpec {
            depth,
            image_size,
            base_width: 64,
            feature_width: 128,
            rnet_hidden: 1024,
            rnet_channels: 128,
            rnet_side: None,
            dnet_base_channels: 64,
            dnet_n_down: 3,
        }
    }

    pub fn bundle_config(&self, method: Method, classes: usize) -> Result<BundleConfig> {
        let mut fnet = FNetConfig::new(self.depth, self.image_size);
        fnet.base_width = self.base_width;
        fnet.feature_width = self.feature_width;
        let mut cfg = BundleConfig::classifier_only(fnet, classes);
        if method.uses_rnet() {
            let side = self.rnet_side.unwrap_or_else(|| default_side(self.image_size));
            let mut r = RNetConfig::for_image(self.image_size, side, self.feature_width)?;
            r.hidden = self.rnet_hidden;
            r.channels = self.rnet_channels;
            cfg.rnet = Some(r);
        }
        if method.uses_dnet() {
            let mut d = DNetConfig::new(self.image_size, classes);
            d.base_channels = self.dnet_base_channels;
            d.n_down = self.dnet_n_down;
            cfg.dnet = Some(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub focal: FocalParams,
    pub method: Method,
    /// Oversampling composes with any method; [`Method::Ros`] implies it.
    pub sampler: SamplerMode,
    pub seed: u64,
    pub deterministic: bool,
    pub augment: AugmentConfig,
    pub hem_fraction: f64,
    /// Bitwise freeze assertions around every update.
    pub check_freeze: bool,
    /// Stop after this many iterations in total.
    pub max_iterations: Option<usize>,
    /// Where the best-validation checkpoint is written.
    pub checkpoint_path: Option<PathBuf>,
    /// Copies same-named tensors from a checkpoint after Xavier initialization.
    pub init_from: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(method: Method, image_size: usize, seed: u64) -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 200,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            method,
            sampler: SamplerMode::Plain,
            seed,
            deterministic: true,
            augment: AugmentConfig::new(image_size),
            hem_fraction: 0.25,
            check_freeze: false,
            max_iterations: None,
            checkpoint_path: None,
            init_from: None,
        }
    }

    pub fn sampler_mode(&self) -> SamplerMode {
        if self.method == Method::Ros {
            SamplerMode::Ros
        } else {
            self.sampler
        }
    }

    pub fn class_loss(&self) -> ClassLoss {
        if self.method == Method::Focal {
            ClassLoss::Focal(self.focal)
        } else {
            ClassLoss::CrossEntropy
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be >= 1".into()));
        }
        if !(self.hem_fraction > 0.0 && self.hem_fraction <= 1.0) {
            return Err(Error::Config(format!("HEM fraction {} outside (0, 1]", self.hem_fraction)));
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.focal.validate()?;
        self.augment.validate()
    }
}

/// `ceil(fraction * n)` indices of the largest losses, lower index first on
/// ties, returned in ascending order.
pub fn hem_select(per_sample_losses: &[f32], fraction: f64) -> Result<Vec<usize>> {
    if per_sample_losses.is_empty() {
        return Err(Error::Input("hard-example selection over an empty batch".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("HEM fraction {fraction} outside (0, 1]")));
    }
    let n = per_sample_losses.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| per_sample_losses[b].total_cmp(&per_sample_losses[a]).then(a.cmp(&b)));
    let mut out = order[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub epoch: usize,
    pub iteration: usize,
    pub cls: f32,
    pub rec: f32,
    pub adv: f32,
    pub cmb: f32,
    pub disc: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: usize,
    pub mean_cls: f64,
    pub mean_cmb: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub accuracy: f64,
}

/// Owns the model, optimizer state, counters and the best-validation record.
pub struct Trainer {
    pub bundle: ModelBundle<f32>,
    pub adam: AdamState<f32>,
    config: TrainConfig,
    epoch: usize,
    iteration: usize,
    log: Vec<IterationLog>,
    epochs: Vec<EpochSummary>,
    best: Option<BestRecord>,
    best_store: Option<ParameterStore<f32>>,
}

/// Blocks of at most this many images are pushed through evaluation passes.
const EVAL_BATCH: usize = 64;

impl Trainer {
    /// Builds and initializes the networks for `config.method`.
    pub fn new(bundle_config: BundleConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let method = config.method;
        if method.uses_rnet() != bundle_config.rnet.is_some() || method.uses_dnet() != bundle_config.dnet.is_some() {
            return Err(Error::Config(format!(
                "method {} does not match the configured networks",
                method.name()
            )));
        }
        if bundle_config.fnet.input_size != config.augment.target_size {
            return Err(Error::Config("augmentation target size differs from the model input size".into()));
        }
        let mut bundle = ModelBundle::build(bundle_config)?;
        init_parameters(&mut bundle.store, config.seed);
        if let Some(p) = &config.init_from {
            load_matching(&mut bundle.store, p)?;
        }
        let adam = AdamState::new(&bundle.store, config.adam);
        Ok(Trainer {
            bundle,
            adam,
            config,
            epoch: 0,
            iteration: 0,
            log: Vec::new(),
            epochs: Vec::new(),
            best: None,
            best_store: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[IterationLog] {
        &self.log
    }

    pub fn epochs(&self) -> &[EpochSummary] {
        &self.epochs
    }

    pub fn best(&self) -> Option<BestRecord> {
        self.best
    }

    /// Parameters at the best validation epoch (the current ones before any epoch ends).
    pub fn best_store(&self) -> &ParameterStore<f32> {
        self.best_store.as_ref().unwrap_or(&self.bundle.store)
    }

    /// The model with the best-epoch parameters.
    pub fn best_bundle(&self) -> ModelBundle<f32> {
        let mut b = self.bundle.clone();
        b.store = self.best_store().clone();
        b
    }

    fn abort(&self, e: Error) -> Error {
        match e {
            Error::NonFinite(detail) => Error::NumericAbort {
                epoch: self.epoch,
                iteration: self.iteration,
                detail,
            },
            other => other,
        }
    }

    fn freeze_check(&self, snapshot: &[(crate::params::ParamId, Tensor<f32>)], phase: &str) -> Result<()> {
        match self.bundle.store.changed_since(snapshot) {
            Some(g) => Err(Error::FreezeViolated {
                group: g.to_string(),
                phase: phase.into(),
            }),
            None => Ok(()),
        }
    }

    /// Discriminator update of one iteration; returns the D loss. Only the
    /// D-Net groups change.
    pub fn discriminator_step(&mut self, x: &Tensor<f32>, labels: &[usize]) -> Result<f32> {
        if self.bundle.dnet.is_none() {
            return Err(Error::Config("model has no D-Net".into()));
        }
        let weights = self.config.weights;
        let snap = self.config.check_freeze.then(|| self.bundle.store.snapshot(GroupSet::GENERATOR));
        let disc = step::discriminator_update(&mut self.bundle, &mut self.adam, x, labels, &weights, self.config.adam.lr)
            .map_err(|e| self.abort(e))?;
        if let Some(s) = snap {
            self.freeze_check(&s, "discriminator update")?;
        }
        Ok(disc)
    }

    /// Generator update of one iteration; only F, C and R change. Returns the
    /// losses (with `disc` zero) and the per-sample classification losses.
    pub fn generator_step(&mut self, x: &Tensor<f32>, labels: &[usize]) -> Result<(StepLosses, Vec<f32>)> {
        let weights = self.config.weights;
        let snap = self
            .config
            .check_freeze
            .then(|| self.bundle.store.snapshot(GroupSet::DISCRIMINATOR));
        let out = step::generator_update(
            &mut self.bundle,
            &mut self.adam,
            x,
            labels,
            &weights,
            self.config.class_loss(),
            self.config.adam.lr,
        )
        .map_err(|e| self.abort(e))?;
        if let Some(s) = snap {
            self.freeze_check(&s, "generator update")?;
        }
        Ok((out.losses, out.per_sample))
    }

    /// One iteration on a preprocessed batch: the discriminator update (when a
    /// D-Net exists) followed by the generator update.
    pub fn train_batch(&mut self, x: &Tensor<f32>, labels: &[usize]) -> Result<(StepLosses, Vec<f32>)> {
        self.iteration += 1;
        let disc = if self.bundle.dnet.is_some() {
            self.discriminator_step(x, labels)?
        } else {
            0.0
        };
        let (mut losses, per_sample) = self.generator_step(x, labels)?;
        losses.disc = disc;
        self.log.push(IterationLog {
            epoch: self.epoch,
            iteration: self.iteration,
            cls: losses.cls,
            rec: losses.rec,
            adv: losses.adv,
            cmb: losses.cmb,
            disc: losses.disc,
        });
        Ok((losses, per_sample))
    }

    /// Runs up to `config.epochs` epochs with validation-based model selection.
    /// `hook` sees the trainer after every iteration.
    pub fn fit(&mut self, train: &Dataset, val: &Dataset, mut hook: impl FnMut(&Trainer)) -> Result<()> {
        let m = self.bundle.image_size();
        let classes = self.bundle.classes();
        if train.class_count() != classes || val.class_count() != classes {
            return Err(Error::Config(format!(
                "datasets have {} classes, the model {classes}",
                train.class_count()
            )));
        }
        let val_images = resize_all(val, m);
        let val_labels = val.labels();
        let train_labels = train.labels();
        let base_pool: Vec<usize> = (0..train.len()).collect();
        let mut hard: Vec<usize> = Vec::new();
        let aug = self.config.augment;
        let total_epochs = self.config.epochs;
        while self.epoch < total_epochs {
            if self.config.max_iterations.is_some_and(|n| self.iteration >= n) {
                break;
            }
            self.epoch += 1;
            let mut pool = base_pool.clone();
            pool.append(&mut hard);
            let labels: Vec<usize> = pool.iter().map(|&i| train_labels[i]).collect();
            let batches = epoch_batches(
                &pool,
                &labels,
                classes,
                self.config.batch_size,
                self.config.sampler_mode(),
                self.config.seed,
                self.epoch as u64,
            )?;
            let (mut sum_cls, mut sum_cmb, mut count) = (0.0, 0.0, 0);
            let mut slot = 0u64;
            for batch in batches {
                if self.config.max_iterations.is_some_and(|n| self.iteration >= n) {
                    break;
                }
                let imgs: Vec<Image> = batch
                    .iter()
                    .map(|&i| {
                        slot += 1;
                        let mut rng = stream_rng(self.config.seed, Stream::Augment, &[self.epoch as u64, slot]);
                        preprocess(&train.items()[i].image, &aug, true, &mut rng)
                    })
                    .collect();
                let refs: Vec<&Image> = imgs.iter().collect();
                let x = images_to_tensor(&refs)?;
                let y: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
                let (losses, per_sample) = self.train_batch(&x, &y)?;
                if self.config.method == Method::Hem {
                    hard.extend(hem_select(&per_sample, self.config.hem_fraction)?.into_iter().map(|j| batch[j]));
                }
                sum_cls += f64::from(losses.cls);
                sum_cmb += f64::from(losses.cmb);
                count += 1;
                hook(self);
            }
            let acc = accuracy(&self.bundle, &val_images, &val_labels)?;
            self.epochs.push(EpochSummary {
                epoch: self.epoch,
                iterations: count,
                mean_cls: if count > 0 { sum_cls / count as f64 } else { f64::NAN },
                mean_cmb: if count > 0 { sum_cmb / count as f64 } else { f64::NAN },
                val_accuracy: acc,
            });
            if self.best.is_none_or(|b| acc > b.accuracy) {
                self.best = Some(BestRecord {
                    epoch: self.epoch,
                    accuracy: acc,
                });
                self.best_store = Some(self.bundle.store.clone());
                if let Some(p) = &self.config.checkpoint_path {
                    save_checkpoint(&self.bundle.store, p)?;
                }
            }
        }
        Ok(())
    }

    pub fn steps(&self, group: OwnerGroup) -> u64 {
        self.adam.steps(group)
    }

    /// Per-iteration log as CSV `epoch,iter,L_cls,L_rec,L_adv,L_cmb,D_loss`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,iter,L_cls,L_rec,L_adv,L_cmb,D_loss\n");
        for l in &self.log {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.epoch, l.iteration, l.cls, l.rec, l.adv, l.cmb, l.disc
            );
        }
        s
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }
}

fn resize_all(ds: &Dataset, m: usize) -> Vec<Image> {
    ds.items().iter().map(|it| it.image.resize_bilinear(m, m)).collect()
}

/// Class probabilities for `images`, in blocks.
pub fn predict_probs(bundle: &ModelBundle<f32>, images: &[Image]) -> Result<Tensor<f32>> {
    let mut parts = Vec::new();
    for chunk in images.chunks(EVAL_BATCH) {
        let refs: Vec<&Image> = chunk.iter().collect();
        parts.push(bundle.predict(&images_to_tensor(&refs)?)?.1);
    }
    let refs: Vec<&Tensor<f32>> = parts.iter().collect();
    Tensor::concat_batch(&refs)
}

fn accuracy(bundle: &ModelBundle<f32>, images: &[Image], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let pred = predict_label(&predict_probs(bundle, images)?);
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// Predictions and metrics of a model on a dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<usize>,
    pub probabilities: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Evaluation {
    /// Probability of class 1, the positive class of binary tasks.
    pub fn positive_scores(&self) -> Vec<f64> {
        let k = self.probabilities.dim(1);
        self.probabilities
            .data()
            .chunks(k)
            .map(|r| f64::from(r[1.min(k - 1)]))
            .collect()
    }
}

/// Confusion-matrix metrics, plus AUC for two classes.
pub fn evaluate_model(bundle: &ModelBundle<f32>, ds: &Dataset) -> Result<Evaluation> {
    let images = resize_all(ds, bundle.image_size());
    let probabilities = predict_probs(bundle, &images)?;
    let predictions = predict_label(&probabilities);
    let labels = ds.labels();
    let cm = confusion_matrix(&predictions, &labels, bundle.classes())?;
    let mut report = classification_metrics(&cm)?;
    let mut ev = Evaluation {
        report: report.clone(),
        predictions,
        probabilities,
        labels,
    };
    if bundle.classes() == 2 {
        let positives: Vec<bool> = ev.labels.iter().map(|&y| y == 1).collect();
        if positives.iter().any(|&p| p) && positives.iter().any(|&p| !p) {
            report.auc = Some(roc_auc(&ev.positive_scores(), &positives)?);
        }
    }
    ev.report = report;
    Ok(ev)
}
