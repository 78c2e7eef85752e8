//! Flat `key = value` experiment files with `#` comments and dotted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use auxcnn_core::data::{SamplerMode, SplitSpec, SyntheticPreset, SyntheticSpec};
use auxcnn_core::networks::SUPPORTED_DEPTHS;
use auxcnn_core::training::{Method, ModelSpec, TrainConfig};
use auxcnn_core::{Error, Result};

pub const IMAGE_SIZES: [usize; 4] = [32, 112, 224, 448];

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        preset: Option<SyntheticPreset>,
        scale: f64,
        counts: Vec<usize>,
        extra_per_class: usize,
        image_size: usize,
        seed: u64,
    },
    Directory {
        root: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub baseline: Method,
    pub dataset: DatasetSource,
    pub dataset_fraction: f64,
    pub split: SplitSpec,
    pub model: ModelSpec,
    /// Template for every run; method and seed are set per run.
    pub train: TrainConfig,
}

impl DatasetSource {
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match self {
            DatasetSource::Synthetic {
                preset,
                scale,
                counts,
                extra_per_class,
                image_size,
                seed,
            } => Some(match preset {
                Some(p) => SyntheticSpec::from_preset(*p, *scale, *extra_per_class, *image_size, *seed),
                None => SyntheticSpec::new(counts.iter().map(|c| c + extra_per_class).collect(), *image_size, *seed),
            }),
            DatasetSource::Directory { .. } => None,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, what))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

fn method(key: &str, v: &str) -> Result<Method> {
    Method::parse(v).ok_or_else(|| bad(key, v, "baseline, ros, focal, hem, rnet or rnet+dnet"))
}

/// Splits the text into `key -> value`, rejecting malformed and repeated lines.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses a config; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let seed: u64 = get("seed").map(|v| num("seed", v, "an integer")).transpose()?.unwrap_or(0);
        let image_size: usize = get("model.image_size")
            .map(|v| num("model.image_size", v, "an integer"))
            .transpose()?
            .unwrap_or(32);
        let depth: usize = get("model.depth")
            .map(|v| num("model.depth", v, "an integer"))
            .transpose()?
            .unwrap_or(12);
        let mut cfg = ExperimentConfig {
            seed,
            deterministic: true,
            repeats: 3,
            output_dir: base.join("runs"),
            methods: vec![Method::RNetDNet],
            baseline: Method::Baseline,
            dataset: DatasetSource::Synthetic {
                preset: Some(SyntheticPreset::Covidx),
                scale: 0.1,
                counts: Vec::new(),
                extra_per_class: 100,
                image_size,
                seed,
            },
            dataset_fraction: 1.0,
            split: SplitSpec::new(seed),
            model: ModelSpec::new(depth, image_size),
            train: TrainConfig::new(Method::RNetDNet, image_size, seed),
        };
        let mut source = "synthetic".to_string();
        let mut path = None;
        let mut labels = None;
        let (mut preset, mut scale, mut counts, mut extra, mut syn_size, mut syn_seed) =
            (Some(SyntheticPreset::Covidx), 0.1, Vec::new(), 100usize, image_size, seed);

        for (k, v) in &pairs {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "seed" | "model.image_size" | "model.depth" => {}
                "deterministic" => cfg.deterministic = flag(k, v)?,
                "repeats" => cfg.repeats = num(k, v, "an integer")?,
                "output_dir" => cfg.output_dir = base.join(v),
                "method" | "methods" => {
                    cfg.methods = v
                        .split(',')
                        .map(|m| method(k, m.trim()))
                        .collect::<Result<_>>()?
                }
                "baseline" => cfg.baseline = method(k, v)?,
                "dataset.source" => source = v.to_string(),
                "dataset.path" => path = Some(base.join(v)),
                "dataset.labels" => labels = Some(base.join(v)),
                "dataset.preset" => {
                    preset = match v {
                        "custom" => None,
                        other => Some(SyntheticPreset::parse(other).ok_or_else(|| bad(k, v, "covidx, opscc or custom"))?),
                    }
                }
                "dataset.scale" => scale = num(k, v, "a number")?,
                "dataset.counts" => {
                    counts = v
                        .split(',')
                        .map(|c| num(k, c.trim(), "comma-separated integers"))
                        .collect::<Result<_>>()?
                }
                "dataset.extra_per_class" => extra = num(k, v, "an integer")?,
                "dataset.image_size" => syn_size = num(k, v, "an integer")?,
                "dataset.seed" => syn_seed = num(k, v, "an integer")?,
                "dataset.fraction" => cfg.dataset_fraction = num(k, v, "a number")?,
                "split.test_per_class" => cfg.split.test_per_class = num(k, v, "an integer")?,
                "split.validation_fraction" => cfg.split.validation_fraction = num(k, v, "a number")?,
                "model.base_width" => cfg.model.base_width = num(k, v, "an integer")?,
                "model.feature_width" => cfg.model.feature_width = num(k, v, "an integer")?,
                "model.rnet_hidden" => cfg.model.rnet_hidden = num(k, v, "an integer")?,
                "model.rnet_channels" => cfg.model.rnet_channels = num(k, v, "an integer")?,
                "model.rnet_side" => cfg.model.rnet_side = Some(num(k, v, "an integer")?),
                "model.dnet_base_channels" => cfg.model.dnet_base_channels = num(k, v, "an integer")?,
                "model.dnet_n_down" => cfg.model.dnet_n_down = num(k, v, "an integer")?,
                "train.batch_size" => cfg.train.batch_size = num(k, v, "an integer")?,
                "train.epochs" => cfg.train.epochs = num(k, v, "an integer")?,
                "train.lr" => cfg.train.adam.lr = num(k, v, "a number")?,
                "train.beta1" => cfg.train.adam.beta1 = num(k, v, "a number")?,
                "train.beta2" => cfg.train.adam.beta2 = num(k, v, "a number")?,
                "train.adam_eps" => cfg.train.adam.eps = num(k, v, "a number")?,
                "train.sampler" => {
                    cfg.train.sampler = match v {
                        "plain" => SamplerMode::Plain,
                        "ros" => SamplerMode::Ros,
                        _ => return Err(bad(k, v, "plain or ros")),
                    }
                }
                "train.hem_fraction" => cfg.train.hem_fraction = num(k, v, "a number")?,
                "train.check_freeze" => cfg.train.check_freeze = flag(k, v)?,
                "train.max_iterations" => cfg.train.max_iterations = Some(num(k, v, "an integer")?),
                "train.init_from" => cfg.train.init_from = Some(base.join(v)),
                "loss.lambda1" => cfg.train.weights.lambda1 = num(k, v, "a number")?,
                "loss.lambda2" => cfg.train.weights.lambda2 = num(k, v, "a number")?,
                "loss.lambda" => cfg.train.weights.lambda = num(k, v, "a number")?,
                "loss.eps1" => cfg.train.weights.eps1 = num(k, v, "a number")?,
                "loss.eps2" => cfg.train.weights.eps2 = num(k, v, "a number")?,
                "focal.gamma" => cfg.train.focal.gamma = num(k, v, "a number")?,
                "focal.alpha" => cfg.train.focal.alpha = num(k, v, "a number")?,
                "augment.rotation_degrees" => cfg.train.augment.rotation_range_degrees = num(k, v, "a number")?,
                "augment.flip_probability" => cfg.train.augment.horizontal_flip_probability = num(k, v, "a number")?,
                "augment.rotation_enabled" => cfg.train.augment.rotation_enabled = flag(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        cfg.dataset = match source.as_str() {
            "synthetic" => DatasetSource::Synthetic {
                preset,
                scale,
                counts,
                extra_per_class: extra,
                image_size: syn_size,
                seed: syn_seed,
            },
            "directory" => DatasetSource::Directory {
                root: path.ok_or_else(|| Error::Config("dataset.path is required for a directory dataset".into()))?,
                labels: labels.ok_or_else(|| Error::Config("dataset.labels is required for a directory dataset".into()))?,
            },
            other => return Err(bad("dataset.source", other, "synthetic or directory")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.model.image_size;
        if !IMAGE_SIZES.contains(&m) {
            return Err(Error::Config(format!("model.image_size {m} not in {IMAGE_SIZES:?}")));
        }
        if !SUPPORTED_DEPTHS.contains(&self.model.depth) {
            return Err(Error::Config(format!(
                "model.depth {} not in {SUPPORTED_DEPTHS:?}",
                self.model.depth
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return Err(Error::Config(format!("dataset.fraction {} outside (0, 1]", self.dataset_fraction)));
        }
        if !(self.split.validation_fraction > 0.0 && self.split.validation_fraction < 1.0) {
            return Err(Error::Config("split.validation_fraction must be in (0, 1)".into()));
        }
        if let Some(spec) = self.dataset.synthetic_spec() {
            spec.validate()?;
            if let DatasetSource::Synthetic { preset: None, counts, .. } = &self.dataset {
                if counts.is_empty() {
                    return Err(Error::Config("dataset.counts is required for a custom synthetic dataset".into()));
                }
            }
            if spec.counts.iter().any(|&c| c < self.split.test_per_class) {
                return Err(Error::Config(format!(
                    "synthetic classes {:?} cannot reserve {} test samples each",
                    spec.counts, self.split.test_per_class
                )));
            }
        }
        let classes = self.class_count_hint();
        for &method in self.methods.iter().chain(std::iter::once(&self.baseline)) {
            self.model.bundle_config(method, classes.unwrap_or(2))?;
            self.run_config(method, self.seed).validate()?;
        }
        if self.train.augment.target_size != m {
            return Err(Error::Config("augmentation size differs from model.image_size".into()));
        }
        Ok(())
    }

    /// Number of classes when known without reading the dataset.
    pub fn class_count_hint(&self) -> Option<usize> {
        self.dataset.synthetic_spec().map(|s| s.counts.len())
    }

    pub fn run_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.method = method;
        t.seed = seed;
        t.deterministic = self.deterministic;
        t
    }
}
