//! Seeded blob-image datasets standing in for the real scans.
//!
//! A class-`k` image is uniform background noise of amplitude 0.1 plus `k + 1`
//! well separated Gaussian blobs whose width grows with `k`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};

use super::image::Image;
use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

pub const NOISE_AMPLITUDE: f32 = 0.1;
/// Blob centres are at least this many widths apart.
const MIN_SEPARATION: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticPreset {
    /// Three classes with the 417 / 7866 / 5375 training skew.
    Covidx,
    /// Two classes with the 905 / 2150 skew.
    Opscc,
}

impl SyntheticPreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "covidx" => Some(SyntheticPreset::Covidx),
            "opscc" => Some(SyntheticPreset::Opscc),
            _ => None,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            SyntheticPreset::Covidx => &["covid", "normal", "pneumonia"],
            SyntheticPreset::Opscc => &["high_risk", "low_risk"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn base_counts(self) -> Vec<usize> {
        match self {
            SyntheticPreset::Covidx => vec![417, 7866, 5375],
            SyntheticPreset::Opscc => vec![905, 2150],
        }
    }

    /// Base counts scaled and rounded, at least one per class.
    pub fn scaled_counts(self, scale: f64) -> Vec<usize> {
        self.base_counts()
            .into_iter()
            .map(|c| ((c as f64 * scale).round() as usize).max(1))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub class_names: Vec<String>,
    pub counts: Vec<usize>,
    pub image_size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(counts: Vec<usize>, image_size: usize, seed: u64) -> Self {
        let class_names = (0..counts.len()).map(|k| format!("class_{k}")).collect();
        SyntheticSpec {
            class_names,
            counts,
            image_size,
            seed,
        }
    }

    /// A preset at `scale`, with `extra_per_class` added to every class
    /// (room for a balanced test reserve).
    pub fn from_preset(preset: SyntheticPreset, scale: f64, extra_per_class: usize, image_size: usize, seed: u64) -> Self {
        SyntheticSpec {
            class_names: preset.class_names(),
            counts: preset
                .scaled_counts(scale)
                .into_iter()
                .map(|c| c + extra_per_class)
                .collect(),
            image_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.counts.len();
        if !(2..=3).contains(&k) || self.class_names.len() != k {
            return Err(Error::Config(format!("synthetic data supports 2 or 3 classes, got {k}")));
        }
        if self.counts.contains(&0) {
            return Err(Error::Config("synthetic class counts must be >= 1".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "synthetic images need at least 16 pixels per side, got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSample {
    pub source_id: String,
    pub class_label: usize,
    pub seed: u64,
}

pub fn blob_width(class_label: usize, image_size: usize) -> f64 {
    image_size as f64 * (0.055 + 0.015 * class_label as f64)
}

/// Renders one class-`k` image from its own seed.
pub fn render_sample(class_label: usize, image_size: usize, seed: u64) -> Image {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = image_size;
    let sigma = blob_width(class_label, m);
    let margin = 2.0 * sigma;
    let span = m as f64 - 1.0 - 2.0 * margin;
    let blobs = class_label + 1;
    let centres = loop {
        let mut c: Vec<(f64, f64)> = Vec::with_capacity(blobs);
        let mut attempts = 0;
        while c.len() < blobs && attempts < 200 {
            attempts += 1;
            let p = (margin + rng.gen::<f64>() * span, margin + rng.gen::<f64>() * span);
            if c
                .iter()
                .all(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() >= MIN_SEPARATION * sigma)
            {
                c.push(p);
            }
        }
        if c.len() == blobs {
            break c;
        }
    };
    let amplitudes: Vec<f64> = (0..blobs).map(|_| 0.7 + 0.2 * rng.gen::<f64>()).collect();
    let mut px = Vec::with_capacity(m * m);
    for y in 0..m {
        for x in 0..m {
            let mut v = f64::from(NOISE_AMPLITUDE) * rng.gen::<f64>();
            for (&(cx, cy), &a) in centres.iter().zip(&amplitudes) {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += a * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            px.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(m, m, px).expect("rendered pixels are in range")
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<(Dataset, Vec<SyntheticSample>)> {
    spec.validate()?;
    let mut items = Vec::new();
    let mut manifest = Vec::new();
    for (k, &count) in spec.counts.iter().enumerate() {
        for i in 0..count {
            let seed = derive_seed(spec.seed, Stream::Synthetic, &[k as u64, i as u64]);
            let source_id = format!("{}_{i:05}", spec.class_names[k]);
            items.push(LabeledImage {
                image: render_sample(k, spec.image_size, seed),
                class_label: k,
                source_id: source_id.clone(),
            });
            manifest.push(SyntheticSample {
                source_id,
                class_label: k,
                seed,
            });
        }
    }
    Ok((Dataset::new(items, spec.class_names.clone())?, manifest))
}

/// Writes `<source_id>.pgm` per item, `labels.csv` and, when given, `manifest.csv`.
pub fn write_dataset_dir(ds: &Dataset, dir: &Path, manifest: Option<&[SyntheticSample]>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::from("filename,class\n");
    for it in ds.items() {
        let file = format!("{}.pgm", it.source_id);
        it.image.save_pgm(&dir.join(&file))?;
        let _ = writeln!(labels, "{file},{}", ds.class_names()[it.class_label]);
    }
    let path = dir.join("labels.csv");
    std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
    if let Some(rows) = manifest {
        let mut text = String::from("source_id,class,seed\n");
        for r in rows {
            let _ = writeln!(text, "{},{},{}", r.source_id, ds.class_names()[r.class_label], r.seed);
        }
        let path = dir.join("manifest.csv");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_counts() {
        assert_eq!(SyntheticPreset::Covidx.scaled_counts(0.1), vec![42, 787, 538]);
        assert_eq!(SyntheticPreset::Opscc.scaled_counts(0.1), vec![91, 215]);
        assert_eq!(SyntheticPreset::Covidx.scaled_counts(1.0), vec![417, 7866, 5375]);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::new(vec![3, 2], 16, 9);
        let (a, ma) = generate_synthetic_dataset(&spec).unwrap();
        let (b, mb) = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.class_counts(), vec![3, 2]);
        let other = generate_synthetic_dataset(&SyntheticSpec { seed: 10, ..spec }).unwrap().0;
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic_dataset(&SyntheticSpec::new(vec![1, 2, 3, 4], 32, 0)).is_err());
        assert!(generate_synthetic_dataset(&SyntheticSpec::new(vec![0, 2], 32, 0)).is_err());
    }

    #[test]
    fn pixels_in_range() {
        let (ds, _) = generate_synthetic_dataset(&SyntheticSpec::new(vec![3, 3, 3], 32, 1)).unwrap();
        for it in ds.items() {
            assert!(it.image.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
