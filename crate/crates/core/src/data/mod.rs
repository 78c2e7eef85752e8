//! Datasets, the split protocol, preprocessing and minibatch sampling.

mod image;
mod sampler;
mod split;
mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub use self::image::{augment_image, preprocess, quantize, AugmentConfig, Image};
pub use sampler::{epoch_batches, ros_batch, SamplerMode};
pub use split::{split_dataset, split_indices, SplitSpec};
pub use synthetic::{
    blob_width, generate_synthetic_dataset, render_sample, write_dataset_dir, SyntheticPreset, SyntheticSample,
    SyntheticSpec,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub class_label: usize,
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledImage>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<LabeledImage>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Input(format!(
                "a dataset needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if let Some(it) = items.iter().find(|it| it.class_label >= class_names.len()) {
            return Err(Error::Input(format!(
                "{}: class {} outside [0, {})",
                it.source_id,
                it.class_label,
                class_names.len()
            )));
        }
        Ok(Dataset { items, class_names })
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for it in &self.items {
            counts[it.class_label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.class_label).collect()
    }

    /// Item indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.class_count()];
        for (i, it) in self.items.iter().enumerate() {
            by[it.class_label].push(i);
        }
        by
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Keeps a seeded random `fraction` of each class (at least one item per
    /// non-empty class), preserving the original order.
    pub fn stratified_fraction(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("dataset fraction {fraction} outside (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut keep = Vec::new();
        for (k, mut idx) in self.indices_by_class().into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let n = ((idx.len() as f64 * fraction).round() as usize).max(1);
            idx.shuffle(&mut stream_rng(seed, Stream::Split, &[0xF0, k as u64]));
            keep.extend_from_slice(&idx[..n]);
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }

    /// Stacks the images at `indices` into an `(n, 1, H, W)` tensor.
    pub fn batch_tensor(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let images: Vec<&Image> = indices.iter().map(|&i| &self.items[i].image).collect();
        images_to_tensor(&images)
    }
}

pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("empty image batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::shape(
                "images_to_tensor",
                format!("{}x{} vs {}x{}", img.width(), img.height(), w, h),
            ));
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Splits an `(n, 1, H, W)` tensor back into images.
pub fn tensor_to_images(t: &Tensor<f32>) -> Result<Vec<Image>> {
    if t.rank() != 4 || t.dim(1) != 1 {
        return Err(Error::shape("tensor_to_images", format!("{:?}", t.shape())));
    }
    let (h, w) = (t.dim(2), t.dim(3));
    t.data()
        .chunks(h * w)
        .map(|c| Image::new(w, h, c.iter().map(|v| v.clamp(0.0, 1.0)).collect()))
        .collect()
}

#[derive(Deserialize)]
struct LabelRow {
    filename: String,
    class: String,
}

/// Reads a `filename,class` CSV and the 8-bit grayscale images it names.
/// Class names map to indices in sorted order.
pub fn load_dataset(root: &Path, labels_file: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(labels_file)
        .map_err(|e| Error::format(labels_file, e.to_string()))?;
    let rows: Vec<LabelRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(labels_file, e.to_string()))?;
    let names: Vec<String> = rows
        .iter()
        .map(|r| r.class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    load_rows(root, &rows, names)
}

/// Like [`load_dataset`], but with a fixed class list; unknown names are errors.
pub fn load_dataset_with_classes(root: &Path, labels_file: &Path, class_names: &[String]) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(labels_file)
        .map_err(|e| Error::format(labels_file, e.to_string()))?;
    let rows: Vec<LabelRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(labels_file, e.to_string()))?;
    load_rows(root, &rows, class_names.to_vec())
}

fn load_rows(root: &Path, rows: &[LabelRow], names: Vec<String>) -> Result<Dataset> {
    let mut items = Vec::with_capacity(rows.len());
    for r in rows {
        let class_label = names
            .iter()
            .position(|n| *n == r.class)
            .ok_or_else(|| Error::Input(format!("{}: unknown class name {:?}", r.filename, r.class)))?;
        let path = root.join(&r.filename);
        if !path.is_file() {
            return Err(Error::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "image listed in labels file is missing"),
            });
        }
        let image = Image::load_pgm(&path)?;
        let source_id = Path::new(&r.filename)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| r.filename.clone());
        items.push(LabeledImage {
            image,
            class_label,
            source_id,
        });
    }
    Dataset::new(items, names)
}
