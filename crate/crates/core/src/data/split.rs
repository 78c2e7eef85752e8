use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub test_per_class: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            test_per_class: 100,
            validation_fraction: 0.2,
            seed,
        }
    }
}

/// Index partition `(train, validation, test)`.
pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {} outside (0, 1)",
            spec.validation_fraction
        )));
    }
    let by_class = ds.indices_by_class();
    if let Some((k, c)) = by_class
        .iter()
        .enumerate()
        .find(|(_, c)| c.len() < spec.test_per_class)
    {
        return Err(Error::Input(format!(
            "class {} has {} samples, fewer than the {} reserved for testing",
            ds.class_names()[k],
            c.len(),
            spec.test_per_class
        )));
    }
    let mut test = Vec::new();
    let mut rest = Vec::new();
    for (k, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut stream_rng(spec.seed, Stream::Split, &[1, k as u64]));
        test.extend_from_slice(&idx[..spec.test_per_class]);
        rest.extend_from_slice(&idx[spec.test_per_class..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut stream_rng(spec.seed, Stream::Split, &[2]));
    let n_val = (rest.len() as f64 * spec.validation_fraction).round() as usize;
    let validation = rest.split_off(rest.len() - n_val);
    test.sort_unstable();
    Ok((rest, validation, test))
}

/// Balanced test reserve, then a seeded 80/20 train/validation split of the rest.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = split_indices(ds, spec)?;
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}
