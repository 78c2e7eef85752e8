use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    /// Epoch-shuffled order, each pool entry once.
    Plain,
    /// Random oversampling: a uniform class per slot, then a uniform member.
    Ros,
}

/// One ROS minibatch of `m` draws from `by_class`.
pub fn ros_batch<R: Rng>(by_class: &[Vec<usize>], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if let Some(k) = by_class.iter().position(|c| c.is_empty()) {
        return Err(Error::Input(format!("oversampling needs every class, class {k} is empty")));
    }
    Ok((0..m)
        .map(|_| {
            let c = &by_class[rng.gen_range(0..by_class.len())];
            c[rng.gen_range(0..c.len())]
        })
        .collect())
}

/// Minibatches of entries of `pool` for one epoch. `labels[i]` is the class of
/// pool entry `pool[i]`. Plain mode keeps the last partial batch; ROS emits
/// `ceil(len / m)` full batches.
pub fn epoch_batches(
    pool: &[usize],
    labels: &[usize],
    classes: usize,
    m: usize,
    mode: SamplerMode,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if pool.len() != labels.len() {
        return Err(Error::Input("pool and labels differ in length".into()));
    }
    if pool.is_empty() {
        return Err(Error::Input("empty training pool".into()));
    }
    match mode {
        SamplerMode::Plain => {
            let mut order = pool.to_vec();
            order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch]));
            Ok(order.chunks(m).map(<[usize]>::to_vec).collect())
        }
        SamplerMode::Ros => {
            let mut by_class = vec![Vec::new(); classes];
            for (&p, &y) in pool.iter().zip(labels) {
                by_class[y].push(p);
            }
            let mut rng = stream_rng(seed, Stream::Sampler, &[epoch]);
            let batches = pool.len().div_ceil(m);
            (0..batches).map(|_| ros_batch(&by_class, m, &mut rng)).collect()
        }
    }
}
