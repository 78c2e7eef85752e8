use crate::error::{Error, Result};
use crate::params::{GroupSet, OwnerGroup, ParameterStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates for every trainable tensor and one step counter per group.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    steps: [u64; 6],
}

impl<T: Scalar> AdamState<T> {
    pub fn new<S: Scalar>(store: &ParameterStore<S>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            steps: [0; 6],
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self, group: OwnerGroup) -> u64 {
        self.steps[group.index()]
    }

    /// One bias-corrected update of every trainable tensor in `groups`; all
    /// other tensors are left untouched. Groups without parameters keep a
    /// zero step count.
    pub fn step(&mut self, store: &mut ParameterStore<T>, groups: GroupSet, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Input("optimizer state does not match the parameter store".into()));
        }
        let ids: Vec<_> = store
            .ids_in(groups)
            .filter(|&id| !store.info(id).is_buffer())
            .collect();
        for g in groups.iter() {
            if ids.iter().any(|&id| store.info(id).group == g) {
                self.steps[g.index()] += 1;
            }
        }
        let (b1, b2) = (T::lit(self.config.beta1), T::lit(self.config.beta2));
        let (one, eps, lr) = (T::one(), T::lit(self.config.eps), T::lit(lr));
        for id in ids {
            let t = self.steps[store.info(id).group.index()] as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
