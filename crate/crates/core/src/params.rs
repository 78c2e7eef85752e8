//! Named trainable tensors grouped by the network that owns them.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::ops::{ParamRole, StatUpdate, BN_MOMENTUM};
use crate::tensor::{Scalar, Tensor};

/// Owner of a parameter. Freezing during alternating updates works per group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OwnerGroup {
    /// Feature extractor.
    F,
    /// Classifier.
    C,
    /// Reconstruction generator.
    R,
    /// Discriminator backbone.
    D,
    /// Discriminator patch head.
    DDisc,
    /// Discriminator class head.
    DCls,
}

impl OwnerGroup {
    pub const ALL: [OwnerGroup; 6] = [
        OwnerGroup::F,
        OwnerGroup::C,
        OwnerGroup::R,
        OwnerGroup::D,
        OwnerGroup::DDisc,
        OwnerGroup::DCls,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OwnerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OwnerGroup::F => "F",
            OwnerGroup::C => "C",
            OwnerGroup::R => "R",
            OwnerGroup::D => "D",
            OwnerGroup::DDisc => "D_disc",
            OwnerGroup::DCls => "D_cls",
        };
        f.write_str(s)
    }
}

/// A set of owner groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const NONE: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(0b11_1111);
    /// Feature extractor, classifier and generator.
    pub const GENERATOR: GroupSet = GroupSet(0b00_0111);
    /// Discriminator backbone and both heads.
    pub const DISCRIMINATOR: GroupSet = GroupSet(0b11_1000);

    pub fn of(groups: &[OwnerGroup]) -> Self {
        GroupSet(groups.iter().fold(0, |acc, g| acc | g.bit()))
    }

    pub fn contains(self, g: OwnerGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = OwnerGroup> {
        OwnerGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamInfo {
    pub name: String,
    pub group: OwnerGroup,
    pub role: ParamRole,
}

impl ParamInfo {
    /// Buffers (running statistics) are state, not trainable parameters.
    pub fn is_buffer(&self) -> bool {
        self.role.is_buffer()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    info: Vec<ParamInfo>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    initialized: Vec<bool>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            info: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            initialized: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a zero-filled, uninitialized tensor.
    pub fn register(&mut self, name: &str, group: OwnerGroup, role: ParamRole, shape: &[usize]) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.info.len());
        self.info.push(ParamInfo {
            name: name.to_string(),
            group,
            role,
        });
        self.values.push(Tensor::zeros(shape));
        self.grads.push(Tensor::zeros(shape));
        self.initialized.push(false);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.info.len()).map(ParamId)
    }

    pub fn ids_in(&self, groups: GroupSet) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |id| groups.contains(self.info[id.0].group))
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.info[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn is_initialized(&self, id: ParamId) -> bool {
        self.initialized[id.0]
    }

    /// Overwrites a tensor's value and marks it initialized.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                self.info[id.0].name.clone(),
                format!("{:?} vs {:?}", value.shape(), self.values[id.0].shape()),
            ));
        }
        self.values[id.0] = value;
        self.initialized[id.0] = true;
        Ok(())
    }

    /// Mutable access for in-place updates; the tensor counts as initialized afterwards.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        self.initialized[id.0] = true;
        &mut self.values[id.0]
    }

    /// `(value, grad)` pair for optimizers.
    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &Tensor<T>) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    pub(crate) fn values_and_grads(&mut self) -> (&[Tensor<T>], &mut [Tensor<T>]) {
        (&self.values, &mut self.grads)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        self.grads[id.0].add_assign(g)
    }

    pub fn zero_grads(&mut self, groups: GroupSet) {
        for (info, g) in self.info.iter().zip(self.grads.iter_mut()) {
            if groups.contains(info.group) {
                g.fill(T::zero());
            }
        }
    }

    /// Blends batch statistics into running buffers.
    pub fn apply_stat_update(&mut self, mean_id: ParamId, var_id: ParamId, update: &StatUpdate<T>) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for (r, &b) in self.values[mean_id.0].data_mut().iter_mut().zip(&update.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.values[var_id.0].data_mut().iter_mut().zip(&update.var) {
            *r = keep * *r + m * b;
        }
    }

    /// Copies of every tensor in `groups`, for bitwise freeze checks.
    pub fn snapshot(&self, groups: GroupSet) -> Vec<(ParamId, Tensor<T>)> {
        self.ids_in(groups)
            .filter(|id| !self.info[id.0].is_buffer())
            .map(|id| (id, self.values[id.0].clone()))
            .collect()
    }

    /// First group whose snapshot differs bitwise from the current values.
    pub fn changed_since(&self, snapshot: &[(ParamId, Tensor<T>)]) -> Option<OwnerGroup> {
        snapshot.iter().find_map(|(id, t)| {
            let now = &self.values[id.0];
            let same = now
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_f64_lossy().to_bits() == b.to_f64_lossy().to_bits());
            (!same).then_some(self.info[id.0].group)
        })
    }

    /// Number of trainable scalars in `groups`.
    pub fn trainable_count(&self, groups: GroupSet) -> usize {
        self.ids_in(groups)
            .filter(|id| !self.info[id.0].is_buffer())
            .map(|id| self.values[id.0].len())
            .sum()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            info: self.info.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
            grads: self.grads.iter().map(|t| t.cast()).collect(),
            initialized: self.initialized.clone(),
            by_name: self.by_name.clone(),
        }
    }
}
