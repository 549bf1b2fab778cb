use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// What a stored tensor is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Updated by the optimizer.
    Trainable,
    /// Batch-norm running statistics, updated during train-mode forward passes.
    RunningStat,
    /// Opaque tensors carried along with the store (e.g. best-so-far copies).
    Snapshot,
}

impl ParamRole {
    pub(crate) fn tag(self) -> u8 {
        match self {
            ParamRole::Trainable => 0,
            ParamRole::RunningStat => 1,
            ParamRole::Snapshot => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ParamRole::Trainable),
            1 => Some(ParamRole::RunningStat),
            2 => Some(ParamRole::Snapshot),
            _ => None,
        }
    }
}

/// A named tensor together with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
    /// Frozen parameters are skipped by the optimizer. Not persisted.
    pub frozen: bool,
}

impl Param {
    fn new(name: String, role: ParamRole, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name,
            role,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            step: 0,
            frozen: false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.role == ParamRole::Trainable
    }
}

/// Insertion-ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param::new(name, role, value));
        Ok(ParamId(id))
    }

    /// Inserts a fully populated parameter (used by checkpoint loading).
    pub(crate) fn push_param(&mut self, param: Param) -> Result<ParamId> {
        if self.index.contains_key(&param.name) {
            return Err(NnError::DuplicateParam(param.name));
        }
        let id = self.params.len();
        self.index.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    /// Clears Adam moments and step counters.
    pub fn reset_optimizer_state(&mut self) {
        for p in &mut self.params {
            p.m.fill(0.0);
            p.v.fill(0.0);
            p.step = 0;
        }
    }

    /// Number of trainable scalars under `prefix`.
    pub fn trainable_count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.is_trainable() && p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Copies the values of every parameter under `prefix` (including running
    /// statistics) into snapshot entries named `"{tag}/{name}"`.
    pub fn save_snapshot(&mut self, tag: &str, prefix: &str) -> Result<()> {
        let sources: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|p| p.role != ParamRole::Snapshot && p.name.starts_with(prefix))
            .map(|p| (format!("{tag}/{}", p.name), p.value.clone()))
            .collect();
        for (name, value) in sources {
            match self.id(&name) {
                Some(id) => self.params[id.0].value = value,
                None => {
                    self.add(name, ParamRole::Snapshot, value)?;
                }
            }
        }
        Ok(())
    }

    /// Restores values saved by [`ParamStore::save_snapshot`]. Returns false if
    /// no snapshot with this tag exists.
    pub fn restore_snapshot(&mut self, tag: &str) -> bool {
        let marker = format!("{tag}/");
        let restores: Vec<(usize, Tensor)> = self
            .params
            .iter()
            .filter_map(|p| {
                let target = p.name.strip_prefix(&marker)?;
                Some((*self.index.get(target)?, p.value.clone()))
            })
            .collect();
        let found = !restores.is_empty();
        for (i, value) in restores {
            self.params[i].value = value;
        }
        found
    }

    /// Removes all snapshot entries with the given tag.
    pub fn drop_snapshot(&mut self, tag: &str) {
        let marker = format!("{tag}/");
        let kept: Vec<Param> = self
            .params
            .drain(..)
            .filter(|p| !(p.role == ParamRole::Snapshot && p.name.starts_with(&marker)))
            .collect();
        self.index = kept.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        self.params = kept;
    }

    /// Values of all parameters under `prefix`, for bit-exact comparisons.
    pub fn values_under(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }
}
