//! Named trainable arrays and the Adam optimizer.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Parameter storage in insertion order with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(param_err(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            frozen: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.id(name).map(|id| self.entry(id))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.entries[id.0].name.starts_with(prefix))
    }

    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Replaces the value of a non-frozen parameter.
    pub fn update(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.frozen {
            return Err(Error::Frozen(e.name.clone()));
        }
        if e.value.shape() != value.shape() {
            return Err(dim_err(e.value.shape(), value.shape()));
        }
        e.value = value;
        Ok(())
    }

    /// Overwrites a value regardless of the frozen flag; used when restoring
    /// checkpoints.
    pub fn load_value(&mut self, name: &str, value: Tensor, frozen: bool) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::Checkpoint {
            name: name.to_string(),
            message: "no such parameter".into(),
        })?;
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Checkpoint {
                name: name.to_string(),
                message: format!("shape {:?} does not match {:?}", value.shape(), e.value.shape()),
            });
        }
        e.value = value;
        e.frozen = frozen;
        Ok(())
    }
}

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
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(param_err("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(param_err("Adam decay rates must lie in [0, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(param_err("eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    first: BTreeMap<ParamId, Vec<f64>>,
    second: BTreeMap<ParamId, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Gradients for frozen parameters are an error.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<ParamId, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    for (id, g) in grads {
        let e = params.entry(*id);
        if e.frozen {
            return Err(Error::Frozen(e.name.clone()));
        }
        if e.value.shape() != g.shape() {
            return Err(dim_err(e.value.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads {
        let n = g.len();
        let m = state.first.entry(*id).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(*id).or_insert_with(|| vec![0.0; n]);
        let mut value = params.entry(*id).value.clone();
        for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        params.update(*id, value)?;
    }
    Ok(())
}
