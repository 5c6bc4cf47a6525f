use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

/// Named tensor; frozen parameters are never updated by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        Parameter {
            name: name.into(),
            value,
            trainable,
        }
    }
}

/// Parameters keyed by name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        self.params
            .insert(name.clone(), Parameter::new(name, value, trainable));
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Set the trainable flag of every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.values_mut() {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Parameter> + 'a {
        self.params
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p)
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.params.extend(other.params);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update over every trainable parameter that has a
/// gradient. Frozen parameters and their moments are left untouched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        if !p.trainable {
            continue;
        }
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.value.shape()),
            ));
        }
        let [r, c] = g.shape();
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(r, c));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(r, c));
        for (((w, gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * gi;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * gi * gi;
            let delta = hyper.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + hyper.eps);
            if delta != 0.0 {
                *w -= delta;
            }
        }
        if !p.value.is_finite() {
            return Err(Error::Numeric(format!("parameter {name} became non-finite")));
        }
    }
    Ok(())
}
