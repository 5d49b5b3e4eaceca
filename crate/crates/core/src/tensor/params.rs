use std::collections::BTreeMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters, each with a gradient accumulator of identical shape.
///
/// Iteration order is the lexicographic order of names, which keeps
/// optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    slots: BTreeMap<String, Slot>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Integrity(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let grad = Tensor::zeros(value.shape());
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    /// Inserts or replaces a parameter, resetting its gradient.
    pub fn set(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.slots.insert(name.into(), Slot { value, grad });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::Integrity(format!("missing parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::Integrity(format!("missing parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::Integrity(format!("missing gradient for `{name}`")))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.grad)
            .ok_or_else(|| Error::Integrity(format!("missing gradient for `{name}`")))
    }

    /// Adds `g` into the gradient slot of `name`.
    pub fn accumulate(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let slot = self.grad_mut(name)?;
        if slot.shape() != g.shape() {
            return Err(Error::dim("accumulate", slot.shape(), g.shape()));
        }
        slot.add_assign(g)
    }

    /// Adds `g` into row `row` of the gradient of a matrix parameter.
    pub fn accumulate_row(&mut self, name: &str, row: usize, g: &[f64]) -> Result<()> {
        let slot = self.grad_mut(name)?;
        if row >= slot.rows() || g.len() != slot.cols() {
            return Err(Error::dim("accumulate_row", slot.shape(), &[row, g.len()]));
        }
        for (a, b) in slot.row_mut(row).iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for slot in self.slots.values_mut() {
            for g in slot.grad.data_mut() {
                *g *= s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Tensor)> {
        self.slots
            .iter_mut()
            .map(|(k, s)| (k.as_str(), &mut s.value, &mut s.grad))
    }

    /// Moves every parameter of `other` into `self`.
    pub fn merge(&mut self, other: ParamSet) -> Result<()> {
        for (name, slot) in other.slots {
            if self.slots.contains_key(&name) {
                return Err(Error::Integrity(format!(
                    "duplicate parameter name `{name}`"
                )));
            }
            self.slots.insert(name, slot);
        }
        Ok(())
    }

    /// Copies the parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            slots: self
                .slots
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites values (not gradients) of parameters present in `other`.
    pub fn load_values(&mut self, other: &ParamSet) -> Result<()> {
        for (name, slot) in &other.slots {
            let dst = self.value_mut(name)?;
            if dst.shape() != slot.value.shape() {
                return Err(Error::dim("load_values", dst.shape(), slot.value.shape()));
            }
            *dst = slot.value.clone();
        }
        Ok(())
    }

    pub fn total_elements(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }
}

/// Uniform Glorot initialisation for a `[fan_in × fan_out]` matrix.
pub fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-a..a))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}
