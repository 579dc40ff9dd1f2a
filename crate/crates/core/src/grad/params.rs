use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl NamedSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat parameter vector with named, contiguous slices and a gradient
/// accumulator of the same length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    values: Vec<f64>,
    grad: Vec<f64>,
    slices: Vec<NamedSlice>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a store from raw parts, checking that the slices tile
    /// `values` exactly in order.
    pub fn from_parts(values: Vec<f64>, slices: Vec<NamedSlice>) -> Result<Self> {
        let mut cursor = 0;
        for s in &slices {
            if s.start != cursor {
                return Err(Error::InvalidConfig(format!(
                    "slice `{}` starts at {} but previous slice ended at {cursor}",
                    s.name, s.start
                )));
            }
            cursor += s.len;
        }
        if cursor != values.len() {
            return Err(Error::InvalidConfig(format!(
                "slices cover {cursor} parameters, vector has {}",
                values.len()
            )));
        }
        let grad = vec![0.0; values.len()];
        Ok(Self {
            values,
            grad,
            slices,
        })
    }

    /// Appends a new named slice initialised from `init` and returns its
    /// offset.
    pub fn allocate(&mut self, name: impl Into<String>, init: &[f64]) -> usize {
        let start = self.values.len();
        self.values.extend_from_slice(init);
        self.grad.resize(self.values.len(), 0.0);
        self.slices.push(NamedSlice {
            name: name.into(),
            start,
            len: init.len(),
        });
        start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn slices(&self) -> &[NamedSlice] {
        &self.slices
    }

    pub fn slice(&self, name: &str) -> Option<&NamedSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }
}
