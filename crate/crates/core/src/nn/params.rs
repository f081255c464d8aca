use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Named index range inside a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
}

/// Flat parameter storage with a matching gradient accumulator.
///
/// Layers do not own their weights; they hold ranges into one of these so
/// that a whole network can be copied, perturbed or optimised as a single
/// vector. `Clone` is deep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    values: Vec<f64>,
    grads: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialised segment and returns its range.
    pub fn allocate(&mut self, name: impl Into<String>, len: usize) -> Range<usize> {
        let start = self.values.len();
        let range = start..start + len;
        self.values.resize(start + len, 0.0);
        self.grads.resize(start + len, 0.0);
        self.layout.push(Segment {
            name: name.into(),
            range: range.clone(),
        });
        range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Borrow values immutably and gradients mutably at the same time.
    pub fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    /// Uniform initialisation in `[-bound, bound]` over one range.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, range: Range<usize>, bound: f64, rng: &mut R) {
        for v in &mut self.values[range] {
            *v = if bound > 0.0 {
                rng.gen_range(-bound..=bound)
            } else {
                0.0
            };
        }
    }

    /// Copies every value from `source`. Both sets must share a layout.
    pub fn sync_from(&mut self, source: &ParameterSet) -> Result<()> {
        if self.layout != source.layout {
            return Err(Error::config(format!(
                "parameter layout mismatch: target has {} segments / {} values, source has {} / {}",
                self.layout.len(),
                self.values.len(),
                source.layout.len(),
                source.values.len()
            )));
        }
        self.values.copy_from_slice(&source.values);
        Ok(())
    }

    /// Adds `scale * other.grads` into this accumulator.
    pub fn add_grads_from(&mut self, other: &ParameterSet, scale: f64) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::config("gradient layout mismatch"));
        }
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            *g += scale * o;
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, scale: f64) {
        self.grads.iter_mut().for_each(|g| *g *= scale);
    }

    /// Name of the segment holding flat index `index`.
    pub fn segment_of(&self, index: usize) -> Option<&str> {
        self.layout
            .iter()
            .find(|s| s.range.contains(&index))
            .map(|s| s.name.as_str())
    }

    /// Bit-level hash of the values, used to assert that read-only passes
    /// leave parameters untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for v in &self.values {
            v.to_bits().hash(&mut hasher);
        }
        hasher.finish()
    }
}
