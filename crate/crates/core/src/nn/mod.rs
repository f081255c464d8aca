//! Small fixed-topology networks with hand-written backward passes.

mod dense;
mod gru;
mod params;
mod rmsprop;

pub use dense::{Activation, DenseCache, DenseLayer, Mlp, MlpCache};
pub use gru::{GruCache, GruCell};
pub use params::{ParameterSet, Segment};
pub use rmsprop::RmsProp;

use crate::error::Result;

/// Copies `source` into `target` every `interval` calls to [`tick`].
///
/// [`tick`]: TargetSync::tick
#[derive(Debug, Clone)]
pub struct TargetSync {
    interval: usize,
    steps: usize,
}

impl TargetSync {
    pub fn new(interval: usize) -> Self {
        Self {
            interval: interval.max(1),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Counts one gradient step; returns true when a sync happened.
    pub fn tick(&mut self, source: &ParameterSet, target: &mut ParameterSet) -> Result<bool> {
        self.steps += 1;
        if self.steps % self.interval == 0 {
            target.sync_from(source)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}
