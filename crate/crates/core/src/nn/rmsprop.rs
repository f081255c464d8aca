use crate::error::{Error, Result};
use crate::nn::ParameterSet;

/// RMSProp without weight decay or momentum.
///
/// `v <- alpha * v + (1 - alpha) * g^2`,
/// `theta <- theta - lr * g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(lr: f64, alpha: f64, eps: f64, len: usize) -> Self {
        Self {
            lr,
            alpha,
            eps,
            mean_square: vec![0.0; len],
        }
    }

    pub fn for_params(lr: f64, alpha: f64, eps: f64, params: &ParameterSet) -> Self {
        Self::new(lr, alpha, eps, params.len())
    }

    pub fn mean_square(&self) -> &[f64] {
        &self.mean_square
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Aborts without touching anything if any gradient is non-finite.
    pub fn apply(&mut self, params: &mut ParameterSet) -> Result<()> {
        if params.len() != self.mean_square.len() {
            return Err(Error::config(format!(
                "optimizer sized for {} parameters, got {}",
                self.mean_square.len(),
                params.len()
            )));
        }
        if let Some((idx, g)) = params.grads().iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {g} at index {idx} ({})",
                params.segment_of(idx).unwrap_or("?")
            )));
        }
        let (alpha, lr, eps) = (self.alpha, self.lr, self.eps);
        let grads = params.grads().to_vec();
        for ((theta, g), v) in params.values_mut().iter_mut().zip(&grads).zip(&mut self.mean_square) {
            *v = alpha * *v + (1.0 - alpha) * g * g;
            *theta -= lr * g / (v.sqrt() + eps);
        }
        params.zero_grad();
        Ok(())
    }
}
