use crate::error::{Error, Result};

/// Discount and trace-decay settings with target-network cadences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdLambdaConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Critic gradient steps between target syncs for feed-forward critics.
    pub sync_central: usize,
    /// Same for the recurrent IAC heads.
    pub sync_iac: usize,
}

impl Default for TdLambdaConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.8,
            sync_central: 150,
            sync_iac: 50,
        }
    }
}

impl TdLambdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} must lie in [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda {} must lie in [0, 1]", self.lambda)));
        }
        if self.sync_central == 0 || self.sync_iac == 0 {
            return Err(Error::config("target sync intervals must be positive"));
        }
        Ok(())
    }
}

/// TD(lambda) targets for one episode, computed backwards with
/// `y_t = r_t + gamma * (1 - done_t) * ((1 - lambda) * v_{t+1} + lambda * y_{t+1})`.
///
/// `next_values[t]` is the target network's estimate for the step after
/// `t`; it is ignored where `terminals[t]` holds. If the episode ends
/// without a terminal flag, the final step bootstraps from
/// `next_values[T-1]`.
pub fn td_lambda_targets(
    rewards: &[f64],
    next_values: &[f64],
    terminals: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let len = rewards.len();
    if next_values.len() != len || terminals.len() != len {
        return Err(Error::usage("rewards, values and terminal flags differ in length"));
    }
    let mut targets = vec![0.0; len];
    let mut next_target = None;
    for t in (0..len).rev() {
        let y = if terminals[t] {
            rewards[t]
        } else {
            let v = next_values[t];
            let tail = match next_target {
                Some(y_next) => (1.0 - lambda) * v + lambda * y_next,
                None => v,
            };
            rewards[t] + gamma * tail
        };
        targets[t] = y;
        next_target = Some(y);
    }
    Ok(targets)
}
