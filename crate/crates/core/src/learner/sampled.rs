//! Single-state Monte Carlo policy-gradient estimators over a tabular
//! policy, used to study the counterfactual estimator against exact
//! references.

use rand::Rng;

use crate::envs::TabularModel;
use crate::oracle::{counterfactual_baseline, TabularPolicy};

/// Which per-sample weight multiplies `grad log pi^a(u^a | s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleWeight {
    /// `Q(s, u) - sum_u' pi^a(u') Q(s, (u^-a, u'))`.
    Counterfactual,
    /// `Q(s, u)` with no baseline.
    RawQ,
    /// Minus the counterfactual baseline alone, i.e. one sample of `g_b`.
    BaselineOnly,
}

/// Draws one joint action for `state` from the policy.
pub fn sample_joint<R: Rng + ?Sized>(policy: &TabularPolicy, model: &TabularModel, state: usize, rng: &mut R) -> Vec<usize> {
    (0..model.num_agents())
        .map(|a| {
            let probs = policy.probs(state, a);
            let mut x: f64 = rng.gen();
            for (u, p) in probs.iter().enumerate() {
                if x < *p {
                    return u;
                }
                x -= p;
            }
            probs.len() - 1
        })
        .collect()
}

/// `sum_a grad log pi^a(u^a | s) * w^a(s, u)` for one sampled joint action,
/// with respect to all policy logits. `q` is laid out as `q[s * |joint| + ja]`.
pub fn sample_gradient(
    model: &TabularModel,
    policy: &TabularPolicy,
    q: &[f64],
    state: usize,
    actions: &[usize],
    weight: SampleWeight,
) -> Vec<f64> {
    let nj = model.num_joint_actions();
    let q_joint = q[state * nj + model.joint_index(actions)];
    let mut grad = vec![0.0; policy.num_params()];
    for a in 0..model.num_agents() {
        let w = match weight {
            SampleWeight::RawQ => q_joint,
            SampleWeight::Counterfactual => {
                q_joint - counterfactual_baseline(model, policy, q, state, a, actions)
            }
            SampleWeight::BaselineOnly => -counterfactual_baseline(model, policy, q, state, a, actions),
        };
        let probs = policy.probs(state, a);
        for (k, p) in probs.iter().enumerate() {
            let score = if k == actions[a] { 1.0 - p } else { -p };
            grad[policy.param_index(state, a, k)] += w * score;
        }
    }
    grad
}

/// Per-component mean and standard error of a set of sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: usize,
}

impl SampleMoments {
    pub fn from_samples<'a, I>(samples: I) -> Self
    where
        I: IntoIterator<Item = &'a Vec<f64>>,
    {
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for g in samples {
            if mean.is_empty() {
                mean = vec![0.0; g.len()];
                m2 = vec![0.0; g.len()];
            }
            count += 1;
            for ((m, s), x) in mean.iter_mut().zip(&mut m2).zip(g) {
                let delta = x - *m;
                *m += delta / count as f64;
                *s += delta * (x - *m);
            }
        }
        let variance = m2.iter().map(|s| s / (count.max(2) - 1) as f64).collect();
        Self { mean, variance, count }
    }

    pub fn standard_error(&self) -> Vec<f64> {
        self.variance.iter().map(|v| (v / self.count as f64).sqrt()).collect()
    }

    /// Sum of per-component variances (trace of the covariance).
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}
