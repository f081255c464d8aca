//! Cooperative multi-agent environments.
//!
//! Every environment exposes the same surface to the learner: per-agent
//! observation vectors, a global state vector, per-agent action masks and a
//! single team reward. Environments are `Clone`, and a clone is a complete
//! snapshot (including the random generator), which is what counterfactual
//! re-simulation relies on.

mod matrix;
mod skirmish;
mod tabular;

pub use matrix::TeamMatrixGame;
pub use skirmish::{
    ActionKind, GlobalState, Observation, SkirmishConfig, SkirmishEnv, Team, Unit, UnitStats,
    UnitType, UnitView,
};
pub use tabular::{TabularGame, TabularModel, DEFAULT_ENUMERATION_CAP};

use crate::error::{Error, Result};

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub win: bool,
    /// Terminal because the episode cap was reached.
    pub timeout: bool,
}

pub trait Environment: Clone + Send + Sync {
    fn num_agents(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn obs_size(&self) -> usize;
    fn state_size(&self) -> usize;
    fn episode_limit(&self) -> usize;

    /// Starts a new episode. Deterministic in `seed`.
    fn reset_episode(&mut self, seed: u64) -> Result<()>;

    /// Applies one joint action (one entry per agent, dead agents noop).
    fn step_joint(&mut self, actions: &[usize]) -> Result<StepOutcome>;

    fn observation_features(&self, agent: usize) -> Vec<f64>;
    fn state_features(&self) -> Vec<f64>;

    /// Actions the policy may select for `agent` this step.
    fn action_mask(&self, agent: usize) -> Vec<bool>;

    fn agent_alive(&self, agent: usize) -> bool;

    /// Index of the do-nothing action.
    fn noop_action(&self) -> usize;

    /// Hand-coded decentralised reference behaviour.
    fn heuristic_actions(&self) -> Vec<usize>;

    /// Whether cloning captures the full simulator state.
    fn supports_snapshot(&self) -> bool {
        true
    }

    /// Exact tabular model of the game, if it is small enough.
    fn enumerate(&self, _cap: usize) -> Result<TabularModel> {
        Err(Error::capability("environment cannot be enumerated"))
    }
}

/// `r(s, u) - r(s, (u^-a, c^a))`, computed by re-simulating the current
/// step twice from a snapshot. Both branches share the same random draws.
pub fn difference_reward<E: Environment>(
    env: &E,
    joint_action: &[usize],
    agent: usize,
    default_action: usize,
) -> Result<f64> {
    if !env.supports_snapshot() {
        return Err(Error::capability(
            "difference rewards need an environment snapshot",
        ));
    }
    if agent >= env.num_agents() {
        return Err(Error::usage(format!("agent {agent} out of range")));
    }
    let mut actual = env.clone();
    let r = actual.step_joint(joint_action)?.reward;
    let mut counterfactual_action = joint_action.to_vec();
    counterfactual_action[agent] = default_action;
    let mut counterfactual = env.clone();
    let r_default = counterfactual.step_joint(&counterfactual_action)?.reward;
    Ok(r - r_default)
}

pub(crate) fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if index < len {
        v[index] = 1.0;
    }
    v
}
