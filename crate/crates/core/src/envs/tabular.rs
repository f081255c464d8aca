use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{one_hot, Environment, StepOutcome};
use crate::error::{Error, Result};

/// Upper bound on `states x joint actions` accepted by enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 100_000;

/// Explicit multi-agent MDP.
///
/// States are indexed `0..num_states`; transition rows carry one extra
/// column for the absorbing terminal state, so every row of the transition
/// tensor is a probability distribution. Joint actions are indexed
/// row-major with agent 0 most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    num_states: usize,
    num_agents: usize,
    num_actions: usize,
    initial: Vec<f64>,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
}

impl TabularModel {
    pub fn new(
        num_states: usize,
        num_agents: usize,
        num_actions: usize,
        initial: Vec<f64>,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_agents == 0 || num_actions == 0 {
            return Err(Error::config("tabular model needs states, agents and actions"));
        }
        let joint = num_actions
            .checked_pow(num_agents as u32)
            .ok_or_else(|| Error::capability("joint action space overflows"))?;
        if initial.len() != num_states
            || rewards.len() != num_states * joint
            || transitions.len() != num_states * joint * (num_states + 1)
        {
            return Err(Error::config("tabular model tensor shapes are inconsistent"));
        }
        let model = Self {
            num_states,
            num_agents,
            num_actions,
            initial,
            transitions,
            rewards,
        };
        if (model.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("initial distribution does not sum to 1"));
        }
        for s in 0..num_states {
            for ja in 0..joint {
                let row = model.transition(s, ja);
                if row.iter().any(|&p| p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "transition row ({s}, {ja}) is not a distribution"
                    )));
                }
            }
        }
        Ok(model)
    }

    /// Deterministic chain: state `k` moves to `k + 1` regardless of the
    /// joint action, the last state terminates, and every step pays
    /// `reward`.
    pub fn chain(length: usize, num_agents: usize, num_actions: usize, reward: f64) -> Result<Self> {
        let joint = num_actions.pow(num_agents as u32);
        let width = length + 1;
        let mut transitions = vec![0.0; length * joint * width];
        for s in 0..length {
            for ja in 0..joint {
                transitions[(s * joint + ja) * width + s + 1] = 1.0;
            }
        }
        let mut initial = vec![0.0; length];
        initial[0] = 1.0;
        Self::new(
            length,
            num_agents,
            num_actions,
            initial,
            transitions,
            vec![reward; length * joint],
        )
    }

    /// Random dense model with per-step termination probability
    /// `terminal_prob` and rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_agents: usize,
        num_actions: usize,
        terminal_prob: f64,
    ) -> Result<Self> {
        let joint = num_actions.pow(num_agents as u32);
        let width = num_states + 1;
        let mut transitions = vec![0.0; num_states * joint * width];
        for row in transitions.chunks_exact_mut(width) {
            let weights: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = weights.iter().sum();
            for (p, w) in row.iter_mut().zip(&weights) {
                *p = (1.0 - terminal_prob) * w / total;
            }
            row[num_states] = terminal_prob;
        }
        let rewards = (0..num_states * joint).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let weights: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        let initial = weights.iter().map(|w| w / total).collect();
        Self::new(num_states, num_agents, num_actions, initial, transitions, rewards)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_joint_actions(&self) -> usize {
        self.num_actions.pow(self.num_agents as u32)
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Distribution over next states; the last entry is termination.
    pub fn transition(&self, state: usize, joint: usize) -> &[f64] {
        let width = self.num_states + 1;
        let start = (state * self.num_joint_actions() + joint) * width;
        &self.transitions[start..start + width]
    }

    pub fn reward(&self, state: usize, joint: usize) -> f64 {
        self.rewards[state * self.num_joint_actions() + joint]
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &u| acc * self.num_actions + u)
    }

    pub fn joint_actions(&self, mut joint: usize) -> Vec<usize> {
        let mut actions = vec![0; self.num_agents];
        for slot in actions.iter_mut().rev() {
            *slot = joint % self.num_actions;
            joint /= self.num_actions;
        }
        actions
    }

    /// Joint index with agent `agent`'s action replaced by `action`.
    pub fn substitute(&self, joint: usize, agent: usize, action: usize) -> usize {
        let mut actions = self.joint_actions(joint);
        actions[agent] = action;
        self.joint_index(&actions)
    }
}

/// Fully observable environment sampled from a [`TabularModel`]. The
/// observation and the state are both the one-hot current state.
#[derive(Debug, Clone)]
pub struct TabularGame {
    model: TabularModel,
    episode_limit: usize,
    state: Option<usize>,
    steps: usize,
    rng: ChaCha8Rng,
}

impl TabularGame {
    pub fn new(model: TabularModel, episode_limit: usize) -> Self {
        Self {
            model,
            episode_limit,
            state: None,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn model(&self) -> &TabularModel {
        &self.model
    }

    pub fn current_state(&self) -> Option<usize> {
        self.state
    }

    fn sample(&mut self, dist: &[f64]) -> usize {
        let x: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, p) in dist.iter().enumerate() {
            acc += p;
            if x < acc {
                return i;
            }
        }
        dist.len() - 1
    }
}

impl Environment for TabularGame {
    fn num_agents(&self) -> usize {
        self.model.num_agents
    }

    fn num_actions(&self) -> usize {
        self.model.num_actions
    }

    fn obs_size(&self) -> usize {
        self.model.num_states
    }

    fn state_size(&self) -> usize {
        self.model.num_states
    }

    fn episode_limit(&self) -> usize {
        self.episode_limit
    }

    fn reset_episode(&mut self, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = self.model.initial.clone();
        self.state = Some(self.sample(&initial));
        self.steps = 0;
        Ok(())
    }

    fn step_joint(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        let state = self
            .state
            .ok_or_else(|| Error::usage("step called on a finished or unstarted episode"))?;
        if actions.len() != self.model.num_agents || actions.iter().any(|&u| u >= self.model.num_actions) {
            return Err(Error::usage(format!("invalid joint action {actions:?}")));
        }
        let joint = self.model.joint_index(actions);
        let reward = self.model.reward(state, joint);
        let row = self.model.transition(state, joint).to_vec();
        let next = self.sample(&row);
        self.steps += 1;
        let ended = next == self.model.num_states;
        let timeout = !ended && self.steps >= self.episode_limit;
        self.state = if ended || timeout { None } else { Some(next) };
        Ok(StepOutcome {
            reward,
            terminal: ended || timeout,
            win: false,
            timeout,
        })
    }

    fn observation_features(&self, _agent: usize) -> Vec<f64> {
        self.state_features()
    }

    fn state_features(&self) -> Vec<f64> {
        match self.state {
            Some(s) => one_hot(self.model.num_states, s),
            None => vec![0.0; self.model.num_states],
        }
    }

    fn action_mask(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.model.num_actions]
    }

    fn agent_alive(&self, _agent: usize) -> bool {
        true
    }

    fn noop_action(&self) -> usize {
        0
    }

    fn heuristic_actions(&self) -> Vec<usize> {
        vec![0; self.model.num_agents]
    }

    fn enumerate(&self, cap: usize) -> Result<TabularModel> {
        if self.model.num_states * self.model.num_joint_actions() > cap {
            return Err(Error::capability("model exceeds enumeration cap"));
        }
        Ok(self.model.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rows_are_stochastic() {
        let m = TabularModel::chain(2, 1, 2, 1.0).unwrap();
        for s in 0..m.num_states() {
            for ja in 0..m.num_joint_actions() {
                let sum: f64 = m.transition(s, ja).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn joint_index_round_trips() {
        let m = TabularModel::chain(1, 3, 4, 0.0).unwrap();
        for ja in 0..m.num_joint_actions() {
            assert_eq!(m.joint_index(&m.joint_actions(ja)), ja);
        }
        assert_eq!(m.joint_index(&[1, 0, 2]), 16 + 2);
        assert_eq!(m.substitute(m.joint_index(&[1, 0, 2]), 2, 3), m.joint_index(&[1, 0, 3]));
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularModel::new(1, 1, 1, vec![1.0], vec![0.5, 0.4], vec![0.0]);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn sampled_chain_walks_to_the_end() {
        let mut game = TabularGame::new(TabularModel::chain(3, 2, 2, 1.0).unwrap(), 10);
        game.reset_episode(4).unwrap();
        let mut total = 0.0;
        loop {
            let out = game.step_joint(&[0, 1]).unwrap();
            total += out.reward;
            if out.terminal {
                assert!(!out.timeout);
                break;
            }
        }
        assert_eq!(total, 3.0);
    }
}
