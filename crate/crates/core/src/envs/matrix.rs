use std::path::Path;

use crate::envs::{Environment, StepOutcome, TabularModel};
use crate::error::{Error, Result};

/// One-shot cooperative game: every agent picks an action once and the team
/// receives `payoff[joint action]`. Fully observable with a constant
/// observation.
#[derive(Debug, Clone)]
pub struct TeamMatrixGame {
    num_agents: usize,
    num_actions: usize,
    payoffs: Vec<f64>,
    done: bool,
}

impl TeamMatrixGame {
    pub fn new(num_agents: usize, num_actions: usize, payoffs: Vec<f64>) -> Result<Self> {
        if num_agents == 0 || num_actions == 0 {
            return Err(Error::config("matrix game needs at least one agent and one action"));
        }
        let joint = num_actions
            .checked_pow(num_agents as u32)
            .ok_or_else(|| Error::config("joint action space overflows"))?;
        if payoffs.len() != joint {
            return Err(Error::config(format!(
                "expected {joint} payoffs for {num_agents} agents x {num_actions} actions, got {}",
                payoffs.len()
            )));
        }
        if payoffs.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("payoffs must be finite"));
        }
        Ok(Self {
            num_agents,
            num_actions,
            payoffs,
            done: false,
        })
    }

    /// Parses the payoff-file format: a header `n |U|` followed by
    /// `|U|^n` payoffs in row-major joint-action order (agent 0 most
    /// significant). Whitespace and newlines are interchangeable and `#`
    /// starts a comment.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("");
            for tok in content.split_whitespace() {
                tokens.push((i + 1, tok));
            }
        }
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = |idx: usize, what: &str| -> Result<usize> {
            let (line, tok) = tokens
                .get(idx)
                .ok_or_else(|| parse_err(1, format!("missing header field `{what}`")))?;
            tok.parse()
                .map_err(|_| parse_err(*line, format!("invalid {what} `{tok}`")))
        };
        let n = header(0, "agent count")?;
        let u = header(1, "action count")?;
        let mut payoffs = Vec::with_capacity(tokens.len().saturating_sub(2));
        for (line, tok) in &tokens[2.min(tokens.len())..] {
            payoffs.push(
                tok.parse::<f64>()
                    .map_err(|_| parse_err(*line, format!("invalid payoff `{tok}`")))?,
            );
        }
        Self::new(n, u, payoffs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn payoffs(&self) -> &[f64] {
        &self.payoffs
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &u| acc * self.num_actions + u)
    }

    pub fn payoff(&self, actions: &[usize]) -> f64 {
        self.payoffs[self.joint_index(actions)]
    }

    pub fn best_payoff(&self) -> f64 {
        self.payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact model: one live state, every joint action terminates.
    pub fn to_model(&self) -> TabularModel {
        let joint = self.payoffs.len();
        let mut transitions = vec![0.0; joint * 2];
        for ja in 0..joint {
            transitions[ja * 2 + 1] = 1.0;
        }
        TabularModel::new(
            1,
            self.num_agents,
            self.num_actions,
            vec![1.0],
            transitions,
            self.payoffs.clone(),
        )
        .expect("matrix game shapes are validated on construction")
    }
}

impl Environment for TeamMatrixGame {
    fn num_agents(&self) -> usize {
        self.num_agents
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn obs_size(&self) -> usize {
        1
    }

    fn state_size(&self) -> usize {
        1
    }

    fn episode_limit(&self) -> usize {
        1
    }

    fn reset_episode(&mut self, _seed: u64) -> Result<()> {
        self.done = false;
        Ok(())
    }

    fn step_joint(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::usage("matrix game episode already finished"));
        }
        if actions.len() != self.num_agents || actions.iter().any(|&u| u >= self.num_actions) {
            return Err(Error::usage(format!("invalid joint action {actions:?}")));
        }
        let reward = self.payoff(actions);
        self.done = true;
        Ok(StepOutcome {
            reward,
            terminal: true,
            win: reward >= self.best_payoff() - 1e-12,
            timeout: false,
        })
    }

    fn observation_features(&self, _agent: usize) -> Vec<f64> {
        vec![1.0]
    }

    fn state_features(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn action_mask(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.num_actions]
    }

    fn agent_alive(&self, _agent: usize) -> bool {
        true
    }

    fn noop_action(&self) -> usize {
        0
    }

    /// Each agent picks the action with the best payoff averaged over
    /// uniformly random teammates.
    fn heuristic_actions(&self) -> Vec<usize> {
        (0..self.num_agents)
            .map(|agent| {
                let mut totals = vec![0.0; self.num_actions];
                for (joint, p) in self.payoffs.iter().enumerate() {
                    let shift = self.num_agents - 1 - agent;
                    let own = (joint / self.num_actions.pow(shift as u32)) % self.num_actions;
                    totals[own] += p;
                }
                totals
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (u, &t)| if t > best.1 { (u, t) } else { best })
                    .0
            })
            .collect()
    }

    fn enumerate(&self, cap: usize) -> Result<TabularModel> {
        if self.payoffs.len() > cap {
            return Err(Error::capability(format!(
                "{} joint actions exceed the enumeration cap {cap}",
                self.payoffs.len()
            )));
        }
        Ok(self.to_model())
    }
}
