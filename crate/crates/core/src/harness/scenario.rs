use std::fmt::Write as _;
use std::path::Path;

use crate::envs::{Environment, SkirmishConfig, SkirmishEnv, StepOutcome, TabularModel, TeamMatrixGame, UnitType};
use crate::error::{Error, Result};
use crate::kv::KvFile;

/// Any environment loadable from a scenario file.
#[derive(Debug, Clone)]
pub enum Scenario {
    Skirmish(SkirmishEnv),
    Matrix(TeamMatrixGame),
}

impl Scenario {
    /// Matrix payoff files start with a `n |U|` header; everything else is
    /// read as a key-value skirmish description.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let first = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .find(|l| !l.is_empty())
            .unwrap_or("");
        if first.contains('=') {
            let file = KvFile::parse(path, text)?;
            Ok(Scenario::Skirmish(SkirmishEnv::new(SkirmishConfig::from_kv(&file)?)?))
        } else {
            Ok(Scenario::Matrix(TeamMatrixGame::parse(path, text)?))
        }
    }

    /// Human-readable summary of teams, action space and feature sizes.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        match self {
            Scenario::Skirmish(env) => {
                let cfg = env.config();
                let roster = |units: &[UnitType]| {
                    units
                        .iter()
                        .map(|u| match u {
                            UnitType::Marine => "marine",
                            UnitType::Zealot => "zealot",
                        })
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                let _ = writeln!(out, "kind: skirmish");
                let _ = writeln!(out, "grid: {} x {}", cfg.width, cfg.height);
                let _ = writeln!(out, "allies ({}): {}", cfg.allies.len(), roster(&cfg.allies));
                let _ = writeln!(out, "enemies ({}): {}", cfg.enemies.len(), roster(&cfg.enemies));
                let _ = writeln!(
                    out,
                    "actions per agent: {} (4 moves + {} attacks + stop + noop)",
                    self.num_actions(),
                    cfg.enemies.len()
                );
                let _ = writeln!(out, "field of view: {}", cfg.fov);
                let _ = writeln!(out, "episode limit: {}", cfg.max_steps);
                let _ = writeln!(out, "unavailable actions masked: {}", cfg.mask_unavailable);
            }
            Scenario::Matrix(game) => {
                let _ = writeln!(out, "kind: matrix");
                let _ = writeln!(out, "agents: {}", self.num_agents());
                let _ = writeln!(out, "actions per agent: {}", self.num_actions());
                let _ = writeln!(out, "best payoff: {}", game.best_payoff());
                let _ = writeln!(out, "payoffs (row-major, last agent fastest):");
                for row in game.payoffs().chunks(self.num_actions()) {
                    let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
                    let _ = writeln!(out, "  {}", cells.join(" "));
                }
            }
        }
        let _ = writeln!(out, "observation length: {}", self.obs_size());
        let _ = writeln!(out, "state length: {}", self.state_size());
        out
    }
}

macro_rules! delegate {
    ($self:ident, $env:ident => $body:expr) => {
        match $self {
            Scenario::Skirmish($env) => $body,
            Scenario::Matrix($env) => $body,
        }
    };
}

impl Environment for Scenario {
    fn num_agents(&self) -> usize {
        delegate!(self, e => e.num_agents())
    }
    fn num_actions(&self) -> usize {
        delegate!(self, e => e.num_actions())
    }
    fn obs_size(&self) -> usize {
        delegate!(self, e => e.obs_size())
    }
    fn state_size(&self) -> usize {
        delegate!(self, e => e.state_size())
    }
    fn episode_limit(&self) -> usize {
        delegate!(self, e => e.episode_limit())
    }
    fn reset_episode(&mut self, seed: u64) -> Result<()> {
        delegate!(self, e => e.reset_episode(seed))
    }
    fn step_joint(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        delegate!(self, e => e.step_joint(actions))
    }
    fn observation_features(&self, agent: usize) -> Vec<f64> {
        delegate!(self, e => e.observation_features(agent))
    }
    fn state_features(&self) -> Vec<f64> {
        delegate!(self, e => e.state_features())
    }
    fn action_mask(&self, agent: usize) -> Vec<bool> {
        delegate!(self, e => e.action_mask(agent))
    }
    fn agent_alive(&self, agent: usize) -> bool {
        delegate!(self, e => e.agent_alive(agent))
    }
    fn noop_action(&self) -> usize {
        delegate!(self, e => e.noop_action())
    }
    fn heuristic_actions(&self) -> Vec<usize> {
        delegate!(self, e => e.heuristic_actions())
    }
    fn supports_snapshot(&self) -> bool {
        delegate!(self, e => e.supports_snapshot())
    }
    fn enumerate(&self, cap: usize) -> Result<TabularModel> {
        delegate!(self, e => e.enumerate(cap))
    }
}
