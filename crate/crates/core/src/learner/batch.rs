use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::policy::ActorNetwork;
use crate::seed::derive;

/// Per-timestep record shared by all agents. Slots past the end of an
/// episode are padding with `filled == false` and must never contribute to
/// a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub filled: bool,
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub alive: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

impl StepRecord {
    fn padding(num_agents: usize, num_actions: usize, obs_size: usize, state_size: usize) -> Self {
        Self {
            filled: false,
            state: vec![0.0; state_size],
            observations: vec![vec![0.0; obs_size]; num_agents],
            masks: vec![vec![true; num_actions]; num_agents],
            alive: vec![false; num_agents],
            actions: vec![0; num_agents],
            log_probs: vec![0.0; num_agents],
            reward: 0.0,
            terminal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Padded to the batch's `max_len`.
    pub steps: Vec<StepRecord>,
    pub len: usize,
    pub episode_return: f64,
    pub win: bool,
    pub timeout: bool,
}

impl EpisodeRecord {
    pub fn filled(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().take_while(|s| s.filled)
    }
}

/// Complete episodes collected under one frozen policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub episodes: Vec<EpisodeRecord>,
    pub max_len: usize,
    pub num_agents: usize,
    pub num_actions: usize,
    pub epsilon: f64,
}

impl EpisodeBatch {
    pub fn mean_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.episode_return).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    pub fn win_rate(&self) -> f64 {
        self.episodes.iter().filter(|e| e.win).count() as f64 / self.episodes.len().max(1) as f64
    }

    /// Last action of `agent` before step `t`.
    pub fn last_action(&self, episode: usize, t: usize, agent: usize) -> Option<usize> {
        if t == 0 {
            None
        } else {
            Some(self.episodes[episode].steps[t - 1].actions[agent])
        }
    }
}

/// Chooses actions during collection.
pub trait Behaviour {
    fn begin_episode(&mut self, num_agents: usize);

    /// Called once per timestep before any agent chooses.
    fn prepare<E: Environment>(&mut self, _env: &E) {}

    /// Returns `(action, log-probability)` for one agent.
    fn choose(
        &mut self,
        agent: usize,
        obs: &[f64],
        mask: &[bool],
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, f64)>;
}

/// Samples from the shared actor with bounded-softmax exploration, or acts
/// greedily when `greedy` is set.
pub struct ActorBehaviour<'a> {
    actor: &'a ActorNetwork,
    epsilon: f64,
    greedy: bool,
    hidden: Vec<Vec<f64>>,
    last: Vec<Option<usize>>,
}

impl<'a> ActorBehaviour<'a> {
    pub fn sampling(actor: &'a ActorNetwork, epsilon: f64) -> Self {
        Self {
            actor,
            epsilon,
            greedy: false,
            hidden: Vec::new(),
            last: Vec::new(),
        }
    }

    pub fn greedy(actor: &'a ActorNetwork) -> Self {
        Self {
            actor,
            epsilon: 0.0,
            greedy: true,
            hidden: Vec::new(),
            last: Vec::new(),
        }
    }
}

impl Behaviour for ActorBehaviour<'_> {
    fn begin_episode(&mut self, num_agents: usize) {
        self.hidden = vec![self.actor.initial_hidden(); num_agents];
        self.last = vec![None; num_agents];
    }

    fn choose(
        &mut self,
        agent: usize,
        obs: &[f64],
        mask: &[bool],
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, f64)> {
        let step = self
            .actor
            .step(obs, &self.hidden[agent], self.last[agent], agent, self.epsilon, mask)?;
        let action = if self.greedy {
            step.dist.greedy()
        } else {
            step.dist.sample(rng)
        };
        self.hidden[agent] = step.hidden;
        self.last[agent] = Some(action);
        Ok((action, step.dist.log_prob(action)))
    }
}

/// Plays the environment's built-in heuristic.
pub struct HeuristicBehaviour {
    pending: Vec<usize>,
}

impl HeuristicBehaviour {
    pub fn new() -> Self {
        Self { pending: Vec::new() }
    }
}

impl Default for HeuristicBehaviour {
    fn default() -> Self {
        Self::new()
    }
}

/// Runs one episode. Episodes that reach the environment's step limit
/// are cut and flagged as timeouts.
pub fn run_episode<E: Environment, B: Behaviour>(
    env: &mut E,
    behaviour: &mut B,
    seed: u64,
) -> Result<EpisodeRecord> {
    env.reset_episode(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[1]));
    let n = env.num_agents();
    behaviour.begin_episode(n);
    let cap = env.episode_limit();
    let mut steps = Vec::new();
    let mut episode_return = 0.0;
    let (win, timeout) = loop {
        let state = env.state_features();
        let observations: Vec<Vec<f64>> = (0..n).map(|a| env.observation_features(a)).collect();
        let masks: Vec<Vec<bool>> = (0..n).map(|a| env.action_mask(a)).collect();
        let alive: Vec<bool> = (0..n).map(|a| env.agent_alive(a)).collect();
        behaviour.prepare(env);
        let mut actions = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        for a in 0..n {
            let (u, lp) = behaviour.choose(a, &observations[a], &masks[a], &mut rng)?;
            actions.push(u);
            log_probs.push(lp);
        }
        let out = env.step_joint(&actions)?;
        episode_return += out.reward;
        let cut = !out.terminal && steps.len() + 1 >= cap;
        let terminal = out.terminal || cut;
        steps.push(StepRecord {
            filled: true,
            state,
            observations,
            masks,
            alive,
            actions,
            log_probs,
            reward: out.reward,
            terminal,
        });
        if terminal {
            break (out.win, out.timeout || cut);
        }
    };
    let len = steps.len();
    Ok(EpisodeRecord {
        steps,
        len,
        episode_return,
        win,
        timeout,
    })
}

impl Behaviour for HeuristicBehaviour {
    fn begin_episode(&mut self, _num_agents: usize) {}

    fn prepare<E: Environment>(&mut self, env: &E) {
        self.pending = env.heuristic_actions();
    }

    fn choose(
        &mut self,
        agent: usize,
        _obs: &[f64],
        _mask: &[bool],
        _rng: &mut ChaCha8Rng,
    ) -> Result<(usize, f64)> {
        let action = *self
            .pending
            .get(agent)
            .ok_or_else(|| Error::usage("heuristic actions were not prepared"))?;
        Ok((action, 0.0))
    }
}

/// Runs the environment heuristic for one episode.
pub fn run_heuristic_episode<E: Environment>(env: &mut E, seed: u64) -> Result<EpisodeRecord> {
    run_episode(env, &mut HeuristicBehaviour::new(), seed)
}

/// Number of episodes per batch: `batch_size / n`, at least one.
pub fn episodes_per_batch(batch_size: usize, num_agents: usize) -> usize {
    (batch_size / num_agents.max(1)).max(1)
}

fn pad(episodes: Vec<EpisodeRecord>, env: &impl Environment, epsilon: f64) -> EpisodeBatch {
    let max_len = episodes.iter().map(|e| e.len).max().unwrap_or(0);
    let (n, u) = (env.num_agents(), env.num_actions());
    let episodes = episodes
        .into_iter()
        .map(|mut e| {
            while e.steps.len() < max_len {
                e.steps
                    .push(StepRecord::padding(n, u, env.obs_size(), env.state_size()));
            }
            e
        })
        .collect();
    EpisodeBatch {
        episodes,
        max_len,
        num_agents: n,
        num_actions: u,
        epsilon,
    }
}

/// Collects `batch_size / n` episodes with any behaviour.
pub fn collect_with<E: Environment, B: Behaviour>(
    env: &E,
    behaviour: &mut B,
    batch_size: usize,
    seed: u64,
    epsilon: f64,
) -> Result<EpisodeBatch> {
    let count = episodes_per_batch(batch_size, env.num_agents());
    let mut episodes = Vec::with_capacity(count);
    let mut sim = env.clone();
    for i in 0..count {
        episodes.push(run_episode(&mut sim, behaviour, derive(seed, &[i as u64]))?);
    }
    Ok(pad(episodes, env, epsilon))
}

/// Collects a training batch from the actor at exploration rate `epsilon`.
pub fn collect_batch<E: Environment>(
    env: &E,
    actor: &ActorNetwork,
    epsilon: f64,
    batch_size: usize,
    seed: u64,
) -> Result<EpisodeBatch> {
    collect_with(env, &mut ActorBehaviour::sampling(actor, epsilon), batch_size, seed, epsilon)
}
