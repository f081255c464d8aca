//! Training engine: batch collection, critic fitting with TD(lambda)
//! targets, per-variant advantages and the shared actor's policy gradient.

mod batch;
mod sampled;
mod td;

pub use batch::{
    collect_batch, collect_with, episodes_per_batch, run_episode, run_heuristic_episode, ActorBehaviour,
    Behaviour, EpisodeBatch, EpisodeRecord, HeuristicBehaviour, StepRecord,
};
pub use sampled::{sample_gradient, sample_joint, SampleMoments, SampleWeight};
pub use td::{td_lambda_targets, TdLambdaConfig};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critics::{counterfactual_advantage, expected_value, CentralVCritic, ComaCritic, CriticInputSpec, FeedForwardCritic};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::{ParameterSet, RmsProp, TargetSync};
use crate::policy::{ActorNetwork, ActorShape, ActorStep, EpsilonSchedule, IacHead, TrajectoryStep};
use crate::seed::derive;

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgorithmVariant {
    Coma,
    CentralV,
    CentralQv,
    IacQ,
    IacV,
    Reinforce,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 6] = [
        AlgorithmVariant::Coma,
        AlgorithmVariant::CentralV,
        AlgorithmVariant::CentralQv,
        AlgorithmVariant::IacQ,
        AlgorithmVariant::IacV,
        AlgorithmVariant::Reinforce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmVariant::Coma => "coma",
            AlgorithmVariant::CentralV => "central-v",
            AlgorithmVariant::CentralQv => "central-qv",
            AlgorithmVariant::IacQ => "iac-q",
            AlgorithmVariant::IacV => "iac-v",
            AlgorithmVariant::Reinforce => "reinforce",
        }
    }

    fn actor_head(self) -> Option<IacHead> {
        match self {
            AlgorithmVariant::IacQ => Some(IacHead::Q),
            AlgorithmVariant::IacV => Some(IacHead::V),
            _ => None,
        }
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == key || v.name().replace('-', "") == key)
            .ok_or_else(|| Error::config(format!("unknown algorithm variant `{s}`")))
    }
}

/// Hyperparameters of one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub td: TdLambdaConfig,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    /// Agent-episodes per iteration; `batch_size / n` episodes are played.
    pub batch_size: usize,
    pub epsilon: EpsilonSchedule,
    pub actor_hidden: usize,
    pub critic_hidden: Vec<usize>,
    pub critic_last_action: bool,
    /// Multiplies environment rewards before they reach any loss.
    pub reward_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            td: TdLambdaConfig::default(),
            lr: 0.0005,
            rms_alpha: 0.99,
            rms_eps: 1e-8,
            batch_size: 30,
            epsilon: EpsilonSchedule::default(),
            actor_hidden: 128,
            critic_hidden: vec![128, 128],
            critic_last_action: true,
            reward_scale: 1.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.td.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.rms_alpha) || self.rms_eps <= 0.0 {
            return Err(Error::config("RMSProp alpha must lie in [0, 1) and eps be positive"));
        }
        if self.batch_size == 0 || self.actor_hidden == 0 {
            return Err(Error::config("batch size and actor width must be positive"));
        }
        if self.critic_hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("critic layer widths must be positive"));
        }
        let eps = &self.epsilon;
        if ![eps.start, eps.end].iter().all(|e| (0.0..=1.0).contains(e)) {
            return Err(Error::config("exploration epsilon must lie in [0, 1]"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::config("reward scale must be positive"));
        }
        Ok(())
    }
}

/// A critic network with its target copy and optimiser.
#[derive(Debug, Clone)]
struct Tracked<C> {
    net: C,
    target: ParameterSet,
    opt: RmsProp,
    sync: TargetSync,
}

trait HasNet {
    fn net(&self) -> &FeedForwardCritic;
    fn net_mut(&mut self) -> &mut FeedForwardCritic;
}

impl HasNet for ComaCritic {
    fn net(&self) -> &FeedForwardCritic {
        ComaCritic::net(self)
    }
    fn net_mut(&mut self) -> &mut FeedForwardCritic {
        ComaCritic::net_mut(self)
    }
}

impl HasNet for CentralVCritic {
    fn net(&self) -> &FeedForwardCritic {
        CentralVCritic::net(self)
    }
    fn net_mut(&mut self) -> &mut FeedForwardCritic {
        CentralVCritic::net_mut(self)
    }
}

impl<C: HasNet> Tracked<C> {
    fn new(net: C, cfg: &LearnerConfig) -> Self {
        let target = net.net().params().clone();
        let opt = RmsProp::for_params(cfg.lr, cfg.rms_alpha, cfg.rms_eps, &target);
        Self {
            net,
            target,
            opt,
            sync: TargetSync::new(cfg.td.sync_central),
        }
    }

    /// One RMSProp step on `mean (f(x)[k] - y)^2` over `entries`, then a
    /// target-sync tick. Returns the loss before the step.
    fn fit(&mut self, entries: &[(&[f64], usize, f64)]) -> Result<f64> {
        if entries.is_empty() {
            return Ok(0.0);
        }
        let scale = 1.0 / entries.len() as f64;
        let outputs = self.net.net().outputs();
        let mut loss = 0.0;
        for &(x, k, y) in entries {
            let (out, cache) = self.net.net().forward(x)?;
            let err = out[k] - y;
            loss += err * err * scale;
            let mut upstream = vec![0.0; outputs];
            upstream[k] = 2.0 * err * scale;
            self.net.net_mut().backward(&cache, &upstream)?;
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("critic loss became {loss}")));
        }
        let params = self.net.net_mut().params_mut();
        self.opt.apply(params)?;
        self.sync.tick(self.net.net().params(), &mut self.target)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
enum CriticState {
    Coma(Tracked<ComaCritic>),
    CentralV(Tracked<CentralVCritic>),
    CentralQv(Tracked<ComaCritic>, Tracked<CentralVCritic>),
    Iac { target: ParameterSet, sync: TargetSync },
    None,
}

/// Loss summary of one critic training pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    /// Mean of the per-step losses, or `None` for critic-free variants.
    pub loss: Option<f64>,
    pub gradient_steps: usize,
}

/// Frozen-policy evaluation result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub mean_return: f64,
    pub win_rate: f64,
}

/// Replayed actor steps for every (episode, agent), over filled steps.
pub struct Replay {
    steps: Vec<Vec<Vec<ActorStep>>>,
}

impl Replay {
    pub fn get(&self, episode: usize, agent: usize) -> &[ActorStep] {
        &self.steps[episode][agent]
    }
}

/// Actor, critic(s), target networks and optimisers for one variant.
#[derive(Debug, Clone)]
pub struct Learner {
    variant: AlgorithmVariant,
    cfg: LearnerConfig,
    actor: ActorNetwork,
    actor_opt: RmsProp,
    critic: CriticState,
    spec: CriticInputSpec,
    iterations: usize,
}

impl Learner {
    pub fn new<E: Environment>(env: &E, variant: AlgorithmVariant, cfg: LearnerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[STREAM_INIT]));
        let (n, u) = (env.num_agents(), env.num_actions());
        let actor = ActorNetwork::new(
            ActorShape {
                obs_size: env.obs_size(),
                num_agents: n,
                num_actions: u,
                hidden: cfg.actor_hidden,
                head: variant.actor_head(),
            },
            &mut rng,
        );
        let spec = CriticInputSpec {
            state_size: env.state_size(),
            obs_size: env.obs_size(),
            num_agents: n,
            num_actions: u,
            include_last_action: cfg.critic_last_action,
        };
        let coma = |rng: &mut ChaCha8Rng| Tracked::new(ComaCritic::new(spec, &cfg.critic_hidden, rng), &cfg);
        let central = |rng: &mut ChaCha8Rng| {
            Tracked::new(
                CentralVCritic::new(env.state_size(), env.obs_size(), n, &cfg.critic_hidden, rng),
                &cfg,
            )
        };
        let critic = match variant {
            AlgorithmVariant::Coma => CriticState::Coma(coma(&mut rng)),
            AlgorithmVariant::CentralV => CriticState::CentralV(central(&mut rng)),
            AlgorithmVariant::CentralQv => {
                let q = coma(&mut rng);
                CriticState::CentralQv(q, central(&mut rng))
            }
            AlgorithmVariant::IacQ | AlgorithmVariant::IacV => CriticState::Iac {
                target: actor.params().clone(),
                sync: TargetSync::new(cfg.td.sync_iac),
            },
            AlgorithmVariant::Reinforce => CriticState::None,
        };
        let actor_opt = RmsProp::for_params(cfg.lr, cfg.rms_alpha, cfg.rms_eps, actor.params());
        Ok(Self {
            variant,
            cfg,
            actor,
            actor_opt,
            critic,
            spec,
            iterations: 0,
        })
    }

    pub fn variant(&self) -> AlgorithmVariant {
        self.variant
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn actor(&self) -> &ActorNetwork {
        &self.actor
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Training iterations completed so far drive the exploration schedule.
    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon.at(self.iterations)
    }

    /// Hash of every parameter and optimiser accumulator.
    pub fn fingerprint(&self) -> u64 {
        let mut sets: Vec<&ParameterSet> = vec![self.actor.params()];
        match &self.critic {
            CriticState::Coma(q) => sets.extend([q.net.net().params(), &q.target]),
            CriticState::CentralV(v) => sets.extend([v.net.net().params(), &v.target]),
            CriticState::CentralQv(q, v) => {
                sets.extend([q.net.net().params(), &q.target, v.net.net().params(), &v.target])
            }
            CriticState::Iac { target, .. } => sets.push(target),
            CriticState::None => {}
        }
        sets.iter()
            .fold(self.iterations as u64, |acc, p| acc.rotate_left(7) ^ p.fingerprint())
    }

    /// Re-runs the actor over every recorded trajectory.
    pub fn replay(&self, batch: &EpisodeBatch) -> Result<Replay> {
        self.replay_with(self.actor.params(), batch)
    }

    fn replay_with(&self, params: &ParameterSet, batch: &EpisodeBatch) -> Result<Replay> {
        let steps = batch
            .episodes
            .iter()
            .map(|ep| {
                (0..batch.num_agents)
                    .map(|a| {
                        let traj: Vec<TrajectoryStep<'_>> = ep
                            .filled()
                            .map(|s| TrajectoryStep {
                                obs: &s.observations[a],
                                mask: &s.masks[a],
                                action: s.actions[a],
                            })
                            .collect();
                        self.actor.unroll_with(params, a, batch.epsilon, &traj)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Replay { steps })
    }

    fn scaled_rewards(&self, ep: &EpisodeRecord) -> Vec<f64> {
        ep.filled().map(|s| s.reward * self.cfg.reward_scale).collect()
    }

    fn terminals(ep: &EpisodeRecord) -> Vec<bool> {
        ep.filled().map(|s| s.terminal).collect()
    }

    fn targets(&self, ep: &EpisodeRecord, values: &[f64]) -> Result<Vec<f64>> {
        // values[t] estimates step t; the bootstrap for t is values[t + 1].
        let mut next: Vec<f64> = values.iter().skip(1).copied().collect();
        next.push(0.0);
        td_lambda_targets(
            &self.scaled_rewards(ep),
            &next,
            &Self::terminals(ep),
            self.cfg.td.gamma,
            self.cfg.td.lambda,
        )
    }

    /// COMA critic inputs indexed `[episode][t][agent]`.
    fn q_inputs(&self, batch: &EpisodeBatch) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
        batch
            .episodes
            .iter()
            .enumerate()
            .map(|(e, ep)| {
                ep.filled()
                    .enumerate()
                    .map(|(t, s)| {
                        (0..batch.num_agents)
                            .map(|a| {
                                self.spec.build(
                                    &s.state,
                                    &s.observations[a],
                                    &s.actions,
                                    &s.alive,
                                    a,
                                    batch.last_action(e, t, a),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn v_inputs(critic: &CentralVCritic, batch: &EpisodeBatch) -> Result<Vec<Vec<Vec<f64>>>> {
        batch
            .episodes
            .iter()
            .map(|ep| ep.filled().map(|s| critic.input(&s.state, &s.observations)).collect())
            .collect()
    }

    /// Per-t fitting from the last timestep down to the first, using every
    /// episode alive at `t`. Targets come from the target network before
    /// the loop starts.
    fn fit_backwards<C: HasNet>(
        tracked: &mut Tracked<C>,
        entries_at: impl Fn(usize) -> Vec<(usize, usize, usize)>,
        inputs: &[Vec<Vec<Vec<f64>>>],
        targets: &[Vec<Vec<f64>>],
        max_len: usize,
        choose: impl Fn(usize, usize, usize) -> usize,
    ) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut steps = 0;
        for t in (0..max_len).rev() {
            let keys = entries_at(t);
            if keys.is_empty() {
                continue;
            }
            let entries: Vec<(&[f64], usize, f64)> = keys
                .iter()
                .map(|&(e, t, a)| (inputs[e][t][a].as_slice(), choose(e, t, a), targets[e][a][t]))
                .collect();
            total += tracked.fit(&entries)?;
            steps += 1;
        }
        Ok((total, steps))
    }

    fn batch_keys(batch: &EpisodeBatch, per_agent: bool) -> impl Fn(usize) -> Vec<(usize, usize, usize)> + '_ {
        move |t| {
            let agents = if per_agent { batch.num_agents } else { 1 };
            batch
                .episodes
                .iter()
                .enumerate()
                .filter(|(_, ep)| t < ep.len)
                .flat_map(|(e, _)| (0..agents).map(move |a| (e, t, a)))
                .collect()
        }
    }

    fn train_q(&self, q: &mut Tracked<ComaCritic>, batch: &EpisodeBatch, inputs: &[Vec<Vec<Vec<f64>>>]) -> Result<(f64, usize)> {
        let mut targets = Vec::with_capacity(batch.episodes.len());
        for (e, ep) in batch.episodes.iter().enumerate() {
            let mut per_agent = Vec::with_capacity(batch.num_agents);
            for a in 0..batch.num_agents {
                let values = ep
                    .filled()
                    .enumerate()
                    .map(|(t, s)| Ok(q.net.q_values_with(&q.target, &inputs[e][t][a])?[s.actions[a]]))
                    .collect::<Result<Vec<f64>>>()?;
                per_agent.push(self.targets(ep, &values)?);
            }
            targets.push(per_agent);
        }
        let chosen = |e: usize, t: usize, a: usize| batch.episodes[e].steps[t].actions[a];
        Self::fit_backwards(q, Self::batch_keys(batch, true), inputs, &targets, batch.max_len, chosen)
    }

    fn train_v(&self, v: &mut Tracked<CentralVCritic>, batch: &EpisodeBatch) -> Result<(f64, usize)> {
        let inputs: Vec<Vec<Vec<Vec<f64>>>> = Self::v_inputs(&v.net, batch)?
            .into_iter()
            .map(|ep| ep.into_iter().map(|x| vec![x]).collect())
            .collect();
        let mut targets = Vec::with_capacity(batch.episodes.len());
        for (e, ep) in batch.episodes.iter().enumerate() {
            let values = (0..ep.len)
                .map(|t| Ok(v.net.net().infer_with(&v.target, &inputs[e][t][0])?[0]))
                .collect::<Result<Vec<f64>>>()?;
            targets.push(vec![self.targets(ep, &values)?]);
        }
        Self::fit_backwards(v, Self::batch_keys(batch, false), &inputs, &targets, batch.max_len, |_, _, _| 0)
    }

    /// Fits the centralised critic(s) on `batch`. IAC heads are trained
    /// jointly with the actor in [`Learner::actor_gradient`] and the
    /// REINFORCE variant has no critic.
    pub fn train_critic(&mut self, batch: &EpisodeBatch) -> Result<CriticStats> {
        let mut critic = std::mem::replace(&mut self.critic, CriticState::None);
        let result = (|| -> Result<CriticStats> {
            let (total, steps) = match &mut critic {
                CriticState::Coma(q) => {
                    let inputs = self.q_inputs(batch)?;
                    self.train_q(q, batch, &inputs)?
                }
                CriticState::CentralV(v) => self.train_v(v, batch)?,
                CriticState::CentralQv(q, v) => {
                    let inputs = self.q_inputs(batch)?;
                    let (lq, sq) = self.train_q(q, batch, &inputs)?;
                    let (lv, sv) = self.train_v(v, batch)?;
                    (lq + lv, sq.max(sv))
                }
                CriticState::Iac { .. } | CriticState::None => {
                    return Ok(CriticStats {
                        loss: None,
                        gradient_steps: 0,
                    })
                }
            };
            Ok(CriticStats {
                loss: Some(if steps == 0 { 0.0 } else { total / steps as f64 }),
                gradient_steps: steps,
            })
        })();
        self.critic = critic;
        result
    }

    /// Per-(episode, agent, t) advantages for the current variant.
    pub fn advantages(&self, batch: &EpisodeBatch, replay: &Replay) -> Result<Vec<Vec<Vec<f64>>>> {
        let gamma = self.cfg.td.gamma;
        let n = batch.num_agents;
        let mut out = Vec::with_capacity(batch.episodes.len());
        let q_inputs = match &self.critic {
            CriticState::Coma(_) | CriticState::CentralQv(..) => Some(self.q_inputs(batch)?),
            _ => None,
        };
        for (e, ep) in batch.episodes.iter().enumerate() {
            let rewards = self.scaled_rewards(ep);
            let steps: Vec<&StepRecord> = ep.filled().collect();
            let central_v = match &self.critic {
                CriticState::CentralV(v) | CriticState::CentralQv(_, v) => Some(
                    steps
                        .iter()
                        .map(|s| v.net.value(&s.state, &s.observations))
                        .collect::<Result<Vec<f64>>>()?,
                ),
                _ => None,
            };
            let mut per_agent = Vec::with_capacity(n);
            for a in 0..n {
                let unroll = replay.get(e, a);
                let adv = match (&self.critic, self.variant) {
                    (CriticState::Coma(q), _) => (0..ep.len)
                        .map(|t| {
                            let qv = q.net.q_values(&q_inputs.as_ref().unwrap()[e][t][a])?;
                            counterfactual_advantage(&qv, &unroll[t].dist, steps[t].actions[a])
                        })
                        .collect::<Result<Vec<f64>>>()?,
                    (CriticState::CentralV(_), _) => {
                        let v = central_v.as_ref().unwrap();
                        td_errors(&rewards, v, &steps, gamma)
                    }
                    (CriticState::CentralQv(q, _), _) => {
                        let v = central_v.as_ref().unwrap();
                        (0..ep.len)
                            .map(|t| {
                                let qv = q.net.q_values(&q_inputs.as_ref().unwrap()[e][t][a])?;
                                Ok(qv[steps[t].actions[a]] - v[t])
                            })
                            .collect::<Result<Vec<f64>>>()?
                    }
                    (CriticState::Iac { .. }, AlgorithmVariant::IacQ) => unroll
                        .iter()
                        .zip(&steps)
                        .map(|(st, s)| {
                            let qv = st.head.as_deref().ok_or_else(|| Error::config("IAC-Q needs an actor head"))?;
                            Ok(qv[s.actions[a]] - expected_value(qv, &st.dist)?)
                        })
                        .collect::<Result<Vec<f64>>>()?,
                    (CriticState::Iac { .. }, AlgorithmVariant::IacV) => {
                        let v = unroll
                            .iter()
                            .map(|st| match st.head.as_deref() {
                                Some([v]) => Ok(*v),
                                _ => Err(Error::config("IAC-V needs a scalar actor head")),
                            })
                            .collect::<Result<Vec<f64>>>()?;
                        td_errors(&rewards, &v, &steps, gamma)
                    }
                    (CriticState::None, AlgorithmVariant::Reinforce) => discounted_returns(&rewards, gamma),
                    (_, variant) => {
                        return Err(Error::config(format!("critic does not match variant {variant}")));
                    }
                };
                per_agent.push(adv);
            }
            out.push(per_agent);
        }
        Ok(out)
    }

    /// IAC head targets and loss gradients for every (episode, agent).
    fn iac_head_terms(&self, batch: &EpisodeBatch, replay: &Replay) -> Result<Option<(Vec<Vec<Vec<Vec<f64>>>>, f64)>> {
        let CriticState::Iac { target, .. } = &self.critic else {
            return Ok(None);
        };
        let target_replay = self.replay_with(target, batch)?;
        let count: usize = batch.episodes.iter().map(|ep| ep.len).sum::<usize>() * batch.num_agents;
        let scale = 1.0 / count.max(1) as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(batch.episodes.len());
        for (e, ep) in batch.episodes.iter().enumerate() {
            let steps: Vec<&StepRecord> = ep.filled().collect();
            let mut per_agent = Vec::with_capacity(batch.num_agents);
            for a in 0..batch.num_agents {
                let pick = |st: &ActorStep, u: usize| -> Result<(usize, f64)> {
                    let head = st.head.as_deref().ok_or_else(|| Error::config("actor has no IAC head"))?;
                    let k = if head.len() == 1 { 0 } else { u };
                    Ok((k, head[k]))
                };
                let values = target_replay
                    .get(e, a)
                    .iter()
                    .zip(&steps)
                    .map(|(st, s)| Ok(pick(st, s.actions[a])?.1))
                    .collect::<Result<Vec<f64>>>()?;
                let y = self.targets(ep, &values)?;
                let mut d = Vec::with_capacity(ep.len);
                for (t, st) in replay.get(e, a).iter().enumerate() {
                    let (k, out) = pick(st, steps[t].actions[a])?;
                    let err = out - y[t];
                    loss += err * err * scale;
                    let mut g = vec![0.0; st.head.as_ref().map_or(0, Vec::len)];
                    g[k] = 2.0 * err * scale;
                    d.push(g);
                }
                per_agent.push(d);
            }
            grads.push(per_agent);
        }
        Ok(Some((grads, loss)))
    }

    /// Accumulates `-(1/E) sum A * grad log pi` (and, for IAC, the head
    /// loss gradient) into the actor's gradient buffer. Returns the IAC
    /// head loss when there is one.
    pub fn actor_gradient(&mut self, batch: &EpisodeBatch, replay: &Replay) -> Result<Option<f64>> {
        let advantages = self.advantages(batch, replay)?;
        let head_terms = self.iac_head_terms(batch, replay)?;
        let scale = 1.0 / batch.episodes.len().max(1) as f64;
        for (e, ep) in batch.episodes.iter().enumerate() {
            for a in 0..batch.num_agents {
                let unroll = replay.get(e, a);
                let d_logits: Vec<Vec<f64>> = unroll
                    .iter()
                    .zip(ep.filled())
                    .zip(&advantages[e][a])
                    .map(|((st, s), adv)| {
                        st.dist
                            .log_prob_logit_grad(s.actions[a])
                            .into_iter()
                            .map(|g| -adv * scale * g)
                            .collect()
                    })
                    .collect();
                let d_head = head_terms.as_ref().map(|(g, _)| g[e][a].as_slice());
                self.actor.backward_unroll(unroll, &d_logits, d_head)?;
            }
        }
        Ok(head_terms.map(|(_, loss)| loss))
    }

    /// Collect, fit critics, then update the actor.
    pub fn train_iteration<E: Environment>(&mut self, env: &E, seed: u64) -> Result<CriticStats> {
        let epsilon = self.epsilon();
        let batch = collect_batch(
            env,
            &self.actor,
            epsilon,
            self.cfg.batch_size,
            derive(seed, &[STREAM_BATCH, self.iterations as u64]),
        )?;
        self.update(&batch)
    }

    /// One full update from an already collected batch.
    pub fn update(&mut self, batch: &EpisodeBatch) -> Result<CriticStats> {
        let mut stats = self.train_critic(batch)?;
        let replay = self.replay(batch)?;
        self.actor.params_mut().zero_grad();
        if let Some(loss) = self.actor_gradient(batch, &replay)? {
            stats = CriticStats {
                loss: Some(loss),
                gradient_steps: 1,
            };
        }
        self.actor_opt.apply(self.actor.params_mut())?;
        if let CriticState::Iac { target, sync } = &mut self.critic {
            sync.tick(self.actor.params(), target)?;
        }
        self.iterations += 1;
        Ok(stats)
    }

    /// Greedy evaluation of the current actor. Never changes the learner.
    pub fn evaluate<E: Environment>(&self, env: &E, episodes: usize, seed: u64) -> Result<EvalStats> {
        let mut behaviour = ActorBehaviour::greedy(&self.actor);
        evaluate_behaviour(env, &mut behaviour, episodes, seed)
    }
}

fn td_errors(rewards: &[f64], values: &[f64], steps: &[&StepRecord], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let next = if steps[t].terminal || t + 1 >= values.len() {
                0.0
            } else {
                values[t + 1]
            };
            rewards[t] + gamma * next - values[t]
        })
        .collect()
}

fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Mean return and win rate of a behaviour over `episodes` seeded episodes.
pub fn evaluate_behaviour<E: Environment, B: Behaviour>(
    env: &E,
    behaviour: &mut B,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let mut sim = env.clone();
    let mut total = 0.0;
    let mut wins = 0usize;
    for i in 0..episodes {
        let ep = run_episode(&mut sim, behaviour, derive(seed, &[STREAM_EVAL, i as u64]))?;
        total += ep.episode_return;
        wins += usize::from(ep.win);
    }
    Ok(EvalStats {
        mean_return: total / episodes as f64,
        win_rate: wins as f64 / episodes as f64,
    })
}

/// Evaluates the environment's hand-coded heuristic.
pub fn evaluate_heuristic<E: Environment>(env: &E, episodes: usize, seed: u64) -> Result<EvalStats> {
    evaluate_behaviour(env, &mut HeuristicBehaviour::new(), episodes, seed)
}

/// One evaluation freeze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub trial: usize,
    pub iteration: usize,
    pub epsilon: f64,
    pub eval_return: f64,
    pub eval_win_rate: f64,
    /// Mean critic loss over the iterations since the previous freeze.
    pub critic_loss: Option<f64>,
    pub wall_clock: Option<f64>,
}

/// How long to train and how often to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub record_wall_clock: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            eval_interval: 100,
            eval_episodes: 200,
            record_wall_clock: false,
        }
    }
}

/// Trains one trial, calling `sink` for every evaluation freeze: once
/// before training, every `eval_interval` iterations, and after the last
/// iteration.
pub fn train<E, F>(
    env: &E,
    variant: AlgorithmVariant,
    cfg: &LearnerConfig,
    schedule: &TrainSchedule,
    trial: usize,
    seed: u64,
    mut sink: F,
) -> Result<Learner>
where
    E: Environment,
    F: FnMut(&MetricRow) -> Result<()>,
{
    if schedule.eval_interval == 0 {
        return Err(Error::config("evaluation interval must be positive"));
    }
    let started = Instant::now();
    let mut learner = Learner::new(env, variant, cfg.clone(), seed)?;
    let mut losses = Vec::new();
    let mut emit = |learner: &Learner, losses: &mut Vec<f64>| -> Result<()> {
        let eval = learner.evaluate(env, schedule.eval_episodes, seed)?;
        let row = MetricRow {
            trial,
            iteration: learner.iterations(),
            epsilon: learner.epsilon(),
            eval_return: eval.mean_return,
            eval_win_rate: eval.win_rate,
            critic_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            wall_clock: schedule.record_wall_clock.then(|| started.elapsed().as_secs_f64()),
        };
        losses.clear();
        sink(&row)
    };
    emit(&learner, &mut losses)?;
    for it in 1..=schedule.iterations {
        let stats = learner.train_iteration(env, seed)?;
        losses.extend(stats.loss);
        if it % schedule.eval_interval == 0 || it == schedule.iterations {
            emit(&learner, &mut losses)?;
        }
    }
    Ok(learner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{TabularGame, TabularModel, TeamMatrixGame};

    fn matrix() -> TeamMatrixGame {
        TeamMatrixGame::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0]).unwrap()
    }

    fn small_cfg() -> LearnerConfig {
        LearnerConfig {
            actor_hidden: 8,
            critic_hidden: vec![16],
            batch_size: 8,
            ..LearnerConfig::default()
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AlgorithmVariant::ALL {
            assert_eq!(v.name().parse::<AlgorithmVariant>().unwrap(), v);
        }
        assert_eq!("CentralQV".parse::<AlgorithmVariant>().unwrap(), AlgorithmVariant::CentralQv);
        assert!("dqn".parse::<AlgorithmVariant>().unwrap_err().is_config());
    }

    #[test]
    fn batch_of_thirty_with_three_agents_has_ten_episodes() {
        assert_eq!(episodes_per_batch(30, 3), 10);
        let env = TabularGame::new(TabularModel::chain(2, 3, 2, 1.0).unwrap(), 5);
        let learner = Learner::new(&env, AlgorithmVariant::Coma, small_cfg(), 0).unwrap();
        let batch = collect_batch(&env, learner.actor(), 0.5, 30, 9).unwrap();
        assert_eq!(batch.episodes.len(), 10);
    }

    #[test]
    fn every_variant_updates_without_error() {
        let env = matrix();
        for v in AlgorithmVariant::ALL {
            let mut learner = Learner::new(&env, v, small_cfg(), 3).unwrap();
            let before = learner.fingerprint();
            let stats = learner.train_iteration(&env, 3).unwrap();
            assert_ne!(before, learner.fingerprint(), "{v}");
            assert_eq!(stats.loss.is_none(), v == AlgorithmVariant::Reinforce, "{v}");
        }
    }

    #[test]
    fn evaluation_leaves_learner_untouched() {
        let env = matrix();
        let mut learner = Learner::new(&env, AlgorithmVariant::Coma, small_cfg(), 1).unwrap();
        learner.train_iteration(&env, 1).unwrap();
        let before = learner.fingerprint();
        learner.evaluate(&env, 20, 5).unwrap();
        assert_eq!(before, learner.fingerprint());
    }

    #[test]
    fn zero_iterations_emit_only_the_initial_row() {
        let env = matrix();
        let schedule = TrainSchedule {
            iterations: 0,
            eval_interval: 100,
            eval_episodes: 4,
            record_wall_clock: false,
        };
        let mut rows = Vec::new();
        train(&env, AlgorithmVariant::Coma, &small_cfg(), &schedule, 0, 7, |r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].iteration, 0);
        assert_eq!(rows[0].critic_loss, None);
    }

    #[test]
    fn returns_and_td_errors() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
    }
}
