//! Shared-parameter recurrent actor with bounded-softmax exploration.

use rand::Rng;

use crate::envs::one_hot;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseCache, DenseLayer, GruCache, GruCell, ParameterSet};

/// Action distribution `P(u) = (1 - eps) * softmax(z | available)_u + eps / k`
/// over the `k` available actions; unavailable actions get zero mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
    /// Softmax restricted to available actions, before mixing.
    softmax: Vec<f64>,
    epsilon: f64,
    mask: Vec<bool>,
}

impl PolicyDistribution {
    pub fn bounded_softmax(logits: &[f64], epsilon: f64, mask: &[bool]) -> Result<Self> {
        if logits.len() != mask.len() {
            return Err(Error::usage("logits and mask differ in length"));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::usage(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let available = mask.iter().filter(|&&m| m).count();
        if available == 0 {
            return Err(Error::usage("every action is masked"));
        }
        let max = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(z, _)| *z)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut softmax: Vec<f64> = logits
            .iter()
            .zip(mask)
            .map(|(z, &m)| if m { (z - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = softmax.iter().sum();
        softmax.iter_mut().for_each(|p| *p /= total);
        let floor = epsilon / available as f64;
        let probs = softmax
            .iter()
            .zip(mask)
            .map(|(s, &m)| if m { (1.0 - epsilon) * s + floor } else { 0.0 })
            .collect();
        Ok(Self {
            probs,
            softmax,
            epsilon,
            mask: mask.to_vec(),
        })
    }

    /// Wraps explicit probabilities; entries outside the mask must be zero.
    pub fn from_probs(probs: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if probs.len() != mask.len() {
            return Err(Error::usage("probabilities and mask differ in length"));
        }
        if probs.iter().zip(&mask).any(|(&p, &m)| p < 0.0 || (!m && p != 0.0)) {
            return Err(Error::usage("probability mass on an unavailable action"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::usage("probabilities do not sum to one"));
        }
        Ok(Self {
            softmax: probs.clone(),
            probs,
            epsilon: 0.0,
            mask,
        })
    }

    pub fn uniform(mask: Vec<bool>) -> Result<Self> {
        let k = mask.iter().filter(|&&m| m).count();
        if k == 0 {
            return Err(Error::usage("every action is masked"));
        }
        let probs = mask.iter().map(|&m| if m { 1.0 / k as f64 } else { 0.0 }).collect();
        Self::from_probs(probs, mask)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn num_available(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (u, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = u;
                if x < acc {
                    return u;
                }
            }
        }
        last
    }

    /// Most probable available action, ties to the lower index.
    pub fn greedy(&self) -> usize {
        let mut best = None;
        for (u, &p) in self.probs.iter().enumerate() {
            if self.mask[u] && best.map_or(true, |(_, bp)| p > bp) {
                best = Some((u, p));
            }
        }
        best.map(|(u, _)| u).unwrap_or(0)
    }

    /// `d log P(action) / d z` for the logits that produced this
    /// distribution.
    pub fn log_prob_logit_grad(&self, action: usize) -> Vec<f64> {
        let p = self.probs[action];
        let s_u = self.softmax[action];
        let scale = (1.0 - self.epsilon) * s_u / p;
        self.softmax
            .iter()
            .enumerate()
            .map(|(j, &s_j)| {
                if !self.mask[j] {
                    0.0
                } else {
                    let delta = if j == action { 1.0 } else { 0.0 };
                    scale * (delta - s_j)
                }
            })
            .collect()
    }
}

/// Linear annealing from `start` to `end` over `horizon` training
/// episodes, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.5,
            end: 0.02,
            horizon: 750,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        if self.horizon == 0 || episode >= self.horizon {
            return self.end;
        }
        let frac = episode as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Decentralised critic head appended to the actor's recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IacHead {
    /// One value per action.
    Q,
    /// A single state value.
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActorShape {
    pub obs_size: usize,
    pub num_agents: usize,
    pub num_actions: usize,
    pub hidden: usize,
    pub head: Option<IacHead>,
}

/// Input projection, GRU and output projection, shared by all agents.
/// Agents are told apart only by their inputs (agent id, last action) and
/// their hidden state.
#[derive(Debug, Clone)]
pub struct ActorNetwork {
    shape: ActorShape,
    params: ParameterSet,
    input: DenseLayer,
    gru: GruCell,
    output: DenseLayer,
    head: Option<DenseLayer>,
}

#[derive(Debug, Clone)]
struct StepCache {
    input: DenseCache,
    gru: GruCache,
    output: DenseCache,
    head: Option<DenseCache>,
}

/// Forward result of one actor step.
#[derive(Debug, Clone)]
pub struct ActorStep {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub head: Option<Vec<f64>>,
    pub dist: PolicyDistribution,
    cache: StepCache,
}

/// Output of [`ActorNetwork::act`].
#[derive(Debug, Clone)]
pub struct Act {
    pub dist: PolicyDistribution,
    pub hidden: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
}

/// One recorded step of an agent's trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryStep<'a> {
    pub obs: &'a [f64],
    pub mask: &'a [bool],
    pub action: usize,
}

impl ActorNetwork {
    pub fn new<R: Rng + ?Sized>(shape: ActorShape, rng: &mut R) -> Self {
        let mut params = ParameterSet::new();
        let in_size = shape.obs_size + shape.num_agents + shape.num_actions;
        let input = DenseLayer::new(&mut params, "actor.input", in_size, shape.hidden, Activation::Relu);
        let gru = GruCell::new(&mut params, "actor.gru", shape.hidden, shape.hidden);
        let output = DenseLayer::new(
            &mut params,
            "actor.output",
            shape.hidden,
            shape.num_actions,
            Activation::Identity,
        );
        let head = shape.head.map(|kind| {
            let outs = match kind {
                IacHead::Q => shape.num_actions,
                IacHead::V => 1,
            };
            DenseLayer::new(&mut params, "actor.critic_head", shape.hidden, outs, Activation::Identity)
        });
        input.init(&mut params, rng);
        gru.init(&mut params, rng);
        output.init(&mut params, rng);
        if let Some(h) = &head {
            h.init(&mut params, rng);
        }
        Self {
            shape,
            params,
            input,
            gru,
            output,
            head,
        }
    }

    pub fn shape(&self) -> ActorShape {
        self.shape
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.shape.hidden]
    }

    fn features(&self, obs: &[f64], agent: usize, last_action: Option<usize>) -> Result<Vec<f64>> {
        if obs.len() != self.shape.obs_size {
            return Err(Error::config(format!(
                "actor expects observations of length {}, got {}",
                self.shape.obs_size,
                obs.len()
            )));
        }
        if agent >= self.shape.num_agents {
            return Err(Error::usage(format!("agent {agent} out of range")));
        }
        let mut x = obs.to_vec();
        x.extend(one_hot(self.shape.num_agents, agent));
        x.extend(one_hot(
            self.shape.num_actions,
            last_action.unwrap_or(self.shape.num_actions),
        ));
        Ok(x)
    }

    /// One forward step with caches, using `params` in place of the
    /// network's own (so a target copy can share the topology).
    pub fn step_with(
        &self,
        params: &ParameterSet,
        obs: &[f64],
        h_prev: &[f64],
        last_action: Option<usize>,
        agent: usize,
        epsilon: f64,
        mask: &[bool],
    ) -> Result<ActorStep> {
        let x = self.features(obs, agent, last_action)?;
        let (a, input) = self.input.forward(params, &x)?;
        let (hidden, gru) = self.gru.step(params, &a, h_prev)?;
        let (logits, output) = self.output.forward(params, &hidden)?;
        let (head, head_cache) = match &self.head {
            Some(layer) => {
                let (y, c) = layer.forward(params, &hidden)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let dist = PolicyDistribution::bounded_softmax(&logits, epsilon, mask)?;
        Ok(ActorStep {
            hidden,
            logits,
            head,
            dist,
            cache: StepCache {
                input,
                gru,
                output,
                head: head_cache,
            },
        })
    }

    pub fn step(
        &self,
        obs: &[f64],
        h_prev: &[f64],
        last_action: Option<usize>,
        agent: usize,
        epsilon: f64,
        mask: &[bool],
    ) -> Result<ActorStep> {
        self.step_with(&self.params, obs, h_prev, last_action, agent, epsilon, mask)
    }

    /// Computes the distribution, advances the hidden state and samples an
    /// action.
    #[allow(clippy::too_many_arguments)]
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        h_prev: &[f64],
        last_action: Option<usize>,
        agent: usize,
        epsilon: f64,
        mask: &[bool],
        rng: &mut R,
    ) -> Result<Act> {
        let step = self.step(obs, h_prev, last_action, agent, epsilon, mask)?;
        let action = step.dist.sample(rng);
        Ok(Act {
            log_prob: step.dist.log_prob(action),
            dist: step.dist,
            hidden: step.hidden,
            action,
        })
    }

    /// Replays one agent's trajectory from a zero hidden state.
    pub fn unroll(&self, agent: usize, epsilon: f64, steps: &[TrajectoryStep<'_>]) -> Result<Vec<ActorStep>> {
        self.unroll_with(&self.params, agent, epsilon, steps)
    }

    pub fn unroll_with(
        &self,
        params: &ParameterSet,
        agent: usize,
        epsilon: f64,
        steps: &[TrajectoryStep<'_>],
    ) -> Result<Vec<ActorStep>> {
        let mut out = Vec::with_capacity(steps.len());
        let mut h = self.initial_hidden();
        let mut last = None;
        for s in steps {
            let step = self.step_with(params, s.obs, &h, last, agent, epsilon, s.mask)?;
            h = step.hidden.clone();
            last = Some(s.action);
            out.push(step);
        }
        Ok(out)
    }

    /// Backpropagates through a whole unroll. `d_logits[t]` and
    /// `d_head[t]` are loss gradients with respect to the step outputs.
    pub fn backward_unroll(
        &mut self,
        unroll: &[ActorStep],
        d_logits: &[Vec<f64>],
        d_head: Option<&[Vec<f64>]>,
    ) -> Result<()> {
        if d_logits.len() != unroll.len() || d_head.is_some_and(|d| d.len() != unroll.len()) {
            return Err(Error::usage("gradient sequence length does not match the unroll"));
        }
        if d_head.is_some() && self.head.is_none() {
            return Err(Error::config("actor has no critic head"));
        }
        let mut dh_next = vec![0.0; self.shape.hidden];
        for t in (0..unroll.len()).rev() {
            let cache = &unroll[t].cache;
            let mut dh = self.output.backward(&mut self.params, &cache.output, &d_logits[t])?;
            if let (Some(dh_head), Some(layer), Some(c)) = (d_head, &self.head, &cache.head) {
                let extra = layer.backward(&mut self.params, c, &dh_head[t])?;
                dh.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
            }
            dh.iter_mut().zip(&dh_next).for_each(|(a, b)| *a += b);
            let (da, dh_prev) = self.gru.backward(&mut self.params, &cache.gru, &dh)?;
            self.input.backward(&mut self.params, &cache.input, &da)?;
            dh_next = dh_prev;
        }
        Ok(())
    }
}
