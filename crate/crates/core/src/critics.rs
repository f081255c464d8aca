//! Centralised and decentralised critics.
//!
//! The COMA critic takes the other agents' actions as input and returns one
//! value per candidate action of the evaluated agent, so the counterfactual
//! baseline for an agent costs a single forward pass.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::envs::one_hot;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpCache, ParameterSet};
use crate::policy::{ActorNetwork, ActorStep, PolicyDistribution};

/// Feed-forward ReLU critic with a forward-pass counter.
#[derive(Debug)]
pub struct FeedForwardCritic {
    mlp: Mlp,
    params: ParameterSet,
    forward_passes: AtomicU64,
}

impl Clone for FeedForwardCritic {
    fn clone(&self) -> Self {
        Self {
            mlp: self.mlp.clone(),
            params: self.params.clone(),
            forward_passes: AtomicU64::new(self.forward_passes.load(Ordering::Relaxed)),
        }
    }
}

impl FeedForwardCritic {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut params = ParameterSet::new();
        let mlp = Mlp::new(&mut params, name, inputs, hidden, outputs, Activation::Relu);
        mlp.init(&mut params, rng);
        Self {
            mlp,
            params,
            forward_passes: AtomicU64::new(0),
        }
    }

    pub fn inputs(&self) -> usize {
        self.mlp.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.mlp.outputs()
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    fn check(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.mlp.inputs() {
            return Err(Error::usage(format!(
                "critic expects {} input features, got {}",
                self.mlp.inputs(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn infer_with(&self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        self.check(input)?;
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        self.mlp.infer(params, input)
    }

    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.infer_with(&self.params, input)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check(input)?;
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        self.mlp.forward(&self.params, input)
    }

    pub fn backward(&mut self, cache: &MlpCache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.mlp.backward(&mut self.params, cache, upstream)
    }
}

/// Layout of the COMA critic input vector:
/// `state ++ obs[a] ++ onehot(u^b) for b != a ++ onehot(a) ++ onehot(u^a_{t-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticInputSpec {
    pub state_size: usize,
    pub obs_size: usize,
    pub num_agents: usize,
    pub num_actions: usize,
    pub include_last_action: bool,
}

impl CriticInputSpec {
    pub fn len(&self) -> usize {
        self.state_size
            + self.obs_size
            + (self.num_agents - 1) * self.num_actions
            + self.num_agents
            + if self.include_last_action { self.num_actions } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds the input for evaluating `agent`. Its own entry in
    /// `joint_action` is never read. Dead agents' action slots are zero.
    pub fn build(
        &self,
        state: &[f64],
        obs: &[f64],
        joint_action: &[usize],
        alive: &[bool],
        agent: usize,
        last_action: Option<usize>,
    ) -> Result<Vec<f64>> {
        if state.len() != self.state_size
            || obs.len() != self.obs_size
            || joint_action.len() != self.num_agents
            || alive.len() != self.num_agents
            || agent >= self.num_agents
        {
            return Err(Error::usage("malformed critic input components"));
        }
        let mut x = Vec::with_capacity(self.len());
        x.extend_from_slice(state);
        x.extend_from_slice(obs);
        for b in (0..self.num_agents).filter(|&b| b != agent) {
            if alive[b] {
                x.extend(one_hot(self.num_actions, joint_action[b]));
            } else {
                x.extend(std::iter::repeat(0.0).take(self.num_actions));
            }
        }
        x.extend(one_hot(self.num_agents, agent));
        if self.include_last_action {
            x.extend(one_hot(self.num_actions, last_action.unwrap_or(self.num_actions)));
        }
        Ok(x)
    }
}

/// Centralised Q critic returning `Q(s, (u^-a, .))` for one agent.
#[derive(Debug, Clone)]
pub struct ComaCritic {
    spec: CriticInputSpec,
    net: FeedForwardCritic,
}

impl ComaCritic {
    pub fn new<R: Rng + ?Sized>(spec: CriticInputSpec, hidden: &[usize], rng: &mut R) -> Self {
        let net = FeedForwardCritic::new("coma_critic", spec.len(), hidden, spec.num_actions, rng);
        Self { spec, net }
    }

    pub fn spec(&self) -> CriticInputSpec {
        self.spec
    }

    pub fn net(&self) -> &FeedForwardCritic {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FeedForwardCritic {
        &mut self.net
    }

    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.net.infer(input)
    }

    pub fn q_values_with(&self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        self.net.infer_with(params, input)
    }
}

/// Centralised state-value critic over `state ++ obs[0] ++ ... ++ obs[n-1]`.
#[derive(Debug, Clone)]
pub struct CentralVCritic {
    state_size: usize,
    obs_size: usize,
    num_agents: usize,
    net: FeedForwardCritic,
}

impl CentralVCritic {
    pub fn new<R: Rng + ?Sized>(
        state_size: usize,
        obs_size: usize,
        num_agents: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let net = FeedForwardCritic::new(
            "central_v",
            state_size + num_agents * obs_size,
            hidden,
            1,
            rng,
        );
        Self {
            state_size,
            obs_size,
            num_agents,
            net,
        }
    }

    pub fn input(&self, state: &[f64], observations: &[Vec<f64>]) -> Result<Vec<f64>> {
        if state.len() != self.state_size
            || observations.len() != self.num_agents
            || observations.iter().any(|o| o.len() != self.obs_size)
        {
            return Err(Error::usage("malformed central-V input"));
        }
        let mut x = state.to_vec();
        for o in observations {
            x.extend_from_slice(o);
        }
        Ok(x)
    }

    pub fn value(&self, state: &[f64], observations: &[Vec<f64>]) -> Result<f64> {
        Ok(self.net.infer(&self.input(state, observations)?)?[0])
    }

    pub fn net(&self) -> &FeedForwardCritic {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FeedForwardCritic {
        &mut self.net
    }
}

fn check_policy(q: &[f64], policy: &PolicyDistribution) -> Result<()> {
    if q.len() != policy.probs().len() {
        return Err(Error::usage("Q-vector and policy cover different action sets"));
    }
    if policy
        .probs()
        .iter()
        .zip(policy.mask())
        .any(|(&p, &m)| !m && p != 0.0)
    {
        return Err(Error::usage("policy puts mass on an unavailable action"));
    }
    Ok(())
}

/// `sum_u pi(u) Q[u]`: the counterfactual baseline for COMA, and the local
/// value `V(tau) = sum_u pi(u|tau) Q(tau, u)` for IAC-Q.
pub fn expected_value(q: &[f64], policy: &PolicyDistribution) -> Result<f64> {
    check_policy(q, policy)?;
    Ok(q.iter().zip(policy.probs()).map(|(q, p)| q * p).sum())
}

/// `A = Q[u] - sum_u' pi(u') Q[u']`.
pub fn counterfactual_advantage(q: &[f64], policy: &PolicyDistribution, chosen: usize) -> Result<f64> {
    let baseline = expected_value(q, policy)?;
    let q_chosen = *q
        .get(chosen)
        .ok_or_else(|| Error::usage(format!("action {chosen} out of range")))?;
    Ok(q_chosen - baseline)
}

/// Counterfactual advantages for every agent at one timestep, using one
/// critic forward pass per agent.
#[allow(clippy::too_many_arguments)]
pub fn counterfactual_advantages(
    critic: &ComaCritic,
    state: &[f64],
    observations: &[Vec<f64>],
    joint_action: &[usize],
    alive: &[bool],
    last_actions: &[Option<usize>],
    policies: &[PolicyDistribution],
) -> Result<Vec<f64>> {
    (0..critic.spec.num_agents)
        .map(|a| {
            let x = critic
                .spec
                .build(state, &observations[a], joint_action, alive, a, last_actions[a])?;
            let q = critic.q_values(&x)?;
            counterfactual_advantage(&q, &policies[a], joint_action[a])
        })
        .collect()
}

/// IAC-Q head output for one actor step.
pub fn iac_q(step: &ActorStep) -> Result<&[f64]> {
    step.head
        .as_deref()
        .ok_or_else(|| Error::config("actor has no IAC head"))
}

/// IAC-V head output for one actor step.
pub fn iac_v(step: &ActorStep) -> Result<f64> {
    let head = iac_q(step)?;
    if head.len() != 1 {
        return Err(Error::config("actor head is not a state-value head"));
    }
    Ok(head[0])
}

/// Convenience: IAC head output from a single observation, starting from
/// the given hidden state.
pub fn iac_head_output(
    actor: &ActorNetwork,
    obs: &[f64],
    h_prev: &[f64],
    last_action: Option<usize>,
    agent: usize,
) -> Result<Vec<f64>> {
    let mask = vec![true; actor.shape().num_actions];
    let step = actor.step(obs, h_prev, last_action, agent, 0.0, &mask)?;
    Ok(iac_q(&step)?.to_vec())
}
