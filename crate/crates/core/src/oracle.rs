//! Exact reference computations on enumerated, fully observable games.
//!
//! Policies here are per-state softmax tables, so an agent's history
//! collapses to the current state. Everything is computed by exhaustive
//! summation over states and joint actions.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::envs::{TabularModel, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};

const RESIDUAL_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;

/// Independent softmax policies, one logit vector per (state, agent).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_agents: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn from_logits(num_states: usize, num_agents: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_states * num_agents * num_actions {
            return Err(Error::usage("logit table has the wrong size"));
        }
        Ok(Self {
            num_states,
            num_agents,
            num_actions,
            logits,
        })
    }

    pub fn uniform(model: &TabularModel) -> Self {
        let len = model.num_states() * model.num_agents() * model.num_actions();
        Self::from_logits(model.num_states(), model.num_agents(), model.num_actions(), vec![0.0; len])
            .expect("sizes derived from the model")
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(model: &TabularModel, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::uniform(model);
        for l in &mut p.logits {
            *l = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    pub fn param_index(&self, state: usize, agent: usize, action: usize) -> usize {
        (state * self.num_agents + agent) * self.num_actions + action
    }

    pub fn probs(&self, state: usize, agent: usize) -> Vec<f64> {
        let start = self.param_index(state, agent, 0);
        let z = &self.logits[start..start + self.num_actions];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    /// `prod_a pi^a(u^a | s)` for every joint action of `state`.
    pub fn joint_probs(&self, model: &TabularModel, state: usize) -> Vec<f64> {
        let per_agent: Vec<Vec<f64>> = (0..self.num_agents).map(|a| self.probs(state, a)).collect();
        (0..model.num_joint_actions())
            .map(|ja| {
                model
                    .joint_actions(ja)
                    .iter()
                    .enumerate()
                    .map(|(a, &u)| per_agent[a][u])
                    .product()
            })
            .collect()
    }

    fn check(&self, model: &TabularModel) -> Result<()> {
        if self.num_states != model.num_states()
            || self.num_agents != model.num_agents()
            || self.num_actions != model.num_actions()
        {
            return Err(Error::usage("policy does not match the model"));
        }
        Ok(())
    }
}

/// `Q[s][joint]` and `V[s]` for a fixed joint policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularValues {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    num_joint: usize,
}

impl TabularValues {
    pub fn q(&self, state: usize, joint: usize) -> f64 {
        self.q[state * self.num_joint + joint]
    }

    pub fn q_row(&self, state: usize) -> &[f64] {
        &self.q[state * self.num_joint..(state + 1) * self.num_joint]
    }
}

fn check_cap(model: &TabularModel) -> Result<()> {
    if model.num_states() * model.num_joint_actions() > DEFAULT_ENUMERATION_CAP {
        return Err(Error::capability(format!(
            "{} state-joint-action pairs exceed the enumeration cap",
            model.num_states() * model.num_joint_actions()
        )));
    }
    Ok(())
}

fn backup(model: &TabularModel, v: &[f64], gamma: f64, state: usize, joint: usize) -> f64 {
    let next = model.transition(state, joint);
    model.reward(state, joint) + gamma * next[..model.num_states()].iter().zip(v).map(|(p, v)| p * v).sum::<f64>()
}

/// Exact `Q^pi` and `V^pi` by fixed-point iteration of the Bellman
/// expectation operator until the sup-norm change drops below 1e-12.
pub fn evaluate_policy(model: &TabularModel, policy: &TabularPolicy, gamma: f64) -> Result<TabularValues> {
    check_cap(model)?;
    policy.check(model)?;
    let ns = model.num_states();
    let nj = model.num_joint_actions();
    let joint: Vec<Vec<f64>> = (0..ns).map(|s| policy.joint_probs(model, s)).collect();
    let mut v = vec![0.0; ns];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        let next: Vec<f64> = (0..ns)
            .map(|s| (0..nj).map(|ja| joint[s][ja] * backup(model, &v, gamma, s, ja)).sum())
            .collect();
        for (old, new) in v.iter().zip(&next) {
            delta = delta.max((old - new).abs());
        }
        v = next;
        if delta < RESIDUAL_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("policy evaluation did not converge".into()));
    }
    let q: Vec<f64> = (0..ns)
        .flat_map(|s| (0..nj).map(move |ja| (s, ja)))
        .map(|(s, ja)| backup(model, &v, gamma, s, ja))
        .collect();
    let v = (0..ns)
        .map(|s| (0..nj).map(|ja| joint[s][ja] * q[s * nj + ja]).sum())
        .collect();
    Ok(TabularValues { q, v, num_joint: nj })
}

/// Largest violation of `Q(s,u) = r(s,u) + gamma * E[V(s')]` together with
/// `V(s) = E_pi[Q(s,.)]`.
pub fn bellman_residual(model: &TabularModel, policy: &TabularPolicy, values: &TabularValues, gamma: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..model.num_states() {
        let jp = policy.joint_probs(model, s);
        let v_s: f64 = jp.iter().enumerate().map(|(ja, p)| p * values.q(s, ja)).sum();
        worst = worst.max((v_s - values.v[s]).abs());
        for ja in 0..model.num_joint_actions() {
            worst = worst.max((values.q(s, ja) - backup(model, &values.v, gamma, s, ja)).abs());
        }
    }
    worst
}

/// Expected discounted return from the initial distribution.
pub fn expected_return(model: &TabularModel, policy: &TabularPolicy, gamma: f64) -> Result<f64> {
    let values = evaluate_policy(model, policy, gamma)?;
    Ok(model.initial().iter().zip(&values.v).map(|(p, v)| p * v).sum())
}

/// `d(s) = sum_t gamma^t Pr(s_t = s)` from the initial distribution.
pub fn discounted_state_distribution(model: &TabularModel, policy: &TabularPolicy, gamma: f64) -> Result<Vec<f64>> {
    check_cap(model)?;
    policy.check(model)?;
    let ns = model.num_states();
    let joint: Vec<Vec<f64>> = (0..ns).map(|s| policy.joint_probs(model, s)).collect();
    let mut d = model.initial().to_vec();
    for _ in 0..MAX_SWEEPS {
        let mut next = model.initial().to_vec();
        for s in 0..ns {
            if d[s] == 0.0 {
                continue;
            }
            for (ja, &p) in joint[s].iter().enumerate() {
                let row = model.transition(s, ja);
                for (s2, &t) in row[..ns].iter().enumerate() {
                    next[s2] += gamma * d[s] * p * t;
                }
            }
        }
        let delta = d.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        d = next;
        if delta < RESIDUAL_TOLERANCE {
            return Ok(d);
        }
    }
    Err(Error::Numerical("state distribution did not converge".into()))
}

/// `d log pi^a(u | s) / d logit(s, a, k) = 1[u = k] - pi^a(k | s)`.
fn score(probs: &[f64], action: usize, k: usize) -> f64 {
    (if action == k { 1.0 } else { 0.0 }) - probs[k]
}

/// Policy-gradient-theorem sum with an arbitrary per-(s, joint, agent)
/// weight in place of `Q`.
fn weighted_score_sum<F>(
    model: &TabularModel,
    policy: &TabularPolicy,
    d: &[f64],
    mut weight: F,
) -> Vec<f64>
where
    F: FnMut(usize, usize, usize, &[usize]) -> f64,
{
    let mut grad = vec![0.0; policy.num_params()];
    for s in 0..model.num_states() {
        if d[s] == 0.0 {
            continue;
        }
        let per_agent: Vec<Vec<f64>> = (0..model.num_agents()).map(|a| policy.probs(s, a)).collect();
        let jp = policy.joint_probs(model, s);
        for ja in 0..model.num_joint_actions() {
            let actions = model.joint_actions(ja);
            for a in 0..model.num_agents() {
                let w = d[s] * jp[ja] * weight(s, ja, a, &actions);
                if w == 0.0 {
                    continue;
                }
                for k in 0..model.num_actions() {
                    grad[policy.param_index(s, a, k)] += w * score(&per_agent[a], actions[a], k);
                }
            }
        }
    }
    grad
}

/// Exact `grad J` with respect to the policy logits.
pub fn exact_policy_gradient(model: &TabularModel, policy: &TabularPolicy, gamma: f64) -> Result<Vec<f64>> {
    let values = evaluate_policy(model, policy, gamma)?;
    let d = discounted_state_distribution(model, policy, gamma)?;
    Ok(weighted_score_sum(model, policy, &d, |s, ja, _, _| values.q(s, ja)))
}

/// Policy gradient with a caller-supplied critic `critic[s * |joint| + ja]`
/// (for example `Q - V`).
pub fn policy_gradient_with_critic(
    model: &TabularModel,
    policy: &TabularPolicy,
    gamma: f64,
    critic: &[f64],
) -> Result<Vec<f64>> {
    if critic.len() != model.num_states() * model.num_joint_actions() {
        return Err(Error::usage("critic table has the wrong size"));
    }
    let d = discounted_state_distribution(model, policy, gamma)?;
    let nj = model.num_joint_actions();
    Ok(weighted_score_sum(model, policy, &d, |s, ja, _, _| critic[s * nj + ja]))
}

/// `g_b = -E[sum_a grad log pi^a(u^a) b(s, a, u)]` without checking whether
/// `b` depends on the agent's own action.
pub fn raw_baseline_contribution<B>(
    model: &TabularModel,
    policy: &TabularPolicy,
    gamma: f64,
    baseline: B,
) -> Result<Vec<f64>>
where
    B: Fn(usize, usize, &[usize]) -> f64,
{
    let d = discounted_state_distribution(model, policy, gamma)?;
    let mut g = weighted_score_sum(model, policy, &d, |s, _, a, u| baseline(s, a, u));
    g.iter_mut().for_each(|v| *v = -*v);
    Ok(g)
}

/// Expected gradient contribution of a per-agent baseline
/// `b(state, agent, joint action)`. The baseline must ignore the agent's
/// own action; this is probed on every (state, joint action, agent) and a
/// dependence is reported as a usage error.
pub fn exact_baseline_contribution<B>(
    model: &TabularModel,
    policy: &TabularPolicy,
    gamma: f64,
    baseline: B,
) -> Result<Vec<f64>>
where
    B: Fn(usize, usize, &[usize]) -> f64,
{
    check_cap(model)?;
    for s in 0..model.num_states() {
        for ja in 0..model.num_joint_actions() {
            let actions = model.joint_actions(ja);
            for a in 0..model.num_agents() {
                let reference = baseline(s, a, &actions);
                for k in 0..model.num_actions() {
                    let mut probe = actions.clone();
                    probe[a] = k;
                    if baseline(s, a, &probe) != reference {
                        return Err(Error::usage(format!(
                            "baseline depends on agent {a}'s own action in state {s}"
                        )));
                    }
                }
            }
        }
    }
    raw_baseline_contribution(model, policy, gamma, baseline)
}

/// `sum_u' pi^a(u'|s) Q(s, (u^-a, u'))`, the counterfactual baseline.
pub fn counterfactual_baseline(
    model: &TabularModel,
    policy: &TabularPolicy,
    q: &[f64],
    state: usize,
    agent: usize,
    actions: &[usize],
) -> f64 {
    let probs = policy.probs(state, agent);
    let nj = model.num_joint_actions();
    let mut alt = actions.to_vec();
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            alt[agent] = k;
            p * q[state * nj + model.joint_index(&alt)]
        })
        .sum()
}

/// Default action used in difference rewards.
#[derive(Debug, Clone, PartialEq)]
pub enum DefaultAction {
    /// One fixed action per agent.
    Fixed(Vec<usize>),
    /// Marginalise the agent's action under its own policy.
    PolicyExpectation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageRow {
    pub state: usize,
    pub joint_action: String,
    pub agent: usize,
    pub own_action: usize,
    pub q: f64,
    pub coma_advantage: f64,
    pub difference_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageReport {
    pub rows: Vec<AdvantageRow>,
    /// Fraction of (state, u^-a, agent) groups whose argmax over own action
    /// agrees between the COMA advantage and the difference reward.
    pub argmax_agreement: f64,
}

impl AdvantageReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] + 1e-12 {
            best = i;
        }
    }
    best
}

/// Tabulates exact COMA advantages against difference rewards for every
/// (state, joint action, agent).
pub fn compare_advantages(
    model: &TabularModel,
    policy: &TabularPolicy,
    gamma: f64,
    defaults: &DefaultAction,
) -> Result<AdvantageReport> {
    if let DefaultAction::Fixed(d) = defaults {
        if d.len() != model.num_agents() || d.iter().any(|&u| u >= model.num_actions()) {
            return Err(Error::usage("one valid default action per agent is required"));
        }
    }
    let values = evaluate_policy(model, policy, gamma)?;
    let nj = model.num_joint_actions();
    let mut rows = Vec::with_capacity(model.num_states() * nj * model.num_agents());
    for s in 0..model.num_states() {
        for ja in 0..nj {
            let actions = model.joint_actions(ja);
            for a in 0..model.num_agents() {
                let baseline = counterfactual_baseline(model, policy, &values.q, s, a, &actions);
                let counterfactual_reward = match defaults {
                    DefaultAction::Fixed(d) => model.reward(s, model.substitute(ja, a, d[a])),
                    DefaultAction::PolicyExpectation => policy
                        .probs(s, a)
                        .iter()
                        .enumerate()
                        .map(|(k, p)| p * model.reward(s, model.substitute(ja, a, k)))
                        .sum(),
                };
                rows.push(AdvantageRow {
                    state: s,
                    joint_action: actions.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" "),
                    agent: a,
                    own_action: actions[a],
                    q: values.q(s, ja),
                    coma_advantage: values.q(s, ja) - baseline,
                    difference_reward: model.reward(s, ja) - counterfactual_reward,
                });
            }
        }
    }

    let mut groups = 0usize;
    let mut agree = 0usize;
    for s in 0..model.num_states() {
        for a in 0..model.num_agents() {
            for ja in 0..nj {
                if model.joint_actions(ja)[a] != 0 {
                    continue;
                }
                let members: Vec<&AdvantageRow> = (0..model.num_actions())
                    .map(|k| {
                        let idx = model.substitute(ja, a, k);
                        &rows[(s * nj + idx) * model.num_agents() + a]
                    })
                    .collect();
                let coma: Vec<f64> = members.iter().map(|r| r.coma_advantage).collect();
                let diff: Vec<f64> = members.iter().map(|r| r.difference_reward).collect();
                groups += 1;
                agree += (argmax(&coma) == argmax(&diff)) as usize;
            }
        }
    }
    Ok(AdvantageReport {
        rows,
        argmax_agreement: agree as f64 / groups.max(1) as f64,
    })
}
