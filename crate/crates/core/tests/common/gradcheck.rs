//! Finite-difference sweeps over randomly shaped networks. Each sweep
//! returns the worst relative error seen across all configurations.

use coma_core::critics::{CentralVCritic, ComaCritic, CriticInputSpec};
use coma_core::nn::{Activation, DenseLayer, GruCell, Mlp, ParameterSet};
use coma_core::policy::{ActorNetwork, ActorShape, IacHead, TrajectoryStep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_params, relative_error, sample_indices, FD_STEP};

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Identity][rng.gen_range(0..3)]
}

pub fn dense_layers(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let (i, o) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let mut params = ParameterSet::new();
        let layer = DenseLayer::new(&mut params, "d", i, o, activation(&mut rng));
        layer.init(&mut params, &mut rng);
        let x = random_vec(&mut rng, i);
        let c = random_vec(&mut rng, o);
        let (_, cache) = layer.forward(&params, &x).unwrap();
        let dx = layer.backward(&mut params, &cache, &c).unwrap();
        let grads = params.grads().to_vec();
        let all: Vec<usize> = (0..params.len()).collect();
        worst = worst.max(check_params(&params, &grads, &all, |p| dot(&layer.infer(p, &x).unwrap(), &c)));
        for k in 0..i {
            let mut xp = x.clone();
            xp[k] += FD_STEP;
            let up = dot(&layer.infer(&params, &xp).unwrap(), &c);
            xp[k] -= 2.0 * FD_STEP;
            let down = dot(&layer.infer(&params, &xp).unwrap(), &c);
            worst = worst.max(relative_error(dx[k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

pub fn mlps(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for cfg in 0..configs {
        let inputs = rng.gen_range(1..8);
        let hidden: Vec<usize> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..9)).collect();
        let outputs = rng.gen_range(1..5);
        let mut params = ParameterSet::new();
        let mlp = Mlp::new(&mut params, "m", inputs, &hidden, outputs, activation(&mut rng));
        mlp.init(&mut params, &mut rng);
        let x = random_vec(&mut rng, inputs);
        let c = random_vec(&mut rng, outputs);
        let (_, cache) = mlp.forward(&params, &x).unwrap();
        mlp.backward(&mut params, &cache, &c).unwrap();
        let grads = params.grads().to_vec();
        let idx = sample_indices(params.len(), 40, cfg);
        worst = worst.max(check_params(&params, &grads, &idx, |p| dot(&mlp.infer(p, &x).unwrap(), &c)));
    }
    worst
}

pub fn gru_unrolls(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for cfg in 0..configs {
        let (i, h, len) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..6));
        let mut params = ParameterSet::new();
        let gru = GruCell::new(&mut params, "g", i, h);
        gru.init(&mut params, &mut rng);
        let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, i)).collect();
        let cs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, h)).collect();
        let h0 = random_vec(&mut rng, h);
        let loss = |p: &ParameterSet, h0: &[f64]| {
            let mut state = h0.to_vec();
            let mut total = 0.0;
            for (x, c) in xs.iter().zip(&cs) {
                state = gru.step(p, x, &state).unwrap().0;
                total += dot(&state, c);
            }
            total
        };
        let mut caches = Vec::new();
        let mut state = h0.clone();
        for x in &xs {
            let (next, cache) = gru.step(&params, x, &state).unwrap();
            caches.push(cache);
            state = next;
        }
        let mut dh = vec![0.0; h];
        for t in (0..len).rev() {
            let upstream: Vec<f64> = dh.iter().zip(&cs[t]).map(|(a, b)| a + b).collect();
            dh = gru.backward(&mut params, &caches[t], &upstream).unwrap().1;
        }
        let grads = params.grads().to_vec();
        let idx = sample_indices(params.len(), 40, cfg);
        worst = worst.max(check_params(&params, &grads, &idx, |p| loss(p, &h0)));
        for k in 0..h {
            let mut hp = h0.clone();
            hp[k] += FD_STEP;
            let up = loss(&params, &hp);
            hp[k] -= 2.0 * FD_STEP;
            let down = loss(&params, &hp);
            worst = worst.max(relative_error(dh[k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn random_spec(rng: &mut ChaCha8Rng) -> CriticInputSpec {
    CriticInputSpec {
        state_size: rng.gen_range(1..6),
        obs_size: rng.gen_range(1..5),
        num_agents: rng.gen_range(1..4),
        num_actions: rng.gen_range(2..5),
        include_last_action: rng.gen_bool(0.5),
    }
}

pub fn critics(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for cfg in 0..configs {
        let spec = random_spec(&mut rng);
        let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(2..9)).collect();
        let mut coma = ComaCritic::new(spec, &hidden, &mut rng);
        let joint: Vec<usize> = (0..spec.num_agents).map(|_| rng.gen_range(0..spec.num_actions)).collect();
        let alive: Vec<bool> = (0..spec.num_agents).map(|_| rng.gen_bool(0.8)).collect();
        let agent = rng.gen_range(0..spec.num_agents);
        let x = spec
            .build(
                &random_vec(&mut rng, spec.state_size),
                &random_vec(&mut rng, spec.obs_size),
                &joint,
                &alive,
                agent,
                Some(rng.gen_range(0..spec.num_actions)),
            )
            .unwrap();
        let c = random_vec(&mut rng, spec.num_actions);
        let (_, cache) = coma.net().forward(&x).unwrap();
        coma.net_mut().backward(&cache, &c).unwrap();
        let grads = coma.net().params().grads().to_vec();
        let idx = sample_indices(grads.len(), 40, cfg);
        worst = worst.max(check_params(coma.net().params(), &grads, &idx, |p| {
            dot(&coma.q_values_with(p, &x).unwrap(), &c)
        }));

        let mut v = CentralVCritic::new(spec.state_size, spec.obs_size, spec.num_agents, &hidden, &mut rng);
        let obs: Vec<Vec<f64>> = (0..spec.num_agents).map(|_| random_vec(&mut rng, spec.obs_size)).collect();
        let xv = v.input(&random_vec(&mut rng, spec.state_size), &obs).unwrap();
        let (_, cache) = v.net().forward(&xv).unwrap();
        v.net_mut().backward(&cache, &[1.0]).unwrap();
        let grads = v.net().params().grads().to_vec();
        let idx = sample_indices(grads.len(), 40, cfg);
        worst = worst.max(check_params(v.net().params(), &grads, &idx, |p| {
            v.net().infer_with(p, &xv).unwrap()[0]
        }));
    }
    worst
}

/// Loss `sum_t w_t log pi(u_t) + sum_t c_t . head_t` through a full actor
/// unroll with random masks, exploration rates and optional IAC heads.
pub fn actor_pipelines(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for cfg in 0..configs {
        let head = [None, Some(IacHead::Q), Some(IacHead::V)][rng.gen_range(0..3)];
        let shape = ActorShape {
            obs_size: rng.gen_range(1..5),
            num_agents: rng.gen_range(1..4),
            num_actions: rng.gen_range(2..5),
            hidden: rng.gen_range(2..6),
            head,
        };
        let mut actor = ActorNetwork::new(shape, &mut rng);
        let agent = rng.gen_range(0..shape.num_agents);
        let epsilon = rng.gen_range(0.0..0.5);
        let len = rng.gen_range(1..5);
        let obs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, shape.obs_size)).collect();
        let masks: Vec<Vec<bool>> = (0..len)
            .map(|_| {
                let mut m: Vec<bool> = (0..shape.num_actions).map(|_| rng.gen_bool(0.7)).collect();
                let keep = rng.gen_range(0..shape.num_actions);
                m[keep] = true;
                m
            })
            .collect();
        let actions: Vec<usize> = masks
            .iter()
            .map(|m| {
                let avail: Vec<usize> = (0..m.len()).filter(|&u| m[u]).collect();
                avail[rng.gen_range(0..avail.len())]
            })
            .collect();
        let weights = random_vec(&mut rng, len);
        let head_len = match head {
            Some(IacHead::Q) => shape.num_actions,
            Some(IacHead::V) => 1,
            None => 0,
        };
        let head_coef: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, head_len)).collect();
        let traj: Vec<TrajectoryStep<'_>> = (0..len)
            .map(|t| TrajectoryStep {
                obs: &obs[t],
                mask: &masks[t],
                action: actions[t],
            })
            .collect();
        let loss = |actor: &ActorNetwork, p: &ParameterSet| {
            actor
                .unroll_with(p, agent, epsilon, &traj)
                .unwrap()
                .iter()
                .enumerate()
                .map(|(t, s)| {
                    weights[t] * s.dist.log_prob(actions[t])
                        + s.head.as_ref().map_or(0.0, |h| dot(h, &head_coef[t]))
                })
                .sum::<f64>()
        };
        let unroll = actor.unroll(agent, epsilon, &traj).unwrap();
        let d_logits: Vec<Vec<f64>> = unroll
            .iter()
            .enumerate()
            .map(|(t, s)| s.dist.log_prob_logit_grad(actions[t]).into_iter().map(|g| g * weights[t]).collect())
            .collect();
        let d_head = head.map(|_| head_coef.as_slice());
        actor.backward_unroll(&unroll, &d_logits, d_head).unwrap();
        let grads = actor.params().grads().to_vec();
        let idx = sample_indices(grads.len(), 40, cfg);
        let frozen = actor.clone();
        worst = worst.max(check_params(actor.params(), &grads, &idx, |p| loss(&frozen, p)));
    }
    worst
}
