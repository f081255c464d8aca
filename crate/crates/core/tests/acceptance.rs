//! Acceptance suite. Runs each criterion in turn, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed.
//!
//! `cargo test --test acceptance -- 3 5` runs only criteria 3 and 5.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use coma_core::critics::{counterfactual_advantage, ComaCritic, CriticInputSpec};
use coma_core::envs::{Environment, SkirmishConfig, SkirmishEnv, TabularModel, TeamMatrixGame};
use coma_core::harness::{run_ablation_suite, run_experiment, ExperimentConfig};
use coma_core::learner::{
    collect_batch, sample_gradient, sample_joint, td_lambda_targets, AlgorithmVariant, Learner, LearnerConfig,
    SampleMoments, SampleWeight,
};
use coma_core::nn::RmsProp;
use coma_core::oracle::{
    compare_advantages, counterfactual_baseline, evaluate_policy, exact_baseline_contribution, exact_policy_gradient,
    DefaultAction, TabularPolicy,
};
use coma_core::policy::{EpsilonSchedule, PolicyDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn matrix_game() -> TeamMatrixGame {
    let path = repo().join("scenarios/matrix_2x3.txt");
    TeamMatrixGame::load(&path).expect("matrix scenario loads")
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn baseline_neutrality() -> Outcome {
    let start = Instant::now();
    let model = matrix_game().to_model();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let policy = TabularPolicy::random(&model, 2.0, &mut rng);
        let values = evaluate_policy(&model, &policy, 0.99).map_err(|e| e.to_string())?;
        let g_b = exact_baseline_contribution(&model, &policy, 0.99, |s, a, u| {
            counterfactual_baseline(&model, &policy, &values.q, s, a, u)
        })
        .map_err(|e| e.to_string())?;
        worst = g_b.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst < 1e-10 && secs < 1.0,
        format!("max |g_b| = {worst:.2e} over 20 policies in {secs:.3} s"),
    )
}

fn gradient_correctness() -> Outcome {
    use common::{gradcheck, FD_TOLERANCE};
    let start = Instant::now();
    let families = [
        ("dense", gradcheck::dense_layers(100, 11)),
        ("mlp", gradcheck::mlps(100, 12)),
        ("gru", gradcheck::gru_unrolls(100, 13)),
        ("critics", gradcheck::critics(100, 14)),
        ("actor", gradcheck::actor_pipelines(100, 15)),
    ];
    let secs = start.elapsed().as_secs_f64();
    let worst = families.iter().map(|f| f.1).fold(0.0, f64::max);
    let detail = families
        .iter()
        .map(|(name, e)| format!("{name} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        worst < FD_TOLERANCE && secs < 60.0,
        format!("100 configs per family, worst rel err {detail}; {secs:.1} s"),
    )
}

/// lambda-return as a weighted sum of n-step returns.
fn lambda_return_by_enumeration(
    rewards: &[f64],
    next_values: &[f64],
    terminal: bool,
    gamma: f64,
    lambda: f64,
    t: usize,
) -> f64 {
    let len = rewards.len();
    let horizon = len - t;
    let n_step = |n: usize| -> f64 {
        let mut g = 0.0;
        for k in 0..n {
            g += gamma.powi(k as i32) * rewards[t + k];
        }
        let end = t + n;
        if end < len || !terminal {
            g += gamma.powi(n as i32) * next_values[end - 1];
        }
        g
    };
    let mut total = 0.0;
    for n in 1..horizon {
        total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
    }
    total + lambda.powi(horizon as i32 - 1) * n_step(horizon)
}

fn td_lambda_correctness() -> Outcome {
    let (gamma, lambda) = (0.99, 0.8);
    let rewards = [0.5, -1.25, 2.0];
    let next_values = [0.7, -0.3, 1.9];
    let mut worst = 0.0f64;
    for terminal in [true, false] {
        let flags = [false, false, terminal];
        let y = td_lambda_targets(&rewards, &next_values, &flags, gamma, lambda).map_err(|e| e.to_string())?;
        for t in 0..3 {
            let expected = lambda_return_by_enumeration(&rewards, &next_values, terminal, gamma, lambda, t);
            worst = worst.max((y[t] - expected).abs());
        }
    }

    let flags = [false, false, true];
    let one_step = td_lambda_targets(&rewards, &next_values, &flags, gamma, 0.0).map_err(|e| e.to_string())?;
    let td0 = [
        rewards[0] + gamma * next_values[0],
        rewards[1] + gamma * next_values[1],
        rewards[2],
    ];
    let monte_carlo = td_lambda_targets(&rewards, &next_values, &flags, gamma, 1.0).map_err(|e| e.to_string())?;
    let g2 = rewards[2];
    let g1 = rewards[1] + gamma * g2;
    let g0 = rewards[0] + gamma * g1;
    let limits_exact = one_step == td0 && monte_carlo == [g0, g1, g2];
    ensure(
        worst < 1e-12 && limits_exact,
        format!("max |y - enumeration| = {worst:.1e}; lambda 0/1 limits exact: {limits_exact}"),
    )
}

fn advantage_oracle_equivalence() -> Outcome {
    let game = matrix_game();
    let model = game.to_model();
    let (n, k) = (model.num_agents(), model.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let policy = TabularPolicy::random(&model, 1.0, &mut rng);
    let values = evaluate_policy(&model, &policy, 0.99).map_err(|e| e.to_string())?;
    let report = compare_advantages(&model, &policy, 0.99, &DefaultAction::PolicyExpectation)
        .map_err(|e| e.to_string())?;

    let mut env = game.clone();
    env.reset_episode(0).map_err(|e| e.to_string())?;
    let state = env.state_features();
    let spec = CriticInputSpec {
        state_size: env.state_size(),
        obs_size: env.obs_size(),
        num_agents: n,
        num_actions: k,
        include_last_action: false,
    };
    let mut critic = ComaCritic::new(spec, &[32, 32], &mut rng);
    let alive = vec![true; n];
    let mut entries = Vec::new();
    for ja in 0..model.num_joint_actions() {
        let actions = model.joint_actions(ja);
        for a in 0..n {
            if actions[a] != 0 {
                continue;
            }
            let x = spec
                .build(&state, &env.observation_features(a), &actions, &alive, a, None)
                .map_err(|e| e.to_string())?;
            let targets: Vec<f64> = (0..k).map(|u| values.q(0, model.substitute(ja, a, u))).collect();
            entries.push((actions.clone(), a, x, targets));
        }
    }

    let count = (entries.len() * k) as f64;
    let mse_of = |critic: &ComaCritic| -> f64 {
        entries
            .iter()
            .map(|(_, _, x, y)| {
                let q = critic.q_values(x).unwrap();
                q.iter().zip(y).map(|(q, y)| (q - y).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / count
    };
    for lr in [3e-3, 1e-3, 3e-4, 1e-4] {
        let mut opt = RmsProp::for_params(lr, 0.99, 1e-8, critic.net().params());
        for _ in 0..5_000 {
            for (_, _, x, y) in &entries {
                let (q, cache) = critic.net().forward(x).map_err(|e| e.to_string())?;
                let upstream: Vec<f64> = q.iter().zip(y).map(|(q, y)| 2.0 * (q - y) / count).collect();
                critic.net_mut().backward(&cache, &upstream).map_err(|e| e.to_string())?;
            }
            opt.apply(critic.net_mut().params_mut()).map_err(|e| e.to_string())?;
        }
    }
    let mse = mse_of(&critic);

    let mut fit_error = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut agree = 0;
    for (actions, a, x, targets) in &entries {
        let q = critic.q_values(x).map_err(|e| e.to_string())?;
        fit_error = q.iter().zip(targets).fold(fit_error, |m, (q, y)| m.max((q - y).abs()));
        let dist = PolicyDistribution::from_probs(policy.probs(0, *a), vec![true; k]).map_err(|e| e.to_string())?;
        let mut learned = Vec::with_capacity(k);
        let mut exact = Vec::with_capacity(k);
        for u in 0..k {
            let ja = model.substitute(model.joint_index(actions), *a, u);
            learned.push(counterfactual_advantage(&q, &dist, u).map_err(|e| e.to_string())?);
            exact.push(report.rows[ja * n + *a].coma_advantage);
        }
        for (l, e) in learned.iter().zip(&exact) {
            worst_gap = worst_gap.max((l - e).abs());
        }
        let argmax = |v: &[f64]| (0..k).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        agree += (argmax(&learned) == argmax(&exact)) as usize;
    }
    let groups = entries.len();
    ensure(
        mse < 1e-3 && worst_gap <= 3.0 * fit_error && agree == groups && report.argmax_agreement == 1.0,
        format!(
            "fit MSE {mse:.1e}, max |Q err| {fit_error:.1e}, max advantage gap {worst_gap:.1e}, \
             argmax agreement {agree}/{groups}, vs difference rewards {:.2}",
            report.argmax_agreement
        ),
    )
}

fn mc_gradient(
    model: &TabularModel,
    policy: &TabularPolicy,
    q: &[f64],
    weight: SampleWeight,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> SampleMoments {
    let draws: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let u = sample_joint(policy, model, 0, rng);
            sample_gradient(model, policy, q, 0, &u, weight)
        })
        .collect();
    SampleMoments::from_samples(&draws)
}

fn estimator_consistency() -> Outcome {
    let model = matrix_game().to_model();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let policy = TabularPolicy::random(&model, 1.0, &mut rng);
    let values = evaluate_policy(&model, &policy, 0.99).map_err(|e| e.to_string())?;
    let exact = exact_policy_gradient(&model, &policy, 0.99).map_err(|e| e.to_string())?;

    let mc = mc_gradient(&model, &policy, &values.q, SampleWeight::Counterfactual, 100_000, &mut rng);
    let worst_z = mc
        .mean
        .iter()
        .zip(&exact)
        .zip(mc.standard_error())
        .map(|((m, e), se)| (m - e).abs() / se)
        .fold(0.0, f64::max);

    let reps = 20;
    let sizes = [1_000usize, 10_000, 100_000];
    let mut rms = Vec::new();
    for &size in &sizes {
        let mut sq = 0.0;
        for _ in 0..reps {
            let g = mc_gradient(&model, &policy, &values.q, SampleWeight::BaselineOnly, size, &mut rng);
            sq += g.mean.iter().map(|v| v * v).sum::<f64>();
        }
        rms.push((sq / reps as f64).sqrt());
    }
    let slope = (rms[2].ln() - rms[0].ln()) / ((sizes[2] as f64).ln() - (sizes[0] as f64).ln());
    ensure(
        worst_z < 3.0 && (slope + 0.5).abs() < 0.15,
        format!(
            "max |mc - exact| / se = {worst_z:.2}; rms |g_b| {:.2e}, {:.2e}, {:.2e} (log-log slope {slope:.3})",
            rms[0], rms[1], rms[2]
        ),
    )
}

fn variance_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let draws = 100;
    let mut wins = 0;
    let mut ratios = Vec::new();
    for _ in 0..draws {
        let payoffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let model = TeamMatrixGame::new(2, 3, payoffs).map_err(|e| e.to_string())?.to_model();
        let policy = TabularPolicy::random(&model, 1.0, &mut rng);
        let values = evaluate_policy(&model, &policy, 0.99).map_err(|e| e.to_string())?;
        let joints: Vec<Vec<usize>> = (0..10_000).map(|_| sample_joint(&policy, &model, 0, &mut rng)).collect();
        let moments = |w| {
            let g: Vec<Vec<f64>> = joints
                .iter()
                .map(|u| sample_gradient(&model, &policy, &values.q, 0, u, w))
                .collect();
            SampleMoments::from_samples(&g).total_variance()
        };
        let coma = moments(SampleWeight::Counterfactual);
        let raw = moments(SampleWeight::RawQ);
        wins += (coma <= raw) as usize;
        ratios.push(coma / raw);
    }
    ratios.sort_by(f64::total_cmp);
    ensure(
        wins * 100 >= 95 * draws,
        format!(
            "COMA variance <= raw-Q variance in {wins}/{draws} draws (median ratio {:.3}, worst {:.3})",
            ratios[draws / 2],
            ratios[draws - 1]
        ),
    )
}

fn method_ranking() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::load(&repo().join("configs/ranking_3v3.cfg")).map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().to_path_buf();
    let outcome = run_ablation_suite(&cfg).map_err(|e| e.to_string())?;
    let rate = |name: &str| {
        outcome
            .table
            .iter()
            .find(|r| r.method == name)
            .map(|r| r.mean_win_rate)
            .ok_or_else(|| format!("no {name} row"))
    };
    let (coma, qv, iac_v, heuristic) = (rate("coma")?, rate("central-qv")?, rate("iac-v")?, rate("heuristic")?);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        coma >= qv && coma >= iac_v && coma - iac_v >= 0.10 && secs < 7200.0,
        format!(
            "{} trials x {} iterations: coma {:.1}%, central-qv {:.1}%, iac-v {:.1}%, heuristic {:.1}%; {:.0} s",
            cfg.trials,
            cfg.schedule.iterations,
            100.0 * coma,
            100.0 * qv,
            100.0 * iac_v,
            100.0 * heuristic,
            secs
        ),
    )
}

fn exploration_bound() -> Outcome {
    let schedule = EpsilonSchedule::default();
    let endpoints = schedule.at(0) == 0.5 && schedule.at(750) == 0.02 && schedule.at(20_000) == 0.02;

    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut check = |d: &PolicyDistribution| {
        let floor = d.epsilon() / d.num_available() as f64;
        for (p, m) in d.probs().iter().zip(d.mask()) {
            if *m && *p < floor {
                violations += 1;
            }
        }
        checked += 1;
    };

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for _ in 0..10_000 {
        let k = rng.gen_range(1..12);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-60.0..60.0)).collect();
        let mut mask: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..k)] = true;
        let eps = schedule.at(rng.gen_range(0..1000));
        check(&PolicyDistribution::bounded_softmax(&logits, eps, &mask).map_err(|e| e.to_string())?);
    }

    let env = SkirmishEnv::new(SkirmishConfig {
        mask_unavailable: true,
        ..SkirmishConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = LearnerConfig {
        actor_hidden: 16,
        critic_hidden: vec![16],
        ..LearnerConfig::default()
    };
    let mut learner = Learner::new(&env, AlgorithmVariant::Coma, cfg, 3).map_err(|e| e.to_string())?;
    for iteration in 0..5 {
        let batch = collect_batch(&env, learner.actor(), learner.epsilon(), 30, 1000 + iteration)
            .map_err(|e| e.to_string())?;
        let replay = learner.replay(&batch).map_err(|e| e.to_string())?;
        for e in 0..batch.episodes.len() {
            for a in 0..env.num_agents() {
                replay.get(e, a).iter().for_each(|s| check(&s.dist));
            }
        }
        learner.update(&batch).map_err(|e| e.to_string())?;
    }
    ensure(
        endpoints && violations == 0,
        format!("eps(0) = 0.5, eps(750) = 0.02: {endpoints}; {violations} floor violations in {checked} distributions"),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let mut cfg = ExperimentConfig::load(&repo().join("configs/skirmish_3m.cfg")).map_err(|e| e.to_string())?;
        cfg.apply_overrides(&["trials=2", "iterations=20", "eval_interval=10", "eval_episodes=5"])
            .map_err(|e| e.to_string())?;
        cfg.output_dir = dir.path().join(name);
        let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
        std::fs::read(outcome.metrics_path).map_err(|e| e.to_string())
    };
    let (a, b) = (run("a")?, run("b")?);
    ensure(a == b && !a.is_empty(), format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "baseline neutrality", baseline_neutrality),
        (2, "gradient correctness", gradient_correctness),
        (3, "TD(lambda) correctness", td_lambda_correctness),
        (4, "advantage-oracle equivalence", advantage_oracle_equivalence),
        (5, "estimator consistency", estimator_consistency),
        (6, "variance reduction", variance_reduction),
        (7, "method ranking", method_ranking),
        (8, "exploration bound", exploration_bound),
        (9, "reproducibility", reproducibility),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {id}. {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {id}. {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
