//! Experiment orchestration: trials, evaluation freezes, CSV output and
//! summary tables.

mod config;
mod scenario;

pub use config::ExperimentConfig;
pub use scenario::Scenario;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Environment, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::learner::{evaluate_heuristic, train, AlgorithmVariant, MetricRow};
use crate::oracle::{
    counterfactual_baseline, evaluate_policy, exact_baseline_contribution, compare_advantages, AdvantageReport,
    DefaultAction, TabularPolicy,
};
use crate::seed::{derive, trial_seed};

/// z-value of a two-sided 95% normal interval.
const Z95: f64 = 1.959_963_984_540_054;

/// Mean, sample standard deviation and 95% half-width of `values`.
pub fn mean_std_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    (mean, std, Z95 * std / (n as f64).sqrt())
}

/// One line of a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub trials: usize,
    pub mean_win_rate: f64,
    pub ci95_win_rate: f64,
    pub best_win_rate: f64,
    pub mean_return: f64,
    pub ci95_return: f64,
}

impl SummaryRow {
    fn from_finals(method: &str, win_rates: &[f64], returns: &[f64]) -> Self {
        let (mean_win_rate, _, ci95_win_rate) = mean_std_ci(win_rates);
        let (mean_return, _, ci95_return) = mean_std_ci(returns);
        Self {
            method: method.to_string(),
            trials: win_rates.len(),
            mean_win_rate,
            ci95_win_rate,
            best_win_rate: win_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_return,
            ci95_return,
        }
    }
}

/// Across-trial statistics at one evaluation freeze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub trials: usize,
    pub mean_win_rate: f64,
    pub std_win_rate: f64,
    pub ci95_win_rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub ci95_return: f64,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricRow>,
    pub curve: Vec<CurveRow>,
    pub summary: SummaryRow,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a metrics CSV back into rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Final row of every trial.
pub fn final_rows(rows: &[MetricRow]) -> Vec<&MetricRow> {
    let mut last: BTreeMap<usize, &MetricRow> = BTreeMap::new();
    for r in rows {
        last.insert(r.trial, r);
    }
    last.into_values().collect()
}

fn curve(rows: &[MetricRow]) -> Vec<CurveRow> {
    let mut by_iteration: BTreeMap<usize, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        by_iteration.entry(r.iteration).or_default().push(r);
    }
    by_iteration
        .into_iter()
        .map(|(iteration, group)| {
            let wins: Vec<f64> = group.iter().map(|r| r.eval_win_rate).collect();
            let returns: Vec<f64> = group.iter().map(|r| r.eval_return).collect();
            let (mean_win_rate, std_win_rate, ci95_win_rate) = mean_std_ci(&wins);
            let (mean_return, std_return, ci95_return) = mean_std_ci(&returns);
            CurveRow {
                iteration,
                trials: group.len(),
                mean_win_rate,
                std_win_rate,
                ci95_win_rate,
                mean_return,
                std_return,
                ci95_return,
            }
        })
        .collect()
}

fn summarise(method: &str, rows: &[MetricRow]) -> SummaryRow {
    let finals = final_rows(rows);
    let wins: Vec<f64> = finals.iter().map(|r| r.eval_win_rate).collect();
    let returns: Vec<f64> = finals.iter().map(|r| r.eval_return).collect();
    SummaryRow::from_finals(method, &wins, &returns)
}

/// Trains `variant` for every trial. Each trial streams its rows to
/// `trial_NNN.csv` as they are produced, so a failure leaves the finished
/// part on disk. The per-trial files are then merged into `metrics.csv`,
/// with `curve.csv` and `summary.csv` alongside.
pub fn run_variant<E: Environment>(
    env: &E,
    cfg: &ExperimentConfig,
    variant: AlgorithmVariant,
    dir: &Path,
) -> Result<ExperimentOutcome> {
    create_dir(dir)?;
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let path = dir.join(format!("trial_{trial:03}.csv"));
        let mut writer = csv_writer(&path)?;
        let seed = trial_seed(cfg.seed, trial);
        train(env, variant, &cfg.learner, &cfg.schedule, trial, seed, |row| {
            writer.serialize(row)?;
            writer.flush().map_err(|e| Error::io(&path, e))?;
            Ok(())
        })?;
        drop(writer);
        rows.extend(read_metrics(&path)?);
    }
    let metrics_path = dir.join("metrics.csv");
    write_rows(&metrics_path, &rows)?;
    let curve = curve(&rows);
    write_rows(&dir.join("curve.csv"), &curve)?;
    let summary = summarise(variant.name(), &rows);
    let summary_path = dir.join("summary.csv");
    write_rows(&summary_path, std::slice::from_ref(&summary))?;
    Ok(ExperimentOutcome {
        rows,
        curve,
        summary,
        metrics_path,
        summary_path,
    })
}

/// Runs the configured variant into `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let env = Scenario::load(&cfg.scenario)?;
    create_dir(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.kv"), cfg.to_kv()).map_err(|e| Error::io(&cfg.output_dir, e))?;
    run_variant(&env, cfg, cfg.variant, &cfg.output_dir)
}

/// Heuristic reference: pure evaluation, one evaluation per trial seed.
pub fn heuristic_summary<E: Environment>(env: &E, cfg: &ExperimentConfig) -> Result<SummaryRow> {
    let mut wins = Vec::with_capacity(cfg.trials);
    let mut returns = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let stats = evaluate_heuristic(env, cfg.schedule.eval_episodes, trial_seed(cfg.seed, trial))?;
        wins.push(stats.win_rate);
        returns.push(stats.mean_return);
    }
    Ok(SummaryRow::from_finals("heuristic", &wins, &returns))
}

/// Result of [`run_ablation_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    /// One row per variant, then the heuristic row.
    pub table: Vec<SummaryRow>,
    pub variants: Vec<(AlgorithmVariant, ExperimentOutcome)>,
    pub table_path: PathBuf,
}

/// Runs every variant in `cfg.variants` under `output_dir/<variant>/` and
/// writes the comparison table to `output_dir/ablation.csv`.
pub fn run_ablation_suite(cfg: &ExperimentConfig) -> Result<AblationOutcome> {
    cfg.validate()?;
    let env = Scenario::load(&cfg.scenario)?;
    create_dir(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.kv"), cfg.to_kv()).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut table = Vec::new();
    let mut variants = Vec::new();
    for &variant in &cfg.variants {
        let outcome = run_variant(&env, cfg, variant, &cfg.output_dir.join(variant.name()))?;
        table.push(outcome.summary.clone());
        variants.push((variant, outcome));
    }
    table.push(heuristic_summary(&env, cfg)?);
    let table_path = cfg.output_dir.join("ablation.csv");
    write_rows(&table_path, &table)?;
    Ok(AblationOutcome {
        table,
        variants,
        table_path,
    })
}

/// Plain-text rendering of a summary table: mean (95% CI) and best.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>20}  {:>6}\n", "method", "mean win % (ci95)", "best");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>12.1} ({:>5.1})  {:>6.1}\n",
            r.method,
            100.0 * r.mean_win_rate,
            100.0 * r.ci95_win_rate,
            100.0 * r.best_win_rate
        ));
    }
    out
}

pub fn describe_scenario(path: &Path) -> Result<String> {
    Ok(Scenario::load(path)?.describe())
}

/// Result of [`oracle_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub report: AdvantageReport,
    /// Largest component of the exact counterfactual-baseline contribution.
    pub max_baseline_contribution: f64,
}

/// Enumerates the scenario, draws a random policy (logit scale 1) from
/// `seed`, and tabulates exact advantages against difference rewards with
/// policy-expectation defaults.
pub fn oracle_check(path: &Path, gamma: f64, seed: u64) -> Result<OracleCheck> {
    let env = Scenario::load(path)?;
    let model = env.enumerate(DEFAULT_ENUMERATION_CAP)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[0x6f72_6163_6c65]));
    let policy = TabularPolicy::random(&model, 1.0, &mut rng);
    let values = evaluate_policy(&model, &policy, gamma)?;
    let g_b = exact_baseline_contribution(&model, &policy, gamma, |s, a, u| {
        counterfactual_baseline(&model, &policy, &values.q, s, a, u)
    })?;
    let report = compare_advantages(&model, &policy, gamma, &DefaultAction::PolicyExpectation)?;
    Ok(OracleCheck {
        report,
        max_baseline_contribution: g_b.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}

/// Writes the oracle report CSV to `path`.
pub fn write_oracle_report(check: &OracleCheck, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    check.report.write_csv(&mut file)?;
    file.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_uses_normal_approximation() {
        let (m, s, ci) = mean_std_ci(&[0.2, 0.4, 0.6, 0.8]);
        assert!((m - 0.5).abs() < 1e-15);
        assert!((s - (0.2f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((ci - Z95 * s / 2.0).abs() < 1e-15);
        assert_eq!(mean_std_ci(&[0.3]), (0.3, 0.0, 0.0));
    }

    #[test]
    fn final_rows_pick_last_per_trial() {
        let row = |trial, iteration, w| MetricRow {
            trial,
            iteration,
            epsilon: 0.0,
            eval_return: 0.0,
            eval_win_rate: w,
            critic_loss: None,
            wall_clock: None,
        };
        let rows = vec![row(0, 0, 0.1), row(0, 100, 0.5), row(1, 0, 0.0), row(1, 100, 0.7)];
        let finals: Vec<f64> = final_rows(&rows).iter().map(|r| r.eval_win_rate).collect();
        assert_eq!(finals, vec![0.5, 0.7]);
        let s = summarise("x", &rows);
        assert!((s.mean_win_rate - 0.6).abs() < 1e-15);
        assert_eq!(s.best_win_rate, 0.7);
    }
}
