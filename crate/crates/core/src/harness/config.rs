use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::{parse_bool, KvFile};
use crate::learner::{AlgorithmVariant, LearnerConfig, TrainSchedule};

/// Everything a run depends on. Relative scenario paths are resolved
/// against the directory of the config file they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: PathBuf,
    pub variant: AlgorithmVariant,
    /// Variants compared by the ablation suite.
    pub variants: Vec<AlgorithmVariant>,
    pub trials: usize,
    pub seed: u64,
    pub schedule: TrainSchedule,
    pub learner: LearnerConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: PathBuf::new(),
            variant: AlgorithmVariant::Coma,
            variants: vec![
                AlgorithmVariant::Coma,
                AlgorithmVariant::CentralQv,
                AlgorithmVariant::CentralV,
                AlgorithmVariant::IacQ,
                AlgorithmVariant::IacV,
            ],
            trials: 35,
            seed: 0,
            schedule: TrainSchedule::default(),
            learner: LearnerConfig::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn list<T, F>(value: &str, f: F) -> std::result::Result<Vec<T>, String>
where
    F: Fn(&str) -> std::result::Result<T, String>,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

impl ExperimentConfig {
    /// Applies one setting. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> std::result::Result<(), String> {
        let l = &mut self.learner;
        let s = &mut self.schedule;
        match key {
            "scenario" => {
                let p = PathBuf::from(value);
                self.scenario = match base {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p,
                };
            }
            "variant" => self.variant = value.parse().map_err(|e: Error| e.to_string())?,
            "variants" => {
                self.variants = list(value, |v| v.parse().map_err(|e: Error| e.to_string()))?;
                if self.variants.is_empty() {
                    return Err("variant list is empty".into());
                }
            }
            "trials" => self.trials = number(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "iterations" => s.iterations = number(key, value)?,
            "eval_interval" => s.eval_interval = number(key, value)?,
            "eval_episodes" => s.eval_episodes = number(key, value)?,
            "record_wall_clock" => {
                s.record_wall_clock = parse_bool(value).ok_or(format!("invalid boolean `{value}`"))?
            }
            "gamma" => l.td.gamma = number(key, value)?,
            "lambda" => l.td.lambda = number(key, value)?,
            "sync_central" => l.td.sync_central = number(key, value)?,
            "sync_iac" => l.td.sync_iac = number(key, value)?,
            "lr" => l.lr = number(key, value)?,
            "rms_alpha" => l.rms_alpha = number(key, value)?,
            "rms_eps" => l.rms_eps = number(key, value)?,
            "batch_size" => l.batch_size = number(key, value)?,
            "epsilon_start" => l.epsilon.start = number(key, value)?,
            "epsilon_end" => l.epsilon.end = number(key, value)?,
            "epsilon_horizon" => l.epsilon.horizon = number(key, value)?,
            "actor_hidden" => l.actor_hidden = number(key, value)?,
            "critic_hidden" => l.critic_hidden = list(value, |v| number(key, v))?,
            "critic_last_action" => {
                l.critic_last_action = parse_bool(value).ok_or(format!("invalid boolean `{value}`"))?
            }
            "reward_scale" => l.reward_scale = number(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn from_kv(file: &KvFile) -> Result<Self> {
        let base = file.path.parent().map(Path::to_path_buf);
        let mut cfg = Self::default();
        for e in &file.entries {
            cfg.set(&e.key, &e.value, base.as_deref())
                .map_err(|m| file.error(e, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    /// Applies `key=value` overrides. Relative paths are taken as given.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            self.set(key.trim(), value.trim(), None)
                .map_err(|m| Error::config(format!("override `{o}`: {m}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.as_os_str().is_empty() {
            return Err(Error::config("no scenario given"));
        }
        if self.trials == 0 {
            return Err(Error::config("at least one trial is required"));
        }
        if self.schedule.eval_interval == 0 || self.schedule.eval_episodes == 0 {
            return Err(Error::config("evaluation interval and episode count must be positive"));
        }
        self.learner.validate()
    }

    /// The config as key-value text that [`ExperimentConfig::from_kv`] reads back.
    pub fn to_kv(&self) -> String {
        let l = &self.learner;
        let s = &self.schedule;
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("scenario", self.scenario.display().to_string());
        put("variant", self.variant.to_string());
        put("variants", join(self.variants.iter().map(|v| v.to_string()).collect()));
        put("trials", self.trials.to_string());
        put("seed", self.seed.to_string());
        put("iterations", s.iterations.to_string());
        put("eval_interval", s.eval_interval.to_string());
        put("eval_episodes", s.eval_episodes.to_string());
        put("record_wall_clock", s.record_wall_clock.to_string());
        put("gamma", l.td.gamma.to_string());
        put("lambda", l.td.lambda.to_string());
        put("sync_central", l.td.sync_central.to_string());
        put("sync_iac", l.td.sync_iac.to_string());
        put("lr", l.lr.to_string());
        put("rms_alpha", l.rms_alpha.to_string());
        put("rms_eps", l.rms_eps.to_string());
        put("batch_size", l.batch_size.to_string());
        put("epsilon_start", l.epsilon.start.to_string());
        put("epsilon_end", l.epsilon.end.to_string());
        put("epsilon_horizon", l.epsilon.horizon.to_string());
        put("actor_hidden", l.actor_hidden.to_string());
        put("critic_hidden", join(l.critic_hidden.iter().map(|w| w.to_string()).collect()));
        put("critic_last_action", l.critic_last_action.to_string());
        put("reward_scale", l.reward_scale.to_string());
        put("output_dir", self.output_dir.display().to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.trials, 35);
        assert_eq!(c.schedule.eval_interval, 100);
        assert_eq!(c.schedule.eval_episodes, 200);
        assert_eq!(c.learner.batch_size, 30);
        assert_eq!(c.learner.lr, 0.0005);
        assert_eq!(c.learner.td.lambda, 0.8);
        assert_eq!(c.learner.td.gamma, 0.99);
    }

    #[test]
    fn relative_scenario_resolves_against_config_dir() {
        let file = KvFile::parse("/tmp/exp/run.cfg", "scenario = maps/a.scn\ntrials = 5\n").unwrap();
        let c = ExperimentConfig::from_kv(&file).unwrap();
        assert_eq!(c.scenario, PathBuf::from("/tmp/exp/maps/a.scn"));
        assert_eq!(c.trials, 5);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let file = KvFile::parse("x.cfg", "trials = 2\n\nbogus = 1\n").unwrap();
        match ExperimentConfig::from_kv(&file) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ExperimentConfig::default();
        c.scenario = PathBuf::from("/abs/s.scn");
        c.apply_overrides(&["critic_hidden=32,16", "variant=iac-v", "trials=3"]).unwrap();
        let back = ExperimentConfig::from_kv(&KvFile::parse("/x/c.cfg", &c.to_kv()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_override_is_config_error() {
        let mut c = ExperimentConfig::default();
        assert!(c.apply_overrides(&["trials"]).unwrap_err().is_config());
        assert!(c.apply_overrides(&["lr=fast"]).unwrap_err().is_config());
    }
}
