//! Run configuration files.
//!
//! A config is a TOML document. Relative paths are resolved against the
//! directory holding the file. Keys:
//!
//! ```toml
//! layout = "A"                  # A, B or C
//! recipe = "lettuce_tomato"     # or "lettuce_onion_tomato"
//! generations = 5               # K
//! seeds = [1, 2, 3]
//! output_dir = "runs/baseline"
//! alpha = 0.9                   # pool decay
//! beta = 0.1                    # performance step
//! gamma = 0.99                  # training and estimator discount
//! rollouts = 4                  # X
//! horizon = 200                 # H
//! max_feedback_phases = 5
//! wrong_delivery_penalty = 5.0
//! r_max = 200.0
//! # eval_epsilon = 0.05         # omit for greedy rollouts
//!
//! [training]
//! iterations = 200
//! episodes = 25
//! max_steps = 200
//! epsilon_start = 0.3
//! epsilon_end = 0.05
//! # epsilon_decay_iterations defaults to generations * iterations
//!
//! [learner]                     # see LinearActorCritic
//! actor_lr = 1.0
//!
//! [feedback]
//! mode = "scripted"             # none | scripted | session | external
//! script_file = "feedback.toml" # or an inline [feedback.script] table
//! fallback = true               # external mode: fall back to the DSL
//! timeout_secs = 60             # external request timeout
//! phase_timeout_secs = 900      # session mode: auto-skip after this long
//! ```
//!
//! Scripts map a generation to the utterance given after it:
//! `1 = "agent 1: get closer to tomato"`.
//!
//! `--desk` divides `training.iterations` by [`DESK_ITERATION_DIVISOR`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{LayoutId, Recipe, RewardSpec, DEFAULT_MAX_STEPS};
use crate::learner::LinearActorCritic;
use crate::rollout::{EnvSpec, DEFAULT_ROLLOUTS};
use crate::run::{RunSettings, MAX_FEEDBACK_PHASES};
use crate::templates::DEFAULT_R_MAX;
use crate::train::GenerationConfig;

pub const DESK_ITERATION_DIVISOR: u32 = 5;
pub const ENV_ENDPOINT: &str = "FBMARL_ENDPOINT";
pub const ENV_MODEL: &str = "FBMARL_MODEL";
pub const ENV_TOKEN: &str = "FBMARL_TOKEN";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    #[default]
    None,
    Scripted,
    Session,
    External,
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("referenced file {0} does not exist")]
    MissingFile(PathBuf),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    iterations: Option<u32>,
    episodes: Option<u32>,
    max_steps: Option<u32>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    epsilon_decay_iterations: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeedback {
    #[serde(default)]
    mode: FeedbackMode,
    script_file: Option<PathBuf>,
    #[serde(default)]
    script: BTreeMap<String, String>,
    fallback: Option<bool>,
    timeout_secs: Option<u64>,
    phase_timeout_secs: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    layout: Option<String>,
    recipe: Option<String>,
    generations: Option<u32>,
    seeds: Vec<u64>,
    output_dir: Option<PathBuf>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    rollouts: Option<usize>,
    horizon: Option<u32>,
    max_feedback_phases: Option<u32>,
    wrong_delivery_penalty: Option<f64>,
    r_max: Option<f64>,
    eval_epsilon: Option<f64>,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    learner: Option<LinearActorCritic>,
    #[serde(default)]
    feedback: RawFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub mode: FeedbackMode,
    /// Generation → utterance.
    pub script: BTreeMap<u32, String>,
    pub fallback: bool,
    pub timeout_secs: u64,
    pub phase_timeout_secs: u64,
}

impl Default for FeedbackConfig {
    fn default() -> FeedbackConfig {
        FeedbackConfig {
            mode: FeedbackMode::None,
            script: BTreeMap::new(),
            fallback: true,
            timeout_secs: 60,
            phase_timeout_secs: 900,
        }
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub layout: LayoutId,
    pub recipe: Recipe,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub wrong_delivery_penalty: f64,
    pub r_max: f64,
    pub desk: bool,
    pub settings: RunSettings,
    pub learner: LinearActorCritic,
    pub feedback: FeedbackConfig,
}

impl RunConfig {
    pub fn load(path: &Path, desk: bool) -> Result<RunConfig, ConfigFileError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base, desk).map_err(|e| match e {
            ConfigFileError::Syntax { message, .. } => ConfigFileError::Syntax { path: path.to_owned(), message },
            other => other,
        })
    }

    /// Parse a document whose relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, desk: bool) -> Result<RunConfig, ConfigFileError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigFileError::Syntax { path: PathBuf::new(), message: e.to_string() })?;
        let invalid = |m: String| ConfigFileError::Invalid(m);

        let layout: LayoutId = match &raw.layout {
            Some(s) => s.parse().map_err(|e| invalid(format!("layout: {e}")))?,
            None => LayoutId::A,
        };
        let recipe: Recipe = match &raw.recipe {
            Some(s) => s.parse().map_err(|e| invalid(format!("recipe: {e}")))?,
            None => Recipe::LettuceTomato,
        };
        if raw.seeds.is_empty() {
            return Err(invalid("seeds must not be empty".into()));
        }
        let generations = raw.generations.unwrap_or(5);
        let gamma = raw.gamma.unwrap_or(0.99);

        let d = GenerationConfig::default();
        let mut iterations = raw.training.iterations.unwrap_or(d.iterations);
        if desk {
            iterations = (iterations / DESK_ITERATION_DIVISOR).max(1);
        }
        let training = GenerationConfig {
            iterations,
            episodes: raw.training.episodes.unwrap_or(d.episodes),
            max_steps: raw.training.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
            gamma,
            epsilon_start: raw.training.epsilon_start.unwrap_or(d.epsilon_start),
            epsilon_end: raw.training.epsilon_end.unwrap_or(d.epsilon_end),
            epsilon_decay_iterations: raw
                .training
                .epsilon_decay_iterations
                .unwrap_or(u64::from(generations) * u64::from(iterations)),
        };
        training.validate().map_err(|e| invalid(format!("training: {e}")))?;

        let settings = RunSettings {
            generations,
            max_feedback_phases: raw.max_feedback_phases.unwrap_or(MAX_FEEDBACK_PHASES),
            alpha: raw.alpha.unwrap_or(crate::pool::DEFAULT_ALPHA),
            beta: raw.beta.unwrap_or(crate::pool::DEFAULT_BETA),
            rollouts: raw.rollouts.unwrap_or(DEFAULT_ROLLOUTS),
            horizon: raw.horizon.unwrap_or(DEFAULT_MAX_STEPS),
            eval_gamma: gamma,
            eval_epsilon: raw.eval_epsilon,
            training,
        };
        settings.validate().map_err(invalid)?;

        let r_max = raw.r_max.unwrap_or(DEFAULT_R_MAX);
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(invalid(format!("r_max {r_max} must be positive")));
        }
        let wrong_delivery_penalty = raw.wrong_delivery_penalty.unwrap_or(5.0);
        if !(wrong_delivery_penalty.is_finite() && wrong_delivery_penalty >= 0.0) {
            return Err(invalid("wrong_delivery_penalty must be non-negative".into()));
        }

        let fb = raw.feedback;
        let mut script = BTreeMap::new();
        if let Some(f) = &fb.script_file {
            let p = base.join(f);
            if !p.is_file() {
                return Err(ConfigFileError::MissingFile(p));
            }
            let t = std::fs::read_to_string(&p).map_err(|source| ConfigFileError::Io { path: p.clone(), source })?;
            let table: BTreeMap<String, String> =
                toml::from_str(&t).map_err(|e| ConfigFileError::Syntax { path: p.clone(), message: e.to_string() })?;
            script.extend(parse_script_keys(table)?);
        }
        script.extend(parse_script_keys(fb.script)?);
        if let Some(&k) = script.keys().find(|&&k| k >= generations) {
            return Err(invalid(format!("script entry for generation {k} but only {generations} generations")));
        }
        if matches!(fb.mode, FeedbackMode::Scripted | FeedbackMode::External) && script.is_empty() {
            log::warn!("feedback mode {:?} with an empty script", fb.mode);
        }
        let d = FeedbackConfig::default();
        let feedback = FeedbackConfig {
            mode: fb.mode,
            script,
            fallback: fb.fallback.unwrap_or(d.fallback),
            timeout_secs: fb.timeout_secs.unwrap_or(d.timeout_secs),
            phase_timeout_secs: fb.phase_timeout_secs.unwrap_or(d.phase_timeout_secs),
        };

        Ok(RunConfig {
            layout,
            recipe,
            seeds: raw.seeds,
            output_dir: base.join(raw.output_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            wrong_delivery_penalty,
            r_max,
            desk,
            settings,
            learner: raw.learner.unwrap_or_default(),
            feedback,
        })
    }

    pub fn env_spec(&self) -> EnvSpec {
        let mut env = EnvSpec::builtin(self.layout, self.recipe);
        env.rewards = RewardSpec::default().with_wrong_delivery_penalty(self.wrong_delivery_penalty);
        env.max_steps = self.settings.training.max_steps;
        env
    }

    /// The script used by the provider; empty when feedback is off.
    pub fn schedule(&self) -> BTreeMap<u32, String> {
        match self.feedback.mode {
            FeedbackMode::None | FeedbackMode::Session => BTreeMap::new(),
            FeedbackMode::Scripted | FeedbackMode::External => self.feedback.script.clone(),
        }
    }

    pub fn external_timeout(&self) -> Duration {
        Duration::from_secs(self.feedback.timeout_secs)
    }
}

fn parse_script_keys(table: BTreeMap<String, String>) -> Result<BTreeMap<u32, String>, ConfigFileError> {
    table
        .into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<u32>()
                .map(|k| (k, v))
                .map_err(|_| ConfigFileError::Invalid(format!("script key {k:?} is not a generation index")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_desk_scaling() {
        let c = RunConfig::from_toml("seeds = [7]", Path::new("/x"), false).unwrap();
        assert_eq!(c.settings.training.iterations, 200);
        assert_eq!(c.settings.training.episodes, 25);
        assert_eq!(c.settings.training.epsilon_decay_iterations, 1000);
        assert_eq!(c.output_dir, PathBuf::from("/x/runs"));
        let d = RunConfig::from_toml("seeds = [7]", Path::new("/x"), true).unwrap();
        assert_eq!(d.settings.training.iterations, 40);
        assert_eq!(d.settings.training.epsilon_decay_iterations, 200);
    }

    #[test]
    fn inline_script() {
        let c = RunConfig::from_toml(
            "seeds = [1]\n[feedback]\nmode = \"scripted\"\n[feedback.script]\n1 = \"all: save energy\"\n",
            Path::new("."),
            false,
        )
        .unwrap();
        assert_eq!(c.schedule().get(&1).map(String::as_str), Some("all: save energy"));
    }

    #[test]
    fn rejects_bad_documents() {
        let base = Path::new(".");
        assert!(matches!(RunConfig::from_toml("seeds = []", base, false), Err(ConfigFileError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml("seeds = [1]\nbogus = 1", base, false), Err(ConfigFileError::Syntax { .. })));
        assert!(matches!(RunConfig::from_toml("seeds = [1]\nlayout = \"Z\"", base, false), Err(ConfigFileError::Invalid(_))));
        assert!(matches!(
            RunConfig::from_toml("seeds = [1]\n[feedback]\nscript_file = \"/nonexistent/f.toml\"", base, false),
            Err(ConfigFileError::MissingFile(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("seeds = [1]\ngenerations = 2\n[feedback.script]\n3 = \"x\"", base, false),
            Err(ConfigFileError::Invalid(_))
        ));
    }
}
