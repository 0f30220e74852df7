//! Experiment configuration: JSON ingestion, defaults and validation.
//!
//! Configs are strict JSON (unknown keys rejected) with documented defaults:
//! `steps = 2000`, `learning_rate = 0.1`, `log_every = 4`,
//! `mode = "ExactExpectation"`, `rng_seed = 0`. Validation errors name the
//! offending field path (e.g. `rule.alpha`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use endyn_core::task::TabularTask;
use endyn_core::update::{BetaSchedule, Mode, UpdateRule, UpdateVariant};
use endyn_core::{Error, Result, Rule, Task};

pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_LOG_EVERY: usize = 4;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ENDYN_OUTPUT_DIR";

/// Where the task comes from: a built-in name, a JSON file, or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum TaskSpec {
    Builtin(String),
    Path(PathBuf),
    Inline(Task),
}

/// Rule parameters as they appear in config files. Mirrors the core rule
/// variants, with optional Clip-Cov bounds: when omitted they default each
/// step to 1x and 5x the mean |C| of the current token covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    // struct-style so serde enforces unknown-key rejection under the
    // internal tag
    Vanilla {},
    EntropyReg {
        alpha: f64,
    },
    ClipCov {
        clip_ratio: f64,
        #[serde(default)]
        omega_low: Option<f64>,
        #[serde(default)]
        omega_high: Option<f64>,
    },
    #[serde(rename = "kl_cov")]
    KLCov {
        select_fraction: f64,
        beta: f64,
        #[serde(default = "default_schedule")]
        schedule: BetaSchedule<f64>,
    },
}

fn default_schedule() -> BetaSchedule<f64> {
    BetaSchedule::Constant
}

/// The on-disk config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub rule: RuleSpec,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Starting logits, row-major over (state, action); uniform when
    /// omitted.
    #[serde(default)]
    pub initial_logits: Option<Vec<f64>>,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_log_every() -> usize {
    DEFAULT_LOG_EVERY
}
fn default_mode() -> Mode {
    Mode::ExactExpectation
}

impl ExperimentConfig {
    /// Check every invariant; error messages carry the field path.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Validation("steps: must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Validation("log_every: must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Validation(format!(
                "learning_rate: must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.mode == Mode::Sampled && !matches!(self.batch_size, Some(b) if b >= 1) {
            return Err(Error::Validation(
                "batch_size: sampled mode requires batch_size >= 1".into(),
            ));
        }
        match &self.rule {
            RuleSpec::Vanilla {} => {}
            RuleSpec::EntropyReg { alpha } => {
                if *alpha < 0.0 || !alpha.is_finite() {
                    return Err(Error::Validation(format!(
                        "rule.alpha: must be >= 0, got {alpha}"
                    )));
                }
            }
            RuleSpec::ClipCov {
                clip_ratio,
                omega_low,
                omega_high,
            } => {
                if !(*clip_ratio > 0.0 && *clip_ratio < 1.0) {
                    return Err(Error::Validation(format!(
                        "rule.clip_ratio: must lie in (0, 1), got {clip_ratio}"
                    )));
                }
                if let (Some(lo), Some(hi)) = (omega_low, omega_high) {
                    if lo > hi {
                        return Err(Error::Validation(format!(
                            "rule.omega_low: {lo} exceeds rule.omega_high {hi}"
                        )));
                    }
                }
            }
            RuleSpec::KLCov {
                select_fraction,
                beta,
                schedule,
            } => {
                if !(*select_fraction > 0.0 && *select_fraction < 1.0) {
                    return Err(Error::Validation(format!(
                        "rule.select_fraction: must lie in (0, 1), got {select_fraction}"
                    )));
                }
                if *beta < 0.0 || !beta.is_finite() {
                    return Err(Error::Validation(format!(
                        "rule.beta: must be >= 0, got {beta}"
                    )));
                }
                if let BetaSchedule::InverseTime { t_half } = schedule {
                    if !(*t_half > 0.0) {
                        return Err(Error::Validation(format!(
                            "rule.schedule.t_half: must be positive, got {t_half}"
                        )));
                    }
                }
            }
        }
        if let Some(logits) = &self.initial_logits {
            if logits.iter().any(|z| !z.is_finite()) {
                return Err(Error::Validation(
                    "initial_logits: entries must be finite".into(),
                ));
            }
        }
        if let TaskSpec::Builtin(name) = &self.task {
            if TabularTask::<f64>::builtin(name).is_none() {
                return Err(Error::Validation(format!(
                    "task: unknown builtin {name:?} (expected one of two-action-bandit, \
                     ten-action-bandit, delayed-chain)"
                )));
            }
        }
        Ok(())
    }

    /// Materialize the task (loading and validating it if necessary).
    pub fn resolve_task(&self) -> Result<Task> {
        let task = match &self.task {
            TaskSpec::Builtin(name) => TabularTask::<f64>::builtin(name)
                .ok_or_else(|| Error::Validation(format!("task: unknown builtin {name:?}")))?,
            TaskSpec::Path(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Validation(format!("task: cannot read {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::Validation(format!("task: invalid JSON in {}: {e}", path.display()))
                })?
            }
            TaskSpec::Inline(task) => task.clone(),
        };
        task.validate()?;
        Ok(task)
    }

    /// Lower the config rule to the core representation. Unset Clip-Cov
    /// bounds become infinite placeholders; the runner substitutes the
    /// per-step relative defaults.
    pub fn core_rule(&self) -> Rule {
        let variant = match &self.rule {
            RuleSpec::Vanilla {} => UpdateVariant::Vanilla,
            RuleSpec::EntropyReg { alpha } => UpdateVariant::EntropyReg { alpha: *alpha },
            RuleSpec::ClipCov {
                clip_ratio,
                omega_low,
                omega_high,
            } => UpdateVariant::ClipCov {
                clip_ratio: *clip_ratio,
                omega_low: omega_low.unwrap_or(f64::NEG_INFINITY),
                omega_high: omega_high.unwrap_or(f64::INFINITY),
            },
            RuleSpec::KLCov {
                select_fraction,
                beta,
                schedule,
            } => UpdateVariant::KLCov {
                select_fraction: *select_fraction,
                beta: *beta,
                schedule: *schedule,
            },
        };
        UpdateRule {
            variant,
            learning_rate: self.learning_rate,
            mode: self.mode,
        }
    }

    /// Whether the Clip-Cov bounds should track the batch-mean |C|.
    pub fn relative_clip_bounds(&self) -> (bool, bool) {
        match &self.rule {
            RuleSpec::ClipCov {
                omega_low,
                omega_high,
                ..
            } => (omega_low.is_none(), omega_high.is_none()),
            _ => (false, false),
        }
    }

    /// Directory for emitted files: explicit config value, else the
    /// environment default, else the current directory.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(p) = &self.output_path {
            return p.clone();
        }
        if let Ok(p) = std::env::var(OUTPUT_DIR_ENV) {
            if !p.is_empty() {
                return PathBuf::from(p);
            }
        }
        PathBuf::from(".")
    }
}

/// Parse and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parse and validate a config document from memory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text)
        .map_err(|e| Error::Validation(format!("config parse error: {e}")))?;
    config.validate()?;
    Ok(config)
}
