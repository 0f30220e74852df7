//! Seeded training loops and parameter sweeps.
//!
//! Per-step order: snapshot the old policy, evaluate exact advantages,
//! compute the rule update (with covariance-based selection where the rule
//! calls for it), record diagnostics with the predicted entropy change, then
//! apply the update and record the measured change. Everything is a pure
//! function of (config, seed); reruns produce byte-identical traces.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use endyn_core::diag::{
    delta_s, firstorder_entropy_change_weighted, predicted_entropy_change, step_diagnostics,
    PredictionRule, StepDiagnostics,
};
use endyn_core::rng::derive_seed;
use endyn_core::task::{evaluate_policy, sample_batch, TabularTask};
use endyn_core::update::{
    anneal_beta, apply_clip_cov, apply_update, compute_base_update, compute_entropy_reg_update,
    compute_kl_cov_update, select_clip_set, select_kl_set, token_covariance,
    token_covariance_empirical, Mode, UpdateVariant,
};
use endyn_core::{Error, Policy, Result, Task};

use crate::config::ExperimentConfig;

/// Logits beyond this magnitude count as divergence.
pub const LOGIT_DIVERGENCE_BOUND: f64 = 1e6;

/// Seed stream offsets: batches use `derive_seed(seed, step)`, clip
/// selection uses `derive_seed(seed, CLIP_STREAM_BASE + step)`.
const CLIP_STREAM_BASE: u64 = 1 << 40;

/// A completed (or divergence-truncated) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// SHA-256 of the canonical config JSON; stable across reruns.
    pub config_digest: String,
    pub records: Vec<StepDiagnostics<f64>>,
    pub final_policy: Policy,
    /// Set when training stopped early on a non-finite or runaway logit.
    pub diverged: bool,
    /// Step at which divergence was detected, if any.
    pub diverged_at: Option<usize>,
}

/// Stable hash of a config document.
pub fn config_digest(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn policy_diverged(policy: &Policy) -> bool {
    policy
        .logits()
        .iter()
        .any(|z| !z.is_finite() || z.abs() > LOGIT_DIVERGENCE_BOUND)
}

/// Run one experiment to completion (or divergence).
pub fn run_experiment(config: &ExperimentConfig) -> Result<TrainingTrace> {
    config.validate()?;
    let task = config.resolve_task()?;
    run_on_task(config, &task, None)
}

/// Run one experiment from an explicit starting policy (used by probes and
/// sweeps that share a task instance).
pub fn run_on_task(
    config: &ExperimentConfig,
    task: &Task,
    initial_policy: Option<Policy>,
) -> Result<TrainingTrace> {
    let rule = config.core_rule();
    rule.validate()
        .map_err(|e| Error::Validation(format!("rule: {e}")))?;
    let mut policy = match initial_policy {
        Some(p) => {
            if p.num_states() != task.num_states || p.num_actions() != task.num_actions {
                return Err(Error::Validation(format!(
                    "initial policy is {}x{}, task is {}x{}",
                    p.num_states(),
                    p.num_actions(),
                    task.num_states,
                    task.num_actions
                )));
            }
            p
        }
        None => match &config.initial_logits {
            Some(logits) => {
                Policy::from_logits(task.num_states, task.num_actions, logits.clone())
                    .map_err(|e| Error::Validation(format!("initial_logits: {e}")))?
            }
            None => Policy::new(task.num_states, task.num_actions)?,
        },
    };
    // Lag-1 snapshot feeding the KL-Cov penalty: the policy before the
    // previous update. At step 0 it coincides with the current policy.
    let mut policy_lag = policy.clone();
    let (rel_low, rel_high) = config.relative_clip_bounds();
    let eta = config.learning_rate;
    let mut records = Vec::new();
    let mut diverged = false;
    let mut diverged_at = None;

    for step in 0..config.steps {
        let table = evaluate_policy(task, &policy)?;
        let batch = match config.mode {
            Mode::Sampled => {
                let size = config.batch_size.ok_or_else(|| {
                    Error::Validation("batch_size: sampled mode requires batch_size".into())
                })?;
                Some(sample_batch(
                    task,
                    &policy,
                    size,
                    derive_seed(config.rng_seed, step as u64),
                )?)
            }
            Mode::ExactExpectation => None,
        };
        let batch_ref = batch.as_ref();

        let base = compute_base_update(&policy, &table, eta, config.mode, batch_ref)?;
        let mut beta_t = None;
        let mut delta_s_value = None;
        let update = match &rule.variant {
            UpdateVariant::Vanilla => base,
            UpdateVariant::EntropyReg { alpha } => {
                compute_entropy_reg_update(&policy, &table, eta, *alpha, config.mode, batch_ref)?
            }
            UpdateVariant::ClipCov {
                clip_ratio,
                omega_low,
                omega_high,
            } => {
                let cov = match batch_ref {
                    Some(b) => token_covariance_empirical(&policy, &base, b)?,
                    None => token_covariance(&policy, &base)?,
                };
                let mean_abs = cov.values.iter().map(|c| c.abs()).sum::<f64>()
                    / cov.values.len() as f64;
                let lo = if rel_low { mean_abs } else { *omega_low };
                let hi = if rel_high { 5.0 * mean_abs } else { *omega_high };
                let set = select_clip_set(
                    &cov,
                    lo,
                    hi,
                    *clip_ratio,
                    derive_seed(config.rng_seed, CLIP_STREAM_BASE + step as u64),
                )?;
                apply_clip_cov(&base, &set)?
            }
            UpdateVariant::KLCov {
                select_fraction,
                beta,
                schedule,
            } => {
                let cov = match batch_ref {
                    Some(b) => token_covariance_empirical(&policy, &base, b)?,
                    None => token_covariance(&policy, &base)?,
                };
                let set = select_kl_set(&cov, *select_fraction)?;
                let b_t = anneal_beta(*beta, step, *schedule)?;
                beta_t = Some(b_t);
                let mut d_total = 0.0;
                for (s, &w) in table.occupancy.iter().enumerate() {
                    d_total += w * delta_s(&policy, &policy_lag, eta, &set, s)?;
                }
                delta_s_value = Some(d_total);
                compute_kl_cov_update(
                    &policy,
                    &policy_lag,
                    &table,
                    eta,
                    b_t,
                    &set,
                    config.mode,
                    batch_ref,
                )?
            }
        };

        if step % config.log_every == 0 {
            // means under the empirical batch distribution when sampling
            let token_covs = match batch_ref {
                Some(b) => token_covariance_empirical(&policy, &update, b)?,
                None => token_covariance(&policy, &update)?,
            };
            let predicted_dh = match &rule.variant {
                UpdateVariant::Vanilla => {
                    let mut total = 0.0;
                    for (s, &w) in table.occupancy.iter().enumerate() {
                        total += w
                            * predicted_entropy_change(
                                &policy,
                                &table,
                                eta,
                                PredictionRule::Vanilla,
                                s,
                            )?;
                    }
                    total
                }
                UpdateVariant::KLCov { .. } => {
                    // vanilla part plus the realized beta * delta_s term
                    let mut total = 0.0;
                    for (s, &w) in table.occupancy.iter().enumerate() {
                        total += w
                            * predicted_entropy_change(
                                &policy,
                                &table,
                                eta,
                                PredictionRule::Vanilla,
                                s,
                            )?;
                    }
                    total + beta_t.unwrap_or(0.0) * delta_s_value.unwrap_or(0.0)
                }
                // the realized-update first-order predictor (exact for the
                // entropy-regularized direction, and the only meaningful one
                // after clipping)
                _ => firstorder_entropy_change_weighted(&policy, &update, &table.occupancy)?,
            };
            records.push(step_diagnostics(
                step,
                task,
                &policy,
                &table,
                &update,
                &token_covs,
                predicted_dh,
                delta_s_value,
                beta_t,
            )?);
        }

        let next = apply_update(&policy, &update)?;
        if policy_diverged(&next) {
            diverged = true;
            diverged_at = Some(step);
            break;
        }
        policy_lag = policy;
        policy = next;
    }

    Ok(TrainingTrace {
        config_digest: config_digest(config),
        records,
        final_policy: policy,
        diverged,
        diverged_at,
    })
}

/// A sweep over one rule parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// One of: alpha, beta, select_fraction, clip_ratio, learning_rate.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Run i uses `derive_seed(rng_seed, i)` so each grid point owns its
    /// RNG stream; set false to share the base seed across points.
    #[serde(default = "default_derive_seeds")]
    pub derive_seeds: bool,
}

fn default_derive_seeds() -> bool {
    true
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub final_reward: Option<f64>,
    pub final_entropy: Option<f64>,
    pub diverged: bool,
}

fn with_parameter(base: &ExperimentConfig, parameter: &str, value: f64) -> Result<ExperimentConfig> {
    use crate::config::RuleSpec;
    let mut cfg = base.clone();
    match (parameter, &mut cfg.rule) {
        ("learning_rate", _) => cfg.learning_rate = value,
        ("alpha", RuleSpec::EntropyReg { alpha }) => *alpha = value,
        ("beta", RuleSpec::KLCov { beta, .. }) => *beta = value,
        ("select_fraction", RuleSpec::KLCov { select_fraction, .. }) => *select_fraction = value,
        ("clip_ratio", RuleSpec::ClipCov { clip_ratio, .. }) => *clip_ratio = value,
        (p, _) => {
            return Err(Error::Validation(format!(
                "grid.parameter: {p:?} does not apply to the configured rule"
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run the grid; individual divergences are recorded, not fatal.
pub fn run_sweep(
    base: &ExperimentConfig,
    grid: &SweepGrid,
) -> Result<(Vec<TrainingTrace>, Vec<SweepPoint>)> {
    if grid.values.is_empty() {
        return Err(Error::Validation("grid.values: must be nonempty".into()));
    }
    let task = base.resolve_task()?;
    let mut traces = Vec::with_capacity(grid.values.len());
    let mut summary = Vec::with_capacity(grid.values.len());
    for (i, &value) in grid.values.iter().enumerate() {
        let mut cfg = with_parameter(base, &grid.parameter, value)?;
        if grid.derive_seeds {
            cfg.rng_seed = derive_seed(base.rng_seed, i as u64);
        }
        let trace = run_on_task(&cfg, &task, None)?;
        let last = trace.records.last();
        summary.push(SweepPoint {
            value,
            final_reward: last.map(|r| r.expected_reward),
            final_entropy: last.map(|r| r.avg_entropy),
            diverged: trace.diverged,
        });
        traces.push(trace);
    }
    Ok((traces, summary))
}

/// Built-in task names usable in configs and CLI arguments.
pub fn builtin_task_names() -> Vec<&'static str> {
    TabularTask::<f64>::suite().iter().map(|(n, _)| *n).collect()
}
