//! Policy update rules and their selection machinery.
//!
//! Four rules share one shape: compute per-logit changes `Δz`, optionally
//! restrict or augment them on a selected token set, then apply them to a
//! fresh policy. Tokens are (state, action) pairs addressed by the flat index
//! `state * num_actions + action`. Everything is pure given
//! `(policy, table, rule, seed)`, so candidate updates for several rules can
//! be evaluated concurrently against one immutable snapshot.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{floored_ln, SoftmaxPolicy};
use crate::rng::rng_from_seed;
use crate::scalar::Real;
use crate::task::{AdvantageTable, SampledBatch};

/// Whether updates use exact expectations or sampled batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    ExactExpectation,
    Sampled,
}

/// Decay schedule for the KL penalty coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule<T> {
    Constant,
    InverseTime { t_half: T },
}

/// Rule-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum UpdateVariant<T> {
    Vanilla,
    EntropyReg {
        alpha: T,
    },
    ClipCov {
        clip_ratio: T,
        omega_low: T,
        omega_high: T,
    },
    #[serde(rename = "kl_cov")]
    KLCov {
        select_fraction: T,
        beta: T,
        schedule: BetaSchedule<T>,
    },
}

/// A fully specified update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule<T> {
    #[serde(flatten)]
    pub variant: UpdateVariant<T>,
    pub learning_rate: T,
    pub mode: Mode,
}

impl<T: Real> UpdateRule<T> {
    pub fn vanilla(learning_rate: T, mode: Mode) -> Self {
        Self {
            variant: UpdateVariant::Vanilla,
            learning_rate,
            mode,
        }
    }

    pub fn entropy_reg(learning_rate: T, alpha: T, mode: Mode) -> Self {
        Self {
            variant: UpdateVariant::EntropyReg { alpha },
            learning_rate,
            mode,
        }
    }

    pub fn clip_cov(learning_rate: T, clip_ratio: T, omega_low: T, omega_high: T, mode: Mode) -> Self {
        Self {
            variant: UpdateVariant::ClipCov {
                clip_ratio,
                omega_low,
                omega_high,
            },
            learning_rate,
            mode,
        }
    }

    pub fn kl_cov(learning_rate: T, select_fraction: T, beta: T, schedule: BetaSchedule<T>, mode: Mode) -> Self {
        Self {
            variant: UpdateVariant::KLCov {
                select_fraction,
                beta,
                schedule,
            },
            learning_rate,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        match &self.variant {
            UpdateVariant::Vanilla => {}
            UpdateVariant::EntropyReg { alpha } => {
                if *alpha < T::zero() || !alpha.is_finite() {
                    return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
                }
            }
            UpdateVariant::ClipCov {
                clip_ratio,
                omega_low,
                omega_high,
            } => {
                if !(*clip_ratio > T::zero() && *clip_ratio < T::one()) {
                    return Err(Error::Domain(format!(
                        "clip_ratio must lie in (0, 1), got {clip_ratio}"
                    )));
                }
                if omega_low > omega_high {
                    return Err(Error::Domain(format!(
                        "omega_low {omega_low} must not exceed omega_high {omega_high}"
                    )));
                }
            }
            UpdateVariant::KLCov {
                select_fraction,
                beta,
                schedule,
            } => {
                if !(*select_fraction > T::zero() && *select_fraction < T::one()) {
                    return Err(Error::Domain(format!(
                        "select_fraction must lie in (0, 1), got {select_fraction}"
                    )));
                }
                if *beta < T::zero() || !beta.is_finite() {
                    return Err(Error::Domain(format!("beta must be >= 0, got {beta}")));
                }
                if let BetaSchedule::InverseTime { t_half } = schedule {
                    if !(*t_half > T::zero()) {
                        return Err(Error::Domain(format!(
                            "t_half must be positive, got {t_half}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Logit changes for one optimizer step, plus the selection bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBatch<T> {
    /// Δz, state-major, same layout as the policy logits.
    pub deltas: Vec<T>,
    /// Flat token indices zeroed by Clip-Cov (empty otherwise).
    pub selected_clip: Vec<usize>,
    /// Flat token indices carrying the KL-Cov penalty (empty otherwise).
    pub selected_kl: Vec<usize>,
    /// The policy the batch was computed at.
    pub policy_old: SoftmaxPolicy<T>,
}

impl<T: Real> UpdateBatch<T> {
    fn fresh(deltas: Vec<T>, policy: &SoftmaxPolicy<T>) -> Self {
        Self {
            deltas,
            selected_clip: Vec::new(),
            selected_kl: Vec::new(),
            policy_old: policy.clone(),
        }
    }

    /// Selected sets as (state, action) pairs, for trace emission.
    pub fn selected_pairs(indices: &[usize], num_actions: usize) -> Vec<[usize; 2]> {
        indices.iter().map(|&i| [i / num_actions, i % num_actions]).collect()
    }
}

/// Per-token covariance contributions C(s,a) with the state means behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCovariance<T> {
    pub num_states: usize,
    pub num_actions: usize,
    /// C(s,a) = (log π(a|s) − μ_log(s)) · (Δz_{s,a} − μ_Δz(s)), state-major.
    pub values: Vec<T>,
    pub mu_log: Vec<T>,
    pub mu_delta: Vec<T>,
}

impl<T: Real> TokenCovariance<T> {
    pub fn value(&self, state: usize, action: usize) -> T {
        self.values[state * self.num_actions + action]
    }

    /// Probability-weighted mean of C over actions at `state`; equals
    /// Cov(log π, Δz) there in exact mode.
    pub fn state_covariance(&self, policy: &SoftmaxPolicy<T>, state: usize) -> Result<T> {
        let probs = policy.action_probabilities(state)?;
        Ok(probs
            .iter()
            .zip(&self.values[state * self.num_actions..(state + 1) * self.num_actions])
            .map(|(&p, &c)| p * c)
            .sum())
    }
}

fn check_same_shape<T: Real>(a: &SoftmaxPolicy<T>, b: &SoftmaxPolicy<T>) -> Result<()> {
    if a.num_states() != b.num_states() || a.num_actions() != b.num_actions() {
        return Err(Error::Validation(format!(
            "policy shapes differ: {}x{} vs {}x{}",
            a.num_states(),
            a.num_actions(),
            b.num_states(),
            b.num_actions()
        )));
    }
    Ok(())
}

/// Vanilla policy-gradient logit update.
///
/// Exact mode: `Δz_{s,a} = η·π(a|s)·A(s,a)` for every pair. Sampled mode: the
/// score-function estimator, normalized so its expectation equals the exact
/// update (each state's accumulated contribution is divided by the expected
/// visit count `batch_size · horizon · occupancy(s)`).
pub fn compute_base_update<T: Real>(
    policy: &SoftmaxPolicy<T>,
    table: &AdvantageTable<T>,
    learning_rate: T,
    mode: Mode,
    batch: Option<&SampledBatch<T>>,
) -> Result<UpdateBatch<T>> {
    if !(learning_rate > T::zero()) {
        return Err(Error::Domain(format!(
            "learning_rate must be positive, got {learning_rate}"
        )));
    }
    let (ns, na) = (policy.num_states(), policy.num_actions());
    if table.num_states != ns || table.num_actions != na {
        return Err(Error::Validation(format!(
            "advantage table is {}x{}, policy is {ns}x{na}",
            table.num_states, table.num_actions
        )));
    }
    let probs = policy.all_probabilities()?;
    let deltas = match mode {
        Mode::ExactExpectation => (0..ns * na)
            .map(|i| learning_rate * probs[i] * table.advantages[i])
            .collect(),
        Mode::Sampled => {
            let batch = batch.ok_or_else(|| {
                Error::Validation("Sampled mode requires a SampledBatch".into())
            })?;
            let mut deltas = vec![T::zero(); ns * na];
            for rec in &batch.records {
                if rec.state >= ns || rec.action >= na {
                    return Err(Error::Validation(format!(
                        "batch record ({}, {}) out of range for {ns}x{na}",
                        rec.state, rec.action
                    )));
                }
                // score-function gradient of log pi wrt the state's logits
                let base = rec.state * na;
                for a in 0..na {
                    let indicator = if a == rec.action { T::one() } else { T::zero() };
                    deltas[base + a] += rec.advantage_estimate * (indicator - probs[base + a]);
                }
            }
            let expected_visits =
                T::of((batch.num_trajectories * batch.horizon) as f64);
            for s in 0..ns {
                let occ = table.occupancy[s];
                if occ > T::zero() {
                    let scale = learning_rate / (expected_visits * occ);
                    for a in 0..na {
                        deltas[s * na + a] *= scale;
                    }
                }
            }
            deltas
        }
    };
    Ok(UpdateBatch::fresh(deltas, policy))
}

/// Entropy-regularized update: the base update plus `−α·η·π·(log π − μ_log)`.
/// The regularizer is exact in both modes; `α = 0` reproduces the base update
/// bit for bit.
pub fn compute_entropy_reg_update<T: Real>(
    policy: &SoftmaxPolicy<T>,
    table: &AdvantageTable<T>,
    learning_rate: T,
    alpha: T,
    mode: Mode,
    batch: Option<&SampledBatch<T>>,
) -> Result<UpdateBatch<T>> {
    if alpha < T::zero() || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut update = compute_base_update(policy, table, learning_rate, mode, batch)?;
    if alpha > T::zero() {
        let na = policy.num_actions();
        for s in 0..policy.num_states() {
            let grad = policy.entropy_gradient(s)?; // = -pi (log pi - mu)
            for a in 0..na {
                update.deltas[s * na + a] += learning_rate * alpha * grad[a];
            }
        }
    }
    Ok(update)
}

/// Token covariances with state means taken under the current policy.
pub fn token_covariance<T: Real>(
    policy: &SoftmaxPolicy<T>,
    update: &UpdateBatch<T>,
) -> Result<TokenCovariance<T>> {
    check_same_shape(policy, &update.policy_old)?;
    let (ns, na) = (policy.num_states(), policy.num_actions());
    let probs = policy.all_probabilities()?;
    let mut values = vec![T::zero(); ns * na];
    let mut mu_log = vec![T::zero(); ns];
    let mut mu_delta = vec![T::zero(); ns];
    for s in 0..ns {
        let base = s * na;
        let mut ml = T::zero();
        let mut md = T::zero();
        for a in 0..na {
            ml += probs[base + a] * floored_ln(probs[base + a]);
            md += probs[base + a] * update.deltas[base + a];
        }
        mu_log[s] = ml;
        mu_delta[s] = md;
        for a in 0..na {
            values[base + a] =
                (floored_ln(probs[base + a]) - ml) * (update.deltas[base + a] - md);
        }
    }
    Ok(TokenCovariance {
        num_states: ns,
        num_actions: na,
        values,
        mu_log,
        mu_delta,
    })
}

/// Token covariances with state means taken under the empirical batch
/// distribution. States absent from the batch fall back to exact means.
pub fn token_covariance_empirical<T: Real>(
    policy: &SoftmaxPolicy<T>,
    update: &UpdateBatch<T>,
    batch: &SampledBatch<T>,
) -> Result<TokenCovariance<T>> {
    let mut cov = token_covariance(policy, update)?;
    let (ns, na) = (cov.num_states, cov.num_actions);
    let probs = policy.all_probabilities()?;
    let mut counts = vec![0usize; ns * na];
    for rec in &batch.records {
        counts[rec.state * na + rec.action] += 1;
    }
    for s in 0..ns {
        let base = s * na;
        let total: usize = counts[base..base + na].iter().sum();
        if total == 0 {
            continue;
        }
        let inv = T::one() / T::of(total as f64);
        let mut ml = T::zero();
        let mut md = T::zero();
        for a in 0..na {
            let w = T::of(counts[base + a] as f64) * inv;
            ml += w * floored_ln(probs[base + a]);
            md += w * update.deltas[base + a];
        }
        cov.mu_log[s] = ml;
        cov.mu_delta[s] = md;
        for a in 0..na {
            cov.values[base + a] =
                (floored_ln(probs[base + a]) - ml) * (update.deltas[base + a] - md);
        }
    }
    Ok(cov)
}

/// Pick `⌊r·N⌋` tokens uniformly without replacement (seeded) from those with
/// `C(s,a)` inside `[omega_low, omega_high]`. Returns every eligible token
/// when fewer exist. Output is sorted ascending for reproducible traces.
pub fn select_clip_set<T: Real>(
    covariances: &TokenCovariance<T>,
    omega_low: T,
    omega_high: T,
    clip_ratio: T,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    if !(clip_ratio > T::zero() && clip_ratio < T::one()) {
        return Err(Error::Domain(format!(
            "clip_ratio must lie in (0, 1), got {clip_ratio}"
        )));
    }
    if omega_low > omega_high {
        return Err(Error::Domain(format!(
            "omega_low {omega_low} must not exceed omega_high {omega_high}"
        )));
    }
    let n = covariances.values.len();
    if n == 0 {
        return Err(Error::Validation("token set is empty".into()));
    }
    let eligible: Vec<usize> = (0..n)
        .filter(|&i| covariances.values[i] >= omega_low && covariances.values[i] <= omega_high)
        .collect();
    let want = (clip_ratio * T::of(n as f64)).floor().to_f64_lossy() as usize;
    if eligible.len() <= want {
        return Ok(eligible);
    }
    let mut rng = rng_from_seed(rng_seed);
    let mut picked: Vec<usize> = sample_indices(&mut rng, eligible.len(), want)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Indices of the `⌈k·N⌉` tokens with largest `|C(s,a)|`; ties break toward
/// the smaller flat index.
pub fn select_kl_set<T: Real>(covariances: &TokenCovariance<T>, select_fraction: T) -> Result<Vec<usize>> {
    if !(select_fraction > T::zero() && select_fraction < T::one()) {
        return Err(Error::Domain(format!(
            "select_fraction must lie in (0, 1), got {select_fraction}"
        )));
    }
    let n = covariances.values.len();
    if n == 0 {
        return Err(Error::Validation("token set is empty".into()));
    }
    let want = (select_fraction * T::of(n as f64))
        .ceil()
        .to_f64_lossy() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        covariances.values[j]
            .abs()
            .partial_cmp(&covariances.values[i].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut picked = order[..want.min(n)].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Zero the update at `clip_set` (gradient detachment); everything else is
/// untouched, byte for byte.
pub fn apply_clip_cov<T: Real>(update: &UpdateBatch<T>, clip_set: &[usize]) -> Result<UpdateBatch<T>> {
    let n = update.deltas.len();
    let mut out = update.clone();
    for &i in clip_set {
        if i >= n {
            return Err(Error::IndexOutOfRange {
                what: "clip token",
                index: i,
                limit: n,
            });
        }
        out.deltas[i] = T::zero();
    }
    out.selected_clip = clip_set.to_vec();
    Ok(out)
}

/// KL-Cov: the base update everywhere, with `−η·β·(π − π_old)` added on the
/// selected tokens. `β = 0` reproduces the base update.
pub fn compute_kl_cov_update<T: Real>(
    policy: &SoftmaxPolicy<T>,
    policy_old: &SoftmaxPolicy<T>,
    table: &AdvantageTable<T>,
    learning_rate: T,
    beta: T,
    kl_set: &[usize],
    mode: Mode,
    batch: Option<&SampledBatch<T>>,
) -> Result<UpdateBatch<T>> {
    check_same_shape(policy, policy_old)?;
    if beta < T::zero() || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be >= 0, got {beta}")));
    }
    let mut update = compute_base_update(policy, table, learning_rate, mode, batch)?;
    if beta > T::zero() {
        let probs = policy.all_probabilities()?;
        let probs_old = policy_old.all_probabilities()?;
        let n = update.deltas.len();
        for &i in kl_set {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    what: "kl token",
                    index: i,
                    limit: n,
                });
            }
            update.deltas[i] -= learning_rate * beta * (probs[i] - probs_old[i]);
        }
    }
    update.selected_kl = kl_set.to_vec();
    Ok(update)
}

/// Evaluate the penalty coefficient at step `t`.
pub fn anneal_beta<T: Real>(beta0: T, t: usize, schedule: BetaSchedule<T>) -> Result<T> {
    match schedule {
        BetaSchedule::Constant => Ok(beta0),
        BetaSchedule::InverseTime { t_half } => {
            if !(t_half > T::zero()) {
                return Err(Error::Domain(format!("t_half must be positive, got {t_half}")));
            }
            Ok(beta0 / (T::one() + T::of(t as f64) / t_half))
        }
    }
}

/// Return a new policy with logits `z + Δz`; the input is untouched.
pub fn apply_update<T: Real>(policy: &SoftmaxPolicy<T>, update: &UpdateBatch<T>) -> Result<SoftmaxPolicy<T>> {
    let (ns, na) = (policy.num_states(), policy.num_actions());
    if update.deltas.len() != ns * na {
        return Err(Error::Validation(format!(
            "update has {} deltas, policy needs {}",
            update.deltas.len(),
            ns * na
        )));
    }
    if update.deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("update contains non-finite deltas".into()));
    }
    let logits: Vec<T> = policy
        .logits()
        .iter()
        .zip(&update.deltas)
        .map(|(&z, &d)| z + d)
        .collect();
    SoftmaxPolicy::from_logits(ns, na, logits)
}
