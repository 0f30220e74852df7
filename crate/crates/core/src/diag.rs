//! Numerical verification of the entropy-dynamics claims.
//!
//! Each operation here checks one analytical statement against ground truth
//! that the tabular setting makes exactly computable: first-order
//! entropy-change predictors against genuine before/after entropies, the
//! clipped-covariance identity against direct means, stability margins
//! against exact KL divergences, closed-form soft optima against brute
//! force, and estimator bias/variance against exact expectations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{floored_ln, validate_state_weights, SoftmaxPolicy};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::task::{
    brute_force_optimum, evaluate_policy, sample_batch_with_mode, soft_bandit_optimum,
    AdvantageMode, AdvantageTable, TabularTask,
};
use crate::update::{
    apply_clip_cov, apply_update, compute_base_update, compute_entropy_reg_update,
    compute_kl_cov_update, select_clip_set, select_kl_set, token_covariance, Mode, TokenCovariance,
    UpdateBatch, UpdateRule, UpdateVariant,
};

/// Reserved seed streams for deterministic sub-sampling inside reports.
const STREAM_CLIP_SELECT: u64 = 0x0C11_F5E7;

/// Compact description of one step's token covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCovSummary<T> {
    pub mean: T,
    pub max: T,
    /// Mean over the top 10% of tokens by C value.
    pub top_decile_mean: T,
    pub positive_fraction: T,
}

impl<T: Real> TokenCovSummary<T> {
    pub fn from_values(values: &[T]) -> Self {
        if values.is_empty() {
            return Self {
                mean: T::zero(),
                max: T::zero(),
                top_decile_mean: T::zero(),
                positive_fraction: T::zero(),
            };
        }
        let n = values.len();
        let mean = values.iter().cloned().sum::<T>() / T::of(n as f64);
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        let top = ((n as f64) * 0.1).ceil() as usize;
        let top = top.max(1);
        let top_decile_mean = sorted[..top].iter().cloned().sum::<T>() / T::of(top as f64);
        let positive = values.iter().filter(|&&c| c > T::zero()).count();
        Self {
            mean,
            max: sorted[0],
            top_decile_mean,
            positive_fraction: T::of(positive as f64 / n as f64),
        }
    }
}

/// Everything recorded about one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics<T> {
    pub step: usize,
    pub avg_entropy: T,
    pub per_state_entropy: Vec<T>,
    pub expected_reward: T,
    pub grad_norm: T,
    /// Cov(log π, Δz) per state for the realized update.
    pub state_cov: Vec<T>,
    /// Occupancy-weighted aggregate of `state_cov`.
    pub weighted_cov: T,
    pub predicted_dh: T,
    pub actual_dh: T,
    /// δ(s) aggregate; present only for KL-Cov.
    pub delta_s: Option<T>,
    /// Annealed penalty coefficient; present only for KL-Cov.
    pub beta_t: Option<T>,
    pub token_cov_summary: TokenCovSummary<T>,
    /// Raw C(s,a) values for pooled quantile statistics.
    pub token_cov_values: Vec<T>,
}

/// Output of a stability probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityProbeResult<T> {
    /// Largest step size with KL(π_old‖π_new) ≤ ε along the direction.
    pub gamma: T,
    pub epsilon: T,
    pub kl_at_gamma: T,
    /// Bracketing witness: KL at 2γ must exceed ε.
    pub kl_at_twice_gamma: T,
    pub rule: String,
}

/// Side-by-side stability margins for the three rule families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityComparison<T> {
    pub base: StabilityProbeResult<T>,
    pub entropy_reg: StabilityProbeResult<T>,
    pub kl_cov: StabilityProbeResult<T>,
    /// ‖entropy-gradient direction‖ / ‖base direction‖, occupancy-weighted.
    pub kappa_hat: T,
    pub reg_le_base: bool,
    pub klcov_rel_diff: T,
}

/// Least-squares fit of R = −a·exp(H) + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit<T> {
    pub a: T,
    pub b: T,
    pub r_squared: T,
}

/// Closed-form audit of entropy-regularized suboptimality on a bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuboptimalityAudit<T> {
    pub j_star: T,
    pub j_reg_star: T,
    pub gap: T,
    /// Whether gap ≤ α·(H(π_reg*) − H(π*)) holds.
    pub entropy_bound_ok: bool,
}

/// Empirical estimator statistics across sampled batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport<T> {
    pub mean_update: Vec<T>,
    pub componentwise_variance: Vec<T>,
    /// Empirical mean minus the exact base-rule expectation.
    pub bias_vector: Vec<T>,
    /// Fraction of components whose bias is statistically distinguishable
    /// from zero (|bias| > max(1e-12, 3·SE)).
    pub bias_sparsity: T,
    pub num_batches: usize,
    /// Flat indices where the bias test fired.
    pub biased_components: Vec<usize>,
    /// Selection sets held fixed across batches (Clip-Cov / KL-Cov).
    pub selected_clip: Vec<usize>,
    pub selected_kl: Vec<usize>,
}

/// Convergence-rate audit of a training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck<T> {
    /// Running minimum of the squared gradient norm, one entry per record.
    pub min_sq_grad_by_t: Vec<T>,
    /// 2·(J_max − J₀)/(η·T) evaluated at each record's step count.
    pub envelope: Vec<T>,
    /// True when the running minimum sits below the envelope for all T ≥ 10.
    pub rate_ok: bool,
}

/// Aggregate correlation and heavy-tail statistics over a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStatistics<T> {
    /// Pearson correlation of (−actual ΔH) with the occupancy-weighted state
    /// covariance; absent when either series is constant.
    pub pearson_dh_vs_cov: Option<T>,
    pub cov_mean: T,
    pub cov_top_1pct_mean: T,
    pub cov_top_01pct_mean: T,
    pub cov_positive_fraction: T,
}

/// Which prediction formula to evaluate in [`predicted_entropy_change`].
pub enum PredictionRule<'a, T> {
    Vanilla,
    EntropyReg { alpha: T },
    KLCov {
        beta: T,
        policy_old: &'a SoftmaxPolicy<T>,
        kl_set: &'a [usize],
    },
}

/// Covariance of two per-action series under the state's action distribution.
fn state_cov_under<T: Real>(probs: &[T], x: &[T], y: &[T]) -> T {
    let mx: T = probs.iter().zip(x).map(|(&p, &v)| p * v).sum();
    let my: T = probs.iter().zip(y).map(|(&p, &v)| p * v).sum();
    probs
        .iter()
        .zip(x.iter().zip(y))
        .map(|(&p, (&xv, &yv))| p * (xv - mx) * (yv - my))
        .sum()
}

/// Lemma-2 predictor: `−Cov_{a∼π(·|s)}(log π(a|s), Δz_{s,a})`.
pub fn firstorder_entropy_change<T: Real>(
    policy: &SoftmaxPolicy<T>,
    update: &UpdateBatch<T>,
    state: usize,
) -> Result<T> {
    let na = policy.num_actions();
    let probs = policy.action_probabilities(state)?;
    let logs: Vec<T> = probs.iter().map(|&p| floored_ln(p)).collect();
    let deltas = &update.deltas[state * na..(state + 1) * na];
    Ok(-state_cov_under(&probs, &logs, deltas))
}

/// Weighted aggregate of [`firstorder_entropy_change`] over states.
pub fn firstorder_entropy_change_weighted<T: Real>(
    policy: &SoftmaxPolicy<T>,
    update: &UpdateBatch<T>,
    state_weights: &[T],
) -> Result<T> {
    validate_state_weights(state_weights, policy.num_states())?;
    let mut total = T::zero();
    for (s, &w) in state_weights.iter().enumerate() {
        if w > T::zero() {
            total += w * firstorder_entropy_change(policy, update, s)?;
        }
    }
    Ok(total)
}

/// Closed-form first-order ΔH predictor for one state under a named rule.
pub fn predicted_entropy_change<T: Real>(
    policy: &SoftmaxPolicy<T>,
    table: &AdvantageTable<T>,
    learning_rate: T,
    rule: PredictionRule<'_, T>,
    state: usize,
) -> Result<T> {
    let na = policy.num_actions();
    let probs = policy.action_probabilities(state)?;
    let logs: Vec<T> = probs.iter().map(|&p| floored_ln(p)).collect();
    let pi_a: Vec<T> = (0..na)
        .map(|a| probs[a] * table.advantage(state, a))
        .collect();
    let vanilla = -learning_rate * state_cov_under(&probs, &logs, &pi_a);
    match rule {
        PredictionRule::Vanilla => Ok(vanilla),
        PredictionRule::EntropyReg { alpha } => {
            if alpha < T::zero() {
                return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
            }
            let stats = policy.log_prob_stats(state)?;
            Ok(vanilla + alpha * learning_rate * stats.var_log_prob)
        }
        PredictionRule::KLCov {
            beta,
            policy_old,
            kl_set,
        } => {
            let d = delta_s(policy, policy_old, learning_rate, kl_set, state)?;
            Ok(vanilla + beta * d)
        }
    }
}

/// The extra entropy term of the KL-Cov prediction:
/// `δ(s) = η·Cov_{a∼π}(log π, (π − π_old)·1_selected)`, computed from the
/// realized penalty on the selected tokens only.
pub fn delta_s<T: Real>(
    policy: &SoftmaxPolicy<T>,
    policy_old: &SoftmaxPolicy<T>,
    learning_rate: T,
    kl_set: &[usize],
    state: usize,
) -> Result<T> {
    if policy.num_states() != policy_old.num_states()
        || policy.num_actions() != policy_old.num_actions()
    {
        return Err(Error::Validation("policy shapes differ".into()));
    }
    let na = policy.num_actions();
    let probs = policy.action_probabilities(state)?;
    let probs_old = policy_old.action_probabilities(state)?;
    let logs: Vec<T> = probs.iter().map(|&p| floored_ln(p)).collect();
    let mut masked_gap = vec![T::zero(); na];
    for &i in kl_set {
        if i / na == state {
            let a = i % na;
            masked_gap[a] = probs[a] - probs_old[a];
        }
    }
    Ok(learning_rate * state_cov_under(&probs, &logs, &masked_gap))
}

/// The entropy-regularizer's ΔH contribution in both published forms:
/// the `α·η·Var(log π)` approximation and the exact covariance
/// `α·η·Cov(log π, π·(log π − μ))`. They agree in the near-deterministic
/// regime and diverge elsewhere; callers get both so the gap stays visible.
pub fn entropy_reg_prediction_forms<T: Real>(
    policy: &SoftmaxPolicy<T>,
    learning_rate: T,
    alpha: T,
    state: usize,
) -> Result<(T, T)> {
    let probs = policy.action_probabilities(state)?;
    let stats = policy.log_prob_stats(state)?;
    let approx = alpha * learning_rate * stats.var_log_prob;
    let logs: Vec<T> = probs.iter().map(|&p| floored_ln(p)).collect();
    // the regularizer's logit change is −α·η·π·(log π − μ); its first-order
    // ΔH is −Cov(log π, Δz) = α·η·Cov(log π, π·(log π − μ))
    let pi_centered: Vec<T> = probs
        .iter()
        .zip(&logs)
        .map(|(&p, &l)| p * (l - stats.mean_log_prob))
        .collect();
    let exact = alpha * learning_rate * state_cov_under(&probs, &logs, &pi_centered);
    Ok((approx, exact))
}

/// Ground truth: entropy after applying the update minus entropy before,
/// both averaged with `state_weights`.
pub fn actual_entropy_change<T: Real>(
    policy: &SoftmaxPolicy<T>,
    update: &UpdateBatch<T>,
    state_weights: &[T],
) -> Result<T> {
    let after = apply_update(policy, update)?;
    Ok(after.average_entropy(state_weights)? - policy.average_entropy(state_weights)?)
}

/// Mean token covariance over unclipped tokens, cross-checked against the
/// algebraic identity `cov_eff = cov_orig − (r/(1−r))·(E[C|clip] − cov_orig)`
/// with `r = |clip| / N` (unweighted means throughout).
pub fn effective_covariance<T: Real>(token_covs: &[T], clip_set: &[usize]) -> Result<T> {
    let n = token_covs.len();
    if n == 0 {
        return Err(Error::Validation("token set is empty".into()));
    }
    for &i in clip_set {
        if i >= n {
            return Err(Error::IndexOutOfRange {
                what: "clip token",
                index: i,
                limit: n,
            });
        }
    }
    let cov_orig = token_covs.iter().cloned().sum::<T>() / T::of(n as f64);
    if clip_set.is_empty() {
        return Ok(cov_orig);
    }
    if clip_set.len() >= n {
        return Err(Error::Validation(
            "clipping every token leaves the effective covariance undefined".into(),
        ));
    }
    let mut clipped = vec![false; n];
    for &i in clip_set {
        clipped[i] = true;
    }
    let kept: Vec<T> = (0..n).filter(|&i| !clipped[i]).map(|i| token_covs[i]).collect();
    let direct = kept.iter().cloned().sum::<T>() / T::of(kept.len() as f64);
    let clip_mean =
        clip_set.iter().map(|&i| token_covs[i]).sum::<T>() / T::of(clip_set.len() as f64);
    let r = T::of(clip_set.len() as f64 / n as f64);
    let formula = cov_orig - r / (T::one() - r) * (clip_mean - cov_orig);
    let scale = T::one() + cov_orig.abs() + direct.abs();
    if (direct - formula).abs() > T::of(1e-12) * scale {
        return Err(Error::Numeric(format!(
            "clipped-covariance identity violated: direct {direct} vs formula {formula}"
        )));
    }
    Ok(direct)
}

/// Exact KL(π‖π') per state, averaged with `state_weights`.
pub fn weighted_kl<T: Real>(
    from: &SoftmaxPolicy<T>,
    to: &SoftmaxPolicy<T>,
    state_weights: &[T],
) -> Result<T> {
    validate_state_weights(state_weights, from.num_states())?;
    let mut total = T::zero();
    for (s, &w) in state_weights.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let p = from.action_probabilities(s)?;
        let q = to.action_probabilities(s)?;
        let kl: T = p
            .iter()
            .zip(&q)
            .map(|(&pa, &qa)| {
                if pa > T::zero() {
                    pa * (floored_ln(pa) - floored_ln(qa))
                } else {
                    T::zero()
                }
            })
            .sum();
        total += w * kl;
    }
    Ok(total)
}

fn scaled_update<T: Real>(update: &UpdateBatch<T>, t: T) -> UpdateBatch<T> {
    let mut out = update.clone();
    for d in &mut out.deltas {
        *d *= t;
    }
    out
}

/// Largest step size γ along `direction` (unit learning rate) keeping the
/// occupancy-weighted KL(π_old‖π_new) within `epsilon`.
///
/// Found by exponential bracketing from step 1 followed by 40 bisections;
/// the returned witnesses certify KL(γ) ≤ ε < KL(2γ).
pub fn stability_margin<T: Real>(
    policy: &SoftmaxPolicy<T>,
    direction: &UpdateBatch<T>,
    epsilon: T,
    state_weights: &[T],
    rule_tag: &str,
) -> Result<StabilityProbeResult<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if direction.deltas.iter().all(|&d| d == T::zero()) {
        return Err(Error::Validation("update direction is zero".into()));
    }
    let kl_at = |t: T| -> Result<T> {
        let moved = apply_update(policy, &scaled_update(direction, t))?;
        weighted_kl(policy, &moved, state_weights)
    };
    // Bracket: lo with KL(lo) <= eps (lo = 0 always qualifies), hi with KL(hi) > eps.
    let mut lo = T::zero();
    let mut hi = T::one();
    let mut doublings = 0;
    while kl_at(hi)? <= epsilon {
        lo = hi;
        hi = hi + hi;
        doublings += 1;
        if doublings > 120 {
            return Err(Error::Numeric(
                "KL budget never exceeded along this direction (is it a pure softmax shift?)"
                    .into(),
            ));
        }
    }
    for _ in 0..40 {
        let mid = (lo + hi) / T::of(2.0);
        if kl_at(mid)? <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = lo;
    Ok(StabilityProbeResult {
        gamma,
        epsilon,
        kl_at_gamma: kl_at(gamma)?,
        kl_at_twice_gamma: kl_at(gamma + gamma)?,
        rule: rule_tag.to_string(),
    })
}

/// Probe the base, entropy-regularized and KL-Cov directions at one policy
/// with a shared KL budget.
///
/// `policy_old` feeds the KL-Cov penalty; passing the current policy makes
/// the penalty vanish and forces γ_klcov = γ_base exactly.
pub fn stability_comparison<T: Real>(
    task: &TabularTask<T>,
    policy: &SoftmaxPolicy<T>,
    policy_old: &SoftmaxPolicy<T>,
    alpha: T,
    select_fraction: T,
    beta: T,
    epsilon: T,
) -> Result<StabilityComparison<T>> {
    let table = evaluate_policy(task, policy)?;
    let weights: Vec<T> = table.occupancy.clone();
    let one = T::one();
    let base_dir = compute_base_update(policy, &table, one, Mode::ExactExpectation, None)?;
    let reg_dir = compute_entropy_reg_update(policy, &table, one, alpha, Mode::ExactExpectation, None)?;
    let cov = token_covariance(policy, &base_dir)?;
    let kl_set = select_kl_set(&cov, select_fraction)?;
    let kl_dir = compute_kl_cov_update(
        policy,
        policy_old,
        &table,
        one,
        beta,
        &kl_set,
        Mode::ExactExpectation,
        None,
    )?;
    let base = stability_margin(policy, &base_dir, epsilon, &weights, "vanilla")?;
    let entropy_reg = stability_margin(policy, &reg_dir, epsilon, &weights, "entropy_reg")?;
    let kl_cov = stability_margin(policy, &kl_dir, epsilon, &weights, "kl_cov")?;

    // kappa_hat: occupancy-weighted norms of the entropy-gradient direction
    // versus the exact objective gradient.
    let (ns, na) = (policy.num_states(), policy.num_actions());
    let g = table.exact_gradient(policy)?;
    let mut h_norm_sq = T::zero();
    for s in 0..ns {
        let grad = policy.entropy_gradient(s)?;
        for a in 0..na {
            let v = weights[s] * grad[a];
            h_norm_sq += v * v;
        }
    }
    let g_norm_sq: T = g.iter().map(|&v| v * v).sum();
    let kappa_hat = if g_norm_sq > T::zero() {
        (h_norm_sq / g_norm_sq).sqrt()
    } else {
        T::infinity()
    };
    let reg_le_base = entropy_reg.gamma <= base.gamma;
    let klcov_rel_diff = (kl_cov.gamma - base.gamma).abs() / base.gamma;
    Ok(StabilityComparison {
        base,
        entropy_reg,
        kl_cov,
        kappa_hat,
        reg_le_base,
        klcov_rel_diff,
    })
}

/// Compare the hard bandit optimum with the entropy-regularized one.
pub fn suboptimality_audit<T: Real>(task: &TabularTask<T>, alpha: T) -> Result<SuboptimalityAudit<T>> {
    if !task.is_bandit() {
        return Err(Error::Scope(
            "suboptimality audit is defined for one-step bandits only".into(),
        ));
    }
    let (j_star, best_actions) = brute_force_optimum(task)?;
    let (reg_probs, j_reg_star, reg_entropy) = soft_bandit_optimum(&task.reward, alpha)?;
    let gap = j_star - j_reg_star;
    // H(pi*) = 0: the brute-force optimum is deterministic.
    let _ = best_actions;
    let entropy_bound_ok = gap <= alpha * reg_entropy + T::of(1e-12);
    let _ = reg_probs;
    if gap < -T::of(1e-12) {
        return Err(Error::Numeric(format!(
            "regularized optimum exceeded the hard optimum: gap {gap}"
        )));
    }
    Ok(SuboptimalityAudit {
        j_star,
        j_reg_star,
        gap,
        entropy_bound_ok,
    })
}

/// Empirical mean/variance/bias of a rule's sampled updates.
///
/// Batches use empirical-return advantages; selection sets for Clip-Cov and
/// KL-Cov are computed once from exact covariances at `policy` and held fixed
/// across batches so the bias support is well defined. The bias reference is
/// the exact base (vanilla) update.
pub fn bias_variance_report<T: Real>(
    task: &TabularTask<T>,
    policy: &SoftmaxPolicy<T>,
    rule: &UpdateRule<T>,
    policy_old: &SoftmaxPolicy<T>,
    num_batches: usize,
    batch_size: usize,
    rng_seed: u64,
) -> Result<BiasVarianceReport<T>> {
    if num_batches < 30 {
        return Err(Error::Validation(format!(
            "need at least 30 batches for stable variance estimates, got {num_batches}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Validation("batch_size must be >= 1".into()));
    }
    rule.validate()?;
    let table = evaluate_policy(task, policy)?;
    let eta = rule.learning_rate;
    let exact_base = compute_base_update(policy, &table, eta, Mode::ExactExpectation, None)?;
    let exact_cov = token_covariance(policy, &exact_base)?;
    let (selected_clip, selected_kl) = match &rule.variant {
        UpdateVariant::ClipCov {
            clip_ratio,
            omega_low,
            omega_high,
        } => (
            select_clip_set(
                &exact_cov,
                *omega_low,
                *omega_high,
                *clip_ratio,
                derive_seed(rng_seed, STREAM_CLIP_SELECT),
            )?,
            Vec::new(),
        ),
        UpdateVariant::KLCov { select_fraction, .. } => {
            (Vec::new(), select_kl_set(&exact_cov, *select_fraction)?)
        }
        _ => (Vec::new(), Vec::new()),
    };

    let n = policy.num_states() * policy.num_actions();
    let mut sum = vec![T::zero(); n];
    let mut sum_sq = vec![T::zero(); n];
    for b in 0..num_batches {
        let batch = sample_batch_with_mode(
            task,
            policy,
            batch_size,
            derive_seed(rng_seed, b as u64),
            AdvantageMode::EmpiricalReturn,
        )?;
        let update = match &rule.variant {
            UpdateVariant::Vanilla => {
                compute_base_update(policy, &table, eta, Mode::Sampled, Some(&batch))?
            }
            UpdateVariant::EntropyReg { alpha } => {
                compute_entropy_reg_update(policy, &table, eta, *alpha, Mode::Sampled, Some(&batch))?
            }
            UpdateVariant::ClipCov { .. } => {
                let base = compute_base_update(policy, &table, eta, Mode::Sampled, Some(&batch))?;
                apply_clip_cov(&base, &selected_clip)?
            }
            UpdateVariant::KLCov { beta, .. } => compute_kl_cov_update(
                policy,
                policy_old,
                &table,
                eta,
                *beta,
                &selected_kl,
                Mode::Sampled,
                Some(&batch),
            )?,
        };
        for (i, &d) in update.deltas.iter().enumerate() {
            sum[i] += d;
            sum_sq[i] += d * d;
        }
    }
    let count = T::of(num_batches as f64);
    let mean_update: Vec<T> = sum.iter().map(|&s| s / count).collect();
    let componentwise_variance: Vec<T> = (0..n)
        .map(|i| {
            let v = sum_sq[i] / count - mean_update[i] * mean_update[i];
            v.max(T::zero())
        })
        .collect();
    let bias_vector: Vec<T> = (0..n).map(|i| mean_update[i] - exact_base.deltas[i]).collect();
    let mut biased_components = Vec::new();
    for i in 0..n {
        let se = (componentwise_variance[i] / count).sqrt();
        let threshold = (T::of(3.0) * se).max(T::of(1e-12));
        if bias_vector[i].abs() > threshold {
            biased_components.push(i);
        }
    }
    let bias_sparsity = T::of(biased_components.len() as f64 / n as f64);
    Ok(BiasVarianceReport {
        mean_update,
        componentwise_variance,
        bias_vector,
        bias_sparsity,
        num_batches,
        biased_components,
        selected_clip,
        selected_kl,
    })
}

/// Running-minimum gradient audit against the `2·(J_max − J₀)/(η·T)` envelope.
pub fn convergence_tracker<T: Real>(
    trace: &[StepDiagnostics<T>],
    learning_rate: T,
) -> Result<ConvergenceCheck<T>> {
    if trace.is_empty() {
        return Err(Error::Validation("trace is empty".into()));
    }
    if !(learning_rate > T::zero()) {
        return Err(Error::Domain(format!(
            "learning_rate must be positive, got {learning_rate}"
        )));
    }
    let j0 = trace[0].expected_reward;
    let j_max = trace
        .iter()
        .map(|r| r.expected_reward)
        .fold(T::neg_infinity(), T::max);
    let mut min_sq = T::infinity();
    let mut min_sq_grad_by_t = Vec::with_capacity(trace.len());
    let mut envelope = Vec::with_capacity(trace.len());
    let mut rate_ok = true;
    for rec in trace {
        let sq = rec.grad_norm * rec.grad_norm;
        min_sq = min_sq.min(sq);
        min_sq_grad_by_t.push(min_sq);
        let t = T::of((rec.step + 1) as f64);
        let env = T::of(2.0) * (j_max - j0) / (learning_rate * t);
        envelope.push(env);
        if rec.step + 1 >= 10 && min_sq > env {
            rate_ok = false;
        }
    }
    Ok(ConvergenceCheck {
        min_sq_grad_by_t,
        envelope,
        rate_ok,
    })
}

/// Fit R = −a·exp(H) + b by ordinary least squares on x = exp(H).
pub fn fit_exponential_law<T: Real>(points: &[(T, T)]) -> Result<ExpFit<T>> {
    if points.len() < 8 {
        return Err(Error::Validation(format!(
            "need at least 8 points, got {}",
            points.len()
        )));
    }
    let n = T::of(points.len() as f64);
    let xs: Vec<T> = points.iter().map(|&(h, _)| h.exp()).collect();
    let ys: Vec<T> = points.iter().map(|&(_, r)| r).collect();
    let mx = xs.iter().cloned().sum::<T>() / n;
    let my = ys.iter().cloned().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx <= T::of(1e-14) * (T::one() + mx * mx) {
        return Err(Error::Validation(
            "all entropy values coincide; the fit is unidentifiable".into(),
        ));
    }
    let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: T = ys.iter().map(|&y| (y - my) * (y - my)).sum();
    let ss_res: T = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if syy > T::zero() {
        (T::one() - ss_res / syy).max(T::zero())
    } else {
        T::one()
    };
    Ok(ExpFit {
        a: -slope,
        b: intercept,
        r_squared,
    })
}

fn pearson<T: Real>(xs: &[T], ys: &[T]) -> Option<T> {
    let n = T::of(xs.len() as f64);
    let mx = xs.iter().cloned().sum::<T>() / n;
    let my = ys.iter().cloned().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let syy: T = ys.iter().map(|&y| (y - my) * (y - my)).sum();
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    Some(sxy / (sxx * syy).sqrt())
}

/// Correlation of (−ΔH) with the covariance term, plus pooled heavy-tail
/// quantiles of the per-token covariances across the whole trace.
pub fn trace_statistics<T: Real>(trace: &[StepDiagnostics<T>]) -> Result<TraceStatistics<T>> {
    if trace.len() < 20 {
        return Err(Error::Validation(format!(
            "need at least 20 recorded steps, got {}",
            trace.len()
        )));
    }
    let neg_dh: Vec<T> = trace.iter().map(|r| -r.actual_dh).collect();
    let cov: Vec<T> = trace.iter().map(|r| r.weighted_cov).collect();
    let pearson_dh_vs_cov = pearson(&neg_dh, &cov);

    let mut pooled: Vec<T> = trace
        .iter()
        .flat_map(|r| r.token_cov_values.iter().cloned())
        .collect();
    if pooled.is_empty() {
        return Err(Error::Validation("trace carries no token covariances".into()));
    }
    let n = pooled.len();
    let cov_mean = pooled.iter().cloned().sum::<T>() / T::of(n as f64);
    let positive = pooled.iter().filter(|&&c| c > T::zero()).count();
    pooled.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let top_mean = |frac: f64| -> T {
        let k = ((n as f64 * frac).ceil() as usize).max(1);
        pooled[..k].iter().cloned().sum::<T>() / T::of(k as f64)
    };
    Ok(TraceStatistics {
        pearson_dh_vs_cov,
        cov_mean,
        cov_top_1pct_mean: top_mean(0.01),
        cov_top_01pct_mean: top_mean(0.001),
        cov_positive_fraction: T::of(positive as f64 / n as f64),
    })
}

/// Build the per-step record used by training loops and trace files.
#[allow(clippy::too_many_arguments)]
pub fn step_diagnostics<T: Real>(
    step: usize,
    task: &TabularTask<T>,
    policy: &SoftmaxPolicy<T>,
    table: &AdvantageTable<T>,
    update: &UpdateBatch<T>,
    token_covs: &TokenCovariance<T>,
    predicted_dh: T,
    delta_s_value: Option<T>,
    beta_t: Option<T>,
) -> Result<StepDiagnostics<T>> {
    let ns = policy.num_states();
    let weights = &table.occupancy;
    let per_state_entropy: Vec<T> = (0..ns)
        .map(|s| policy.state_entropy(s))
        .collect::<Result<_>>()?;
    let mut state_cov = Vec::with_capacity(ns);
    let mut weighted_cov = T::zero();
    for s in 0..ns {
        let c = token_covs.state_covariance(policy, s)?;
        weighted_cov += weights[s] * c;
        state_cov.push(c);
    }
    Ok(StepDiagnostics {
        step,
        avg_entropy: policy.average_entropy(weights)?,
        per_state_entropy,
        expected_reward: crate::task::expected_reward(task, policy)?,
        grad_norm: table.gradient_norm(policy)?,
        state_cov,
        weighted_cov,
        predicted_dh,
        actual_dh: actual_entropy_change(policy, update, weights)?,
        delta_s: delta_s_value,
        beta_t,
        token_cov_summary: TokenCovSummary::from_values(&token_covs.values),
        token_cov_values: token_covs.values.clone(),
    })
}
