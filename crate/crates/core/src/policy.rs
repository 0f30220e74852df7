//! Tabular softmax policies.
//!
//! The policy is the single source of truth for probabilities, entropies and
//! their logit gradients. Probabilities are always computed with max-shifted
//! exponentials, and any probability that enters a logarithm is floored at
//! [`Real::prob_floor`] so the near-deterministic regime stays finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tabular softmax policy: one free logit per (state, action) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy<T> {
    num_states: usize,
    num_actions: usize,
    /// Row-major (state-major) logit matrix.
    logits: Vec<T>,
}

/// Per-state statistics of `log pi(.|s)` under the policy itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats<T> {
    /// E_{a~pi}[log pi(a|s)], in nats.
    pub mean_log_prob: T,
    /// Var_{a~pi}(log pi(a|s)), in nats^2.
    pub var_log_prob: T,
    /// H(pi(.|s)) = -mean_log_prob, in nats.
    pub entropy: T,
}

impl<T: Real> SoftmaxPolicy<T> {
    /// Uniform policy (all logits zero).
    pub fn new(num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Validation(format!(
                "policy must have at least one state and one action, got {num_states}x{num_actions}"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            logits: vec![T::zero(); num_states * num_actions],
        })
    }

    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<T>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Validation(format!(
                "policy must have at least one state and one action, got {num_states}x{num_actions}"
            )));
        }
        if logits.len() != num_states * num_actions {
            return Err(Error::Validation(format!(
                "logit vector has length {}, expected {}",
                logits.len(),
                num_states * num_actions
            )));
        }
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite logit {bad}")));
        }
        Ok(Self {
            num_states,
            num_actions,
            logits,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn logit(&self, state: usize, action: usize) -> T {
        self.logits[state * self.num_actions + action]
    }

    pub fn set_logit(&mut self, state: usize, action: usize, value: T) {
        self.logits[state * self.num_actions + action] = value;
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.num_states {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: state,
                limit: self.num_states,
            });
        }
        Ok(())
    }

    pub fn state_logits(&self, state: usize) -> Result<&[T]> {
        self.check_state(state)?;
        let start = state * self.num_actions;
        Ok(&self.logits[start..start + self.num_actions])
    }

    /// Softmax probabilities for one state, computed with max-subtraction.
    pub fn action_probabilities(&self, state: usize) -> Result<Vec<T>> {
        let row = self.state_logits(state)?;
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite logit {bad} at state {state}")));
        }
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut probs: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: T = probs.iter().cloned().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(probs)
    }

    /// Probabilities for every state, state-major.
    pub fn all_probabilities(&self) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.logits.len());
        for s in 0..self.num_states {
            out.extend(self.action_probabilities(s)?);
        }
        Ok(out)
    }

    /// State entropy in nats, guaranteed within [0, ln(num_actions)].
    pub fn state_entropy(&self, state: usize) -> Result<T> {
        Ok(-self.log_prob_stats(state)?.mean_log_prob)
    }

    /// Gradient of the state entropy with respect to that state's logits:
    /// component `a` is `-pi(a|s) * (log pi(a|s) - mean_log)`.
    pub fn entropy_gradient(&self, state: usize) -> Result<Vec<T>> {
        let probs = self.action_probabilities(state)?;
        let logs: Vec<T> = probs.iter().map(|&p| floored_ln(p)).collect();
        let mean_log: T = probs.iter().zip(&logs).map(|(&p, &l)| p * l).sum();
        Ok(probs
            .iter()
            .zip(&logs)
            .map(|(&p, &l)| -(p * (l - mean_log)))
            .collect())
    }

    /// Mean, variance and entropy of `log pi(.|state)` under the policy.
    pub fn log_prob_stats(&self, state: usize) -> Result<DistributionStats<T>> {
        let probs = self.action_probabilities(state)?;
        let logs: Vec<T> = probs.iter().map(|&p| floored_ln(p)).collect();
        let mean: T = probs.iter().zip(&logs).map(|(&p, &l)| p * l).sum();
        let var: T = probs
            .iter()
            .zip(&logs)
            .map(|(&p, &l)| p * (l - mean) * (l - mean))
            .sum();
        Ok(DistributionStats {
            mean_log_prob: mean,
            var_log_prob: var.max(T::zero()),
            entropy: -mean,
        })
    }

    /// Entropy averaged over a state distribution (typically the occupancy).
    pub fn average_entropy(&self, state_weights: &[T]) -> Result<T> {
        validate_state_weights(state_weights, self.num_states)?;
        let mut total = T::zero();
        for (s, &w) in state_weights.iter().enumerate() {
            if w > T::zero() {
                total += w * self.state_entropy(s)?;
            }
        }
        Ok(total)
    }
}

/// `ln` of a probability floored at [`Real::prob_floor`].
pub fn floored_ln<T: Real>(p: T) -> T {
    p.max(T::prob_floor()).ln()
}

/// Check that `weights` is a probability vector over `num_states` states
/// (non-negative, summing to one within 1e-9).
pub fn validate_state_weights<T: Real>(weights: &[T], num_states: usize) -> Result<()> {
    if weights.len() != num_states {
        return Err(Error::Validation(format!(
            "state weight vector has length {}, expected {}",
            weights.len(),
            num_states
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(Error::Validation("state weights must be finite and non-negative".into()));
    }
    let total: T = weights.iter().cloned().sum();
    if (total - T::one()).abs() > T::of(1e-9) {
        return Err(Error::Validation(format!(
            "state weights sum to {total}, expected 1 within 1e-9"
        )));
    }
    Ok(())
}
