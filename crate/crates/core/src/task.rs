//! Exactly solvable tasks: one-step bandits and finite-horizon tabular MDPs.
//!
//! Everything here is computed in closed form by dynamic programming, so the
//! rest of the crate can treat Q/V/A tables and occupancy weights as ground
//! truth. Brute-force policy enumeration and the closed-form soft bandit
//! optimum double as oracles for the optimization machinery.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{floored_ln, SoftmaxPolicy};
use crate::rng::rng_from_seed;
use crate::scalar::Real;

/// Largest allowed |reward| in a validated task.
pub const REWARD_BOUND: f64 = 100.0;

/// Guard on `num_actions ^ num_states` for brute-force policy enumeration.
pub const BRUTE_FORCE_GUARD: u64 = 1_000_000;

/// Finite-horizon tabular MDP. `horizon == 1` with a single state is a bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularTask<T> {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Distribution over the initial state.
    pub initial_dist: Vec<T>,
    /// Transition tensor, (state, action)-major rows over next states.
    pub transition: Vec<T>,
    /// Reward matrix, state-major.
    pub reward: Vec<T>,
}

/// Exact evaluation of one policy on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTable<T> {
    pub num_states: usize,
    pub num_actions: usize,
    /// Occupancy-weighted action values, state-major.
    pub q_values: Vec<T>,
    pub v_values: Vec<T>,
    /// A = Q - V; zero-mean under the policy at every state.
    pub advantages: Vec<T>,
    /// d_pi: per-timestep state distributions averaged over the horizon.
    pub occupancy: Vec<T>,
}

/// How `sample_batch` fills in advantage estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvantageMode {
    /// Attach the exact advantage of the sampled pair (default).
    Exact,
    /// Monte Carlo reward-to-go minus the state-value baseline.
    EmpiricalReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord<T> {
    pub state: usize,
    pub action: usize,
    pub log_prob_old: T,
    pub advantage_estimate: T,
    pub trajectory_id: usize,
}

/// A batch of sampled transitions together with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledBatch<T> {
    pub records: Vec<BatchRecord<T>>,
    pub rng_seed: u64,
    pub num_trajectories: usize,
    pub horizon: usize,
}

impl<T: Real> TabularTask<T> {
    /// One-step bandit with the given per-action rewards.
    pub fn bandit(rewards: Vec<T>) -> Self {
        let n = rewards.len();
        Self {
            num_states: 1,
            num_actions: n,
            horizon: 1,
            initial_dist: vec![T::one()],
            transition: vec![T::one(); n],
            reward: rewards,
        }
    }

    /// Bandit with rewards (1, 0).
    pub fn two_action_bandit() -> Self {
        Self::bandit(vec![T::one(), T::zero()])
    }

    /// Bandit with 10 rewards linearly spaced over [0, 1].
    pub fn ten_action_bandit() -> Self {
        let rewards = (0..10).map(|a| T::of(a as f64 / 9.0)).collect();
        Self::bandit(rewards)
    }

    /// 3-state, 4-action, horizon-3 chain. Action 0 advances the chain,
    /// every other action resets to state 0; the only reward is for taking
    /// action 0 in the final state, so it is reachable only after two
    /// unrewarded steps.
    pub fn delayed_chain() -> Self {
        let (ns, na) = (3usize, 4usize);
        let mut transition = vec![T::zero(); ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let next = if a == 0 { (s + 1).min(ns - 1) } else { 0 };
                transition[(s * na + a) * ns + next] = T::one();
            }
        }
        let mut reward = vec![T::zero(); ns * na];
        reward[2 * na] = T::one(); // r(s=2, a=0)
        let mut initial_dist = vec![T::zero(); ns];
        initial_dist[0] = T::one();
        Self {
            num_states: ns,
            num_actions: na,
            horizon: 3,
            initial_dist,
            transition,
            reward,
        }
    }

    /// The default desk-scale suite used by experiments and verification.
    pub fn suite() -> Vec<(&'static str, Self)> {
        vec![
            ("two-action-bandit", Self::two_action_bandit()),
            ("ten-action-bandit", Self::ten_action_bandit()),
            ("delayed-chain", Self::delayed_chain()),
        ]
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "two-action-bandit" => Some(Self::two_action_bandit()),
            "ten-action-bandit" => Some(Self::ten_action_bandit()),
            "delayed-chain" => Some(Self::delayed_chain()),
            _ => None,
        }
    }

    pub fn is_bandit(&self) -> bool {
        self.num_states == 1 && self.horizon == 1
    }

    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> T {
        self.transition[(state * self.num_actions + action) * self.num_states + next]
    }

    pub fn reward_at(&self, state: usize, action: usize) -> T {
        self.reward[state * self.num_actions + action]
    }

    /// Check every structural invariant; called by loaders before use.
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 || self.horizon == 0 {
            return Err(Error::Validation(
                "task needs at least one state, one action and horizon >= 1".into(),
            ));
        }
        if self.initial_dist.len() != ns {
            return Err(Error::Validation(format!(
                "initial_dist has length {}, expected {ns}",
                self.initial_dist.len()
            )));
        }
        if self.transition.len() != ns * na * ns {
            return Err(Error::Validation(format!(
                "transition has length {}, expected {}",
                self.transition.len(),
                ns * na * ns
            )));
        }
        if self.reward.len() != ns * na {
            return Err(Error::Validation(format!(
                "reward has length {}, expected {}",
                self.reward.len(),
                ns * na
            )));
        }
        let tol = T::of(1e-9);
        let init_sum: T = self.initial_dist.iter().cloned().sum();
        if self.initial_dist.iter().any(|p| !p.is_finite() || *p < T::zero())
            || (init_sum - T::one()).abs() > tol
        {
            return Err(Error::Validation(format!(
                "initial_dist must be a probability vector (sum {init_sum})"
            )));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = &self.transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                let sum: T = row.iter().cloned().sum();
                if row.iter().any(|p| !p.is_finite() || *p < T::zero())
                    || (sum - T::one()).abs() > tol
                {
                    return Err(Error::Validation(format!(
                        "transition row (state {s}, action {a}) must be a probability vector (sum {sum})"
                    )));
                }
            }
        }
        let bound = T::of(REWARD_BOUND);
        if self
            .reward
            .iter()
            .any(|r| !r.is_finite() || r.abs() > bound)
        {
            return Err(Error::Validation(format!(
                "rewards must be finite with |r| <= {REWARD_BOUND}"
            )));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &SoftmaxPolicy<T>) -> Result<()> {
        if policy.num_states() != self.num_states || policy.num_actions() != self.num_actions {
            return Err(Error::Validation(format!(
                "policy is {}x{}, task is {}x{}",
                policy.num_states(),
                policy.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    /// Per-timestep state distributions d_0..d_{H-1} under `probs`.
    fn state_distributions(&self, probs: &[T]) -> Vec<Vec<T>> {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut dists = Vec::with_capacity(self.horizon);
        let mut current = self.initial_dist.clone();
        for t in 0..self.horizon {
            dists.push(current.clone());
            if t + 1 == self.horizon {
                break;
            }
            let mut next = vec![T::zero(); ns];
            for s in 0..ns {
                if current[s] == T::zero() {
                    continue;
                }
                for a in 0..na {
                    let pa = current[s] * probs[s * na + a];
                    if pa == T::zero() {
                        continue;
                    }
                    for (sn, slot) in next.iter_mut().enumerate() {
                        *slot += pa * self.transition_prob(s, a, sn);
                    }
                }
            }
            current = next;
        }
        dists
    }

    /// Time-indexed Q_t/V_t by backward dynamic programming.
    fn backward_values(&self, probs: &[T]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut q_by_t = vec![vec![T::zero(); ns * na]; self.horizon];
        let mut v_by_t = vec![vec![T::zero(); ns]; self.horizon];
        let mut v_next = vec![T::zero(); ns];
        for t in (0..self.horizon).rev() {
            for s in 0..ns {
                let mut v_s = T::zero();
                for a in 0..na {
                    let mut q = self.reward_at(s, a);
                    if t + 1 < self.horizon {
                        for (sn, &vn) in v_next.iter().enumerate() {
                            q += self.transition_prob(s, a, sn) * vn;
                        }
                    }
                    q_by_t[t][s * na + a] = q;
                    v_s += probs[s * na + a] * q;
                }
                v_by_t[t][s] = v_s;
            }
            v_next = v_by_t[t].clone();
        }
        (q_by_t, v_by_t)
    }
}

/// Exact Q/V/A and occupancy for `policy` on `task`.
///
/// Finite-horizon values are time-dependent; the returned tables are the
/// per-timestep values averaged with the state's visitation weights, which
/// keeps both `A = Q - V` and the per-state zero-mean identity exact.
pub fn evaluate_policy<T: Real>(
    task: &TabularTask<T>,
    policy: &SoftmaxPolicy<T>,
) -> Result<AdvantageTable<T>> {
    task.check_policy(policy)?;
    let (ns, na) = (task.num_states, task.num_actions);
    let probs = policy.all_probabilities()?;
    let dists = task.state_distributions(&probs);
    let (q_by_t, v_by_t) = task.backward_values(&probs);

    let mut q_values = vec![T::zero(); ns * na];
    let mut v_values = vec![T::zero(); ns];
    let mut occupancy = vec![T::zero(); ns];
    for s in 0..ns {
        let weight_sum: T = dists.iter().map(|d| d[s]).sum();
        occupancy[s] = weight_sum;
        if weight_sum > T::zero() {
            for t in 0..task.horizon {
                let w = dists[t][s] / weight_sum;
                if w == T::zero() {
                    continue;
                }
                for a in 0..na {
                    q_values[s * na + a] += w * q_by_t[t][s * na + a];
                }
                v_values[s] += w * v_by_t[t][s];
            }
        } else {
            // Unvisited state: plain average over timesteps.
            let inv_h = T::one() / T::of(task.horizon as f64);
            for t in 0..task.horizon {
                for a in 0..na {
                    q_values[s * na + a] += inv_h * q_by_t[t][s * na + a];
                }
                v_values[s] += inv_h * v_by_t[t][s];
            }
        }
    }
    let occ_total: T = occupancy.iter().cloned().sum();
    for o in &mut occupancy {
        *o /= occ_total;
    }
    let advantages: Vec<T> = (0..ns * na)
        .map(|i| q_values[i] - v_values[i / na])
        .collect();
    Ok(AdvantageTable {
        num_states: ns,
        num_actions: na,
        q_values,
        v_values,
        advantages,
        occupancy,
    })
}

impl<T: Real> AdvantageTable<T> {
    pub fn advantage(&self, state: usize, action: usize) -> T {
        self.advantages[state * self.num_actions + action]
    }

    /// Exact objective gradient component for each logit:
    /// `occupancy(s) * pi(a|s) * A(s,a)` (per-step-averaged form).
    pub fn exact_gradient(&self, policy: &SoftmaxPolicy<T>) -> Result<Vec<T>> {
        let probs = policy.all_probabilities()?;
        Ok((0..self.num_states * self.num_actions)
            .map(|i| self.occupancy[i / self.num_actions] * probs[i] * self.advantages[i])
            .collect())
    }

    pub fn gradient_norm(&self, policy: &SoftmaxPolicy<T>) -> Result<T> {
        let g = self.exact_gradient(policy)?;
        Ok(g.iter().map(|&v| v * v).sum::<T>().sqrt())
    }
}

/// Exact J(theta) = E[sum of rewards] under the policy.
pub fn expected_reward<T: Real>(task: &TabularTask<T>, policy: &SoftmaxPolicy<T>) -> Result<T> {
    task.check_policy(policy)?;
    let probs = policy.all_probabilities()?;
    let (_, v_by_t) = task.backward_values(&probs);
    Ok(task
        .initial_dist
        .iter()
        .zip(&v_by_t[0])
        .map(|(&p, &v)| p * v)
        .sum())
}

/// Expected reward of a deterministic stationary policy given as an action map.
fn deterministic_reward<T: Real>(task: &TabularTask<T>, actions: &[usize]) -> T {
    let ns = task.num_states;
    let mut v_next = vec![T::zero(); ns];
    for t in (0..task.horizon).rev() {
        let mut v = vec![T::zero(); ns];
        for s in 0..ns {
            let a = actions[s];
            let mut q = task.reward_at(s, a);
            if t + 1 < task.horizon {
                for (sn, &vn) in v_next.iter().enumerate() {
                    q += task.transition_prob(s, a, sn) * vn;
                }
            }
            v[s] = q;
        }
        v_next = v;
    }
    task.initial_dist
        .iter()
        .zip(&v_next)
        .map(|(&p, &v)| p * v)
        .sum()
}

/// Exact optimum over all deterministic stationary policies.
///
/// Ties resolve to the lexicographically smallest action map, so the result
/// is deterministic.
pub fn brute_force_optimum<T: Real>(task: &TabularTask<T>) -> Result<(T, Vec<usize>)> {
    let combos = (task.num_actions as u64).checked_pow(task.num_states as u32);
    match combos {
        Some(c) if c <= BRUTE_FORCE_GUARD => {}
        _ => {
            return Err(Error::Capacity(format!(
                "{}^{} deterministic policies exceed the enumeration guard {BRUTE_FORCE_GUARD}",
                task.num_actions, task.num_states
            )))
        }
    }
    let mut best_reward = T::neg_infinity();
    let mut best_actions = vec![0usize; task.num_states];
    let mut actions = vec![0usize; task.num_states];
    loop {
        let reward = deterministic_reward(task, &actions);
        if reward > best_reward {
            best_reward = reward;
            best_actions = actions.clone();
        }
        // Odometer increment over action maps.
        let mut pos = task.num_states;
        loop {
            if pos == 0 {
                return Ok((best_reward, best_actions));
            }
            pos -= 1;
            actions[pos] += 1;
            if actions[pos] < task.num_actions {
                break;
            }
            actions[pos] = 0;
        }
    }
}

/// Closed-form maximizer of `E_pi[r] + alpha * H(pi)` for a one-step bandit:
/// `pi*(a) proportional to exp(r(a) / alpha)`. Returns the policy, its
/// expected reward and its entropy.
pub fn soft_bandit_optimum<T: Real>(rewards: &[T], alpha: T) -> Result<(Vec<T>, T, T)> {
    if alpha <= T::zero() || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if rewards.is_empty() {
        return Err(Error::Validation("reward vector must be nonempty".into()));
    }
    let scaled: Vec<T> = rewards.iter().map(|&r| r / alpha).collect();
    let max = scaled.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut probs: Vec<T> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let total: T = probs.iter().cloned().sum();
    for p in &mut probs {
        *p /= total;
    }
    let reward: T = probs.iter().zip(rewards).map(|(&p, &r)| p * r).sum();
    let entropy: T = -probs.iter().map(|&p| p * floored_ln(p)).sum::<T>();
    Ok((probs, reward, entropy))
}

fn sample_categorical<T: Real>(probs: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p.to_f64_lossy();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample `num_trajectories` episodes; deterministic given the seed.
pub fn sample_batch<T: Real>(
    task: &TabularTask<T>,
    policy: &SoftmaxPolicy<T>,
    num_trajectories: usize,
    rng_seed: u64,
) -> Result<SampledBatch<T>> {
    sample_batch_with_mode(task, policy, num_trajectories, rng_seed, AdvantageMode::Exact)
}

pub fn sample_batch_with_mode<T: Real>(
    task: &TabularTask<T>,
    policy: &SoftmaxPolicy<T>,
    num_trajectories: usize,
    rng_seed: u64,
    mode: AdvantageMode,
) -> Result<SampledBatch<T>> {
    task.check_policy(policy)?;
    if num_trajectories == 0 {
        return Err(Error::Validation("num_trajectories must be >= 1".into()));
    }
    let table = evaluate_policy(task, policy)?;
    let probs = policy.all_probabilities()?;
    let na = task.num_actions;
    let mut rng = rng_from_seed(rng_seed);
    let mut records = Vec::with_capacity(num_trajectories * task.horizon);
    for traj in 0..num_trajectories {
        let mut state = sample_categorical(&task.initial_dist, rng.gen::<f64>());
        let mut steps: Vec<(usize, usize)> = Vec::with_capacity(task.horizon);
        let mut rewards: Vec<T> = Vec::with_capacity(task.horizon);
        for _ in 0..task.horizon {
            let row = &probs[state * na..(state + 1) * na];
            let action = sample_categorical(row, rng.gen::<f64>());
            steps.push((state, action));
            rewards.push(task.reward_at(state, action));
            let trans =
                &task.transition[(state * na + action) * task.num_states..(state * na + action + 1) * task.num_states];
            state = sample_categorical(trans, rng.gen::<f64>());
        }
        // Reward-to-go, used only in empirical-return mode.
        let mut to_go = vec![T::zero(); task.horizon];
        let mut acc = T::zero();
        for t in (0..task.horizon).rev() {
            acc += rewards[t];
            to_go[t] = acc;
        }
        for (t, &(s, a)) in steps.iter().enumerate() {
            let advantage_estimate = match mode {
                AdvantageMode::Exact => table.advantage(s, a),
                AdvantageMode::EmpiricalReturn => to_go[t] - table.v_values[s],
            };
            records.push(BatchRecord {
                state: s,
                action: a,
                log_prob_old: floored_ln(probs[s * na + a]),
                advantage_estimate,
                trajectory_id: traj,
            });
        }
    }
    Ok(SampledBatch {
        records,
        rng_seed,
        num_trajectories,
        horizon: task.horizon,
    })
}
