//! Independent oracles: brute-force enumeration, finite differences and
//! grid searches frozen into tests.

use rand::Rng;

use endyn_core::diag::{actual_entropy_change, firstorder_entropy_change};
use endyn_core::policy::SoftmaxPolicy;
use endyn_core::rng::rng_from_seed;
use endyn_core::task::{evaluate_policy, expected_reward, soft_bandit_optimum, TabularTask};
use endyn_core::update::{compute_base_update, Mode, UpdateBatch};

/// Enumerate every trajectory of a small deterministic-transition MDP and
/// accumulate expected reward and per-timestep state distributions by hand.
fn enumerate_chain(
    task: &TabularTask<f64>,
    policy: &SoftmaxPolicy<f64>,
) -> (f64, Vec<Vec<f64>>) {
    let na = task.num_actions;
    let h = task.horizon;
    let probs = policy.all_probabilities().unwrap();
    let mut total_reward = 0.0;
    let mut dists = vec![vec![0.0; task.num_states]; h];
    // action tuples as base-na counters
    let mut actions = vec![0usize; h];
    loop {
        // initial state is deterministic for the chain
        let mut state = 0usize;
        let mut prob = 1.0;
        let mut reward = 0.0;
        for t in 0..h {
            let a = actions[t];
            dists[t][state] += prob * probs[state * na + a] / 1.0;
            prob *= probs[state * na + a];
            reward += task.reward_at(state, a);
            // deterministic transition
            let mut next = 0;
            for sn in 0..task.num_states {
                if task.transition_prob(state, a, sn) > 0.5 {
                    next = sn;
                }
            }
            state = next;
        }
        total_reward += prob * reward;
        let mut pos = h;
        loop {
            if pos == 0 {
                // fix up: dists accumulated p(prefix)*pi, but d_t(s) is the
                // probability of being in s at t, i.e. the prefix mass only
                return (total_reward, dists);
            }
            pos -= 1;
            actions[pos] += 1;
            if actions[pos] < na {
                break;
            }
            actions[pos] = 0;
        }
    }
}

#[test]
fn chain_expected_reward_matches_trajectory_enumeration() {
    let task = TabularTask::<f64>::delayed_chain();
    let mut rng = rng_from_seed(41);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pol = SoftmaxPolicy::from_logits(3, 4, logits).unwrap();
        let (oracle_reward, _) = enumerate_chain(&task, &pol);
        let dp_reward = expected_reward(&task, &pol).unwrap();
        assert!(
            (oracle_reward - dp_reward).abs() < 1e-12,
            "oracle {oracle_reward} dp {dp_reward}"
        );
    }
}

#[test]
fn chain_occupancy_matches_forward_enumeration() {
    let task = TabularTask::<f64>::delayed_chain();
    let mut rng = rng_from_seed(43);
    for _ in 0..10 {
        let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pol = SoftmaxPolicy::from_logits(3, 4, logits).unwrap();
        let probs = pol.all_probabilities().unwrap();
        // forward state distributions by hand
        let mut d = vec![1.0, 0.0, 0.0];
        let mut occ = vec![0.0; 3];
        for t in 0..task.horizon {
            for s in 0..3 {
                occ[s] += d[s] / task.horizon as f64;
            }
            if t + 1 == task.horizon {
                break;
            }
            let mut next = vec![0.0; 3];
            for s in 0..3 {
                for a in 0..4 {
                    let target = if a == 0 { (s + 1).min(2) } else { 0 };
                    next[target] += d[s] * probs[s * 4 + a];
                }
            }
            d = next;
        }
        let table = evaluate_policy(&task, &pol).unwrap();
        for s in 0..3 {
            assert!(
                (occ[s] - table.occupancy[s]).abs() < 1e-12,
                "state {s}: oracle {} dp {}",
                occ[s],
                table.occupancy[s]
            );
        }
    }
}

#[test]
fn exact_gradient_matches_finite_differences_of_expected_reward() {
    // The stored gradient is the per-step average: d/dz E[sum r] / horizon.
    let mut rng = rng_from_seed(47);
    for (_, task) in TabularTask::<f64>::suite() {
        let n = task.num_states * task.num_actions;
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let pol = SoftmaxPolicy::from_logits(task.num_states, task.num_actions, logits.clone())
            .unwrap();
        let table = evaluate_policy(&task, &pol).unwrap();
        let g = table.exact_gradient(&pol).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[i] += h;
            down[i] -= h;
            let ju = expected_reward(
                &task,
                &SoftmaxPolicy::from_logits(task.num_states, task.num_actions, up).unwrap(),
            )
            .unwrap();
            let jd = expected_reward(
                &task,
                &SoftmaxPolicy::from_logits(task.num_states, task.num_actions, down).unwrap(),
            )
            .unwrap();
            let fd = (ju - jd) / (2.0 * h) / task.horizon as f64;
            assert!(
                (g[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "component {i}: analytic {} fd {fd}",
                g[i]
            );
        }
    }
}

#[test]
fn entropy_gradient_matches_central_differences() {
    let mut rng = rng_from_seed(53);
    for _ in 0..50 {
        let na = 2 + (rng.gen::<u64>() % 15) as usize;
        let logits: Vec<f64> = (0..na).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let pol = SoftmaxPolicy::from_logits(1, na, logits.clone()).unwrap();
        let g = pol.entropy_gradient(0).unwrap();
        let h = 1e-6;
        for a in 0..na {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[a] += h;
            down[a] -= h;
            let hu = SoftmaxPolicy::from_logits(1, na, up).unwrap().state_entropy(0).unwrap();
            let hd = SoftmaxPolicy::from_logits(1, na, down).unwrap().state_entropy(0).unwrap();
            let fd = (hu - hd) / (2.0 * h);
            let scale = 1.0f64.max(fd.abs());
            assert!(
                (g[a] - fd).abs() / scale < 1e-5,
                "action {a}: analytic {} fd {fd}",
                g[a]
            );
        }
    }
}

#[test]
fn soft_optimum_beats_dense_grid_search() {
    // 2-action bandit: maximize p*r0 + (1-p)*r1 + alpha*H over a 1e-3 grid
    // of p; the closed form must match the grid winner to grid resolution.
    let rewards = [1.0, 0.0];
    for &alpha in &[0.1, 0.5, 2.0] {
        let (probs, j_reg, h) = soft_bandit_optimum(&rewards, alpha).unwrap();
        let obj_closed = j_reg + alpha * h;
        let mut best = f64::NEG_INFINITY;
        let mut best_p = 0.0;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let obj = p * rewards[0]
                + (1.0 - p) * rewards[1]
                + alpha * (-(p * p.ln() + (1.0 - p) * (1.0 - p).ln()));
            if obj > best {
                best = obj;
                best_p = p;
            }
        }
        assert!(
            (probs[0] - best_p).abs() < 1e-3,
            "alpha {alpha}: closed {} grid {best_p}",
            probs[0]
        );
        assert!(obj_closed >= best - 1e-9, "closed form must dominate the grid");
    }
}

#[test]
fn sampled_mean_matches_exact_update_on_chain() {
    // Monte Carlo oracle on a genuine multi-state task (3 sigma).
    let task = TabularTask::<f64>::delayed_chain();
    let logits: Vec<f64> = (0..12).map(|i| (i as f64 * 0.61).sin()).collect();
    let pol = SoftmaxPolicy::from_logits(3, 4, logits).unwrap();
    let table = evaluate_policy(&task, &pol).unwrap();
    let eta = 0.1;
    let exact = compute_base_update(&pol, &table, eta, Mode::ExactExpectation, None).unwrap();
    let n = 60_000;
    let batch = endyn_core::task::sample_batch(&task, &pol, n, 19).unwrap();
    let sampled = compute_base_update(&pol, &table, eta, Mode::Sampled, Some(&batch)).unwrap();
    for (s, occ) in table.occupancy.iter().enumerate() {
        // per-state effective sample size
        let eff = (n as f64) * task.horizon as f64 * occ;
        let sigma = eta * 2.0 / eff.sqrt();
        for a in 0..4 {
            let i = s * 4 + a;
            assert!(
                (exact.deltas[i] - sampled.deltas[i]).abs() < 3.0 * sigma,
                "component {i}: exact {} sampled {}",
                exact.deltas[i],
                sampled.deltas[i]
            );
        }
    }
}

#[test]
fn firstorder_prediction_error_shrinks_quadratically_on_chain() {
    let task = TabularTask::<f64>::delayed_chain();
    let logits: Vec<f64> = (0..12).map(|i| (i as f64 * 0.83).cos()).collect();
    let pol = SoftmaxPolicy::from_logits(3, 4, logits).unwrap();
    let table = evaluate_policy(&task, &pol).unwrap();
    let weights = table.occupancy.clone();
    let err_at = |eta: f64| {
        let up = compute_base_update(&pol, &table, eta, Mode::ExactExpectation, None).unwrap();
        let mut pred = 0.0;
        for (s, &w) in weights.iter().enumerate() {
            pred += w * firstorder_entropy_change(&pol, &up, s).unwrap();
        }
        let act = actual_entropy_change(&pol, &up, &weights).unwrap();
        (act - pred).abs()
    };
    let (e1, e2) = (err_at(0.2), err_at(0.1));
    let ratio = e2 / e1;
    assert!((0.1..=0.45).contains(&ratio), "ratio {ratio}");
}

#[test]
fn update_batch_pair_conversion() {
    let pairs = UpdateBatch::<f64>::selected_pairs(&[0, 5, 11], 4);
    assert_eq!(pairs, vec![[0, 0], [1, 1], [2, 3]]);
}
