//! End-to-end acceptance suite. Each criterion is exercised through the
//! public library/CLI surface and reported as one pass/fail line; the test
//! fails if any criterion does.

use std::process::Command;

use rand::Rng;

use std::path::PathBuf;

use endyn_cli::config::{load_config, ExperimentConfig};
use endyn_cli::runner::{run_experiment, run_sweep, SweepGrid};
use endyn_core::diag::{
    actual_entropy_change, bias_variance_report, effective_covariance, fit_exponential_law,
    firstorder_entropy_change, predicted_entropy_change, stability_comparison,
    suboptimality_audit, trace_statistics, PredictionRule, StabilityProbeResult,
};
use endyn_core::policy::SoftmaxPolicy;
use endyn_core::rng::rng_from_seed;
use endyn_core::task::{
    brute_force_optimum, evaluate_policy, soft_bandit_optimum, TabularTask,
};
use endyn_core::update::{
    apply_update, compute_base_update, BetaSchedule, Mode, UpdateRule,
};

type CriterionResult = Result<String, String>;

fn fail(msg: String) -> CriterionResult {
    Err(msg)
}

fn random_logits(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

/// Entropy-gradient formula vs. central finite differences over 1,000
/// random policies with 2-16 actions.
fn criterion_01() -> CriterionResult {
    let mut rng = rng_from_seed(1);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let na = 2 + (rng.gen::<u64>() % 15) as usize;
        let logits = random_logits(&mut rng, na);
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
            worst = worst.max((g[a] - fd).abs() / 1.0f64.max(fd.abs()));
        }
    }
    if worst <= 1e-5 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        fail(format!("max relative error {worst:.2e} exceeds 1e-5"))
    }
}

/// First-order entropy law: prediction error contracts like eta^2 (median
/// halving ratio in [0.15, 0.40]) and the exact-mode predictor equals
/// -eta*Cov(log pi, pi*A) to 1e-12, over 100 random bandit instances.
fn criterion_02() -> CriterionResult {
    let mut rng = rng_from_seed(2);
    let mut ratios = Vec::new();
    let mut worst_id = 0.0f64;
    for _ in 0..100 {
        let na = 2 + (rng.gen::<u64>() % 9) as usize;
        let rewards: Vec<f64> = (0..na).map(|_| rng.gen_range(0.0..1.0)).collect();
        let task = TabularTask::<f64>::bandit(rewards);
        let pol = SoftmaxPolicy::from_logits(1, na, random_logits(&mut rng, na)).unwrap();
        let table = evaluate_policy(&task, &pol).unwrap();
        let eta = 0.2;

        let probs = pol.action_probabilities(0).unwrap();
        let mu_l: f64 = probs.iter().map(|&p| p * p.ln()).sum();
        let pia: Vec<f64> = (0..na).map(|a| probs[a] * table.advantage(0, a)).collect();
        let mu_pia: f64 = probs.iter().zip(&pia).map(|(&p, &v)| p * v).sum();
        let cov: f64 = probs
            .iter()
            .enumerate()
            .map(|(a, &p)| p * (probs[a].ln() - mu_l) * (pia[a] - mu_pia))
            .sum();
        let pred =
            predicted_entropy_change(&pol, &table, eta, PredictionRule::Vanilla, 0).unwrap();
        worst_id = worst_id.max((pred - (-eta * cov)).abs());

        let err_at = |e: f64| {
            let up = compute_base_update(&pol, &table, e, Mode::ExactExpectation, None).unwrap();
            let p = firstorder_entropy_change(&pol, &up, 0).unwrap();
            let a = actual_entropy_change(&pol, &up, &[1.0]).unwrap();
            (a - p).abs()
        };
        let (e1, e2) = (err_at(eta), err_at(eta / 2.0));
        if e1 > 0.0 {
            ratios.push(e2 / e1);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    if worst_id <= 1e-12 && (0.15..=0.40).contains(&median) {
        Ok(format!("identity gap {worst_id:.2e}, median halving ratio {median:.3}"))
    } else {
        fail(format!(
            "identity gap {worst_id:.2e} (bound 1e-12), median halving ratio {median:.3} (band [0.15, 0.40])"
        ))
    }
}

/// Clipped-covariance identity on 10,000 random instances, including the
/// empty clip set and the all-clipped guard.
fn criterion_03() -> CriterionResult {
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = 2 + (rng.gen::<u64>() % 38) as usize;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let k = (rng.gen::<u64>() as usize) % n;
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + (rng.gen::<u64>() as usize) % (n - i);
            idx.swap(i, j);
        }
        let eff = effective_covariance(&values, &idx[..k]).unwrap();
        let kept: Vec<f64> = (0..n)
            .filter(|i| !idx[..k].contains(i))
            .map(|i| values[i])
            .collect();
        let kept_mean = kept.iter().sum::<f64>() / kept.len() as f64;
        worst = worst.max((eff - kept_mean).abs());
    }
    // boundary cases
    let values = vec![1.0, 2.0, 5.0];
    let empty = effective_covariance(&values, &[]).unwrap();
    let mean = values.iter().sum::<f64>() / 3.0;
    let singleton = effective_covariance(&values, &[0, 2]).unwrap();
    let all_clipped = effective_covariance(&values, &[0, 1, 2]);
    let boundary_ok = (empty - mean).abs() <= 1e-12
        && (singleton - 2.0).abs() <= 1e-12
        && all_clipped.is_err();
    if worst <= 1e-12 && boundary_ok {
        Ok(format!("max identity deviation {worst:.2e}, boundary cases hold"))
    } else {
        fail(format!(
            "max identity deviation {worst:.2e} (bound 1e-12), boundary cases ok: {boundary_ok}"
        ))
    }
}

/// Advantages are zero-mean under the policy, full suite x 100 policies.
fn criterion_04() -> CriterionResult {
    let mut rng = rng_from_seed(4);
    let mut worst = 0.0f64;
    for (_, task) in TabularTask::<f64>::suite() {
        for _ in 0..100 {
            let n = task.num_states * task.num_actions;
            let pol = SoftmaxPolicy::from_logits(
                task.num_states,
                task.num_actions,
                random_logits(&mut rng, n),
            )
            .unwrap();
            let table = evaluate_policy(&task, &pol).unwrap();
            let probs = pol.all_probabilities().unwrap();
            for s in 0..task.num_states {
                let mean: f64 = (0..task.num_actions)
                    .map(|a| probs[s * task.num_actions + a] * table.advantage(s, a))
                    .sum();
                worst = worst.max(mean.abs());
            }
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max |E_pi[A]| {worst:.2e}"))
    } else {
        fail(format!("max |E_pi[A]| {worst:.2e} exceeds 1e-10"))
    }
}

/// Bundled experiment configs referenced by experiments/manifest.json.
fn experiment(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../experiments")
        .join(name);
    load_config(&path).unwrap()
}

/// Entropy collapse: reward >= 0.99, entropy <= 0.05 nats, and Pearson
/// correlation between -dH and the covariance term >= 0.9.
fn criterion_05() -> CriterionResult {
    let trace = run_experiment(&experiment("entropy_collapse.json")).unwrap();
    let last = trace.records.last().unwrap();
    let stats = trace_statistics(&trace.records).unwrap();
    let pearson = stats.pearson_dh_vs_cov.unwrap_or(f64::NAN);
    if last.expected_reward >= 0.99 && last.avg_entropy <= 0.05 && pearson >= 0.9 {
        Ok(format!(
            "reward {:.4}, entropy {:.4} nats, Pearson {:.4}",
            last.expected_reward, last.avg_entropy, pearson
        ))
    } else {
        fail(format!(
            "reward {:.4} (>= 0.99), entropy {:.4} (<= 0.05), Pearson {:.4} (>= 0.9)",
            last.expected_reward, last.avg_entropy, pearson
        ))
    }
}

/// Token-covariance heavy tail at step 1 from a peaked initial policy.
fn criterion_06() -> CriterionResult {
    let trace = run_experiment(&experiment("heavy_tail.json")).unwrap();
    let rec = trace.records.iter().find(|r| r.step == 1).unwrap();
    let s = &rec.token_cov_summary;
    let ratio = s.top_decile_mean / s.mean;
    if ratio >= 10.0 && (0.5..=0.95).contains(&s.positive_fraction) {
        Ok(format!(
            "top-10% / mean ratio {ratio:.1}, positive fraction {:.2}",
            s.positive_fraction
        ))
    } else {
        fail(format!(
            "ratio {ratio:.2} (>= 10), positive fraction {:.2} (in [0.5, 0.95])",
            s.positive_fraction
        ))
    }
}

/// Suboptimality of global entropy regularization: closed-form gap at
/// alpha = 0.5 and ordering across the alpha grid.
fn criterion_07() -> CriterionResult {
    let task = TabularTask::<f64>::two_action_bandit();
    let audit = suboptimality_audit(&task, 0.5).unwrap();
    let gap_err = (audit.gap - 0.119203).abs();
    let mut ordering = true;
    for &alpha in &[1e-4, 1e-3, 5e-3, 1e-2, 0.1, 0.5] {
        let a = suboptimality_audit(&task, alpha).unwrap();
        ordering &= a.j_reg_star <= a.j_star;
        // the true gap is exp(-1/alpha); strictness is certifiable only
        // while the soft optimum is representably non-deterministic
        let (probs, _, _) = soft_bandit_optimum(&[1.0, 0.0], alpha).unwrap();
        if probs[0] < 1.0 {
            ordering &= a.j_reg_star < a.j_star;
        }
    }
    if gap_err <= 1e-6 && ordering {
        Ok(format!("gap {:.6} (error {gap_err:.2e}), ordering holds on grid", audit.gap))
    } else {
        fail(format!(
            "gap error {gap_err:.2e} (bound 1e-6), ordering holds: {ordering}"
        ))
    }
}

/// Hyperparameter sensitivity: an interior alpha strictly beats both grid
/// endpoints on final reward.
fn criterion_08() -> CriterionResult {
    let base = experiment("sensitivity_base.json");
    let grid_path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../experiments/sensitivity_grid.json");
    let grid: SweepGrid =
        serde_json::from_str(&std::fs::read_to_string(grid_path).unwrap()).unwrap();
    let (_, summary) = run_sweep(&base, &grid).unwrap();
    let rewards: Vec<f64> = summary.iter().map(|p| p.final_reward.unwrap()).collect();
    let best_interior = rewards[1..4].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (rewards[0], rewards[4]);
    if best_interior > lo && best_interior > hi {
        Ok(format!(
            "interior best {best_interior:.4} > endpoints ({lo:.4}, {hi:.4})"
        ))
    } else {
        fail(format!(
            "interior best {best_interior:.4} vs endpoints ({lo:.4}, {hi:.4}); rewards {rewards:?}"
        ))
    }
}

/// KL-penalized updates preserve entropy: higher entropy than the plain
/// rule at step 200 and positive logged delta(s) on >= 80% of early steps.
fn criterion_09() -> CriterionResult {
    let vanilla = run_experiment(&experiment("entropy_collapse.json")).unwrap();
    let klcov = run_experiment(&experiment("kl_preserve.json")).unwrap();
    let h_van = vanilla.records.iter().find(|r| r.step == 200).unwrap().avg_entropy;
    let h_kl = klcov.records.iter().find(|r| r.step == 200).unwrap().avg_entropy;
    let positive = klcov
        .records
        .iter()
        .filter(|r| r.step < 200)
        .filter(|r| r.delta_s.unwrap_or(-1.0) > 0.0)
        .count();
    let frac = positive as f64 / 200.0;
    if h_kl > h_van && frac >= 0.8 {
        Ok(format!(
            "entropy at step 200: {h_kl:.4} > {h_van:.4}; delta(s) > 0 on {frac:.0}% of first 200 steps",
            frac = 100.0 * frac
        ))
    } else {
        fail(format!(
            "entropy at step 200: kl {h_kl:.4} vs vanilla {h_van:.4}; delta(s) positive fraction {frac:.2} (>= 0.8)"
        ))
    }
}

/// Annealed KL-penalized updates converge to the unregularized optimum;
/// plain updates satisfy the 1/T rate (log-log slope <= -0.9).
fn criterion_10() -> CriterionResult {
    for name in ["annealed_two_action.json", "annealed_ten_action.json"] {
        let cfg = experiment(name);
        let task = cfg.resolve_task().unwrap();
        let (j_star, _) = brute_force_optimum(&task).unwrap();
        let trace = run_experiment(&cfg).unwrap();
        let last = trace.records.last().unwrap();
        if last.grad_norm > 1e-4 || (j_star - last.expected_reward).abs() > 1e-3 {
            return fail(format!(
                "{name}: grad norm {:.2e} (<= 1e-4), |J* - reward| {:.2e} (<= 1e-3)",
                last.grad_norm,
                (j_star - last.expected_reward).abs()
            ));
        }
    }
    let trace = run_experiment(&experiment("vanilla_rate.json")).unwrap();
    let mut min_sq = f64::INFINITY;
    let mut pts = Vec::new();
    for r in &trace.records {
        min_sq = min_sq.min(r.grad_norm * r.grad_norm);
        if r.step + 1 >= 10 {
            pts.push(((r.step as f64 + 1.0).ln(), min_sq.ln()));
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    if slope <= -0.9 {
        Ok(format!(
            "annealed runs hit grad <= 1e-4 and J* within 1e-3; running-min slope {slope:.2}"
        ))
    } else {
        fail(format!("running-min log-log slope {slope:.2} exceeds -0.9"))
    }
}

fn witnesses_ok(p: &StabilityProbeResult<f64>) -> bool {
    p.kl_at_gamma <= p.epsilon && p.kl_at_twice_gamma > p.epsilon && p.gamma > 0.0
}

/// Stability margins at a snapshot peaked on a suboptimal action:
/// gamma_reg non-increasing in alpha and <= gamma_base; the KL-penalized
/// direction's margin within 10% of base at k = 0.01.
fn criterion_11() -> CriterionResult {
    let task = TabularTask::<f64>::ten_action_bandit();
    let mut logits = vec![0.0; 10];
    logits[3] = 2.0;
    let old = SoftmaxPolicy::from_logits(1, 10, logits).unwrap();
    let table = evaluate_policy(&task, &old).unwrap();
    let step = compute_base_update(&old, &table, 0.1, Mode::ExactExpectation, None).unwrap();
    let pol = apply_update(&old, &step).unwrap();
    let eps = 0.01;
    let mut prev_gamma = f64::INFINITY;
    let mut gammas = Vec::new();
    let mut klcov_rel = 0.0;
    for &alpha in &[0.01, 0.1, 0.5, 1.0] {
        let c = stability_comparison(&task, &pol, &old, alpha, 0.01, 1.0, eps).unwrap();
        if !(witnesses_ok(&c.base) && witnesses_ok(&c.entropy_reg) && witnesses_ok(&c.kl_cov)) {
            return fail(format!("alpha {alpha}: bracketing witnesses violated"));
        }
        if !c.reg_le_base {
            return fail(format!(
                "alpha {alpha}: gamma_reg {:.3} > gamma_base {:.3}",
                c.entropy_reg.gamma, c.base.gamma
            ));
        }
        if c.entropy_reg.gamma > prev_gamma {
            return fail(format!(
                "gamma_reg not non-increasing: {:.3} after {prev_gamma:.3}",
                c.entropy_reg.gamma
            ));
        }
        prev_gamma = c.entropy_reg.gamma;
        gammas.push(c.entropy_reg.gamma);
        klcov_rel = c.klcov_rel_diff;
    }
    if klcov_rel <= 0.1 {
        Ok(format!(
            "gamma_reg {gammas:.3?} non-increasing and <= base; KL-penalized margin within {:.2}% of base",
            100.0 * klcov_rel
        ))
    } else {
        fail(format!("KL-penalized margin relative difference {klcov_rel:.3} exceeds 0.1"))
    }
}

/// Bias/variance: the entropy regularizer matches the plain rule's
/// variance but biases densely; clipping cannot raise variance; the
/// KL penalty's bias stays inside the selected tokens.
fn criterion_12() -> CriterionResult {
    let task = TabularTask::<f64>::ten_action_bandit();
    let logits: Vec<f64> = (0..10).map(|i| 1.5 * i as f64 / 9.0).collect();
    let old = SoftmaxPolicy::from_logits(1, 10, logits).unwrap();
    let table = evaluate_policy(&task, &old).unwrap();
    let prep = compute_base_update(&old, &table, 4.0, Mode::ExactExpectation, None).unwrap();
    let pol = apply_update(&old, &prep).unwrap();
    let (batches, batch_size, eta) = (200, 64, 0.1);
    let report = |rule: &UpdateRule<f64>| {
        bias_variance_report(&task, &pol, rule, &old, batches, batch_size, 0).unwrap()
    };
    let van = report(&UpdateRule::vanilla(eta, Mode::Sampled));
    let reg = report(&UpdateRule::entropy_reg(eta, 0.5, Mode::Sampled));
    let clip = report(&UpdateRule::clip_cov(eta, 0.2, -1.0, 1.0, Mode::Sampled));
    let kl = report(&UpdateRule::kl_cov(eta, 0.2, 1.0, BetaSchedule::Constant, Mode::Sampled));

    // sampling SD of a sample variance over B batches: Var*sqrt(2/(B-1))
    let var_se = |v: f64| v * (2.0 / (batches as f64 - 1.0)).sqrt();
    for i in 0..10 {
        let (v, r) = (van.componentwise_variance[i], reg.componentwise_variance[i]);
        let tol = 3.0 * (var_se(v).powi(2) + var_se(r).powi(2)).sqrt();
        if (v - r).abs() > tol {
            return fail(format!(
                "component {i}: regularized variance {r:.3e} vs plain {v:.3e} differ beyond 3 sigma"
            ));
        }
        let c = clip.componentwise_variance[i];
        if c > v + 3.0 * var_se(v) {
            return fail(format!(
                "component {i}: clipped variance {c:.3e} exceeds plain {v:.3e}"
            ));
        }
    }
    for &i in &clip.selected_clip {
        if clip.componentwise_variance[i] != 0.0 {
            return fail(format!("clipped component {i} has nonzero variance"));
        }
    }
    let dense = reg.biased_components.len() as f64 / 10.0;
    if dense <= 0.9 {
        return fail(format!(
            "regularizer bias detected on only {:.0}% of components (> 90% required)",
            100.0 * dense
        ));
    }
    let k_n = (0.2f64 * 10.0).ceil() as usize;
    let confined = kl.biased_components.iter().all(|i| kl.selected_kl.contains(i));
    if !confined || kl.biased_components.len() > k_n {
        return fail(format!(
            "KL-penalty bias support {:?} not confined to selected {:?}",
            kl.biased_components, kl.selected_kl
        ));
    }
    Ok(format!(
        "variances match within 3 sigma; regularizer bias on {:.0}% of components; KL bias support {:?} within selected {:?}",
        100.0 * dense,
        kl.biased_components,
        kl.selected_kl
    ))
}

/// Exponential performance-entropy law: exact synthetic recovery and a
/// good fit on a real training trace.
fn criterion_13() -> CriterionResult {
    let (a, b) = (0.047, 1.043);
    let points: Vec<(f64, f64)> = (0..12)
        .map(|i| {
            let h = 0.1 + 0.2 * i as f64;
            (h, -a * h.exp() + b)
        })
        .collect();
    let fit = fit_exponential_law(&points).unwrap();
    let (ea, eb) = ((fit.a - a).abs(), (fit.b - b).abs());
    if ea > 1e-9 || eb > 1e-9 || fit.r_squared < 1.0 - 1e-12 {
        return fail(format!(
            "synthetic recovery errors a {ea:.2e}, b {eb:.2e}, R^2 {:.12}",
            fit.r_squared
        ));
    }
    let trace = run_experiment(&experiment("exp_law_trace.json")).unwrap();
    let pts: Vec<(f64, f64)> = trace
        .records
        .iter()
        .map(|r| (r.avg_entropy, r.expected_reward))
        .collect();
    let trace_fit = fit_exponential_law(&pts).unwrap();
    if trace_fit.r_squared >= 0.9 {
        Ok(format!(
            "synthetic recovery exact (errors {ea:.1e}, {eb:.1e}); trace fit R^2 {:.4}",
            trace_fit.r_squared
        ))
    } else {
        fail(format!("trace fit R^2 {:.4} below 0.9", trace_fit.r_squared))
    }
}

/// Determinism and the release gate: reruns are byte-identical and the
/// bundled verification suite passes (and its self-check mode fails).
fn criterion_14() -> CriterionResult {
    for name in [
        "entropy_collapse.json",
        "heavy_tail.json",
        "kl_preserve.json",
    ] {
        let cfg = experiment(name);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        if serde_json::to_string(&a).unwrap() != serde_json::to_string(&b).unwrap() {
            return fail(format!("{name}: reruns are not byte-identical"));
        }
    }
    let bin = env!("CARGO_BIN_EXE_endyn");
    let clean = Command::new(bin).arg("verify").output().unwrap();
    if clean.status.code() != Some(0) {
        return fail(format!(
            "`verify` exited with {:?}: {}",
            clean.status.code(),
            String::from_utf8_lossy(&clean.stderr)
        ));
    }
    let mutated = Command::new(bin).args(["verify", "--self-check"]).output().unwrap();
    if mutated.status.code() != Some(3) {
        return fail(format!(
            "`verify --self-check` exited with {:?}, expected 3",
            mutated.status.code()
        ));
    }
    Ok("reruns byte-identical; `verify` exits 0, self-check exits 3".into())
}

#[test]
fn acceptance() {
    let start = std::time::Instant::now();
    let criteria: Vec<(&str, fn() -> CriterionResult)> = vec![
        ("entropy-gradient oracle", criterion_01),
        ("first-order entropy law", criterion_02),
        ("clipped-covariance identity", criterion_03),
        ("advantage centering", criterion_04),
        ("entropy collapse reproduction", criterion_05),
        ("covariance heavy tail", criterion_06),
        ("regularization suboptimality", criterion_07),
        ("hyperparameter sensitivity", criterion_08),
        ("KL-penalty entropy preservation", criterion_09),
        ("asymptotic unbiasedness", criterion_10),
        ("stability ordering", criterion_11),
        ("bias/variance trade-off", criterion_12),
        ("exponential law fit", criterion_13),
        ("determinism and release gate", criterion_14),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:02} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                println!("criterion {:02} {name}: FAIL ({detail})", i + 1);
                failures.push(format!("{:02} {name}: {detail}", i + 1));
            }
        }
    }
    let elapsed = start.elapsed();
    println!("acceptance suite finished in {elapsed:.1?}");
    assert!(
        failures.is_empty(),
        "failed criteria:\n{}",
        failures.join("\n")
    );
    assert!(
        elapsed.as_secs() < 300,
        "suite took {elapsed:?}, budget is 5 minutes"
    );
}
