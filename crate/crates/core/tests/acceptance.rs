//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL ...` line to the
//! uncaptured stdout, then asserts.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use rand::Rng;
use rlhf_explain::oracle::{hull_distance_by_faces, subset_is_feasible};
use rlhf_explain::pipeline::{artifacts, bench_scaling, run_pipeline, PipelineConfig};
use rlhf_explain::policy::finetune_gradient;
use rlhf_explain::unlearn::stable_learning_rate;
use rlhf_explain::*;

fn report(criterion: u32, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

/// `|θ·φ̂ − Σ ω_i θ·Δφ_i|` against its pinned tolerance, for one explanation.
fn reward_identity_holds(theta: &RewardParams<f64>, e: &Explanation<f64>, data: &PreferenceDataset<f64>) -> bool {
    let comps = data.comparisons();
    let lhs = theta.score(e.projected.as_slice());
    let rhs: f64 = e
        .selected_ids
        .iter()
        .zip(e.weights.as_slice())
        .map(|(&i, w)| w * theta.score(comps[i].as_slice()))
        .sum();
    let max_norm = e
        .selected_ids
        .iter()
        .map(|&i| comps[i].as_slice().iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let theta_norm = theta.theta.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    (lhs - rhs).abs() <= 1e-8 * (1.0 + theta_norm * max_norm)
}

#[test]
fn c1_likelihood_identity() {
    let start = Instant::now();
    let mut g = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = g.random_range(1..=16);
        let n = g.random_range(1..=200);
        let data = random_dataset(&mut g, n, d, 2.0);
        let theta = RewardParams::new(fv(&uniform_vec(&mut g, d, 2.0)));
        let a = log_likelihood(&theta, &data).unwrap();
        let b = reformulated_log_likelihood(&theta, &data).unwrap();
        worst = worst.max((a - b).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && secs < 1.0;
    report(1, pass, format!("max |LL - reformulated| = {worst:.2e} (tol 1e-10), {secs:.3}s (limit 1s)"));
    assert!(pass);
}

#[test]
fn c2_gradient_oracles() {
    let start = Instant::now();
    let mut g = rng(202);
    let mut worst_bt: f64 = 0.0;
    let mut worst_ft: f64 = 0.0;
    for _ in 0..20 {
        let d = g.random_range(1..=8);
        let data = random_dataset(&mut g, 60, d, 1.5);
        let theta = fv(&uniform_vec(&mut g, d, 1.0));
        let analytic = log_likelihood_gradient(&RewardParams::new(theta.clone()), &data).unwrap();
        let numeric = finite_difference_gradient(
            |t| log_likelihood(&RewardParams::new(t.clone()), &data).unwrap(),
            &theta,
            1e-6,
        )
        .unwrap();
        worst_bt = worst_bt.max(rel_err(analytic.as_slice(), numeric.as_slice()));

        let items = random_items(&mut g, 15, 4, d);
        let theta_u = RewardParams::new(fv(&uniform_vec(&mut g, d, 1.0)));
        let pi0 = rlhf_policy(&theta_u, &CandidatePolicy::sft(&items), 1.0, &items).unwrap();
        let config = FinetuneConfig::default();
        let w = fv(&uniform_vec(&mut g, d, 1.5));
        let analytic = finetune_gradient(&w, &items, &theta_u, &pi0, &config).unwrap();
        let numeric = finite_difference_gradient(
            |x| finetune_objective(x, &items, &theta_u, &pi0, &config).unwrap(),
            &w,
            1e-6,
        )
        .unwrap();
        worst_ft = worst_ft.max(rel_err(analytic.as_slice(), numeric.as_slice()));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_bt <= 1e-5 && worst_ft <= 1e-5 && secs < 10.0;
    report(
        2,
        pass,
        format!("max rel err BT {worst_bt:.2e}, fine-tune {worst_ft:.2e} (tol 1e-5), {secs:.2}s (limit 10s)"),
    );
    assert!(pass);
}

#[test]
fn c3_projection_correctness() {
    let start = Instant::now();
    let mut g = rng(303);
    let solver = SolverConfig::default();
    let (mut worst_sum, mut worst_neg, mut worst_beat, mut worst_face) = (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    let mut face_checked = 0;
    for k in 0..200 {
        // Every other problem is small enough for the exact face oracle.
        let (d, n) = if k % 2 == 0 {
            (g.random_range(1..=3), g.random_range(1..=12))
        } else {
            (g.random_range(1..=8), g.random_range(1..=50))
        };
        let points: Vec<_> = (0..n).map(|_| fv(&uniform_vec(&mut g, d, 1.0))).collect();
        let target = uniform_vec(&mut g, d, 2.0);
        let problem = HullProblem::new(points.clone(), fv(&target)).unwrap();
        let result = project_onto_hull(&problem, &solver).unwrap();
        let omega = result.weights.as_slice();
        worst_sum = worst_sum.max((omega.iter().sum::<f64>() - 1.0).abs());
        worst_neg = worst_neg.max(-omega.iter().copied().fold(f64::INFINITY, f64::min));
        for _ in 0..1000 {
            let sample = combine(&simplex_sample(&mut g, n), &points);
            worst_beat = worst_beat.max(result.distance - dist(&sample, &target));
        }
        if d <= 3 && n <= 12 {
            let exact = hull_distance_by_faces(&target, &points).unwrap();
            worst_face = worst_face.max((result.distance - exact).abs());
            face_checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_sum <= 1e-9 && worst_neg <= 1e-12 && worst_beat <= 1e-6 && worst_face <= 1e-4 && secs < 30.0;
    report(
        3,
        pass,
        format!(
            "|sum-1| {worst_sum:.1e} (tol 1e-9), min weight {:.1e} (tol -1e-12), best sample margin {worst_beat:.1e} \
             (tol 1e-6), face oracle err {worst_face:.1e} over {face_checked} problems (tol 1e-4), {secs:.2}s (limit 30s)",
            -worst_neg
        ),
    );
    assert!(pass);
}

struct OracleInstance {
    data: PreferenceDataset<f64>,
    theta: RewardParams<f64>,
    explanation: Explanation<f64>,
}

/// Half the queries are drawn inside the hull so explanations are not all singletons.
fn oracle_instances() -> &'static Vec<OracleInstance> {
    static CELL: OnceLock<Vec<OracleInstance>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut g = rng(505);
        let config = ExplainerConfig::default();
        (0..200)
            .map(|k| {
                let n = g.random_range(2..=12);
                let d = g.random_range(1..=3);
                let points: Vec<_> = (0..n).map(|_| fv(&uniform_vec(&mut g, d, 1.0))).collect();
                let query = if k % 2 == 0 {
                    combine(&simplex_sample(&mut g, n), &points)
                } else {
                    uniform_vec(&mut g, d, 1.5)
                };
                let data = PreferenceDataset::from_comparisons(points).unwrap();
                let explanation = explain(&fv(&query), &data, &config).unwrap();
                let theta = RewardParams::new(fv(&uniform_vec(&mut g, d, 2.0)));
                OracleInstance {
                    data,
                    theta,
                    explanation,
                }
            })
            .collect()
    })
}

#[test]
fn c5_greedy_against_oracle() {
    let start = Instant::now();
    let solver = SolverConfig::default();
    let instances = oracle_instances();
    let (mut over_bound, mut infeasible, mut zero_gap) = (0, 0, 0);
    let (mut sum_gap, mut max_gap) = (0.0, 0.0f64);
    for inst in instances {
        let e = &inst.explanation;
        if e.iterations > inst.data.len() {
            over_bound += 1;
        }
        if !subset_is_feasible(&e.projected, &inst.data, &e.selected_ids, &solver).unwrap() {
            infeasible += 1;
        }
        let best = brute_force_min_subset(&e.projected, &inst.data, &solver).unwrap();
        let gap = e.objective - best.optimal_objective;
        if gap.abs() <= 1e-9 * (1.0 + best.optimal_objective) {
            zero_gap += 1;
        }
        sum_gap += gap;
        max_gap = max_gap.max(gap);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = over_bound == 0 && infeasible == 0 && secs < 60.0;
    report(
        5,
        pass,
        format!(
            "{} instances: over iteration bound {over_bound}, infeasible {infeasible}; gap mean {:.4} max {max_gap:.4}, \
             zero-gap {zero_gap}; {secs:.2}s (limit 60s)",
            instances.len(),
            sum_gap / instances.len() as f64
        ),
    );
    assert!(pass);
}

#[test]
fn c6_unlearning_monotonicity() {
    let mut g = rng(606);
    let mut violations = 0;
    let mut saturated = 0;
    for _ in 0..20 {
        let d = g.random_range(1..=8);
        let n = g.random_range(1..=40);
        let data = random_dataset(&mut g, n, d, 1.5);
        let theta0 = RewardParams::new(fv(&uniform_vec(&mut g, d, 1.0)));
        let config = UnlearnConfig {
            max_steps: 50,
            target_likelihood: f64::NEG_INFINITY,
            ..UnlearnConfig::default()
        };
        let trace = unlearn_reward(&theta0, &data, &config, None).unwrap();
        assert_eq!(trace.learning_rate, stable_learning_rate(&data));
        let ll: Vec<f64> = trace.steps.iter().map(|s| s.unlearn_log_likelihood).collect();
        // Once a step stops decreasing the likelihood, it must stay flat from then on.
        match ll.windows(2).position(|w| w[1] >= w[0]) {
            None => {}
            Some(at) => {
                saturated += 1;
                if ll[at..].iter().any(|&x| x != ll[at]) {
                    violations += 1;
                }
            }
        }
    }
    let hand = UnlearnConfig {
        learning_rate: Some(1.0),
        max_steps: 1,
        target_likelihood: f64::NEG_INFINITY,
        guard_set_floor: None,
    };
    let one_step = unlearn_reward(&RewardParams::zeros(1), &line(&[1.0]), &hand, None).unwrap();
    let hand_ok = one_step.final_params.theta.as_slice() == [-0.5];
    let pass = violations == 0 && hand_ok;
    report(
        6,
        pass,
        format!(
            "20 subsets x 50 steps: non-monotone {violations}, saturated {saturated}; one-step example theta = {:?} \
             (expect [-0.5] exactly)",
            one_step.final_params.theta.as_slice()
        ),
    );
    assert!(pass);
}

struct Run {
    unsat_win: f64,
    base_over_tuned_sat: f64,
    retention: f64,
    identity_checked: usize,
    identity_failures: usize,
}

fn pipeline_run(seed: u64, beta_bar: f64) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig {
        seed,
        output_dir: dir.path().to_path_buf(),
        ..PipelineConfig::default()
    };
    config.finetune.beta_bar = beta_bar;
    let report = run_pipeline(&config).unwrap().report;
    let rates = report.win_rates.unwrap();

    let p = dir.path();
    let data = load_preference_dataset::<f64>(p.join(artifacts::DATASET)).unwrap();
    let theta0: RewardParams<f64> = io::read_json(&p.join(artifacts::THETA0)).unwrap();
    let text = std::fs::read_to_string(p.join(artifacts::EXPLANATIONS)).unwrap();
    let explanations: Vec<Explanation<f64>> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let identity_failures = explanations.iter().filter(|e| !reward_identity_holds(&theta0, e, &data)).count();

    Run {
        unsat_win: rates.unsatisfactory.win_rate_a,
        base_over_tuned_sat: 1.0 - rates.satisfactory.win_rate_a,
        retention: rates.satisfactory.win_rate_a,
        identity_checked: explanations.len(),
        identity_failures,
    }
}

/// Default world, seeds 0..10, for the default `β̄` and for `β̄ = 0`.
fn sweep() -> &'static (Vec<Run>, Vec<Run>, f64) {
    static CELL: OnceLock<(Vec<Run>, Vec<Run>, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let default_beta_bar = FinetuneConfig::default().beta_bar;
        let guarded = (0..10).map(|s| pipeline_run(s, default_beta_bar)).collect();
        let secs = start.elapsed().as_secs_f64();
        let free = (0..10).map(|s| pipeline_run(s, 0.0)).collect();
        (guarded, free, secs)
    })
}

#[test]
fn c4_reward_identity() {
    let solver_instances = oracle_instances();
    let oracle_failures = solver_instances
        .iter()
        .filter(|i| !reward_identity_holds(&i.theta, &i.explanation, &i.data))
        .count();
    let (guarded, free, _) = sweep();
    let runs = guarded.iter().chain(free);
    let (checked, failures) = runs.fold((0, 0), |(c, f), r| (c + r.identity_checked, f + r.identity_failures));
    let total = solver_instances.len() + checked;
    let pass = oracle_failures + failures == 0;
    report(
        4,
        pass,
        format!(
            "{total} explanations checked, {} violations (tol 1e-8*(1+|theta|*max|dphi|))",
            oracle_failures + failures
        ),
    );
    assert!(pass);
}

#[test]
fn c7_synthetic_improvement() {
    let (guarded, _, secs) = sweep();
    let unsat = median(guarded.iter().map(|r| r.unsat_win).collect());
    let degradation = median(guarded.iter().map(|r| r.base_over_tuned_sat).collect());
    let pass = unsat >= 0.60 && degradation <= 0.60 && *secs < 300.0;
    report(
        7,
        pass,
        format!(
            "10 seeds: median win tuned over base on unsat {unsat:.3} (min 0.60), median win base over tuned on sat \
             {degradation:.3} (max 0.60), {secs:.1}s (limit 300s)"
        ),
    );
    assert!(pass);
}

#[test]
fn c8_kl_guard_ablation() {
    let (guarded, free, _) = sweep();
    let win = |runs: &Vec<Run>| median(runs.iter().map(|r| r.unsat_win).collect());
    let keep = |runs: &Vec<Run>| median(runs.iter().map(|r| r.retention).collect());
    let (gw, fw, gk, fk) = (win(guarded), win(free), keep(guarded), keep(free));
    let pass = fw > gw && fk < gk;
    report(
        8,
        pass,
        format!("median unsat win {gw:.3} -> {fw:.3} (must rise), median sat retention {gk:.3} -> {fk:.3} (must fall)"),
    );
    assert!(pass);
}

#[test]
fn c9_scaling() {
    let start = Instant::now();
    let table = bench_scaling(&[100, 200, 400, 800, 1600], 8, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let iterations: Vec<_> = table.rows.iter().map(|r| (r.n, r.iterations)).collect();
    let pass = table.iterations_within_bound && table.slope <= 5.0 && secs < 600.0;
    report(
        9,
        pass,
        format!(
            "(N, iterations) {iterations:?}, log-log slope {:.2} (max 5.0), {secs:.1}s (limit 600s)",
            table.slope
        ),
    );
    assert!(pass);
}

#[test]
fn c10_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let config = PipelineConfig {
            seed: 7,
            output_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        run_pipeline(&config).unwrap();
    }
    let ra = std::fs::read(a.path().join(artifacts::REPORT)).unwrap();
    let rb = std::fs::read(b.path().join(artifacts::REPORT)).unwrap();
    let pass = ra == rb;
    report(10, pass, format!("report.json byte-identical across two seed-7 runs ({} bytes)", ra.len()));
    assert!(pass);
}
