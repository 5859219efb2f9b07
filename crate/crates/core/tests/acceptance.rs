//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test --release --test acceptance` for realistic timings;
//! the long runs are shared between criteria and executed concurrently.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use platoon_core::graph::CommGraph;
use platoon_core::harness::{build_problem, preset, resolve_alpha, run_experiment, run_single, write_outputs, RunReport};
use platoon_core::oracle::relative_gap;
use platoon_core::qp::{build_lambda_closed_form, build_qp_via_rollout, MpcProblem, PenaltySpec, Split};
use platoon_core::quantize::{Quantizer, QuantizerKind};
use platoon_core::solver::{init_states, run, GtEngine, LocalObjectives, SolverConfig, ZInit};
use platoon_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn all_quantizers() -> [Quantizer; 3] {
    [
        Quantizer::identity(),
        Quantizer::log(0.125).unwrap(),
        Quantizer::uniform(0.0625).unwrap(),
    ]
}

fn qp_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = 2 + k % 4;
        let t = 1 + (k / 4) % 4;
        let scn = random_scenario(&mut rng, n, t);
        let w = random_weights(&mut rng, n, t);
        let qp = build_qp_via_rollout(&scn, &w).unwrap();
        let y = random_vec(&mut rng, n * t, 3.0);
        let reference = rollout_cost(&scn, &w, &y);
        worst = worst.max((qp.value(&y) - reference).abs() / reference.abs().max(1e-300));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 10.0,
        format!("worst relative error {worst:.2e} over 100 instances in {secs:.2}s"),
    )
}

fn closed_form_cross_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scn = random_scenario(&mut rng, 1, 1);
    let w = random_weights(&mut rng, 1, 1);
    let cf = build_lambda_closed_form(&scn, &w).unwrap();
    let tau = scn.tau;
    let hand = tau.powi(4) / 4.0 * w.qp[0][0] + tau * tau * w.qv[0][0] + tau * tau * w.qu[0][0];
    let single = cf.omega_deviation.max((cf.lambda[(0, 0)] - hand).abs());

    let scn = random_scenario(&mut rng, 3, 3);
    let w = random_weights(&mut rng, 3, 3);
    let cf3 = build_lambda_closed_form(&scn, &w).unwrap();
    outcome(
        single <= 1e-12,
        format!(
            "n=1,T=1 deviation {single:.1e}; n=3,T=3 reports matrix deviation {:.1e}, linear-term deviation {:.1e}",
            cf3.omega_deviation, cf3.c_deviation
        ),
    )
}

fn quantizer_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (log, uni) = (Quantizer::log(0.1).unwrap(), Quantizer::uniform(0.1).unwrap());
    let (lo, hi) = ((-0.05f64).exp(), 0.05f64.exp());
    let mut violations = 0;
    for _ in 0..100_000 {
        let mag = 10f64.powf(rng.random_range(-8.0..8.0));
        let x = if rng.random_bool(0.5) { mag } else { -mag };
        let r = log.apply(x) / x;
        if !(lo <= r && r <= hi) {
            violations += 1;
        }
        let x = rng.random_range(-1e3..1e3);
        if (uni.apply(x) - x).abs() > 0.05 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in 2 x 10^5 samples"))
}

/// Runs `rounds` rounds of the engine, calling `check` after every round.
fn drive(
    graph: &CommGraph,
    problem: &MpcProblem,
    cfg: &SolverConfig,
    alpha: f64,
    rounds: usize,
    mut check: impl FnMut(&[platoon_core::solver::NodeState], &platoon_core::solver::RoundStats),
) {
    let states = init_states(cfg, problem);
    let mut engine =
        GtEngine::with_states(graph, problem, alpha, cfg.quantizer, cfg.divergence_threshold, states).unwrap();
    for _ in 0..rounds {
        let st = engine.step().unwrap();
        check(engine.states(), &st);
    }
}

fn sum_of(states: &[platoon_core::solver::NodeState], f: impl Fn(&platoon_core::solver::NodeState) -> &Vec<f64>) -> Vec<f64> {
    let mut s = vec![0.0; f(&states[0]).len()];
    for st in states {
        for (a, b) in s.iter_mut().zip(f(st)) {
            *a += b;
        }
    }
    s
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn small_instances() -> Vec<(CommGraph, MpcProblem)> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut out = Vec::new();
    for &(n, t) in &[(3, 2), (5, 3), (4, 4)] {
        let scn = random_scenario(&mut rng, n, t);
        let w = random_weights(&mut rng, n, t);
        let problem = MpcProblem::new(scn, w, PenaltySpec { sigma: 2, lambda: 1.0 }, Split::PerVehicle).unwrap();
        let mut edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 0.3)).collect();
        if n >= 4 {
            edges.push((0, n / 2, 0.2));
            edges.push((n / 2, 0, 0.2));
        }
        out.push((CommGraph::from_edges(n, edges).unwrap(), problem));
    }
    let cfg = preset("paper-fig2").unwrap();
    out.push(build_problem(&cfg).unwrap());
    out
}

fn tracking_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for (graph, problem) in small_instances() {
        let alpha = resolve_alpha(&SolverConfig::default(), &graph, &problem).unwrap();
        for q in all_quantizers() {
            let cfg = SolverConfig {
                quantizer: q,
                seed: 5,
                z_init: ZInit::Zero,
                ..SolverConfig::default()
            };
            let grad0 = sum_of(&init_states(&cfg, &problem), |s| &s.grad);
            drive(&graph, &problem, &cfg, alpha, 2000, |states, _| {
                let z = sum_of(states, |s| &s.z);
                let g = sum_of(states, |s| &s.grad);
                let r: Vec<f64> = z.iter().zip(&g).zip(&grad0).map(|((z, g), g0)| z - (g - g0)).collect();
                worst = worst.max(norm(&r) / (1.0 + norm(&g)));
                checks += 1;
            });
        }
    }
    outcome(worst <= 1e-9, format!("worst scaled residual {worst:.2e} over {checks} rounds"))
}

fn weight_balance() -> Outcome {
    let mut worst = 0.0f64;
    let mut rounds = 0usize;
    for (graph, problem) in small_instances() {
        let alpha = resolve_alpha(&SolverConfig::default(), &graph, &problem).unwrap();
        for q in all_quantizers() {
            let cfg = SolverConfig {
                quantizer: q,
                seed: 6,
                ..SolverConfig::default()
            };
            drive(&graph, &problem, &cfg, alpha, 2000, |_, st| {
                let ratio = |imb: f64, scale: f64| if scale > 0.0 { imb / scale } else { imb };
                worst = worst.max(ratio(st.x_imbalance, st.x_scale)).max(ratio(st.z_imbalance, st.z_scale));
                rounds += 1;
            });
        }
    }
    outcome(worst <= 1e-12, format!("worst increment sum / state scale {worst:.2e} over {rounds} rounds"))
}

struct LongRuns {
    exact: RunReport,
    exact_secs: f64,
    fig2: RunReport,
    fig3: RunReport,
}

fn long_runs() -> LongRuns {
    let fig2 = preset("paper-fig2").unwrap();
    let fig3 = preset("paper-fig3").unwrap();
    let ((exact, exact_secs), (fig2, fig3)) = rayon::join(
        || {
            let start = Instant::now();
            let r = run_single(&fig2).unwrap();
            (r, start.elapsed().as_secs_f64())
        },
        || rayon::join(|| run_experiment(&fig2).unwrap(), || run_experiment(&fig3).unwrap()),
    );
    LongRuns {
        exact,
        exact_secs,
        fig2,
        fig3,
    }
}

fn oracle_equivalence(runs: &LongRuns) -> Outcome {
    let v = &runs.exact.variants[0];
    let gap = v.final_metrics.relative_gap;
    let iters = v.traces.len();
    outcome(
        v.quantizer.kind == QuantizerKind::None && gap <= 1e-6 && iters <= 100_000 && runs.exact_secs < 60.0,
        format!("relative gap {gap:.2e} after {iters} rounds in {:.1}s", runs.exact_secs),
    )
}

/// Largest rise of the 100-round moving average of the cost after the first
/// tenth of the run, together with the number of rises.
fn moving_average_rises(costs: &[f64], tol: f64) -> (usize, f64) {
    const WINDOW: usize = 100;
    let burn_in = costs.len() / 10;
    let mut count = 0;
    let mut worst = 0.0f64;
    // consecutive window means differ by (c[k + W] - c[k]) / W
    for k in burn_in..costs.len().saturating_sub(WINDOW) {
        let rise = (costs[k + WINDOW] - costs[k]) / WINDOW as f64;
        if rise > tol {
            count += 1;
        }
        worst = worst.max(rise);
    }
    (count, worst)
}

fn fig2_reproduction(runs: &LongRuns) -> Outcome {
    let f_star = runs.fig2.oracle.f_star;
    let tol = 1e-12 * f_star.abs().max(1.0);
    let mut monotone = true;
    let mut parts = Vec::new();
    let mut gaps = Vec::new();
    for v in &runs.fig2.variants {
        let costs: Vec<f64> = v.traces.iter().map(|t| t.cost).collect();
        let (rises, worst) = moving_average_rises(&costs, tol);
        monotone &= rises == 0;
        gaps.push(v.final_metrics.relative_gap);
        parts.push(format!(
            "{}: gap {:.2e}, {rises} moving-average rises (max {:.1e} relative)",
            v.label,
            v.final_metrics.relative_gap,
            worst / f_star.abs().max(1.0)
        ));
    }
    let ordered = gaps.windows(2).all(|g| g[1] <= g[0]);
    outcome(
        monotone && ordered,
        format!("{}; gaps ordered by level: {ordered}", parts.join("; ")),
    )
}

fn fig3_reproduction(runs: &LongRuns) -> Outcome {
    let report = &runs.fig3;
    let f_star = report.oracle.f_star;
    let log = report.variant("log_rho0.0625").unwrap();
    let uni = report.variant("uniform_rho0.0625").unwrap();
    let log_gap = log.final_metrics.relative_gap;
    let uni_gap = uni.final_metrics.relative_gap;
    let tail = &uni.traces[uni.traces.len() * 9 / 10..];
    let uni_tail_min = tail
        .iter()
        .map(|t| relative_gap(t.gap.unwrap(), f_star))
        .fold(f64::INFINITY, f64::min);
    outcome(
        log_gap <= uni_gap / 10.0 && uni_tail_min >= 10.0 * log_gap,
        format!("log {log_gap:.2e}, uniform {uni_gap:.2e} (tail minimum {uni_tail_min:.2e}), ratio {:.1}", uni_gap / log_gap),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut problems: Vec<MpcProblem> = (0..3)
        .map(|k| {
            let (n, t) = (2 + k, 2 + k);
            let scn = random_scenario(&mut rng, n, t);
            let w = random_weights(&mut rng, n, t);
            MpcProblem::new(scn, w, PenaltySpec { sigma: 2, lambda: 1.0 }, Split::PerVehicle).unwrap()
        })
        .collect();
    problems.push(build_problem(&preset("paper-fig2").unwrap()).unwrap().1);

    let mut worst = 0.0f64;
    let (mut active, mut inactive) = (0, 0);
    for problem in &problems {
        let dim = problem.dim();
        for k in 0..20 {
            // half the points inside the boxes, half far outside
            let scale = if k % 2 == 0 { 0.5 } else { 12.0 };
            let x = random_vec(&mut rng, dim, scale);
            if problem.penalty_total(&x) > 0.0 {
                active += 1;
            } else {
                inactive += 1;
            }
            let mut g = vec![0.0; dim];
            for i in 0..LocalObjectives::nodes(problem) {
                LocalObjectives::local_gradient(problem, i, &x, &mut g);
                let fd = finite_difference(|p| LocalObjectives::local_value(problem, i, p), &x);
                worst = worst.max(max_abs_diff(&fd, &g) / inf_norm(&g).max(1.0));
            }
        }
    }
    outcome(
        worst <= 1e-5 && active > 0 && inactive > 0,
        format!("worst relative deviation {worst:.2e} ({active} points with active penalties, {inactive} without)"),
    )
}

fn stability_bound(runs: &LongRuns) -> Outcome {
    let cfg = preset("paper-fig2").unwrap();
    let (graph, problem) = build_problem(&cfg).unwrap();
    let alpha = resolve_alpha(&cfg.solver, &graph, &problem).unwrap();
    let survived = runs.exact.variants[0].traces.len();
    let big = run(&graph, &problem, &cfg.solver, 100.0 * alpha, None);
    let detected = match &big {
        Err(Error::Divergence { iteration, .. }) => Some(*iteration),
        _ => None,
    };
    outcome(
        survived == 100_000 && detected.is_some(),
        format!(
            "step {alpha:.4e}: {survived} rounds without divergence; 100x step: {}",
            match detected {
                Some(k) => format!("divergence detected at round {k}"),
                None => "no divergence reported".into(),
            }
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = preset("paper-fig3").unwrap();
    cfg.solver.iters = 20_000;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let report = run_experiment(&cfg).unwrap();
        write_outputs(&report, d.path(), false).unwrap();
    }
    let mut identical = true;
    let mut files = 0;
    for v in cfg.variants() {
        let name = format!("{}.csv", v.quantizer.label());
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        identical &= a == b;
        files += 1;
    }
    outcome(identical, format!("{files} trace files compared byte for byte"))
}

#[test]
fn acceptance_suite() {
    let started = Instant::now();
    let runs = long_runs();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 QP reduction equivalence", qp_equivalence()),
        ("2 closed-form cross-check", closed_form_cross_check()),
        ("3 quantizer bounds", quantizer_bounds()),
        ("4 tracking identity", tracking_identity()),
        ("5 weight-balance conservation", weight_balance()),
        ("6 oracle equivalence", oracle_equivalence(&runs)),
        ("7 log-level sweep traces", fig2_reproduction(&runs)),
        ("8 log versus uniform", fig3_reproduction(&runs)),
        ("9 gradient correctness", gradient_check()),
        ("10 step bound behavior", stability_bound(&runs)),
        ("11 determinism", determinism()),
    ];
    let mut out = std::io::stdout().lock();
    for (name, r) in &results {
        let _ = writeln!(out, "[{}] {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    let _ = writeln!(out, "acceptance suite finished in {:.1?}", Duration::from_secs_f64(started.elapsed().as_secs_f64()));
    let failed: Vec<&str> = results.iter().filter(|(_, r)| !r.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
