use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::oracle::{relative_gap, solve_mpc, OracleResult};
use crate::qp::MpcProblem;
use crate::quantize::Quantizer;
use crate::solver::{auto_alpha, run, IterTrace, SolverConfig, StepRate};

/// Graph and penalized problem described by a config.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<(CommGraph, MpcProblem)> {
    let graph = cfg.graph.build()?;
    let problem = MpcProblem::new(
        cfg.scenario.clone(),
        cfg.weights.clone(),
        cfg.penalty.spec(),
        cfg.penalty.split,
    )?;
    Ok((graph, problem))
}

pub fn resolve_alpha(solver: &SolverConfig, graph: &CommGraph, problem: &MpcProblem) -> Result<f64> {
    match solver.alpha {
        StepRate::Fixed(a) => Ok(a),
        StepRate::Auto => auto_alpha(graph, problem, solver.lipschitz_radius),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub cost: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub consensus_residual: f64,
    pub tracking_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    pub label: String,
    pub quantizer: Quantizer,
    pub alpha: f64,
    pub initial: IterTrace,
    /// One entry per executed round.
    pub traces: Vec<IterTrace>,
    pub final_metrics: FinalMetrics,
    /// Largest consensus-increment sum relative to the state scale.
    pub worst_imbalance: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub oracle: OracleResult,
    pub variants: Vec<VariantReport>,
}

impl RunReport {
    pub fn variant(&self, label: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.label == label)
    }
}

/// Runs every sweep variant against a single oracle solve.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_variants(cfg, &cfg.variants())
}

/// Runs only the solver's own quantizer, ignoring the sweep.
pub fn run_single(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_variants(cfg, std::slice::from_ref(&cfg.solver))
}

pub fn run_variants(cfg: &ExperimentConfig, variants: &[SolverConfig]) -> Result<RunReport> {
    let (graph, problem) = build_problem(cfg)?;
    let oracle = solve_mpc(&problem)?;
    let f_star = oracle.f_star;
    let results: Vec<Result<VariantReport>> = variants
        .par_iter()
        .map(|solver| {
            let label = solver.quantizer.label();
            run_variant(&graph, &problem, solver, f_star).map_err(|e| Error::Variant {
                variant: label,
                source: Box::new(e),
            })
        })
        .collect();
    let variants = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        config: cfg.clone(),
        oracle,
        variants,
    })
}

fn run_variant(
    graph: &CommGraph,
    problem: &MpcProblem,
    solver: &SolverConfig,
    f_star: f64,
) -> Result<VariantReport> {
    let start = Instant::now();
    let alpha = resolve_alpha(solver, graph, problem)?;
    let out = run(graph, problem, solver, alpha, Some(f_star))?;
    let last = out.traces.last().copied().unwrap_or(out.initial);
    let gap = last.gap.unwrap_or(f64::NAN);
    Ok(VariantReport {
        label: solver.quantizer.label(),
        quantizer: solver.quantizer,
        alpha,
        initial: out.initial,
        final_metrics: FinalMetrics {
            cost: last.cost,
            gap,
            relative_gap: relative_gap(gap, f_star),
            consensus_residual: last.consensus_residual,
            tracking_residual: last.tracking_residual,
        },
        traces: out.traces,
        worst_imbalance: out.worst_imbalance,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
