//! Shared fixtures for the benchmarks in `benches/`.

use platoon_core::harness::{build_problem, preset};
use platoon_core::{CommGraph, ExperimentConfig, MpcProblem};

/// Ring graph and penalized problem of the reference preset.
pub fn reference() -> (ExperimentConfig, CommGraph, MpcProblem) {
    let cfg = preset("paper-fig2").expect("preset exists");
    let (graph, problem) = build_problem(&cfg).expect("preset is valid");
    (cfg, graph, problem)
}
