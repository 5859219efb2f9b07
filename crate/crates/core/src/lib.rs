#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod graph;
pub mod harness;
pub mod oracle;
pub mod platoon;
pub mod qp;
pub mod quantize;
pub mod solver;

pub use error::{Error, Result};
pub use graph::{CommGraph, GraphSpec};
pub use harness::{ExperimentConfig, RunReport};
pub use oracle::OracleResult;
pub use platoon::PlatoonScenario;
pub use qp::{CostWeights, MpcProblem, PenaltySpec, QpProblem, Split};
pub use quantize::{Quantizer, QuantizerKind};
pub use solver::{IterTrace, SolverConfig, StepRate, ZInit};
