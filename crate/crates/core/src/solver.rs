//! Quantized distributed gradient tracking.
//!
//! Every node keeps a full copy `x_i` of the stacked decision vector and an
//! auxiliary `z_i` that accumulates local gradient differences. One round is
//!
//! ```text
//! x_i <- x_i + sum_j w_ij (q(x_j) - q(x_i)) - alpha z_i
//! z_i <- z_i + sum_j w_ij (q(z_j) - q(z_i)) + grad F_i(x_i_new) - grad F_i(x_i)
//! ```
//!
//! where all messages are taken from the start of the round.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::{step_bound, CommGraph};
use crate::oracle::{norm, optimality_gap};
use crate::qp::MpcProblem;
use crate::quantize::Quantizer;

/// A sum of per-node objectives `F = sum_i F_i` over a common variable.
pub trait LocalObjectives: Sync {
    fn nodes(&self) -> usize;
    fn dim(&self) -> usize;
    fn local_value(&self, i: usize, x: &[f64]) -> f64;
    /// Overwrites `out` with the gradient of `F_i` at `x`.
    fn local_gradient(&self, i: usize, x: &[f64], out: &mut [f64]);

    fn total_value(&self, x: &[f64]) -> f64 {
        (0..self.nodes()).map(|i| self.local_value(i, x)).sum()
    }
}

impl LocalObjectives for MpcProblem {
    fn nodes(&self) -> usize {
        self.vehicles()
    }

    fn dim(&self) -> usize {
        MpcProblem::dim(self)
    }

    fn local_value(&self, i: usize, x: &[f64]) -> f64 {
        self.local_quadratic(i, x) + self.local_penalty(i, x)
    }

    fn local_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.local_gradient_into(i, x, out)
    }

    fn total_value(&self, x: &[f64]) -> f64 {
        self.objective(x)
    }
}

/// Initial value of the tracking variable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZInit {
    /// `z_i(0) = 0`.
    #[default]
    Zero,
    /// `z_i(0) = grad F_i(x_i(0))`.
    Gradient,
}

/// Step rate, either a number or `"auto"` for the spectral bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepRate {
    #[default]
    Auto,
    Fixed(f64),
}

impl fmt::Display for StepRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepRate::Auto => f.write_str("auto"),
            StepRate::Fixed(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for StepRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepRate::Auto => s.serialize_str("auto"),
            StepRate::Fixed(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for StepRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(StepRate::Fixed(a)),
            Raw::Text(t) if t == "auto" => Ok(StepRate::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: StepRate,
    pub iters: usize,
    #[serde(flatten)]
    pub quantizer: Quantizer,
    pub seed: u64,
    pub init_scale: f64,
    pub divergence_threshold: f64,
    pub z_init: ZInit,
    /// Radius of the ball on which the gradient Lipschitz bound is estimated
    /// when `alpha` is `auto`.
    pub lipschitz_radius: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: StepRate::Auto,
            iters: 1000,
            quantizer: Quantizer::identity(),
            seed: 0,
            init_scale: 1.0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            z_init: ZInit::Zero,
            lipschitz_radius: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let StepRate::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParameter(format!("alpha must be positive, got {a}")));
            }
        }
        if self.iters == 0 {
            return Err(Error::InvalidParameter("iters must be at least 1".into()));
        }
        self.quantizer.validate()?;
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "init_scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "divergence_threshold must be positive, got {}",
                self.divergence_threshold
            )));
        }
        if !(self.lipschitz_radius > 0.0 && self.lipschitz_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lipschitz_radius must be positive, got {}",
                self.lipschitz_radius
            )));
        }
        Ok(())
    }
}

/// Spectral step rate `|lambda_2| / eta` for the MPC objective on `graph`.
pub fn auto_alpha(graph: &CommGraph, problem: &MpcProblem, radius: f64) -> Result<f64> {
    let eta = problem.lipschitz_estimate(radius)?;
    step_bound(&graph.spectrum()?, eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Cached `grad F_i(x)`.
    pub grad: Vec<f64>,
}

/// Random copies, uniform on `[-init_scale, init_scale]` per coordinate, and
/// `z` per `z_init`. Node `i` draws its coordinates after node `i - 1`.
pub fn init_states<F: LocalObjectives + ?Sized>(config: &SolverConfig, objective: &F) -> Vec<NodeState> {
    let (n, p) = (objective.nodes(), objective.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..p)
                .map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
                .collect();
            let mut grad = vec![0.0; p];
            objective.local_gradient(i, &x, &mut grad);
            let z = match config.z_init {
                ZInit::Zero => vec![0.0; p],
                ZInit::Gradient => grad.clone(),
            };
            NodeState { x, z, grad }
        })
        .collect()
}

/// Per-round sums of the consensus increments and the magnitudes they were
/// formed from. Under weight balance the sums vanish up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub x_imbalance: f64,
    pub x_scale: f64,
    pub z_imbalance: f64,
    pub z_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterTrace {
    pub iter: usize,
    pub cost: f64,
    pub gap: Option<f64>,
    pub consensus_residual: f64,
    pub tracking_residual: f64,
}

/// Synchronous gradient-tracking engine.
pub struct GtEngine<'a, F: LocalObjectives + ?Sized> {
    graph: &'a CommGraph,
    objective: &'a F,
    alpha: f64,
    quantizer: Quantizer,
    divergence_threshold: f64,
    states: Vec<NodeState>,
    round: usize,
    z0_sum: Vec<f64>,
    grad0_sum: Vec<f64>,
    qx: Vec<Vec<f64>>,
    qz: Vec<Vec<f64>>,
    inc: Vec<f64>,
    new_grad: Vec<f64>,
}

impl<'a, F: LocalObjectives + ?Sized> GtEngine<'a, F> {
    pub fn with_states(
        graph: &'a CommGraph,
        objective: &'a F,
        alpha: f64,
        quantizer: Quantizer,
        divergence_threshold: f64,
        states: Vec<NodeState>,
    ) -> Result<Self> {
        let (n, p) = (objective.nodes(), objective.dim());
        if graph.node_count() != n {
            return Err(Error::InvalidInput(format!(
                "graph has {} nodes but the objective has {n}",
                graph.node_count()
            )));
        }
        if states.len() != n
            || states
                .iter()
                .any(|s| s.x.len() != p || s.z.len() != p || s.grad.len() != p)
        {
            return Err(Error::InvalidInput(format!(
                "expected {n} node states of dimension {p}"
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
        }
        quantizer.validate()?;
        let z0_sum = column_sum(states.iter().map(|s| &s.z), p);
        let grad0_sum = column_sum(states.iter().map(|s| &s.grad), p);
        Ok(GtEngine {
            graph,
            objective,
            alpha,
            quantizer,
            divergence_threshold,
            states,
            round: 0,
            z0_sum,
            grad0_sum,
            qx: vec![vec![0.0; p]; n],
            qz: vec![vec![0.0; p]; n],
            inc: vec![0.0; p],
            new_grad: vec![0.0; p],
        })
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn into_states(self) -> Vec<NodeState> {
        self.states
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Executes one synchronous round.
    pub fn step(&mut self) -> Result<RoundStats> {
        let p = self.objective.dim();
        for (s, (qx, qz)) in self.states.iter().zip(self.qx.iter_mut().zip(self.qz.iter_mut())) {
            self.quantizer.apply_into(&s.x, qx);
            self.quantizer.apply_into(&s.z, qz);
        }
        let mut x_sum = vec![0.0; p];
        let mut z_sum = vec![0.0; p];
        let x_scale = self.message_scale(&self.qx);
        let z_scale = self.message_scale(&self.qz);

        for i in 0..self.states.len() {
            self.graph.consensus_increment(i, &self.qx, &mut self.inc);
            let s = &mut self.states[i];
            for ((x, (&d, &z)), acc) in s.x.iter_mut().zip(self.inc.iter().zip(&s.z)).zip(&mut x_sum) {
                *x += d - self.alpha * z;
                *acc += d;
            }
        }
        for i in 0..self.states.len() {
            self.graph.consensus_increment(i, &self.qz, &mut self.inc);
            self.objective.local_gradient(i, &self.states[i].x, &mut self.new_grad);
            let s = &mut self.states[i];
            for (((z, &d), (&gn, go)), acc) in s
                .z
                .iter_mut()
                .zip(&self.inc)
                .zip(self.new_grad.iter().zip(s.grad.iter_mut()))
                .zip(&mut z_sum)
            {
                *z += d + gn - *go;
                *go = gn;
                *acc += d;
            }
        }
        self.round += 1;

        let worst = self
            .states
            .iter()
            .map(|s| norm(&s.x).max(norm(&s.z)))
            .fold(0.0f64, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) });
        if !(worst <= self.divergence_threshold) {
            return Err(Error::Divergence {
                iteration: self.round,
                norm: worst,
                threshold: self.divergence_threshold,
            });
        }
        Ok(RoundStats {
            x_imbalance: max_abs(&x_sum),
            x_scale,
            z_imbalance: max_abs(&z_sum),
            z_scale,
        })
    }

    /// `sum_i sum_j w_ij (|q_j|_inf + |q_i|_inf)`, the magnitude the increments
    /// are accumulated from.
    fn message_scale(&self, msgs: &[Vec<f64>]) -> f64 {
        let mags: Vec<f64> = msgs.iter().map(|m| max_abs(m)).collect();
        (0..msgs.len())
            .map(|i| {
                self.graph
                    .neighbors(i)
                    .iter()
                    .map(|&(j, w)| w * (mags[j] + mags[i]))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Network average of the decision copies.
    pub fn average(&self) -> Vec<f64> {
        let n = self.states.len() as f64;
        let mut avg = column_sum(self.states.iter().map(|s| &s.x), self.objective.dim());
        avg.iter_mut().for_each(|v| *v /= n);
        avg
    }

    pub fn consensus_residual(&self, avg: &[f64]) -> f64 {
        self.states
            .iter()
            .map(|s| s.x.iter().zip(avg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `|sum z - sum z(0) - (sum grad - sum grad(0))|`; with `z(0) = 0` this is
    /// `|sum z - (sum grad - sum grad(0))|`.
    pub fn tracking_residual(&self) -> f64 {
        tracking_residual(&self.states, &self.z0_sum, &self.grad0_sum)
    }

    /// Norm of the summed cached gradients `sum_i grad F_i(x_i)`.
    pub fn gradient_sum_norm(&self) -> f64 {
        norm(&column_sum(
            self.states.iter().map(|s| &s.grad),
            self.objective.dim(),
        ))
    }

    pub fn trace(&self, f_star: Option<f64>) -> Result<IterTrace> {
        let avg = self.average();
        let cost = self.objective.total_value(&avg);
        let gap = f_star.map(|f| optimality_gap(cost, f).map(|g| g.value)).transpose()?;
        Ok(IterTrace {
            iter: self.round,
            cost,
            gap,
            consensus_residual: self.consensus_residual(&avg),
            tracking_residual: self.tracking_residual(),
        })
    }
}

pub fn tracking_residual(states: &[NodeState], z0_sum: &[f64], grad0_sum: &[f64]) -> f64 {
    let p = z0_sum.len();
    let z = column_sum(states.iter().map(|s| &s.z), p);
    let g = column_sum(states.iter().map(|s| &s.grad), p);
    (0..p)
        .map(|k| ((z[k] - z0_sum[k]) - (g[k] - grad0_sum[k])).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn column_sum<'v>(rows: impl Iterator<Item = &'v Vec<f64>>, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Record of the starting point, `iter = 0`.
    pub initial: IterTrace,
    /// One record per executed round, `iter = 1..=iters`.
    pub traces: Vec<IterTrace>,
    pub states: Vec<NodeState>,
    pub average: Vec<f64>,
    pub alpha: f64,
    /// Largest `imbalance / scale` seen over all rounds, for x and z.
    pub worst_imbalance: f64,
}

/// Runs `config.iters` rounds from [`init_states`], recording a trace per round.
///
/// `alpha` must already be resolved; `config.alpha` is ignored here.
pub fn run<F: LocalObjectives + ?Sized>(
    graph: &CommGraph,
    objective: &F,
    config: &SolverConfig,
    alpha: f64,
    f_star: Option<f64>,
) -> Result<RunOutcome> {
    config.validate()?;
    let states = init_states(config, objective);
    let mut engine = GtEngine::with_states(
        graph,
        objective,
        alpha,
        config.quantizer,
        config.divergence_threshold,
        states,
    )?;
    let initial = engine.trace(f_star)?;
    let mut traces = Vec::with_capacity(config.iters);
    let mut worst_imbalance = 0.0f64;
    for _ in 0..config.iters {
        let st = engine.step()?;
        worst_imbalance = worst_imbalance
            .max(st.x_imbalance / st.x_scale.max(f64::MIN_POSITIVE))
            .max(st.z_imbalance / st.z_scale.max(f64::MIN_POSITIVE));
        traces.push(engine.trace(f_star)?);
    }
    let average = engine.average();
    Ok(RunOutcome {
        initial,
        traces,
        states: engine.into_states(),
        average,
        alpha,
        worst_imbalance,
    })
}
