//! Experiment configuration: a JSON document with sections for the scenario,
//! graph, weights, penalty, solver, sweep and output directory.
//!
//! Loading resolves every shorthand (initial spacing, scalar or random
//! weights, defaults) so the validated [`ExperimentConfig`] serializes to an
//! explicit snapshot that loads back to the same value.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::platoon::{Leader, Limits, PlatoonScenario};
use crate::qp::{CostWeights, PenaltySpec, Split};
use crate::quantize::{Quantizer, QuantizerKind};
use crate::solver::{SolverConfig, StepRate, ZInit, DEFAULT_DIVERGENCE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub sigma: u32,
    pub lambda: f64,
    pub split: Split,
}

impl PenaltyConfig {
    pub fn spec(&self) -> PenaltySpec {
        PenaltySpec {
            sigma: self.sigma,
            lambda: self.lambda,
        }
    }
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            sigma: 2,
            lambda: 1.0,
            split: Split::PerVehicle,
        }
    }
}

/// Fully resolved and validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: PlatoonScenario,
    pub graph: GraphSpec,
    pub weights: CostWeights,
    pub penalty: PenaltyConfig,
    pub solver: SolverConfig,
    /// Quantizers to compare; empty means the solver's own quantizer only.
    pub sweep: Vec<Quantizer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Solver settings for each variant, in sweep order.
    pub fn variants(&self) -> Vec<SolverConfig> {
        if self.sweep.is_empty() {
            return vec![self.solver.clone()];
        }
        self.sweep
            .iter()
            .map(|&quantizer| SolverConfig {
                quantizer,
                ..self.solver.clone()
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Re-runs validation on an already built config, e.g. after overrides.
    pub fn validate(&self) -> Result<()> {
        let raw: RawConfig = serde_json::from_value(serde_json::to_value(self).expect("config serializes"))
            .map_err(|e| Error::config("config", e.to_string()))?;
        raw.resolve().map(|_| ())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.resolve()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<RawScenario>,
    graph: Option<GraphSpec>,
    weights: Option<RawWeights>,
    penalty: Option<RawPenalty>,
    solver: Option<RawSolver>,
    sweep: Option<Vec<RawVariant>>,
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n: Option<usize>,
    tau: Option<f64>,
    horizon: Option<usize>,
    delta: Option<f64>,
    length: Option<f64>,
    reaction_time: Option<f64>,
    limits: Option<RawLimits>,
    leader: Option<RawLeader>,
    /// Equal spacing and common speed, as an alternative to explicit arrays.
    init: Option<RawInit>,
    positions: Option<Vec<f64>>,
    velocities: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    v_min: Option<f64>,
    v_max: Option<f64>,
    a_min: Option<f64>,
    a_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLeader {
    p0: Option<f64>,
    v0: Option<f64>,
    u0: Option<ScalarOrVec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    gap: f64,
    speed: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    qu: Option<WeightSpec>,
    qp: Option<WeightSpec>,
    qv: Option<WeightSpec>,
}

/// One diagonal weight family, `horizon x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    /// Per vehicle, repeated over the horizon.
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
    /// Independent uniform draws on `[low, high)`.
    Random { low: f64, high: f64, seed: u64 },
}

impl WeightSpec {
    fn resolve(&self, field: &str, horizon: usize, n: usize) -> Result<Vec<Vec<f64>>> {
        let m = match self {
            WeightSpec::Scalar(q) => vec![vec![*q; n]; horizon],
            WeightSpec::Vector(v) => {
                if v.len() != n {
                    return Err(Error::config(field, format!("must list {n} per-vehicle weights, got {}", v.len())));
                }
                vec![v.clone(); horizon]
            }
            WeightSpec::Matrix(m) => {
                if m.len() != horizon || m.iter().any(|r| r.len() != n) {
                    return Err(Error::config(field, format!("must be a {horizon} x {n} matrix")));
                }
                m.clone()
            }
            WeightSpec::Random { low, high, seed } => {
                if !(0.0 <= *low && low < high && high.is_finite()) {
                    return Err(Error::config(field, "random range must satisfy 0 <= low < high"));
                }
                random_weights(horizon, n, *low, *high, *seed)
            }
        };
        if let Some(q) = m.iter().flatten().find(|q| !(**q >= 0.0 && q.is_finite())) {
            return Err(Error::config(field, format!("weights must be non-negative and finite, got {q}")));
        }
        Ok(m)
    }
}

/// `horizon x n` draws, row by row, uniform on `[low, high)`.
pub fn random_weights(horizon: usize, n: usize, low: f64, high: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|_| (0..n).map(|_| rng.random_range(low..high)).collect())
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPenalty {
    sigma: Option<u32>,
    lambda: Option<f64>,
    split: Option<Split>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    alpha: Option<StepRate>,
    iters: Option<usize>,
    quantizer: Option<QuantizerKind>,
    rho: Option<f64>,
    seed: Option<u64>,
    init_scale: Option<f64>,
    divergence_threshold: Option<f64>,
    z_init: Option<ZInit>,
    lipschitz_radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariant {
    quantizer: QuantizerKind,
    rho: Option<f64>,
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "is required"))
}

fn positive(v: f64, field: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

fn quantizer(kind: QuantizerKind, rho: Option<f64>, field: &str) -> Result<Quantizer> {
    let q = Quantizer {
        kind,
        rho: match kind {
            QuantizerKind::None => rho.unwrap_or(0.0),
            _ => required(rho, &format!("{field}.rho"))?,
        },
    };
    q.validate()
        .map_err(|_| Error::config(format!("{field}.rho"), format!("must be positive for the {kind} quantizer, got {}", q.rho)))?;
    Ok(q)
}

impl RawScenario {
    fn resolve(self) -> Result<PlatoonScenario> {
        let n = required(self.n, "scenario.n")?;
        if n == 0 {
            return Err(Error::config("scenario.n", "must be at least 1"));
        }
        let tau = positive(required(self.tau, "scenario.tau")?, "scenario.tau")?;
        let horizon = required(self.horizon, "scenario.horizon")?;
        if horizon == 0 {
            return Err(Error::config("scenario.horizon", "must be at least 1"));
        }
        let delta = positive(required(self.delta, "scenario.delta")?, "scenario.delta")?;
        let length = positive(required(self.length, "scenario.length")?, "scenario.length")?;
        let reaction_time = required(self.reaction_time, "scenario.reaction_time")?;
        if !(reaction_time >= 0.0 && reaction_time.is_finite()) {
            return Err(Error::config("scenario.reaction_time", "must be non-negative"));
        }
        let lim = required(self.limits, "scenario.limits")?;
        let limits = Limits {
            v_min: required(lim.v_min, "scenario.limits.v_min")?,
            v_max: required(lim.v_max, "scenario.limits.v_max")?,
            a_min: required(lim.a_min, "scenario.limits.a_min")?,
            a_max: required(lim.a_max, "scenario.limits.a_max")?,
        };
        if !(limits.v_min < limits.v_max) {
            return Err(Error::config("scenario.limits", "must satisfy v_min < v_max"));
        }
        if !(limits.a_min < 0.0 && 0.0 < limits.a_max) {
            return Err(Error::config("scenario.limits", "must satisfy a_min < 0 < a_max"));
        }

        let leader = required(self.leader, "scenario.leader")?;
        let p0 = leader.p0.unwrap_or(0.0);
        let v0 = match (leader.v0, &self.init) {
            (Some(v), _) => v,
            (None, Some(init)) => init.speed,
            (None, None) => return Err(Error::config("scenario.leader.v0", "is required")),
        };
        let u0 = match leader.u0 {
            None => vec![0.0; horizon],
            Some(ScalarOrVec::Scalar(u)) => vec![u; horizon],
            Some(ScalarOrVec::Vector(u)) if u.len() == horizon => u,
            Some(ScalarOrVec::Vector(u)) => {
                return Err(Error::config(
                    "scenario.leader.u0",
                    format!("must have {horizon} entries, got {}", u.len()),
                ))
            }
        };

        let (positions, velocities) = match (self.init, self.positions, self.velocities) {
            (Some(init), None, None) => {
                positive(init.gap, "scenario.init.gap")?;
                (
                    (1..=n).map(|i| p0 - init.gap * i as f64).collect(),
                    vec![init.speed; n],
                )
            }
            (None, Some(p), Some(v)) => {
                for (name, arr) in [("positions", &p), ("velocities", &v)] {
                    if arr.len() != n {
                        return Err(Error::config(
                            format!("scenario.{name}"),
                            format!("must list {n} followers, got {}", arr.len()),
                        ));
                    }
                }
                (p, v)
            }
            (Some(_), _, _) => {
                return Err(Error::config("scenario.init", "cannot be combined with positions/velocities"))
            }
            _ => {
                return Err(Error::config(
                    "scenario.init",
                    "is required unless both positions and velocities are given",
                ))
            }
        };

        let scn = PlatoonScenario {
            n,
            tau,
            horizon,
            delta,
            length,
            reaction_time,
            limits,
            leader: Leader { p0, v0, u0 },
            positions,
            velocities,
        };
        scn.validate().map_err(|e| Error::config("scenario", e.to_string()))?;
        Ok(scn)
    }
}

impl RawSolver {
    fn resolve(self) -> Result<SolverConfig> {
        let d = SolverConfig::default();
        let alpha = self.alpha.unwrap_or(d.alpha);
        if let StepRate::Fixed(a) = alpha {
            positive(a, "solver.alpha")?;
        }
        let iters = self.iters.unwrap_or(d.iters);
        if iters == 0 {
            return Err(Error::config("solver.iters", "must be at least 1"));
        }
        let q = quantizer(self.quantizer.unwrap_or(QuantizerKind::None), self.rho, "solver")?;
        let init_scale = self.init_scale.unwrap_or(d.init_scale);
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::config("solver.init_scale", "must be non-negative"));
        }
        Ok(SolverConfig {
            alpha,
            iters,
            quantizer: q,
            seed: self.seed.unwrap_or(d.seed),
            init_scale,
            divergence_threshold: positive(
                self.divergence_threshold.unwrap_or(DEFAULT_DIVERGENCE_THRESHOLD),
                "solver.divergence_threshold",
            )?,
            z_init: self.z_init.unwrap_or(d.z_init),
            lipschitz_radius: positive(
                self.lipschitz_radius.unwrap_or(d.lipschitz_radius),
                "solver.lipschitz_radius",
            )?,
        })
    }
}

impl RawConfig {
    fn resolve(self) -> Result<ExperimentConfig> {
        let scenario = required(self.scenario, "scenario")?.resolve()?;
        let (n, t) = (scenario.n, scenario.horizon);

        let graph = required(self.graph, "graph")?;
        let built = graph.build().map_err(|e| Error::config("graph", e.to_string()))?;
        if built.node_count() != n {
            return Err(Error::config(
                "graph",
                format!("has {} nodes but the platoon has {n} followers", built.node_count()),
            ));
        }

        let w = self.weights.unwrap_or(RawWeights {
            qu: None,
            qp: None,
            qv: None,
        });
        let one = WeightSpec::Scalar(1.0);
        let weights = CostWeights {
            qu: w.qu.as_ref().unwrap_or(&one).resolve("weights.qu", t, n)?,
            qp: w.qp.as_ref().unwrap_or(&one).resolve("weights.qp", t, n)?,
            qv: w.qv.as_ref().unwrap_or(&one).resolve("weights.qv", t, n)?,
        };

        let d = PenaltyConfig::default();
        let penalty = match self.penalty {
            None => d,
            Some(p) => PenaltyConfig {
                sigma: p.sigma.unwrap_or(d.sigma),
                lambda: p.lambda.unwrap_or(d.lambda),
                split: p.split.unwrap_or(d.split),
            },
        };
        if penalty.sigma < 1 {
            return Err(Error::config("penalty.sigma", "must be at least 1"));
        }
        positive(penalty.lambda, "penalty.lambda")?;

        let solver = match self.solver {
            Some(s) => s.resolve()?,
            None => SolverConfig::default(),
        };

        let mut sweep = Vec::new();
        let mut seen = HashSet::new();
        for (k, v) in self.sweep.unwrap_or_default().into_iter().enumerate() {
            let field = format!("sweep[{k}]");
            let q = quantizer(v.quantizer, v.rho, &field)?;
            let q = if q.kind == QuantizerKind::None { Quantizer::identity() } else { q };
            if !seen.insert(q.label()) {
                return Err(Error::config(field, format!("duplicates variant `{}`", q.label())));
            }
            sweep.push(q);
        }

        Ok(ExperimentConfig {
            scenario,
            graph,
            weights,
            penalty,
            solver,
            sweep,
            output: self.output,
        })
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 2] = ["paper-fig2", "paper-fig3"];

/// Shared scenario of the two reference experiments: ten followers on a
/// directed ring, five-step horizon, squared penalties with unit weight.
fn reference_config(sweep: Vec<Quantizer>) -> ExperimentConfig {
    let (n, horizon) = (10, 5);
    let (gap, speed) = (20.3, 5.0);
    ExperimentConfig {
        scenario: PlatoonScenario {
            n,
            tau: 0.1,
            horizon,
            delta: 20.0,
            length: 4.0,
            reaction_time: 0.5,
            limits: Limits {
                v_min: 0.0,
                v_max: 30.0,
                a_min: -3.0,
                a_max: 3.0,
            },
            leader: Leader {
                p0: 0.0,
                v0: speed,
                u0: vec![0.0; horizon],
            },
            positions: (1..=n).map(|i| -gap * i as f64).collect(),
            velocities: vec![speed; n],
        },
        graph: GraphSpec::Cycle { n, weight: 0.45 },
        weights: CostWeights {
            qu: random_weights(horizon, n, 50.0, 150.0, 7),
            qp: random_weights(horizon, n, 0.5, 1.5, 8),
            qv: random_weights(horizon, n, 0.5, 1.5, 9),
        },
        penalty: PenaltyConfig::default(),
        solver: SolverConfig {
            alpha: StepRate::Auto,
            iters: 100_000,
            quantizer: Quantizer::identity(),
            seed: 1,
            init_scale: 0.1,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            z_init: ZInit::Gradient,
            lipschitz_radius: 10.0,
        },
        sweep,
        output: None,
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let q = |kind, rho| Quantizer { kind, rho };
    match name {
        "paper-fig2" => Ok(reference_config(vec![
            q(QuantizerKind::Log, 1.0 / 8.0),
            q(QuantizerKind::Log, 1.0 / 32.0),
            q(QuantizerKind::Log, 1.0 / 128.0),
        ])),
        "paper-fig3" => Ok(reference_config(vec![
            q(QuantizerKind::Log, 0.0625),
            q(QuantizerKind::Uniform, 0.0625),
        ])),
        other => Err(Error::config(
            "preset",
            format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CommGraph;

    const MINIMAL: &str = r#"{
        "scenario": {
            "n": 3, "tau": 0.1, "horizon": 2, "delta": 20, "length": 4, "reaction_time": 0.5,
            "limits": {"v_min": 0, "v_max": 30, "a_min": -3, "a_max": 3},
            "leader": {"v0": 10},
            "init": {"gap": 30, "speed": 10}
        },
        "graph": {"topology": "cycle", "n": 3, "weight": 0.4},
        "weights": {"qu": 2.0, "qp": [1, 2, 3], "qv": {"low": 0.5, "high": 1.5, "seed": 3}},
        "solver": {"quantizer": "log", "rho": 0.1, "alpha": 0.01}
    }"#;

    #[test]
    fn shorthand_is_expanded() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.scenario.positions, vec![-30.0, -60.0, -90.0]);
        assert_eq!(cfg.scenario.leader.u0, vec![0.0, 0.0]);
        assert_eq!(cfg.weights.qu, vec![vec![2.0; 3]; 2]);
        assert_eq!(cfg.weights.qp[1], vec![1.0, 2.0, 3.0]);
        assert!(cfg.weights.qv.iter().flatten().all(|&q| (0.5..1.5).contains(&q)));
        assert_eq!(cfg.penalty, PenaltyConfig::default());
        assert_eq!(cfg.solver.alpha, StepRate::Fixed(0.01));
        assert_eq!(cfg.solver.quantizer, Quantizer::log(0.1).unwrap());
        assert_eq!(cfg.variants().len(), 1);
    }

    #[test]
    fn snapshot_round_trips() {
        for cfg in [parse_config(MINIMAL).unwrap(), preset("paper-fig2").unwrap()] {
            let back = parse_config(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn missing_tau_names_the_field() {
        let text = MINIMAL.replace(r#""tau": 0.1, "#, "");
        match parse_config(&text) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "scenario.tau"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = MINIMAL.replace(r#""horizon": 2,"#, r#""horizon": 2,,"#);
        match parse_config(&text) {
            Err(Error::ConfigParse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cases = [
            (MINIMAL.replace(r#""n": 3, "weight""#, r#""n": 4, "weight""#), "graph"),
            (MINIMAL.replace(r#""qp": [1, 2, 3]"#, r#""qp": [1, 2]"#), "weights.qp"),
            (MINIMAL.replace(r#""rho": 0.1"#, r#""rho": -0.1"#), "solver.rho"),
            (MINIMAL.replace(r#""alpha": 0.01"#, r#""alpha": 0"#), "solver.alpha"),
            (MINIMAL.replace(r#""gap": 30"#, r#""gap": 5"#), "scenario"),
        ];
        for (text, expect) in cases {
            match parse_config(&text) {
                Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, expect),
                other => panic!("{expect}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicate_sweep_entries_are_rejected() {
        let text = MINIMAL.replace(
            r#""solver""#,
            r#""sweep": [{"quantizer": "log", "rho": 0.5}, {"quantizer": "log", "rho": 0.5}], "solver""#,
        );
        match parse_config(&text) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "sweep[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn presets_match_the_reference_setup() {
        let fig2 = preset("paper-fig2").unwrap();
        assert_eq!((fig2.scenario.n, fig2.scenario.horizon), (10, 5));
        assert_eq!(fig2.penalty.spec(), PenaltySpec { sigma: 2, lambda: 1.0 });
        let rhos: Vec<f64> = fig2.sweep.iter().map(|q| q.rho).collect();
        assert_eq!(rhos, vec![0.125, 0.03125, 0.0078125]);
        assert!(fig2.sweep.iter().all(|q| q.kind == QuantizerKind::Log));
        let ring = fig2.graph.build().unwrap();
        assert_eq!(ring, CommGraph::cycle(10, 0.45).unwrap());

        let fig3 = preset("paper-fig3").unwrap();
        assert_eq!(fig3.scenario, fig2.scenario);
        assert_eq!(fig3.weights, fig2.weights);
        assert_eq!(
            fig3.sweep,
            vec![Quantizer::log(0.0625).unwrap(), Quantizer::uniform(0.0625).unwrap()]
        );
        assert!(preset("paper-fig4").is_err());
    }
}
