//! Leader-plus-followers platoon with double-integrator vehicles.
//!
//! Vehicle `0` is the leader, vehicles `1..=n` are the followers. Follower `i`
//! keeps station behind vehicle `i - 1`; the spacing requirement is
//! `p[i-1] - p[i] >= l + eps v[i] - (v[i] - v_min)^2 / (2 a_min)`.
//!
//! Input plans use the stacked layout `y = (y_1, ..., y_n)` with
//! `y_i = (u_i(k), ..., u_i(k+T-1))`, i.e. `y[(i-1) * T + h] = u_i(k+h)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leader {
    pub p0: f64,
    pub v0: f64,
    /// Leader input over the horizon, one entry per step.
    pub u0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonScenario {
    /// Number of followers.
    pub n: usize,
    /// Sampling time in seconds.
    pub tau: f64,
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Desired spacing in meters.
    pub delta: f64,
    /// Vehicle length in meters.
    pub length: f64,
    /// Reaction time in seconds.
    pub reaction_time: f64,
    pub limits: Limits,
    pub leader: Leader,
    /// Follower positions at time k.
    pub positions: Vec<f64>,
    /// Follower velocities at time k.
    pub velocities: Vec<f64>,
}

/// A constraint violated by a platoon state.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Velocity { vehicle: usize, value: f64 },
    Acceleration { vehicle: usize, value: f64 },
    Spacing { vehicle: usize, gap: f64, required: f64 },
}

/// Relative errors between adjacent vehicles; entry `i - 1` belongs to follower `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVectors {
    pub e_p: Vec<f64>,
    pub e_v: Vec<f64>,
    pub e_u: Vec<f64>,
}

/// Positions and velocities of all `n + 1` vehicles at steps `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrices {
    /// Lower-triangular all-ones matrix.
    pub s: DMatrix<f64>,
    /// Its inverse: ones on the diagonal, minus ones on the first subdiagonal.
    pub s_inv: DMatrix<f64>,
}

#[inline]
pub fn step_dynamics(p: f64, v: f64, u: f64, tau: f64) -> (f64, f64) {
    (p + tau * v + 0.5 * tau * tau * u, v + tau * u)
}

pub fn structure_matrices(n: usize) -> StructureMatrices {
    let s = DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 });
    let s_inv = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if i == j + 1 {
            -1.0
        } else {
            0.0
        }
    });
    StructureMatrices { s, s_inv }
}

impl PlatoonScenario {
    /// Dimension `nT` of the stacked input plan.
    pub fn dim(&self) -> usize {
        self.n * self.horizon
    }

    /// Minimum predecessor gap for a follower driving at `v`.
    pub fn required_gap(&self, v: f64) -> f64 {
        let dv = v - self.limits.v_min;
        self.length + self.reaction_time * v - dv * dv / (2.0 * self.limits.a_min)
    }

    /// Position and velocity of vehicle `i` (0 = leader) at time k.
    pub fn initial_state(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            (self.leader.p0, self.leader.v0)
        } else {
            (self.positions[i - 1], self.velocities[i - 1])
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        let l = &self.limits;
        if self.n == 0 {
            return bad("platoon needs at least one follower");
        }
        if !(self.tau > 0.0) {
            return bad("sampling time must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step");
        }
        if !(l.a_min < 0.0 && 0.0 < l.a_max) {
            return bad("acceleration limits must satisfy a_min < 0 < a_max");
        }
        if !(l.v_min < l.v_max) {
            return bad("velocity limits must satisfy v_min < v_max");
        }
        if !(self.length > 0.0) {
            return bad("vehicle length must be positive");
        }
        if !(self.reaction_time >= 0.0) {
            return bad("reaction time must be non-negative");
        }
        if self.leader.u0.len() != self.horizon {
            return Err(Error::InvalidParameter(format!(
                "leader input profile has {} entries, horizon is {}",
                self.leader.u0.len(),
                self.horizon
            )));
        }
        if self.positions.len() != self.n || self.velocities.len() != self.n {
            return Err(Error::InvalidParameter(format!(
                "initial state must list {} followers",
                self.n
            )));
        }
        let (p, v) = self.full_state();
        let u = vec![0.0; self.n + 1];
        if let Some(viol) = check_constraints(self, &p, &v, &u).into_iter().next() {
            return Err(Error::InvalidParameter(format!(
                "initial state is infeasible: {viol:?}"
            )));
        }
        Ok(())
    }

    /// Leader-first position and velocity vectors at time k.
    pub fn full_state(&self) -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::with_capacity(self.n + 1);
        let mut v = Vec::with_capacity(self.n + 1);
        p.push(self.leader.p0);
        v.push(self.leader.v0);
        p.extend_from_slice(&self.positions);
        v.extend_from_slice(&self.velocities);
        (p, v)
    }
}

/// Simulates the platoon over the horizon under the stacked plan `y`.
pub fn rollout(scn: &PlatoonScenario, y: &[f64]) -> Result<Trajectory> {
    let (n, t) = (scn.n, scn.horizon);
    if y.len() != n * t {
        return Err(Error::InvalidInput(format!(
            "plan has {} entries, expected {}x{}",
            y.len(),
            n,
            t
        )));
    }
    let (p0, v0) = scn.full_state();
    let mut positions = vec![p0];
    let mut velocities = vec![v0];
    for h in 0..t {
        let (p, v) = (&positions[h], &velocities[h]);
        let mut pn = Vec::with_capacity(n + 1);
        let mut vn = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let u = if i == 0 { scn.leader.u0[h] } else { y[(i - 1) * t + h] };
            let (a, b) = step_dynamics(p[i], v[i], u, scn.tau);
            pn.push(a);
            vn.push(b);
        }
        positions.push(pn);
        velocities.push(vn);
    }
    Ok(Trajectory {
        positions,
        velocities,
    })
}

/// Errors from leader-first position, velocity and input vectors.
///
/// `e_u[j-1] = u[j-1] - u[j]`, which includes the leader difference and makes
/// `u = -S e_u + u_0 1` hold.
pub fn error_vectors(scn: &PlatoonScenario, p: &[f64], v: &[f64], u: &[f64]) -> ErrorVectors {
    let n = scn.n;
    ErrorVectors {
        e_p: (1..=n).map(|i| p[i - 1] - p[i] - scn.delta).collect(),
        e_v: (1..=n).map(|i| v[i - 1] - v[i]).collect(),
        e_u: (1..=n).map(|i| u[i - 1] - u[i]).collect(),
    }
}

/// Closed-form error prediction `m` steps ahead from the current errors and
/// the input-error sequence `e_u[h]`, `h = 0..m`.
pub fn predict_errors(
    e_p: &[f64],
    e_v: &[f64],
    e_u: &[Vec<f64>],
    tau: f64,
    m: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 || e_u.len() < m {
        return Err(Error::InvalidInput(format!(
            "prediction step {m} needs {m} input-error vectors, got {}",
            e_u.len()
        )));
    }
    let mf = m as f64;
    let mut ep: Vec<f64> = e_p.iter().zip(e_v).map(|(p, v)| p + mf * tau * v).collect();
    let mut ev = e_v.to_vec();
    for (h, eu) in e_u.iter().take(m).enumerate() {
        let coef = tau * tau * (2.0 * (m - h) as f64 - 1.0) / 2.0;
        for j in 0..ep.len() {
            ep[j] += coef * eu[j];
            ev[j] += tau * eu[j];
        }
    }
    Ok((ep, ev))
}

/// All velocity, acceleration and spacing violations of followers.
///
/// Vectors are leader-first and have `n + 1` entries.
pub fn check_constraints(scn: &PlatoonScenario, p: &[f64], v: &[f64], u: &[f64]) -> Vec<Violation> {
    let l = &scn.limits;
    let mut out = Vec::new();
    for i in 1..=scn.n {
        if v[i] < l.v_min || v[i] > l.v_max {
            out.push(Violation::Velocity {
                vehicle: i,
                value: v[i],
            });
        }
        if u[i] < l.a_min || u[i] > l.a_max {
            out.push(Violation::Acceleration {
                vehicle: i,
                value: u[i],
            });
        }
        let gap = p[i - 1] - p[i];
        let required = scn.required_gap(v[i]);
        if gap < required {
            out.push(Violation::Spacing {
                vehicle: i,
                gap,
                required,
            });
        }
    }
    out
}
