//! Reduction of the horizon-T platooning MPC cost to a quadratic program and
//! its penalized per-vehicle split.
//!
//! The MPC cost is
//!
//! ```text
//! J = 1/2 sum_m [ tau^2 u(k+m-1)' S^-T Qu_m S^-1 u(k+m-1)
//!               + e_p(k+m)' Qp_m e_p(k+m) + e_v(k+m)' Qv_m e_v(k+m) ]
//! ```
//!
//! With diagonal weights every summand is `1/2 w r(y)^2` for a scalar residual
//! `r` that is affine in the stacked plan `y`, because the predicted errors are
//! affine in the inputs. Those residual rows are built once from the prediction
//! identities; `Omega`, `c` and `d` are assembled from them, and the same rows
//! give each vehicle its exact share of the cost.
//!
//! Hard constraints (acceleration and velocity boxes, safe spacing) enter
//! through penalties `lambda * max(g, 0)^sigma`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platoon::{structure_matrices, PlatoonScenario};

/// Diagonal weight matrices, indexed `[m - 1][vehicle]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub qu: Vec<Vec<f64>>,
    pub qp: Vec<Vec<f64>>,
    pub qv: Vec<Vec<f64>>,
}

impl CostWeights {
    pub fn uniform(horizon: usize, n: usize, qu: f64, qp: f64, qv: f64) -> Self {
        CostWeights {
            qu: vec![vec![qu; n]; horizon],
            qp: vec![vec![qp; n]; horizon],
            qv: vec![vec![qv; n]; horizon],
        }
    }

    /// Independent draws, uniform on `[low, high)`, for every diagonal entry.
    pub fn random(horizon: usize, n: usize, low: f64, high: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> Vec<Vec<f64>> {
            (0..horizon)
                .map(|_| (0..n).map(|_| rng.random_range(low..high)).collect())
                .collect()
        };
        let qu = draw();
        let qp = draw();
        let qv = draw();
        CostWeights { qu, qp, qv }
    }

    pub fn validate(&self, horizon: usize, n: usize) -> Result<()> {
        for (name, w) in [("qu", &self.qu), ("qp", &self.qp), ("qv", &self.qv)] {
            if w.len() != horizon || w.iter().any(|row| row.len() != n) {
                return Err(Error::InvalidParameter(format!(
                    "weights.{name} must be {horizon} x {n}"
                )));
            }
            for (m, row) in w.iter().enumerate() {
                for (i, &q) in row.iter().enumerate() {
                    if !(q >= 0.0 && q.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "weights.{name}[{m}][{i}] = {q} is not a non-negative weight"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub sigma: u32,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 1 {
            return Err(Error::InvalidParameter("penalty exponent must be >= 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalty coefficient must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `(lambda max(g,0)^sigma, d/dg of the same)`.
#[inline]
pub fn penalty_value_grad(spec: &PenaltySpec, g: f64) -> (f64, f64) {
    if g <= 0.0 {
        return (0.0, 0.0);
    }
    match spec.sigma {
        1 => (spec.lambda * g, spec.lambda),
        2 => (spec.lambda * g * g, 2.0 * spec.lambda * g),
        s => {
            let lower = g.powi(s as i32 - 1);
            (spec.lambda * lower * g, spec.lambda * s as f64 * lower)
        }
    }
}

/// How the quadratic cost is shared among the vehicles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Vehicle i owns the i-th summand of every diagonal quadratic form.
    #[default]
    PerVehicle,
    /// Every vehicle carries `J / n`.
    Uniform,
}

/// `1/2 weight (terms . y + offset)^2`.
#[derive(Debug, Clone, PartialEq)]
struct AffineRow {
    terms: Vec<(usize, f64)>,
    offset: f64,
    weight: f64,
}

impl AffineRow {
    #[inline]
    fn residual(&self, y: &[f64]) -> f64 {
        self.terms.iter().fold(self.offset, |acc, &(j, a)| acc + a * y[j])
    }
}

/// `1/2 y' Omega y + c' y + d` over the stacked plan.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub n: usize,
    pub horizon: usize,
    pub omega: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Index of `u_i(k+h)` in the stacked plan; `vehicle` is 0-based.
    #[inline]
    pub fn index(&self, vehicle: usize, h: usize) -> usize {
        vehicle * self.horizon + h
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let yv = DVector::from_column_slice(y);
        0.5 * yv.dot(&(&self.omega * &yv)) + self.c.dot(&yv) + self.d
    }

    pub fn gradient(&self, y: &[f64]) -> DVector<f64> {
        &self.omega * DVector::from_column_slice(y) + &self.c
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.omega.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue of `Omega`.
    pub fn lipschitz(&self) -> Result<f64> {
        power_iteration(&self.omega)
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, to relative tolerance 1e-8 in the Rayleigh quotient.
pub fn power_iteration(m: &DMatrix<f64>) -> Result<f64> {
    const TOL: f64 = 1e-8;
    const MAX_ITERS: usize = 10_000;
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    // deterministic start with no special alignment to structured eigenvectors
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618).fract());
    v /= v.norm();
    let mut prev = f64::NAN;
    for _ in 0..MAX_ITERS {
        let w = m * &v;
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (rayleigh - prev).abs() <= TOL * rayleigh.abs().max(f64::MIN_POSITIVE) {
            return Ok(rayleigh.max(prev));
        }
        prev = rayleigh;
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge in {MAX_ITERS} iterations"
    )))
}

/// The closed-form block expression of the objective, for cross-checking.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    /// Time-major `nT x nT` matrix.
    pub lambda: DMatrix<f64>,
    /// Permutation taking vehicle-major plans to time-major ones.
    pub e: DMatrix<f64>,
    /// Linear term transcribed from the printed closed form, vehicle-major.
    pub c_printed: DVector<f64>,
    /// `max |E' Lambda E - Omega|`.
    pub omega_deviation: f64,
    /// `max |c_printed - c|`.
    pub c_deviation: f64,
}

/// Builds `Omega`, `c`, `d` by expanding the cost through the affine error
/// predictions.
pub fn build_qp_via_rollout(scn: &PlatoonScenario, w: &CostWeights) -> Result<QpProblem> {
    scn.validate()?;
    w.validate(scn.horizon, scn.n)?;
    let rows = cost_rows(scn, w);
    assemble(scn, w, rows.iter().flatten())
}

fn assemble<'a>(
    scn: &PlatoonScenario,
    w: &CostWeights,
    rows: impl Iterator<Item = &'a AffineRow>,
) -> Result<QpProblem> {
    let dim = scn.dim();
    let mut omega = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    let mut d = 0.0;
    for row in rows {
        for &(a, ca) in &row.terms {
            for &(b, cb) in &row.terms {
                omega[(a, b)] += row.weight * ca * cb;
            }
            c[a] += row.weight * row.offset * ca;
        }
        d += 0.5 * row.weight * row.offset * row.offset;
    }
    let qp = QpProblem {
        n: scn.n,
        horizon: scn.horizon,
        omega,
        c,
        d,
    };
    let min_eig = qp.min_eigenvalue();
    let scale = qp.omega.abs().max().max(f64::MIN_POSITIVE);
    if !(min_eig > 1e-14 * scale) {
        let weight = w
            .qu
            .iter()
            .enumerate()
            .find_map(|(m, row)| {
                row.iter()
                    .position(|&q| q <= 0.0)
                    .map(|i| format!("weights.qu[{m}][{i}]"))
            })
            .unwrap_or_else(|| "weights.qu".to_string());
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
            weight,
        });
    }
    Ok(qp)
}

/// Residual rows of the cost, grouped by owning vehicle (0-based).
fn cost_rows(scn: &PlatoonScenario, w: &CostWeights) -> Vec<Vec<AffineRow>> {
    let (n, t, tau) = (scn.n, scn.horizon, scn.tau);
    let (p, v) = scn.full_state();
    let idx = |vehicle: usize, h: usize| vehicle * t + h;
    let mut out = vec![Vec::with_capacity(3 * t); n];
    for (a, rows) in out.iter_mut().enumerate() {
        // follower a+1 behind vehicle a; the leader (a == 0) has a fixed plan
        let ep0 = p[a] - p[a + 1] - scn.delta;
        let ev0 = v[a] - v[a + 1];
        for m in 1..=t {
            // [S^-1 u(k+m-1)]_a
            let mut terms = vec![(idx(a, m - 1), 1.0)];
            if a > 0 {
                terms.push((idx(a - 1, m - 1), -1.0));
            }
            rows.push(AffineRow {
                terms,
                offset: 0.0,
                weight: tau * tau * w.qu[m - 1][a],
            });

            // e_u,a(k+h) = u_pred(k+h) - u_a(k+h)
            let mut pos = AffineRow {
                terms: Vec::with_capacity(2 * m),
                offset: ep0 + m as f64 * tau * ev0,
                weight: w.qp[m - 1][a],
            };
            let mut vel = AffineRow {
                terms: Vec::with_capacity(2 * m),
                offset: ev0,
                weight: w.qv[m - 1][a],
            };
            for h in 0..m {
                let cp = tau * tau * (2.0 * (m - h) as f64 - 1.0) / 2.0;
                pos.terms.push((idx(a, h), -cp));
                vel.terms.push((idx(a, h), -tau));
                if a > 0 {
                    pos.terms.push((idx(a - 1, h), cp));
                    vel.terms.push((idx(a - 1, h), tau));
                } else {
                    pos.offset += cp * scn.leader.u0[h];
                    vel.offset += tau * scn.leader.u0[h];
                }
            }
            rows.push(pos);
            rows.push(vel);
        }
    }
    out
}

/// Permutation `E` with `(E y)` time-major: `E[n t + i][T i + t] = 1`.
pub fn permutation(n: usize, horizon: usize) -> DMatrix<f64> {
    let dim = n * horizon;
    let mut e = DMatrix::zeros(dim, dim);
    for t in 0..horizon {
        for i in 0..n {
            e[(n * t + i, horizon * i + t)] = 1.0;
        }
    }
    e
}

/// Transcribes the block closed form of the objective matrix and the printed
/// linear term, and reports their deviation from the rollout construction.
///
/// The linear term uses the printed auxiliary vectors verbatim (constant
/// leader input, `tau^2` in the velocity accumulator); it agrees with the
/// rollout `c` only when the leader input is zero.
pub fn build_lambda_closed_form(scn: &PlatoonScenario, w: &CostWeights) -> Result<ClosedForm> {
    let qp = build_qp_via_rollout(scn, w)?;
    let (n, t, tau) = (scn.n, scn.horizon, scn.tau);
    let st = structure_matrices(n);
    let s_inv = &st.s_inv;
    let s_inv_t = s_inv.transpose();
    let diag = |q: &Vec<f64>| DMatrix::from_diagonal(&DVector::from_column_slice(q));

    let mut lambda = DMatrix::zeros(n * t, n * t);
    for bi in 1..=t {
        for bj in 1..=t {
            let mut inner = DMatrix::zeros(n, n);
            for m in bi.max(bj)..=t {
                let coef = tau.powi(4) / 4.0
                    * (2.0 * (m - bi) as f64 + 1.0)
                    * (2.0 * (m - bj) as f64 + 1.0);
                inner += diag(&w.qp[m - 1]) * coef + diag(&w.qv[m - 1]) * (tau * tau);
            }
            let mut block = &s_inv_t * inner * s_inv;
            if bi == bj {
                block += &s_inv_t * diag(&w.qu[bi - 1]) * s_inv * (tau * tau);
            }
            lambda
                .view_mut(((bi - 1) * n, (bj - 1) * n), (n, n))
                .copy_from(&block);
        }
    }
    let e = permutation(n, t);
    let omega_cf = e.transpose() * &lambda * &e;
    let omega_deviation = (&omega_cf - &qp.omega).abs().max();

    let (p, v) = scn.full_state();
    let ep = DVector::from_fn(n, |a, _| p[a] - p[a + 1] - scn.delta);
    let ev = DVector::from_fn(n, |a, _| v[a] - v[a + 1]);
    let s_inv_one = s_inv * DVector::from_element(n, 1.0);
    let u0k = scn.leader.u0[0];
    let mut c_time = DVector::zeros(n * t);
    for bi in 1..=t {
        let mut acc = DVector::zeros(n);
        for m in bi..=t {
            let mut gamma = &ep + &ev * (m as f64 * tau);
            let mut zeta = ev.clone();
            for j in 0..m {
                gamma += &s_inv_one * (tau * tau * (2.0 * (m - j) as f64 - 1.0) / 2.0 * u0k);
                zeta += &s_inv_one * (tau * tau * u0k);
            }
            let coef = tau * tau / 2.0 * (2.0 * (m - bi) as f64 + 1.0);
            acc += diag(&w.qp[m - 1]) * gamma * coef + diag(&w.qv[m - 1]) * zeta * tau;
        }
        let block = -(&s_inv_t * acc);
        c_time.rows_mut((bi - 1) * n, n).copy_from(&block);
    }
    let c_printed = e.transpose() * c_time;
    let c_deviation = (&c_printed - &qp.c).abs().max();

    Ok(ClosedForm {
        lambda,
        e,
        c_printed,
        omega_deviation,
        c_deviation,
    })
}

/// Signed residuals of the acceleration and velocity boxes for one follower's
/// plan `block` (length T): `[u - a_max; a_min - u; tau S u - (v_max - v);
/// (v_min - v) - tau S u]`. Non-positive means feasible.
pub fn box_constraint_values(scn: &PlatoonScenario, follower: usize, block: &[f64]) -> Vec<f64> {
    let l = &scn.limits;
    let v = scn.velocities[follower - 1];
    let t = block.len();
    let mut out = vec![0.0; 4 * t];
    let mut cum = 0.0;
    for (h, &u) in block.iter().enumerate() {
        cum += u;
        out[h] = u - l.a_max;
        out[t + h] = l.a_min - u;
        out[2 * t + h] = scn.tau * cum - (l.v_max - v);
        out[3 * t + h] = (l.v_min - v) - scn.tau * cum;
    }
    out
}

/// Safe-spacing residual of `follower` at prediction step `m` (1-based),
/// given the predecessor's plan and its own. Non-positive means feasible.
pub fn spacing_constraint_value(
    scn: &PlatoonScenario,
    follower: usize,
    pred_block: &[f64],
    own_block: &[f64],
    m: usize,
) -> f64 {
    let tau = scn.tau;
    let (pp, vp) = scn.initial_state(follower - 1);
    let (pi, vi) = scn.initial_state(follower);
    let mf = m as f64;
    let dv0 = vi - scn.limits.v_min;
    let mut pos = 0.0;
    let mut sum_u = 0.0;
    for h in 0..m {
        pos += (2.0 * (m - h) as f64 - 1.0) / 2.0 * (pred_block[h] - own_block[h]);
        sum_u += own_block[h];
    }
    -(pp + mf * tau * vp - pi - mf * tau * vi) - tau * tau * pos
        + scn.length
        + scn.reaction_time * vi
        + scn.reaction_time * tau * sum_u
        - (tau * tau * sum_u * sum_u + 2.0 * tau * dv0 * sum_u + dv0 * dv0)
            / (2.0 * scn.limits.a_min)
}

/// The penalized MPC objective together with its per-vehicle split.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    scenario: PlatoonScenario,
    weights: CostWeights,
    penalty: PenaltySpec,
    split: Split,
    rows: Vec<Vec<AffineRow>>,
    qp: QpProblem,
}

impl MpcProblem {
    pub fn new(
        scenario: PlatoonScenario,
        weights: CostWeights,
        penalty: PenaltySpec,
        split: Split,
    ) -> Result<Self> {
        penalty.validate()?;
        let qp = build_qp_via_rollout(&scenario, &weights)?;
        let rows = cost_rows(&scenario, &weights);
        Ok(MpcProblem {
            scenario,
            weights,
            penalty,
            split,
            rows,
            qp,
        })
    }

    pub fn qp(&self) -> &QpProblem {
        &self.qp
    }

    pub fn scenario(&self) -> &PlatoonScenario {
        &self.scenario
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn penalty(&self) -> &PenaltySpec {
        &self.penalty
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn vehicles(&self) -> usize {
        self.scenario.n
    }

    pub fn dim(&self) -> usize {
        self.qp.dim()
    }

    fn block<'a>(&self, x: &'a [f64], vehicle: usize) -> &'a [f64] {
        let t = self.scenario.horizon;
        &x[vehicle * t..(vehicle + 1) * t]
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.scenario.n {
            return Err(Error::InvalidInput(format!(
                "vehicle index {i} out of range for {} vehicles",
                self.scenario.n
            )));
        }
        Ok(())
    }

    /// Quadratic share of vehicle `i` (0-based) in the cost.
    pub fn local_quadratic(&self, i: usize, x: &[f64]) -> f64 {
        match self.split {
            Split::PerVehicle => self.rows[i]
                .iter()
                .map(|r| 0.5 * r.weight * r.residual(x).powi(2))
                .sum(),
            Split::Uniform => self.qp.value(x) / self.scenario.n as f64,
        }
    }

    /// Penalty terms owned by vehicle `i`: its boxes and its spacing to the predecessor.
    pub fn local_penalty(&self, i: usize, x: &[f64]) -> f64 {
        let own = self.block(x, i);
        let mut total: f64 = box_constraint_values(&self.scenario, i + 1, own)
            .into_iter()
            .map(|g| penalty_value_grad(&self.penalty, g).0)
            .sum();
        let pred = self.pred_block(x, i);
        for m in 1..=self.scenario.horizon {
            let g = spacing_constraint_value(&self.scenario, i + 1, pred, own, m);
            total += penalty_value_grad(&self.penalty, g).0;
        }
        total
    }

    fn pred_block<'a>(&'a self, x: &'a [f64], i: usize) -> &'a [f64] {
        if i == 0 {
            &self.scenario.leader.u0
        } else {
            self.block(x, i - 1)
        }
    }

    pub fn local_objective(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.local_value_unchecked(i, x))
    }

    pub fn local_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_index(i)?;
        let mut out = vec![0.0; self.dim()];
        self.local_gradient_into(i, x, &mut out);
        Ok(out)
    }

    fn local_value_unchecked(&self, i: usize, x: &[f64]) -> f64 {
        self.local_quadratic(i, x) + self.local_penalty(i, x)
    }

    /// Writes the gradient of `F_i` at `x` into `out` (overwriting it).
    pub fn local_gradient_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match self.split {
            Split::PerVehicle => {
                for r in &self.rows[i] {
                    let s = r.weight * r.residual(x);
                    for &(j, a) in &r.terms {
                        out[j] += s * a;
                    }
                }
            }
            Split::Uniform => {
                let g = self.qp.gradient(x);
                let inv_n = 1.0 / self.scenario.n as f64;
                for (o, gj) in out.iter_mut().zip(g.iter()) {
                    *o = gj * inv_n;
                }
            }
        }
        self.add_penalty_gradient(i, x, out);
    }

    fn add_penalty_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let scn = &self.scenario;
        let (t, tau) = (scn.horizon, scn.tau);
        let base = i * t;
        let own = self.block(x, i);

        let g = box_constraint_values(scn, i + 1, own);
        for h in 0..t {
            out[base + h] += penalty_value_grad(&self.penalty, g[h]).1;
            out[base + h] -= penalty_value_grad(&self.penalty, g[t + h]).1;
            // velocity rows depend on u(k..=k+h) with coefficient tau
            let dv = penalty_value_grad(&self.penalty, g[2 * t + h]).1
                - penalty_value_grad(&self.penalty, g[3 * t + h]).1;
            if dv != 0.0 {
                for hh in 0..=h {
                    out[base + hh] += tau * dv;
                }
            }
        }

        let pred = self.pred_block(x, i);
        let dv0 = scn.velocities[i] - scn.limits.v_min;
        let a_min = scn.limits.a_min;
        for m in 1..=t {
            let hval = spacing_constraint_value(scn, i + 1, pred, own, m);
            let dpen = penalty_value_grad(&self.penalty, hval).1;
            if dpen == 0.0 {
                continue;
            }
            let sum_u: f64 = own[..m].iter().sum();
            let quad = scn.reaction_time * tau - (tau * tau * sum_u + tau * dv0) / a_min;
            for h in 0..m {
                let cp = tau * tau * (2.0 * (m - h) as f64 - 1.0) / 2.0;
                out[base + h] += dpen * (cp + quad);
                if i > 0 {
                    out[base - t + h] -= dpen * cp;
                }
            }
        }
    }

    /// Sum of all penalty terms.
    pub fn penalty_total(&self, x: &[f64]) -> f64 {
        (0..self.scenario.n).map(|i| self.local_penalty(i, x)).sum()
    }

    /// The full penalized objective, evaluated through `Omega`, `c`, `d`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.qp.value(x) + self.penalty_total(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let g = self.qp.gradient(x);
        out.copy_from_slice(g.as_slice());
        for i in 0..self.scenario.n {
            self.add_penalty_gradient(i, x, out);
        }
    }

    /// Upper estimate of the gradient Lipschitz constant of the full penalized
    /// objective on the ball `|x| <= radius`.
    ///
    /// The linear constraints contribute `lambda sigma (sigma-1) gbar^(sigma-2)
    /// a a'` with `gbar` the largest violation reachable in the ball, taking one
    /// side of each box pair since both can never be active together.
    /// Constraints that cannot be violated inside the ball contribute nothing. The
    /// spacing residuals are quadratic; their gradient drift and curvature over
    /// the ball are bounded by scalars added on top. For `sigma = 1` the
    /// penalties have no finite gradient Lipschitz constant and only the
    /// quadratic part is reported.
    pub fn lipschitz_estimate(&self, radius: f64) -> Result<f64> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz radius must be positive, got {radius}"
            )));
        }
        let sigma = self.penalty.sigma;
        if sigma < 2 {
            return self.qp.lipschitz();
        }
        let scn = &self.scenario;
        let (n, t, tau) = (scn.n, scn.horizon, scn.tau);
        let lam = self.penalty.lambda;
        let sf = sigma as f64;
        let curvature = |gbar: f64| lam * sf * (sf - 1.0) * gbar.max(0.0).powi(sigma as i32 - 2);

        let mut m = self.qp.omega.clone();
        let mut slack = 0.0f64;
        let zero = vec![0.0; self.dim()];
        let lim = &scn.limits;
        for i in 0..n {
            let base = i * t;
            let v = scn.velocities[i];
            for h in 0..t {
                // acceleration box, unit normal
                let gbar = radius - lim.a_max.min(-lim.a_min);
                if gbar > 0.0 {
                    m[(base + h, base + h)] += curvature(gbar);
                }
                // velocity box, normal tau * (1,..,1,0,..)
                let norm = tau * ((h + 1) as f64).sqrt();
                let gbar = norm * radius - (lim.v_max - v).min(v - lim.v_min);
                if gbar <= 0.0 {
                    continue;
                }
                let k = curvature(gbar) * tau * tau;
                for a in 0..=h {
                    for b in 0..=h {
                        m[(base + a, base + b)] += k;
                    }
                }
            }
            let pred = self.pred_block(&zero, i);
            let own = &zero[base..base + t];
            let dv0 = v - lim.v_min;
            let mut own_slack = 0.0;
            for mm in 1..=t {
                // gradient at the origin
                let mut g0 = vec![0.0; self.dim()];
                for h in 0..mm {
                    let cp = tau * tau * (2.0 * (mm - h) as f64 - 1.0) / 2.0;
                    g0[base + h] += cp + scn.reaction_time * tau - tau * dv0 / lim.a_min;
                    if i > 0 {
                        g0[base - t + h] -= cp;
                    }
                }
                let g0_norm = g0.iter().map(|x| x * x).sum::<f64>().sqrt();
                // Hessian tau^2/|a_min| 1 1' on the first mm entries
                let hess_norm = tau * tau * mm as f64 / lim.a_min.abs();
                let h0 = spacing_constraint_value(scn, i + 1, pred, own, mm);
                let hbar = h0 + g0_norm * radius + 0.5 * hess_norm * radius * radius;
                if hbar <= 0.0 {
                    continue;
                }
                let k = curvature(hbar);
                for a in 0..g0.len() {
                    if g0[a] == 0.0 {
                        continue;
                    }
                    for b in 0..g0.len() {
                        m[(a, b)] += k * g0[a] * g0[b];
                    }
                }
                own_slack += k * (2.0 * g0_norm * hess_norm * radius + (hess_norm * radius).powi(2));
                own_slack += lam * sf * hbar.powi(sigma as i32 - 1) * hess_norm;
            }
            slack = slack.max(own_slack);
        }
        // vehicle i's spacing terms touch blocks i-1 and i only, so even and odd
        // vehicles each form a block-diagonal sum
        Ok(power_iteration(&m)? + 2.0 * slack)
    }
}
