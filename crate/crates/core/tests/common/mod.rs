#![allow(dead_code)]

use platoon_core::platoon::{Leader, Limits, PlatoonScenario};
use platoon_core::qp::CostWeights;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random feasible platoon: speeds near a common cruise speed, gaps above the
/// safe distance.
pub fn random_scenario(rng: &mut ChaCha8Rng, n: usize, horizon: usize) -> PlatoonScenario {
    let v0 = rng.random_range(5.0..15.0);
    let mut scn = PlatoonScenario {
        n,
        tau: rng.random_range(0.05..0.5),
        horizon,
        delta: rng.random_range(10.0..30.0),
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
            v0,
            u0: (0..horizon).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
        positions: Vec::with_capacity(n),
        velocities: Vec::with_capacity(n),
    };
    let mut p = 0.0;
    for _ in 0..n {
        let v = v0 + rng.random_range(-2.0..2.0);
        p -= scn.required_gap(v) + rng.random_range(1.0..20.0);
        scn.positions.push(p);
        scn.velocities.push(v);
    }
    scn
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, horizon: usize) -> CostWeights {
    let mut draw = |lo: f64| -> Vec<Vec<f64>> {
        (0..horizon)
            .map(|_| (0..n).map(|_| rng.random_range(lo..2.0)).collect())
            .collect()
    };
    CostWeights {
        qu: draw(0.1),
        qp: draw(0.0),
        qv: draw(0.0),
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Horizon cost evaluated by simulating every vehicle step by step.
///
/// Input comfort is charged on the difference between a follower's input and
/// its predecessor follower's input (the first follower's input alone);
/// spacing and speed errors are charged after each step.
pub fn rollout_cost(scn: &PlatoonScenario, w: &CostWeights, y: &[f64]) -> f64 {
    let (n, t, tau) = (scn.n, scn.horizon, scn.tau);
    let mut p: Vec<f64> = std::iter::once(scn.leader.p0).chain(scn.positions.iter().copied()).collect();
    let mut v: Vec<f64> = std::iter::once(scn.leader.v0).chain(scn.velocities.iter().copied()).collect();
    let input = |vehicle: usize, h: usize| -> f64 {
        if vehicle == 0 {
            scn.leader.u0[h]
        } else {
            y[(vehicle - 1) * t + h]
        }
    };
    let mut cost = 0.0;
    for h in 0..t {
        for i in 1..=n {
            let du = input(i, h) - if i > 1 { input(i - 1, h) } else { 0.0 };
            cost += 0.5 * tau * tau * w.qu[h][i - 1] * du * du;
        }
        for (i, (pi, vi)) in p.iter_mut().zip(v.iter_mut()).enumerate() {
            let u = input(i, h);
            *pi += tau * *vi + 0.5 * tau * tau * u;
            *vi += tau * u;
        }
        for i in 1..=n {
            let ep = p[i - 1] - p[i] - scn.delta;
            let ev = v[i - 1] - v[i];
            cost += 0.5 * w.qp[h][i - 1] * ep * ep + 0.5 * w.qv[h][i - 1] * ev * ev;
        }
    }
    cost
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central differences with step `1e-6 (1 + |x_j|)`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let up = f(&xp);
            xp[j] = x[j] - h;
            let down = f(&xp);
            xp[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}
