//! Weight-balanced communication graphs among the vehicles.
//!
//! An edge `(i, j, w)` means node `i` listens to node `j` and weighs what it
//! receives by `w > 0`. The Laplacian convention is the one used by the
//! consensus updates: off-diagonal `L[i][j] = w_ij`, diagonal
//! `L[i][i] = -sum_j w_ij`, so every eigenvalue sits in the closed left
//! half-plane and a connected graph has a single zero eigenvalue.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `|out - in|` for the weight-balance check.
pub const BALANCE_TOL: f64 = 1e-12;
/// Eigenvalues with modulus below this are counted as zero.
pub const ZERO_EIG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    /// Sorted by (receiver, sender).
    edges: Vec<(usize, usize, f64)>,
    /// `inbound[i]` lists `(j, w_ij)` for `j` in the neighborhood of `i`, ascending `j`.
    inbound: Vec<Vec<(usize, f64)>>,
}

/// Serializable description of a graph, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "lowercase")]
pub enum GraphSpec {
    Cycle {
        n: usize,
        weight: f64,
    },
    Custom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        edges: Vec<(usize, usize, f64)>,
    },
}

impl GraphSpec {
    pub fn build(&self) -> Result<CommGraph> {
        match self {
            GraphSpec::Cycle { n, weight } => CommGraph::cycle(*n, *weight),
            GraphSpec::Custom { n, edges } => {
                let n = n.unwrap_or_else(|| {
                    edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0)
                });
                CommGraph::from_edges(n, edges.clone())
            }
        }
    }

    pub fn node_count(&self) -> Option<usize> {
        match self {
            GraphSpec::Cycle { n, .. } => Some(*n),
            GraphSpec::Custom { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianSpectrum {
    /// Real parts, sorted descending. The first entry is the zero eigenvalue.
    pub eigenvalues: Vec<f64>,
    /// Modulus of the eigenvalue with the second largest real part.
    pub lambda2_abs: f64,
}

impl CommGraph {
    /// Undirected cycle `0 - 1 - ... - (n-1) - 0`, both directions weighted `w`.
    pub fn cycle(n: usize, w: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!(
                "cycle needs at least 3 nodes, got {n}"
            )));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "edge weight must be positive, got {w}"
            )));
        }
        let mut edges = Vec::with_capacity(2 * n);
        for i in 0..n {
            edges.push((i, (i + 1) % n, w));
            edges.push(((i + 1) % n, i, w));
        }
        Self::from_edges(n, edges)
    }

    /// Builds and validates a graph from explicit directed weighted edges.
    ///
    /// The weights are checked for balance, never repaired.
    pub fn from_edges(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("graph has no nodes".into()));
        }
        for &(i, j, w) in &edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidParameter(format!("self-loop at node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
        }
        edges.sort_by_key(|e| (e.0, e.1));
        if let Some(pair) = edges.windows(2).find(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(Error::InvalidParameter(format!(
                "duplicate edge ({}, {})",
                pair[0].0, pair[0].1
            )));
        }

        let mut inbound = vec![Vec::new(); n];
        for &(i, j, w) in &edges {
            inbound[i].push((j, w));
        }
        let g = CommGraph { n, edges, inbound };
        g.check_balance()?;
        if n > 1 {
            g.spectrum()?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Neighbors `j` of node `i` with their weights `w_ij`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.inbound[i]
    }

    pub fn out_weight(&self, i: usize) -> f64 {
        self.inbound[i].iter().map(|&(_, w)| w).sum()
    }

    pub fn in_weight(&self, j: usize) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.1 == j)
            .map(|e| e.2)
            .sum()
    }

    /// Largest `|sum_j w_ij - sum_j w_ji|` over all nodes.
    pub fn balance_defect(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.out_weight(i) - self.in_weight(i)).abs())
            .fold(0.0, f64::max)
    }

    fn check_balance(&self) -> Result<()> {
        for i in 0..self.n {
            let (out_weight, in_weight) = (self.out_weight(i), self.in_weight(i));
            if (out_weight - in_weight).abs() > BALANCE_TOL * out_weight.max(in_weight) {
                return Err(Error::NotBalanced {
                    node: i,
                    out_weight,
                    in_weight,
                });
            }
        }
        Ok(())
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let mut diag = 0.0;
            for &(j, w) in &self.inbound[i] {
                l[(i, j)] = w;
                diag += w;
            }
            l[(i, i)] = -diag;
        }
        l
    }

    /// Dense eigendecomposition of the Laplacian.
    pub fn spectrum(&self) -> Result<LaplacianSpectrum> {
        let eig = self.laplacian().complex_eigenvalues();
        let mut vals: Vec<(f64, f64)> = eig.iter().map(|c| (c.re, c.im)).collect();
        vals.sort_by(|a, b| b.0.total_cmp(&a.0));

        let zeros = vals.iter().filter(|(re, im)| re.hypot(*im) <= ZERO_EIG_TOL).count();
        if zeros != 1 {
            return Err(Error::Disconnected {
                zero_eigenvalues: zeros,
            });
        }
        if vals[0].0.abs() > ZERO_EIG_TOL {
            return Err(Error::Numerical(format!(
                "largest Laplacian eigenvalue {} is not zero",
                vals[0].0
            )));
        }
        let lambda2_abs = vals.get(1).map_or(0.0, |&(re, im)| {
            if im.abs() < ZERO_EIG_TOL {
                re.abs()
            } else {
                re.hypot(im)
            }
        });
        Ok(LaplacianSpectrum {
            eigenvalues: vals.into_iter().map(|(re, _)| re).collect(),
            lambda2_abs,
        })
    }

    /// `sum_{j in N_i} w_ij (msgs[j] - msgs[i])`, written into `out`.
    ///
    /// Neighbors are visited in ascending order so the result is reproducible.
    pub fn consensus_increment<V: AsRef<[f64]>>(&self, i: usize, msgs: &[V], out: &mut [f64]) {
        out.fill(0.0);
        let own = msgs[i].as_ref();
        for &(j, w) in &self.inbound[i] {
            for ((o, &mj), &mi) in out.iter_mut().zip(msgs[j].as_ref()).zip(own) {
                *o += w * (mj - mi);
            }
        }
    }
}

/// Step-rate sufficiency bound `|lambda_2| / eta`.
pub fn step_bound(spectrum: &LaplacianSpectrum, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gradient Lipschitz bound must be positive, got {eta}"
        )));
    }
    Ok(spectrum.lambda2_abs / eta)
}
