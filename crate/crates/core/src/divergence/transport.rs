use super::simplex::Transport;
use super::value::{DivergenceValue, Method};
use crate::diffcore::Tensor;
use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};

/// Integer scale applied to Euclidean costs before the flow solve.
pub const COST_SCALE: f64 = 1e9;

/// Largest number of atoms per side accepted by [`wasserstein_exact`].
pub const MAX_ATOMS: usize = 4096;

/// Weighted point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(LabError::DegenerateWeights("measure needs at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(LabError::DegenerateWeights(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
            return Err(LabError::InvalidArgument(
                "points must be finite and of equal dimension".into(),
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(LabError::DegenerateWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(LabError::DegenerateWeights(format!("weights sum to {total}, not 1")));
        }
        Ok(EmpiricalMeasure { points, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// Equal weights on the rows of an `(n, d)` sample matrix.
    pub fn from_samples(x: &Tensor) -> Result<Self> {
        Self::uniform((0..x.rows()).map(|i| x.row(i).to_vec()).collect())
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Sparse transport plan between two measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    rows: usize,
    cols: usize,
    /// Nonzero entries `(i, j, mass)`.
    entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.cols]; self.rows];
        for &(i, j, w) in &self.entries {
            g[i][j] += w;
        }
        g
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, w) in &self.entries {
            s[i] += w;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, w) in &self.entries {
            s[j] += w;
        }
        s
    }

    /// `Σ γ_ij c_ij` for a cost function.
    pub fn cost(&self, c: impl Fn(usize, usize) -> f64) -> f64 {
        self.entries.iter().map(|&(i, j, w)| w * c(i, j)).sum()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact Wasserstein-1 distance under the Euclidean ground cost, with an
/// optimal coupling.
pub fn wasserstein_exact(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<(DivergenceValue, Coupling)> {
    if a.dim() != b.dim() {
        return Err(LabError::Shape {
            op: "wasserstein_exact",
            detail: format!("R^{} vs R^{}", a.dim(), b.dim()),
        });
    }
    if a.len() > MAX_ATOMS || b.len() > MAX_ATOMS {
        return Err(LabError::InvalidArgument(format!(
            "at most {MAX_ATOMS} atoms per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (n, m) = (a.len(), b.len());
    let mut real = Vec::with_capacity(n * m);
    let mut cost = Vec::with_capacity(n * m);
    for p in a.points() {
        for q in b.points() {
            let c = euclidean(p, q);
            real.push(c);
            cost.push((c * COST_SCALE).round() as i64);
        }
    }
    let sol = Transport::new(n, m, cost, a.weights().to_vec(), b.weights().to_vec()).solve()?;
    let coupling = Coupling {
        rows: n,
        cols: m,
        entries: sol.flows,
    };
    let w = coupling.cost(|i, j| real[i * m + j]).max(0.0);
    Ok((DivergenceValue::finite(w, Method::ExactTransport, None), coupling))
}

/// Finite-sample slack: exact W1 between two independent sample sets of the
/// same distribution.
pub fn empirical_slack(x: &EmpiricalMeasure, x_prime: &EmpiricalMeasure) -> Result<f64> {
    wasserstein_exact(x, x_prime)?.0.expect_finite()
}
