use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// `log 2`, the Jensen-Shannon ceiling in nats.
pub const LN_2: f64 = std::f64::consts::LN_2;

/// How a divergence value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cell-wise sum over a shared lattice.
    Grid,
    /// Exact value implied by mutually singular supports.
    SupportDisjointness,
    /// Exact optimal transport between empirical measures.
    ExactTransport,
}

/// Lattice the value was computed on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub cells: usize,
    pub cell_diagonal: f64,
}

/// A nonnegative divergence, or the explicit `+∞` marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceValue {
    value: Option<f64>,
    method: Method,
    discretization: Option<Discretization>,
}

impl DivergenceValue {
    pub fn finite(value: f64, method: Method, discretization: Option<Discretization>) -> Self {
        debug_assert!(value.is_finite() && value >= 0.0);
        DivergenceValue {
            value: Some(value),
            method,
            discretization,
        }
    }

    pub fn infinite(method: Method, discretization: Option<Discretization>) -> Self {
        DivergenceValue {
            value: None,
            method,
            discretization,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_none()
    }

    /// The finite value, or `None` for `+∞`.
    pub fn value(&self) -> Option<f64> {
        self.value
    }

    /// The finite value; `+∞` is an error rather than a float infinity.
    pub fn expect_finite(&self) -> Result<f64> {
        self.value
            .ok_or_else(|| LabError::Undefined("divergence is +inf and cannot enter arithmetic".into()))
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn discretization(&self) -> Option<&Discretization> {
        self.discretization.as_ref()
    }
}

impl fmt::Display for DivergenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "+inf"),
        }
    }
}
