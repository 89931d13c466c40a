use crate::error::{usage, Result};
use serde::Serialize;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    PerfectDisc,
    Vanishing,
    LogdInstability,
    CauchySim,
    LogdIdentity,
    NoisyDecomposition,
    NoisyJsdGrad,
    WassersteinBounds,
    JacobianRank,
}

/// One catalog row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub anchor: &'static str,
    /// Rough single-core wall time of the default configuration and one seed.
    pub default_runtime_s: f64,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::PerfectDisc,
        Experiment::Vanishing,
        Experiment::LogdInstability,
        Experiment::CauchySim,
        Experiment::LogdIdentity,
        Experiment::NoisyDecomposition,
        Experiment::NoisyJsdGrad,
        Experiment::WassersteinBounds,
        Experiment::JacobianRank,
    ];

    pub fn name(self) -> &'static str {
        self.info().name
    }

    pub fn info(self) -> ExperimentInfo {
        let (name, anchor, default_runtime_s) = match self {
            Experiment::PerfectDisc => (
                "perfect_disc",
                "perfect discrimination: discriminator error quickly going to 0",
                6.0,
            ),
            Experiment::Vanishing => (
                "vanishing",
                "vanishing gradients on the generator under the original cost",
                8.0,
            ),
            Experiment::LogdInstability => (
                "logd_instability",
                "-log D cost: generator gradient norms grow quickly",
                8.0,
            ),
            Experiment::CauchySim => (
                "cauchy_sim",
                "-log D updates: centered Cauchy, infinite mean and variance",
                1.5,
            ),
            Experiment::LogdIdentity => ("logd_identity", "-log D cost: the inverted KL minus two JSD", 0.5),
            Experiment::NoisyDecomposition => (
                "noisy_decomposition",
                "noisy generator gradient: attraction a(z), repulsion b(z)",
                0.5,
            ),
            Experiment::NoisyJsdGrad => (
                "noisy_jsd_grad",
                "noisy gradient equals 2 grad JSD(P_r+e || P_g+e)",
                1.0,
            ),
            Experiment::WassersteinBounds => (
                "wasserstein_bounds",
                "W(P_X, P_X+e) <= sqrt(V) and the noisy JSD bound on W(P_r, P_g)",
                6.0,
            ),
            Experiment::JacobianRank => ("jacobian_rank", "generator image has dimension at most dim Z", 0.2),
        };
        ExperimentInfo {
            name,
            anchor,
            default_runtime_s,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match Self::ALL.iter().find(|e| e.name() == s) {
            Some(e) => Ok(*e),
            None => usage(format!(
                "unknown experiment `{s}`; expected one of: {}",
                Self::ALL.map(|e| e.name()).join(", ")
            )),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The catalog in stable order.
pub fn list_experiments() -> Vec<ExperimentInfo> {
    Experiment::ALL.iter().map(|e| e.info()).collect()
}

/// Plain-text table of the catalog.
pub fn catalog_table() -> String {
    let mut s = format!("{:<20} {:>9}  {}\n", "name", "runtime_s", "anchor");
    for row in list_experiments() {
        s.push_str(&format!(
            "{:<20} {:>9.1}  {}\n",
            row.name, row.default_runtime_s, row.anchor
        ));
    }
    s
}
