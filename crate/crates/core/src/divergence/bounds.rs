use super::value::LN_2;
use crate::error::{invalid, LabError, Result};
use crate::manifolds::{GridDensity, NoiseSpec};
use serde::{Deserialize, Serialize};

/// `P_r/(P_r + P_g)`, and ½ where both densities vanish.
pub fn optimal_discriminator(pr: f64, pg: f64) -> f64 {
    let s = pr + pg;
    if s > 0.0 {
        pr / s
    } else {
        0.5
    }
}

/// Cell-wise optimal discriminator of two grid densities.
pub fn optimal_discriminator_grid(pr: &GridDensity, pg: &GridDensity) -> Result<Vec<f64>> {
    pr.check_compatible(pg)?;
    Ok(pr
        .masses()
        .iter()
        .zip(pg.masses())
        .map(|(&a, &b)| optimal_discriminator(a, b))
        .collect())
}

/// `√V` with `V = E‖ε‖²`, which bounds `W(P_X, P_{X+ε})`.
pub fn noise_wasserstein_bound(noise: &NoiseSpec) -> f64 {
    noise.second_moment().sqrt()
}

/// `2√V + 2C√JSD`, the Wasserstein bound from noisy JSD.
pub fn wasserstein_jsd_bound(v: f64, c: f64, jsd_noisy: f64) -> Result<f64> {
    if !(v >= 0.0 && c >= 0.0 && jsd_noisy >= 0.0) || !v.is_finite() || !c.is_finite() {
        return invalid(format!(
            "bound inputs must be finite and nonnegative: V={v}, C={c}, JSD={jsd_noisy}"
        ));
    }
    if jsd_noisy > LN_2 + 1e-9 {
        return Err(LabError::InvalidArgument(format!(
            "JSD {jsd_noisy} exceeds log 2; the JSD computation is broken"
        )));
    }
    Ok(2.0 * v.sqrt() + 2.0 * c * jsd_noisy.min(LN_2).sqrt())
}

/// One row of a bound-check report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckRow {
    pub config_id: String,
    pub seed: u64,
    pub w_exact: f64,
    pub slack: f64,
    pub v_sqrt: f64,
    pub c: f64,
    pub jsd_noisy: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheckRow {
    pub const CSV_HEADER: &'static str = "config_id,seed,W_exact,slack,V_sqrt,C,jsd_noisy,rhs,holds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.config_id,
            self.seed,
            self.w_exact,
            self.slack,
            self.v_sqrt,
            self.c,
            self.jsd_noisy,
            self.rhs,
            u8::from(self.holds)
        )
    }
}

pub fn bound_rows_csv(rows: &[BoundCheckRow]) -> String {
    let mut s = String::from(BoundCheckRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}
