use super::distribution::{gaussian_density, DistKind, ManifoldDistribution};
use super::noise::{cholesky, NoiseFamily, NoiseSpec};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{invalid, LabError, Result};
use rand::Rng;
use statrs::function::erf::erf;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2))
}

fn check_dims(dist: &ManifoldDistribution, noise: &NoiseSpec, x: &[f64]) -> Result<()> {
    if noise.dim() != dist.ambient_dim() || x.len() != dist.ambient_dim() {
        return Err(LabError::Shape {
            op: "convolved_density",
            detail: format!(
                "distribution in R^{}, noise in R^{}, query in R^{}",
                dist.ambient_dim(),
                noise.dim(),
                x.len()
            ),
        });
    }
    Ok(())
}

/// Closed form of `P_{X+ε}(x)` when one exists: finite mixtures under any
/// noise, Gaussians under unclipped Gaussian noise.
pub fn convolved_density_exact(dist: &ManifoldDistribution, noise: &NoiseSpec, x: &[f64]) -> Option<f64> {
    match dist.kind() {
        DistKind::PointCloud { atoms, weights } => Some(
            atoms
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(a, w)| {
                    let e: Vec<f64> = x.iter().zip(a).map(|(u, v)| u - v).collect();
                    w * noise.density(&e)
                })
                .sum(),
        ),
        DistKind::Gaussian { mean, cov, .. } => {
            let d = mean.len();
            let extra: Vec<f64> = match noise.family() {
                NoiseFamily::GaussianIso { variance } => (0..d * d)
                    .map(|k| if k % (d + 1) == 0 { *variance } else { 0.0 })
                    .collect(),
                NoiseFamily::GaussianFull { cov } => cov.clone(),
                NoiseFamily::ClippedGaussian { .. } => return None,
            };
            let sum: Vec<f64> = cov.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let chol = cholesky(&sum, d).ok()?;
            Some(gaussian_density(x, mean, &chol))
        }
        _ => None,
    }
}

/// Density of `X + ε` at `x`, `E_{y~P_X}[P_ε(x − y)]`.
///
/// Finite mixtures and Gaussians use their closed forms; everything else is a
/// Monte Carlo average over `mc_samples` draws.
pub fn convolved_density<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    noise: &NoiseSpec,
    x: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if mc_samples == 0 {
        return invalid("mc_samples must be at least 1");
    }
    check_dims(dist, noise, x)?;
    if let Some(p) = convolved_density_exact(dist, noise, x) {
        return Ok(p);
    }
    let mut acc = 0.0;
    let mut e = vec![0.0; x.len()];
    for _ in 0..mc_samples {
        let y = dist.sample_point(rng);
        for i in 0..x.len() {
            e[i] = x[i] - y[i];
        }
        acc += noise.density(&e);
    }
    Ok(acc / mc_samples as f64)
}

/// Exact density of a uniform segment `[a, b]` convolved with `N(0, σ²I)`.
///
/// With `s` the coordinate along the segment and `r` the perpendicular
/// distance, the density is
/// `(1/L) (2πσ²)^{-(d-1)/2} exp(-r²/2σ²) [Φ(s/σ) − Φ((s−L)/σ)]`.
pub fn segment_gaussian_density(a: &[f64], b: &[f64], variance: f64, x: &[f64]) -> f64 {
    let d = a.len();
    let sigma = variance.sqrt();
    let dir: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = x.iter().zip(a).map(|(u, v)| u - v).collect();
    let r2_total: f64 = diff.iter().map(|v| v * v).sum();
    if len == 0.0 {
        return (-0.5 * r2_total / variance).exp() * (2.0 * PI * variance).powf(-0.5 * d as f64);
    }
    let s = diff.iter().zip(&dir).map(|(u, v)| u * v).sum::<f64>() / len;
    let r2 = (r2_total - s * s).max(0.0);
    let along = normal_cdf(s / sigma) - normal_cdf((s - len) / sigma);
    along / len * (2.0 * PI * variance).powf(-0.5 * (d as f64 - 1.0)) * (-0.5 * r2 / variance).exp()
}

/// [`segment_gaussian_density`] for a batch `x` of shape `(n, d)` recorded
/// on a tape, so gradients flow to the query points. Returns shape `(n, 1)`.
pub fn segment_gaussian_density_tape(tape: &mut Tape, x: Var, a: &[f64], b: &[f64], variance: f64) -> Result<Var> {
    let d = a.len();
    let xs = tape.value(x)?.shape().to_vec();
    if xs.len() != 2 || xs[1] != d {
        return Err(LabError::Shape {
            op: "segment_gaussian_density_tape",
            detail: format!("expected (n, {d}) queries, got {xs:?}"),
        });
    }
    let dir: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(len > 0.0) {
        return invalid("segment must have positive length");
    }
    let sigma = variance.sqrt();
    let unit: Vec<f64> = dir.iter().map(|v| v / len).collect();
    let a_row = tape.constant(Tensor::matrix(1, d, a.to_vec())?);
    let u_col = tape.constant(Tensor::matrix(d, 1, unit)?);
    let diff = tape.sub(x, a_row)?;
    let s = tape.matmul(diff, u_col)?;
    let sq = tape.square(diff)?;
    let r2_total = tape.sum_cols(sq)?;
    let s2 = tape.square(s)?;
    let r2 = tape.sub(r2_total, s2)?;
    let hi = tape.scale(s, FRAC_1_SQRT_2 / sigma)?;
    let lo = tape.add_scalar(s, -len)?;
    let lo = tape.scale(lo, FRAC_1_SQRT_2 / sigma)?;
    let erf_hi = tape.erf(hi)?;
    let erf_lo = tape.erf(lo)?;
    let along = tape.sub(erf_hi, erf_lo)?;
    let expo = tape.scale(r2, -0.5 / variance)?;
    let gauss = tape.exp(expo)?;
    let prod = tape.mul(along, gauss)?;
    let norm = 0.5 / len * (2.0 * PI * variance).powf(-0.5 * (d as f64 - 1.0));
    tape.scale(prod, norm)
}
