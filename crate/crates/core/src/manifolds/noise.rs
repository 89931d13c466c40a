use crate::error::{invalid, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::PI;

/// Radius, in standard deviations, at which clipped Gaussian noise is truncated
/// when no radius is given.
pub const DEFAULT_CLIP_SIGMAS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    GaussianIso { variance: f64 },
    GaussianFull { cov: Vec<f64> },
    ClippedGaussian { variance: f64, clip_radius: f64 },
}

/// Additive input noise `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    family: NoiseFamily,
    dim: usize,
    // Cholesky factor of the covariance (row-major lower triangle, full storage).
    chol: Vec<f64>,
    log_norm: f64,
}

impl NoiseSpec {
    pub fn gaussian_iso(variance: f64, dim: usize) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) || dim == 0 {
            return invalid(format!(
                "gaussian noise needs variance > 0 and dim > 0, got {variance}, {dim}"
            ));
        }
        let sd = variance.sqrt();
        let mut chol = vec![0.0; dim * dim];
        for i in 0..dim {
            chol[i * dim + i] = sd;
        }
        Ok(NoiseSpec {
            family: NoiseFamily::GaussianIso { variance },
            dim,
            chol,
            log_norm: -0.5 * dim as f64 * (2.0 * PI * variance).ln(),
        })
    }

    pub fn gaussian_full(cov: Vec<f64>, dim: usize) -> Result<Self> {
        let chol = cholesky(&cov, dim)?;
        let logdet: f64 = (0..dim).map(|i| 2.0 * chol[i * dim + i].ln()).sum();
        Ok(NoiseSpec {
            family: NoiseFamily::GaussianFull { cov },
            dim,
            chol,
            log_norm: -0.5 * (dim as f64 * (2.0 * PI).ln() + logdet),
        })
    }

    pub fn clipped_gaussian(variance: f64, clip_radius: f64, dim: usize) -> Result<Self> {
        let base = Self::gaussian_iso(variance, dim)?;
        if !(clip_radius > 0.0 && clip_radius.is_finite()) {
            return invalid(format!("clip radius must be positive, got {clip_radius}"));
        }
        let kept = chi2_cdf(dim as f64, clip_radius * clip_radius / variance);
        Ok(NoiseSpec {
            family: NoiseFamily::ClippedGaussian { variance, clip_radius },
            log_norm: base.log_norm - kept.ln(),
            ..base
        })
    }

    /// Clipped at [`DEFAULT_CLIP_SIGMAS`] standard deviations.
    pub fn clipped_default(variance: f64, dim: usize) -> Result<Self> {
        Self::clipped_gaussian(variance, DEFAULT_CLIP_SIGMAS * variance.sqrt(), dim)
    }

    pub fn family(&self) -> &NoiseFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Marginal variance along axis `i`.
    pub fn axis_variance(&self, i: usize) -> f64 {
        match &self.family {
            NoiseFamily::GaussianIso { variance } | NoiseFamily::ClippedGaussian { variance, .. } => *variance,
            NoiseFamily::GaussianFull { cov } => cov[i * self.dim + i],
        }
    }

    /// Largest per-axis standard deviation.
    pub fn max_std(&self) -> f64 {
        (0..self.dim).map(|i| self.axis_variance(i).sqrt()).fold(0.0, f64::max)
    }

    /// Distance beyond which the density is negligible (or exactly zero when clipped).
    pub fn cutoff_radius(&self) -> f64 {
        match &self.family {
            NoiseFamily::ClippedGaussian { clip_radius, .. } => *clip_radius,
            NoiseFamily::GaussianIso { variance } => 10.0 * variance.sqrt(),
            NoiseFamily::GaussianFull { cov } => {
                let m = nalgebra::DMatrix::from_row_slice(self.dim, self.dim, cov);
                let lmax = m.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
                10.0 * lmax.sqrt()
            }
        }
    }

    /// Squared Mahalanobis norm `εᵀ Σ⁻¹ ε`.
    fn mahalanobis_sq(&self, e: &[f64]) -> f64 {
        match &self.family {
            NoiseFamily::GaussianIso { variance } | NoiseFamily::ClippedGaussian { variance, .. } => {
                e.iter().map(|x| x * x).sum::<f64>() / variance
            }
            NoiseFamily::GaussianFull { .. } => {
                // forward substitution L y = e
                let d = self.dim;
                let mut y = vec![0.0; d];
                for i in 0..d {
                    let s: f64 = (0..i).map(|j| self.chol[i * d + j] * y[j]).sum();
                    y[i] = (e[i] - s) / self.chol[i * d + i];
                }
                y.iter().map(|v| v * v).sum()
            }
        }
    }

    pub fn log_density(&self, e: &[f64]) -> f64 {
        debug_assert_eq!(e.len(), self.dim);
        if let NoiseFamily::ClippedGaussian { clip_radius, .. } = self.family {
            if e.iter().map(|x| x * x).sum::<f64>() > clip_radius * clip_radius {
                return f64::NEG_INFINITY;
            }
        }
        self.log_norm - 0.5 * self.mahalanobis_sq(e)
    }

    pub fn density(&self, e: &[f64]) -> f64 {
        self.log_density(e).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        loop {
            let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let e: Vec<f64> = (0..d)
                .map(|i| (0..=i).map(|j| self.chol[i * d + j] * xi[j]).sum())
                .collect();
            match self.family {
                NoiseFamily::ClippedGaussian { clip_radius, .. }
                    if e.iter().map(|x| x * x).sum::<f64>() > clip_radius * clip_radius =>
                {
                    continue
                }
                _ => return e,
            }
        }
    }

    /// `V = E‖ε‖²`.
    pub fn second_moment(&self) -> f64 {
        match &self.family {
            NoiseFamily::GaussianIso { variance } => self.dim as f64 * variance,
            NoiseFamily::GaussianFull { cov } => (0..self.dim).map(|i| cov[i * self.dim + i]).sum(),
            NoiseFamily::ClippedGaussian { variance, clip_radius } => {
                // ‖ε‖²/σ² ~ χ²_d truncated at c; E[Q 1{Q ≤ c}] = d F_{d+2}(c)
                let d = self.dim as f64;
                let c = clip_radius * clip_radius / variance;
                variance * d * chi2_cdf(d + 2.0, c) / chi2_cdf(d, c)
            }
        }
    }
}

fn chi2_cdf(dof: f64, x: f64) -> f64 {
    ChiSquared::new(dof).expect("positive dof").cdf(x)
}

/// Cholesky factor of a symmetric positive definite row-major matrix.
pub(crate) fn cholesky(m: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || m.len() != d * d {
        return invalid(format!("covariance must be {d}x{d}"));
    }
    for i in 0..d {
        for j in 0..i {
            if (m[i * d + j] - m[j * d + i]).abs() > 1e-12 * (1.0 + m[i * d + j].abs()) {
                return invalid("covariance must be symmetric");
            }
        }
    }
    let mat = nalgebra::DMatrix::from_row_slice(d, d, m);
    let chol = mat
        .cholesky()
        .ok_or_else(|| crate::LabError::InvalidArgument("covariance must be positive definite".into()))?;
    let l = chol.l();
    Ok((0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| l[(i, j)])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn validates_parameters() {
        assert!(NoiseSpec::gaussian_iso(0.0, 2).is_err());
        assert!(NoiseSpec::clipped_gaussian(0.1, 0.0, 2).is_err());
        assert!(NoiseSpec::gaussian_full(vec![1.0, 2.0, 0.0, 1.0], 2).is_err());
        assert!(NoiseSpec::gaussian_full(vec![1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn iso_and_full_agree_on_identity_scaled_covariance() {
        let a = NoiseSpec::gaussian_iso(0.3, 2).unwrap();
        let b = NoiseSpec::gaussian_full(vec![0.3, 0.0, 0.0, 0.3], 2).unwrap();
        for e in [[0.0, 0.0], [0.4, -1.0], [2.0, 0.1]] {
            assert!((a.density(&e) - b.density(&e)).abs() < 1e-15);
        }
        assert!((a.density(&[0.0, 0.0]) - 1.0 / (2.0 * PI * 0.3)).abs() < 1e-14);
    }

    #[test]
    fn second_moments_in_closed_form() {
        assert!((NoiseSpec::gaussian_iso(0.01, 2).unwrap().second_moment() - 0.02).abs() < 1e-18);
        let full = NoiseSpec::gaussian_full(vec![1.0, 0.5, 0.5, 2.0], 2).unwrap();
        assert_eq!(full.second_moment(), 3.0);
        // d = 2: F_2(c) = 1 - e^{-c/2}, F_4(c) = 1 - e^{-c/2}(1 + c/2)
        let clip = NoiseSpec::clipped_default(0.01, 2).unwrap();
        let c: f64 = 16.0;
        let expected = 0.02 * (1.0 - (-c / 2.0).exp() * (1.0 + c / 2.0)) / (1.0 - (-c / 2.0).exp());
        assert!((clip.second_moment() - expected).abs() < 1e-14);
        assert!(clip.second_moment() < 0.02);
    }

    #[test]
    fn clipped_samples_stay_inside_radius() {
        let n = NoiseSpec::clipped_gaussian(1.0, 0.5, 3).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..1000 {
            let e = n.sample(&mut rng);
            assert!(e.iter().map(|x| x * x).sum::<f64>() <= 0.25);
        }
        assert_eq!(n.density(&[0.6, 0.0, 0.0]), 0.0);
    }
}
