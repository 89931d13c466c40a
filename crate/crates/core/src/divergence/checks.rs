use super::bounds::{noise_wasserstein_bound, wasserstein_jsd_bound, BoundCheckRow};
use super::grid::jsd_grid;
use super::transport::{empirical_slack, wasserstein_exact, EmpiricalMeasure};
use crate::diffcore::Tensor;
use crate::error::{invalid, Result};
use crate::manifolds::{rasterize, DistKind, GridSpec, ManifoldDistribution, NoiseSpec};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `W(P_X, P_{X+ε})` between matched samples against `√V` plus the
/// self-distance of two independent `P_X` sample sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseShiftCheck {
    pub w_exact: f64,
    pub v_sqrt: f64,
    pub slack: f64,
    pub holds: bool,
}

pub fn noise_shift_check<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    noise: &NoiseSpec,
    n: usize,
    rng: &mut R,
) -> Result<NoiseShiftCheck> {
    if noise.dim() != dist.ambient_dim() {
        return invalid("noise and distribution dimensions differ");
    }
    let x = dist.sample(n, rng)?;
    let x_prime = dist.sample(n, rng)?;
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(noise.dim()) {
        for (v, e) in row.iter_mut().zip(noise.sample(rng)) {
            *v += e;
        }
    }
    let xm = EmpiricalMeasure::from_samples(&x)?;
    let w_exact = wasserstein_exact(&xm, &EmpiricalMeasure::from_samples(&y)?)?
        .0
        .expect_finite()?;
    let slack = empirical_slack(&xm, &EmpiricalMeasure::from_samples(&x_prime)?)?;
    let v_sqrt = noise_wasserstein_bound(noise);
    Ok(NoiseShiftCheck {
        w_exact,
        v_sqrt,
        slack,
        holds: w_exact <= v_sqrt + slack,
    })
}

/// A pair of 2-D laws with closed-form noisy densities and isotropic noise.
#[derive(Clone, Debug)]
pub struct BoundConfig {
    pub real: ManifoldDistribution,
    pub fake: ManifoldDistribution,
    pub noise: NoiseSpec,
}

fn random_law<R: Rng + ?Sized>(rng: &mut R) -> Result<ManifoldDistribution> {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    if u(0.0, 1.0) < 0.5 {
        ManifoldDistribution::segment(vec![u(-1.0, 1.0), u(-1.0, 1.0)], vec![u(-1.0, 1.0), u(-1.0, 1.0)])
    } else {
        ManifoldDistribution::gaussian(vec![u(-0.5, 0.5), u(-0.5, 0.5)], {
            let (a, b) = (u(0.005, 0.09), u(0.005, 0.09));
            vec![a, 0.0, 0.0, b]
        })
    }
}

impl BoundConfig {
    /// Random segments or axis-aligned Gaussians inside `[-1, 1]²`, noise
    /// scale `sigma` or log-uniform in `[0.05, 0.5]`.
    pub fn random<R: Rng + ?Sized>(sigma: Option<f64>, rng: &mut R) -> Result<Self> {
        let real = random_law(rng)?;
        let fake = random_law(rng)?;
        let s = match sigma {
            Some(s) => s,
            None => (rng.random_range(0.05f64.ln()..0.5f64.ln())).exp(),
        };
        Ok(BoundConfig {
            real,
            fake,
            noise: NoiseSpec::gaussian_iso(s * s, 2)?,
        })
    }

    /// Both sides are the unit segment on the x-axis.
    pub fn matched(sigma: f64) -> Result<Self> {
        let seg = ManifoldDistribution::segment(vec![0.0, 0.0], vec![1.0, 0.0])?;
        Ok(BoundConfig {
            real: seg.clone(),
            fake: seg,
            noise: NoiseSpec::gaussian_iso(sigma * sigma, 2)?,
        })
    }

    /// Grid holding both noisy laws to within the leak tolerance.
    pub fn grid(&self, res: usize) -> Result<GridSpec> {
        let mut lo = vec![f64::INFINITY; 2];
        let mut hi = vec![f64::NEG_INFINITY; 2];
        let noise_sd = self.noise.max_std();
        for d in [&self.real, &self.fake] {
            let (l, h, sd) = match d.kind() {
                DistKind::Gaussian { mean, cov, .. } => {
                    let sd = (0..2).map(|i| cov[i * 2 + i]).fold(0.0, f64::max).sqrt();
                    (mean.clone(), mean.clone(), sd)
                }
                _ => match d.bounding_box() {
                    Some((l, h)) => (l, h, 0.0),
                    None => return invalid("unbounded law in bound config"),
                },
            };
            let m = 6.5 * (sd * sd + noise_sd * noise_sd).sqrt();
            for i in 0..2 {
                lo[i] = lo[i].min(l[i] - m);
                hi[i] = hi[i].max(h[i] + m);
            }
        }
        GridSpec::new(lo, hi, vec![res, res])
    }
}

/// Samples `n` points per side, computes `W_exact`, the slack (sum of the
/// two self-distances), the noisy JSD on a grid and the bound with `C` the
/// grid diameter. The row holds when `W_exact ≤ rhs + slack`.
pub fn wasserstein_bound_check<R: Rng + ?Sized>(
    config_id: &str,
    seed: u64,
    cfg: &BoundConfig,
    n: usize,
    res: usize,
    rng: &mut R,
) -> Result<BoundCheckRow> {
    let sample = |d: &ManifoldDistribution, rng: &mut R| -> Result<EmpiricalMeasure> {
        let t: Tensor = d.sample(n, rng)?;
        EmpiricalMeasure::from_samples(&t)
    };
    let r1 = sample(&cfg.real, rng)?;
    let g1 = sample(&cfg.fake, rng)?;
    let r2 = sample(&cfg.real, rng)?;
    let g2 = sample(&cfg.fake, rng)?;
    let w_exact = wasserstein_exact(&r1, &g1)?.0.expect_finite()?;
    let slack = empirical_slack(&r1, &r2)? + empirical_slack(&g1, &g2)?;
    let spec = cfg.grid(res)?;
    let pr = rasterize(&cfg.real, Some(&cfg.noise), &spec, rng)?;
    let pg = rasterize(&cfg.fake, Some(&cfg.noise), &spec, rng)?;
    let jsd_noisy = jsd_grid(&pr, &pg)?.expect_finite()?;
    let c = spec
        .lower()
        .iter()
        .zip(spec.upper())
        .map(|(l, u)| (u - l) * (u - l))
        .sum::<f64>()
        .sqrt();
    let v = cfg.noise.second_moment();
    let rhs = wasserstein_jsd_bound(v, c, jsd_noisy)?;
    Ok(BoundCheckRow {
        config_id: config_id.to_string(),
        seed,
        w_exact,
        slack,
        v_sqrt: v.sqrt(),
        c,
        jsd_noisy,
        rhs,
        holds: w_exact <= rhs + slack,
    })
}
