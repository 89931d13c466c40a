use crate::diffcore::{jacobian, Activation, Mlp, Tape, Tensor, Wrt};
use crate::divergence::{jsd_grid, kl_grid, optimal_discriminator};
use crate::error::{invalid, LabError, Result};
use crate::manifolds::{
    rasterize, segment_gaussian_density, segment_gaussian_density_tape, DistKind, GridSpec, ManifoldDistribution,
    NoiseFamily, NoiseSpec,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Smallest density accepted when forming `a(z)` and `b(z)`.
pub const DENSITY_FLOOR: f64 = 1e-300;

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (b.abs() + 1e-9)
}

// ---------------------------------------------------------------------------
// −log D identity on the 1-D Gaussian translation family

/// `P_r = N(0, s²)` and `P_gθ = N(θ, s²)`, i.e. `g_θ(z) = z + θ` with
/// `z ~ N(0, s²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianShiftFamily {
    pub variance: f64,
}

impl GaussianShiftFamily {
    pub fn real(&self) -> Result<ManifoldDistribution> {
        ManifoldDistribution::gaussian(vec![0.0], vec![self.variance])
    }

    pub fn generated(&self, theta: f64) -> Result<ManifoldDistribution> {
        ManifoldDistribution::gaussian(vec![theta], vec![self.variance])
    }

    /// Grid covering both laws with ten standard deviations of margin.
    pub fn default_grid(&self, theta0: f64, h: f64) -> Result<GridSpec> {
        let s = self.variance.sqrt();
        let lo = theta0.min(0.0) - 10.0 * s;
        let hi = theta0.max(0.0) + 10.0 * s;
        let cells = ((hi - lo) / h).round().max(1.0) as usize;
        GridSpec::new(vec![lo], vec![lo + cells as f64 * h], vec![cells])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub theta0: f64,
    /// `E_z[−∂_θ log D*(g_θ(z))]` with `D*` frozen at `θ0`.
    pub lhs: f64,
    /// Central difference of `KL(P_gθ‖P_r) − 2 JSD(P_gθ‖P_r)`.
    pub rhs: f64,
    /// Central difference of `KL(P_gθ‖P_r)` alone.
    pub kl_slope: f64,
    pub rel_error: f64,
}

fn kl_minus_two_jsd(
    fam: &GaussianShiftFamily,
    theta: f64,
    grid: &GridSpec,
    real: &crate::manifolds::GridDensity,
) -> Result<(f64, f64)> {
    let mut rng = crate::rng::stream(0, crate::rng::streams::QUADRATURE);
    let pg = rasterize(&fam.generated(theta)?, None, grid, &mut rng)?;
    let kl = kl_grid(&pg, real)?.expect_finite()?;
    let jsd = jsd_grid(&pg, real)?.expect_finite()?;
    Ok((kl - 2.0 * jsd, kl))
}

/// Checks `E[−∇_θ log D*(g_θ(z))] = ∇_θ[KL(P_gθ‖P_r) − 2 JSD(P_gθ‖P_r)]`
/// at `θ0` on a 1-D grid.
///
/// The left side weights a central difference of `log D*` across cells by
/// the generated masses; the right side differences the grid divergences in
/// `θ` with step `fd_step`.
pub fn logd_identity_check(
    fam: &GaussianShiftFamily,
    theta0: f64,
    grid: &GridSpec,
    fd_step: f64,
) -> Result<IdentityCheck> {
    if grid.dim() != 1 {
        return invalid("the translation family lives on a 1-D grid");
    }
    if !(fd_step > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let mut rng = crate::rng::stream(0, crate::rng::streams::QUADRATURE);
    let pr = rasterize(&fam.real()?, None, grid, &mut rng)?;
    let pg = rasterize(&fam.generated(theta0)?, None, grid, &mut rng)?;
    let n = grid.num_cells();
    let h = grid.cell_width(0);
    let log_d: Vec<f64> = pr
        .masses()
        .iter()
        .zip(pg.masses())
        .map(|(&a, &b)| optimal_discriminator(a, b).ln())
        .collect();
    if log_d.iter().any(|v| !v.is_finite()) {
        return Err(LabError::DensityUnderflow { value: 0.0 });
    }
    let mut lhs = 0.0;
    for i in 0..n {
        let slope = if i == 0 {
            (log_d[1] - log_d[0]) / h
        } else if i == n - 1 {
            (log_d[n - 1] - log_d[n - 2]) / h
        } else {
            (log_d[i + 1] - log_d[i - 1]) / (2.0 * h)
        };
        lhs -= pg.masses()[i] * slope;
    }
    let (fp, klp) = kl_minus_two_jsd(fam, theta0 + fd_step, grid, &pr)?;
    let (fm, klm) = kl_minus_two_jsd(fam, theta0 - fd_step, grid, &pr)?;
    let rhs = (fp - fm) / (2.0 * fd_step);
    Ok(IdentityCheck {
        theta0,
        lhs,
        rhs,
        kl_slope: (klp - klm) / (2.0 * fd_step),
        rel_error: rel_error(lhs, rhs),
    })
}

// ---------------------------------------------------------------------------
// Noisy generator gradient

/// Real data on a segment, fakes from an affine generator applied to a 1-D
/// uniform prior (so fakes also lie on a segment), isotropic Gaussian noise.
#[derive(Clone, Debug)]
pub struct NoisySegmentSetup {
    pub real_start: Vec<f64>,
    pub real_end: Vec<f64>,
    pub generator: Mlp,
    pub prior: ManifoldDistribution,
    pub noise: NoiseSpec,
}

impl NoisySegmentSetup {
    pub fn new(
        real: &ManifoldDistribution,
        generator: Mlp,
        prior: ManifoldDistribution,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let (real_start, real_end) = match real.kind() {
            DistKind::Segment { start, end } => (start.clone(), end.clone()),
            _ => {
                return Err(LabError::UnsupportedKind {
                    op: "noisy gradient checks",
                    kind: real.kind_name(),
                })
            }
        };
        if !matches!(noise.family(), NoiseFamily::GaussianIso { .. }) {
            return invalid("noisy gradient checks need isotropic Gaussian noise");
        }
        let affine = generator.layers().len() == 1 && generator.layers()[0].activation == Activation::Identity;
        let unit_prior = matches!(prior.kind(), DistKind::BoxUniform { lower, .. } if lower.len() == 1);
        if !affine || !unit_prior {
            return invalid("generator must be affine on a 1-D uniform prior so its image is a segment");
        }
        if generator.output_dim() != real_start.len() || noise.dim() != real_start.len() {
            return invalid("generator, real data and noise must share the data dimension");
        }
        Ok(NoisySegmentSetup {
            real_start,
            real_end,
            generator,
            prior,
            noise,
        })
    }

    /// Real segment `(0,0)–(1,0)` and fakes on `(0,offset)–(1,offset)`.
    pub fn parallel(offset: f64, variance: f64) -> Result<Self> {
        let real = ManifoldDistribution::segment(vec![0.0, 0.0], vec![1.0, 0.0])?;
        Self::new(
            &real,
            super::config::offset_generator(offset)?,
            ManifoldDistribution::box_uniform(vec![0.0], vec![1.0])?,
            NoiseSpec::gaussian_iso(variance, 2)?,
        )
    }

    pub fn variance(&self) -> f64 {
        self.noise.axis_variance(0)
    }

    pub fn real(&self) -> Result<ManifoldDistribution> {
        ManifoldDistribution::segment(self.real_start.clone(), self.real_end.clone())
    }

    /// Generated law as a segment, so noisy rasterization stays closed form.
    pub fn fake(&self) -> Result<ManifoldDistribution> {
        let (s, e) = self.fake_segment()?;
        ManifoldDistribution::segment(s, e)
    }

    /// Endpoints of the generated segment.
    pub fn fake_segment(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = match self.prior.kind() {
            DistKind::BoxUniform { lower, upper } => (lower[0], upper[0]),
            _ => unreachable!("checked at construction"),
        };
        Ok((
            self.generator.eval(&Tensor::vector(vec![lo]))?.into_data(),
            self.generator.eval(&Tensor::vector(vec![hi]))?.into_data(),
        ))
    }

    /// `(P_{r+ε}(x), P_{g+ε}(x))` in closed form.
    pub fn densities(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (gs, ge) = self.fake_segment()?;
        let v = self.variance();
        Ok((
            segment_gaussian_density(&self.real_start, &self.real_end, v, x),
            segment_gaussian_density(&gs, &ge, v, x),
        ))
    }

    /// `(a, b, P_{r+ε}, P_{g+ε})` at `x`.
    pub fn weights(&self, x: &[f64]) -> Result<(f64, f64, f64, f64)> {
        let (pr, pg) = self.densities(x)?;
        for v in [pr, pg] {
            if v < DENSITY_FLOOR {
                return Err(LabError::DensityUnderflow { value: v });
            }
        }
        let a = 1.0 / (2.0 * self.variance() * (pr + pg));
        Ok((a, a * pr / pg, pr, pg))
    }

    /// Gradient in `θ` of `mean log(1 − D*(g_θ(z) + ε′))` with `D*` frozen,
    /// using closed-form noisy densities on the tape. `eps` adds per-row
    /// perturbations when given.
    pub fn log_one_minus_dstar_gradient(&self, z: &Tensor, eps: Option<&Tensor>) -> Result<Vec<f64>> {
        let (gs, ge) = self.fake_segment()?;
        let v = self.variance();
        let mut tape = Tape::new();
        let bg = self.generator.bind(&mut tape);
        let zc = tape.constant(z.clone());
        let mut x = bg.forward(&mut tape, zc)?;
        if let Some(e) = eps {
            let ec = tape.constant(e.clone());
            x = tape.add(x, ec)?;
        }
        let pr = segment_gaussian_density_tape(&mut tape, x, &self.real_start, &self.real_end, v)?;
        let pg = segment_gaussian_density_tape(&mut tape, x, &gs, &ge, v)?;
        let pgv = tape.value(pg)?;
        if let Some(&m) = pgv.data().iter().min_by(|a, b| a.total_cmp(b)) {
            if m < DENSITY_FLOOR {
                return Err(LabError::DensityUnderflow { value: m });
            }
        }
        let sum = tape.add(pr, pg)?;
        let lg = tape.log(pg)?;
        let ls = tape.log(sum)?;
        let l = tape.sub(lg, ls)?;
        let loss = tape.mean(l)?;
        let grads = tape.backward(loss)?;
        Ok(bg.gradients(&grads)?.flatten())
    }
}

/// Per-`z` weights and the two integrals of the noisy generator gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyGradientDecomposition {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `mean_z a(z) ∫ P_ε(g − y) ∇_θ‖g − y‖² dP_r(y)`.
    pub attraction: Vec<f64>,
    /// `mean_z b(z) ∫ P_ε(g − y) ∇_θ‖g − y‖² dP_g(y)`.
    pub repulsion: Vec<f64>,
    /// `attraction − repulsion`.
    pub total: Vec<f64>,
    /// Autodiff gradient of `mean_z log(1 − D*(g_θ(z)))`.
    pub autodiff: Vec<f64>,
    pub rel_error: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Monte Carlo evaluation of the attraction/repulsion form of the noisy
/// generator gradient at the rows of `z`, compared against autodiff.
pub fn noisy_gradient_decomposition<R: Rng + ?Sized>(
    setup: &NoisySegmentSetup,
    z: &Tensor,
    quadrature_samples: usize,
    rng: &mut R,
) -> Result<NoisyGradientDecomposition> {
    if quadrature_samples == 0 {
        return invalid("quadrature_samples must be positive");
    }
    let real = setup.real()?;
    let fake = setup.fake()?;
    let ys_r = real.sample(quadrature_samples, rng)?;
    let ys_g = fake.sample(quadrature_samples, rng)?;
    let p = setup.generator.num_params();
    let d = setup.generator.output_dim();
    let nz = z.rows();
    let mut a_all = Vec::with_capacity(nz);
    let mut b_all = Vec::with_capacity(nz);
    let mut attraction = vec![0.0; p];
    let mut repulsion = vec![0.0; p];
    for i in 0..nz {
        let zi = Tensor::vector(z.row(i).to_vec());
        let x = setup.generator.eval(&zi)?.into_data();
        let (a, b, _, _) = setup.weights(&x)?;
        let jac = jacobian(&setup.generator, &zi, Wrt::Parameters)?;
        // ∫ P_ε(x − y) 2(x − y) dP(y), then multiply by Jᵀ
        let integral = |ys: &Tensor| -> Vec<f64> {
            let mut acc = vec![0.0; d];
            let mut e = vec![0.0; d];
            for k in 0..ys.rows() {
                for (j, ej) in e.iter_mut().enumerate() {
                    *ej = x[j] - ys.at(k, j);
                }
                let w = setup.noise.density(&e);
                for j in 0..d {
                    acc[j] += w * 2.0 * e[j];
                }
            }
            acc.iter().map(|v| v / ys.rows() as f64).collect()
        };
        let ir = integral(&ys_r);
        let ig = integral(&ys_g);
        for c in 0..p {
            let jr: f64 = (0..d).map(|j| jac.at(j, c) * ir[j]).sum();
            let jg: f64 = (0..d).map(|j| jac.at(j, c) * ig[j]).sum();
            attraction[c] += a * jr / nz as f64;
            repulsion[c] += b * jg / nz as f64;
        }
        a_all.push(a);
        b_all.push(b);
    }
    let total: Vec<f64> = attraction.iter().zip(&repulsion).map(|(x, y)| x - y).collect();
    let autodiff = setup.log_one_minus_dstar_gradient(z, None)?;
    let diff: Vec<f64> = total.iter().zip(&autodiff).map(|(x, y)| x - y).collect();
    let rel_error = norm(&diff) / (norm(&autodiff) + 1e-300);
    Ok(NoisyGradientDecomposition {
        a: a_all,
        b: b_all,
        attraction,
        repulsion,
        total,
        autodiff,
        rel_error,
    })
}

// ---------------------------------------------------------------------------
// Noisy JSD gradient

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyJsdCheck {
    pub sigma: f64,
    pub offset: f64,
    /// Monte Carlo `E_{z,ε′}[∂ log(1 − D*(g(z) + ε′))]` along the offset.
    pub lhs: f64,
    /// Standard error of `lhs`.
    pub lhs_stderr: f64,
    /// Central difference of `2·JSD(P_{r+ε}‖P_{g+ε})` in the offset.
    pub rhs: f64,
    pub rel_error: f64,
    pub grid_cells: usize,
}

/// Grid covering both noisy laws with `margin` noise standard deviations and
/// `cells_per_sigma` cells per standard deviation.
pub fn noisy_grid(setup: &NoisySegmentSetup, offset_span: f64, margin: f64, cells_per_sigma: f64) -> Result<GridSpec> {
    let (gs, ge) = setup.fake_segment()?;
    let s = setup.variance().sqrt();
    let d = setup.real_start.len();
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    let mut res = Vec::with_capacity(d);
    for ax in 0..d {
        let pts = [setup.real_start[ax], setup.real_end[ax], gs[ax], ge[ax]];
        let lo = pts.iter().copied().fold(f64::INFINITY, f64::min) - margin * s - offset_span;
        let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin * s + offset_span;
        lower.push(lo);
        upper.push(hi);
        res.push(((hi - lo) / s * cells_per_sigma).ceil() as usize);
    }
    GridSpec::new(lower, upper, res)
}

/// Compares the Monte Carlo noisy generator gradient along the translation
/// `direction` (a unit vector added to the generator bias) against central
/// differences of `2·JSD` between the rasterized noisy densities.
pub fn noisy_jsd_gradient_check<R: Rng + ?Sized>(
    setup: &NoisySegmentSetup,
    direction: &[f64],
    mc_samples: usize,
    fd_step: f64,
    grid: &GridSpec,
    rng: &mut R,
) -> Result<NoisyJsdCheck> {
    let d = setup.real_start.len();
    if direction.len() != d || grid.dim() != d {
        return invalid("direction and grid must match the data dimension");
    }
    if mc_samples < 2 || !(fd_step > 0.0) {
        return invalid("need at least two samples and a positive step");
    }
    let chunk = 20_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut done = 0;
    while done < mc_samples {
        let m = chunk.min(mc_samples - done);
        let z = setup.prior.sample(m, rng)?;
        let mut eps = Vec::with_capacity(m * d);
        for _ in 0..m {
            eps.extend(setup.noise.sample(rng));
        }
        let eps = Tensor::matrix(m, d, eps)?;
        let per_row = per_sample_bias_gradients(setup, &z, &eps)?;
        for g in per_row {
            let v: f64 = (0..d).map(|j| g[j] * direction[j]).sum();
            sum += v;
            sum_sq += v * v;
        }
        done += m;
    }
    let n = mc_samples as f64;
    let lhs = sum / n;
    let lhs_stderr = ((sum_sq / n - lhs * lhs).max(0.0) / (n - 1.0)).sqrt();

    let shifted = |delta: f64| -> Result<f64> {
        let mut g = setup.generator.clone();
        let bias = &mut g.layers_mut()[0].bias;
        for (b, u) in bias.data_mut().iter_mut().zip(direction) {
            *b += delta * u;
        }
        let s = NoisySegmentSetup::new(&setup.real()?, g, setup.prior.clone(), setup.noise.clone())?;
        let mut qrng = crate::rng::stream(0, crate::rng::streams::QUADRATURE);
        let pr = rasterize(&s.real()?, Some(&s.noise), grid, &mut qrng)?;
        let pg = rasterize(&s.fake()?, Some(&s.noise), grid, &mut qrng)?;
        Ok(2.0 * jsd_grid(&pr, &pg)?.expect_finite()?)
    };
    let rhs = (shifted(fd_step)? - shifted(-fd_step)?) / (2.0 * fd_step);
    let (gs, _) = setup.fake_segment()?;
    Ok(NoisyJsdCheck {
        sigma: setup.variance().sqrt(),
        offset: gs
            .iter()
            .zip(&setup.real_start)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        lhs,
        lhs_stderr,
        rhs,
        rel_error: rel_error(lhs, rhs),
        grid_cells: grid.num_cells(),
    })
}

/// `∇_x log(1 − D*(x))` at `x = g(z) + ε′` for every row; with an affine
/// generator this is the gradient with respect to the bias.
fn per_sample_bias_gradients(setup: &NoisySegmentSetup, z: &Tensor, eps: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (gs, ge) = setup.fake_segment()?;
    let v = setup.variance();
    let gz = setup.generator.eval(z)?;
    let mut x = gz.clone();
    x.add_assign(eps);
    let mut tape = Tape::new();
    let xv = tape.var(x);
    let pr = segment_gaussian_density_tape(&mut tape, xv, &setup.real_start, &setup.real_end, v)?;
    let pg = segment_gaussian_density_tape(&mut tape, xv, &gs, &ge, v)?;
    let m = tape.value(pg)?.data().iter().copied().fold(f64::INFINITY, f64::min);
    if m < DENSITY_FLOOR {
        return Err(LabError::DensityUnderflow { value: m });
    }
    let sum = tape.add(pr, pg)?;
    let lg = tape.log(pg)?;
    let ls = tape.log(sum)?;
    let l = tape.sub(lg, ls)?;
    let total = tape.sum(l)?;
    let g = tape.backward(total)?.wrt(xv)?;
    Ok((0..g.rows()).map(|i| g.row(i).to_vec()).collect())
}
