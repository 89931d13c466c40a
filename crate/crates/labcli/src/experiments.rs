use crate::catalog::Experiment;
use crate::error::{usage, CliError, Result};
use crate::params::Params;
use ganlab::diffcore::{
    jacobian, numerical_rank, rank_excess, secant_matrix, singular_values, Activation, Mlp, MlpSpec, OptimizerKind,
    Tensor, Wrt,
};
use ganlab::divergence::{bound_rows_csv, noise_shift_check, wasserstein_bound_check, BoundCheckRow, BoundConfig};
use ganlab::error::LabError;
use ganlab::gandyn::{
    cauchy_simulation, hill_estimator, logd_identity_check, logd_instability_probe, noisy_gradient_decomposition,
    noisy_grid, noisy_jsd_gradient_check, train_discriminator, vanishing_bound_status, vanishing_probe, BoundStatus,
    CauchyModel, GanConfig, GaussianShiftFamily, GenLossKind, GradientProbe, MetricSeries, NoisySegmentSetup,
};
use ganlab::rng::{stream, streams};
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt::Write;

/// Iterations at which the full-schedule assertions of the training
/// experiments are declared.
pub const FULL_SCHEDULE: usize = 4000;

const CAUCHY_THRESHOLDS: [f64; 2] = [10.0, 100.0];

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// `(file suffix, contents)` pairs.
pub type Files = Vec<(String, String)>;

/// Everything one (config, seed) sub-run produces.
#[derive(Clone, Debug, Default)]
pub struct SeedOutput {
    /// The empty suffix is the main CSV.
    pub files: Files,
    /// Scalar summaries used by sweep aggregates.
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    d_iters: usize,
    offset: f64,
    lr: f64,
    optimizer: OptimizerKind,
    batch: usize,
    checkpoint_every: usize,
}

impl TrainSettings {
    fn from_params(p: &Params) -> Result<Self> {
        let optimizer = match p.raw("train.optimizer")? {
            "adam" => OptimizerKind::adam_default(),
            "sgd" => OptimizerKind::Sgd,
            other => return usage(format!("`train.optimizer` must be adam or sgd, got `{other}`")),
        };
        Ok(TrainSettings {
            d_iters: p.usize("d_iters")?,
            offset: p.f64("geometry.offset")?,
            lr: p.f64("train.lr")?,
            optimizer,
            batch: p.usize("train.batch")?,
            checkpoint_every: p.usize("train.checkpoint_every")?,
        })
    }

    fn config(&self, kind: GenLossKind, seed: u64) -> ganlab::Result<(GanConfig, Mlp)> {
        let (mut cfg, g) = GanConfig::parallel_segments(self.offset, kind, seed)?;
        cfg.training.lr = self.lr;
        cfg.training.optimizer = self.optimizer;
        cfg.training.checkpoint_every = self.checkpoint_every;
        cfg.batch = self.batch;
        cfg.validate()?;
        Ok((cfg, g))
    }
}

/// Typed settings of one experiment, parsed up front so that bad values are
/// usage errors before anything runs.
#[derive(Clone, Debug)]
pub enum Settings {
    PerfectDisc(TrainSettings),
    Vanishing(TrainSettings),
    LogdInstability(TrainSettings),
    CauchySim {
        n_draws: usize,
        batch_z: usize,
        batch_sizes: Vec<usize>,
    },
    LogdIdentity {
        thetas: Vec<f64>,
        variance: f64,
        h: f64,
        fd_step: f64,
    },
    NoisyDecomposition {
        offset: f64,
        sigma: f64,
        quadrature: usize,
        z_batch: usize,
        probe_points: usize,
    },
    NoisyJsdGrad {
        offset: f64,
        sigma: f64,
        samples: usize,
        fd_step: f64,
        cells_per_sigma: f64,
    },
    WassersteinBounds {
        sigma: Option<f64>,
        configs: usize,
        n: usize,
        res: usize,
    },
    JacobianRank {
        dim_z: usize,
        dim_x: usize,
        hidden: usize,
        points: usize,
        h: f64,
    },
}

impl Settings {
    pub fn from_params(p: &Params) -> Result<Self> {
        Ok(match p.experiment() {
            Experiment::PerfectDisc => Settings::PerfectDisc(TrainSettings::from_params(p)?),
            Experiment::Vanishing => Settings::Vanishing(TrainSettings::from_params(p)?),
            Experiment::LogdInstability => Settings::LogdInstability(TrainSettings::from_params(p)?),
            Experiment::CauchySim => Settings::CauchySim {
                n_draws: p.usize("n_draws")?,
                batch_z: p.usize("batch_z")?,
                batch_sizes: p.usize_list("batch_sizes")?,
            },
            Experiment::LogdIdentity => Settings::LogdIdentity {
                thetas: p.f64_list("thetas")?,
                variance: p.f64("variance")?,
                h: p.f64("grid.h")?,
                fd_step: p.f64("fd_step")?,
            },
            Experiment::NoisyDecomposition => Settings::NoisyDecomposition {
                offset: p.f64("geometry.offset")?,
                sigma: positive(p, "sigma")?,
                quadrature: p.usize("quadrature")?,
                z_batch: p.usize("z_batch")?,
                probe_points: p.usize("probe_points")?,
            },
            Experiment::NoisyJsdGrad => Settings::NoisyJsdGrad {
                offset: p.f64("geometry.offset")?,
                sigma: positive(p, "sigma")?,
                samples: p.usize("mc.samples")?,
                fd_step: p.f64("fd_step")?,
                cells_per_sigma: p.f64("grid.cells_per_sigma")?,
            },
            Experiment::WassersteinBounds => Settings::WassersteinBounds {
                sigma: match p.raw("sigma")? {
                    "random" => None,
                    _ => Some(positive(p, "sigma")?),
                },
                configs: p.usize("configs")?,
                n: p.usize("n")?,
                res: p.usize("grid.res")?,
            },
            Experiment::JacobianRank => Settings::JacobianRank {
                dim_z: p.usize("dim_z")?,
                dim_x: p.usize("dim_x")?,
                hidden: p.usize("hidden")?,
                points: p.usize("points")?,
                h: positive(p, "secant.h")?,
            },
        })
    }

    /// Names of the per-seed assertions, in recording order.
    pub fn declared(&self) -> Vec<String> {
        let v: Vec<&str> = match self {
            Settings::PerfectDisc(_) => vec![
                "final_loss_below_1e-3",
                "holdout_accuracy_is_1",
                "median_grad_x_drops_100x",
            ],
            Settings::Vanishing(t) if t.d_iters >= FULL_SCHEDULE => vec![
                "bound_holds_at_every_checkpoint",
                "final_eps_hat_below_1",
                "grad_norm_decays_1e3x",
            ],
            Settings::Vanishing(_) => vec!["bound_holds_at_every_checkpoint"],
            Settings::LogdInstability(t) if t.d_iters >= FULL_SCHEDULE => {
                vec!["probes_finite", "grad_norm_grows_10x", "grad_var_grows"]
            }
            Settings::LogdInstability(_) => vec!["probes_finite"],
            Settings::CauchySim { .. } => vec![
                "hill_index_in_0.9_1.1",
                "tail_probs_within_20pct",
                "batch_variance_not_monotone",
            ],
            Settings::LogdIdentity { thetas, .. } => {
                return thetas
                    .iter()
                    .map(|t| format!("identity_rel_error_below_1e-2_theta_{t}"))
                    .collect();
            }
            Settings::NoisyDecomposition { .. } => {
                vec!["decomposition_rel_error_below_5e-2", "weight_order_matches_densities"]
            }
            Settings::NoisyJsdGrad { .. } => vec!["gradient_rel_error_below_5e-2"],
            Settings::WassersteinBounds { .. } => {
                vec!["noise_shift_bound_holds_all_configs", "jsd_bound_holds_all_configs"]
            }
            Settings::JacobianRank { .. } => vec!["singular_values_beyond_dim_z_negligible"],
        };
        v.into_iter().map(String::from).collect()
    }

    /// Names of assertions recorded once per invocation over all seeds.
    pub fn declared_pooled(&self) -> Vec<String> {
        match self {
            Settings::CauchySim { .. } => vec!["pooled_hill_index_in_0.9_1.1".to_string()],
            _ => vec![],
        }
    }

    pub fn run_seed(&self, exp: Experiment, config_id: &str, seed: u64) -> ganlab::Result<SeedOutput> {
        match self {
            Settings::PerfectDisc(t) => perfect_disc(t, exp, config_id, seed),
            Settings::Vanishing(t) => vanishing(t, exp, config_id, seed),
            Settings::LogdInstability(t) => logd_instability(t, exp, config_id, seed),
            Settings::CauchySim {
                n_draws,
                batch_z,
                batch_sizes,
            } => cauchy(*n_draws, *batch_z, batch_sizes, seed),
            Settings::LogdIdentity {
                thetas,
                variance,
                h,
                fd_step,
            } => logd_identity(thetas, *variance, *h, *fd_step),
            Settings::NoisyDecomposition {
                offset,
                sigma,
                quadrature,
                z_batch,
                probe_points,
            } => noisy_decomposition(*offset, *sigma, *quadrature, *z_batch, *probe_points, seed),
            Settings::NoisyJsdGrad {
                offset,
                sigma,
                samples,
                fd_step,
                cells_per_sigma,
            } => noisy_jsd(*offset, *sigma, *samples, *fd_step, *cells_per_sigma, seed),
            Settings::WassersteinBounds { sigma, configs, n, res } => {
                wasserstein_bounds(*sigma, *configs, *n, *res, config_id, seed)
            }
            Settings::JacobianRank {
                dim_z,
                dim_x,
                hidden,
                points,
                h,
            } => jacobian_rank(*dim_z, *dim_x, *hidden, *points, *h, seed),
        }
    }

    /// Checks over all seeds of one configuration, as `(files, checks)`.
    pub fn run_pooled(&self, seeds: &[u64]) -> ganlab::Result<(Files, Vec<Check>)> {
        match self {
            Settings::CauchySim { n_draws, batch_z, .. } => {
                let mut all = Vec::with_capacity(n_draws * seeds.len());
                for &seed in seeds {
                    let (model, mut rng) = cauchy_model(*batch_z, seed)?;
                    all.extend((0..*n_draws).map(|_| model.draw(&mut rng)));
                }
                let k = (all.len() / 100).max(1);
                let hill = hill_estimator(&all, k)?;
                let csv = format!(
                    "seeds,n_draws,hill_k,hill_index\n{},{},{k},{hill:.16e}\n",
                    seeds.len(),
                    all.len()
                );
                let c = check(
                    "pooled_hill_index_in_0.9_1.1",
                    (0.9..=1.1).contains(&hill),
                    format!("pooled Hill index {hill:.4} from {} draws, k = {k}", all.len()),
                );
                Ok((vec![("pooled".to_string(), csv)], vec![c]))
            }
            _ => Ok((vec![], vec![])),
        }
    }
}

fn positive(p: &Params, key: &str) -> Result<f64> {
    let v = p.f64(key)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("`{key}` must be positive, got {v}")))
    }
}

fn ends(s: &MetricSeries) -> ganlab::Result<(GradientProbe, GradientProbe)> {
    match (s.first(), s.last()) {
        (Some(a), Some(b)) => Ok((a.clone(), b.clone())),
        _ => Err(LabError::InvalidArgument("training recorded no checkpoints".into())),
    }
}

fn series_output(mut s: MetricSeries, exp: Experiment, config_id: &str) -> SeedOutput {
    s.experiment = exp.name().to_string();
    s.config_id = config_id.to_string();
    let mut metrics = BTreeMap::new();
    if let (Some(a), Some(b)) = (s.first(), s.last()) {
        metrics.insert("initial_gen_grad_norm".into(), a.gen_grad_norm);
        metrics.insert("final_gen_grad_norm".into(), b.gen_grad_norm);
        metrics.insert("final_disc_loss".into(), b.disc_loss);
        metrics.insert("final_accuracy".into(), b.accuracy);
        metrics.insert("final_grad_var".into(), b.grad_var);
    }
    SeedOutput {
        files: vec![(String::new(), s.to_csv())],
        metrics,
        checks: vec![],
    }
}

fn perfect_disc(t: &TrainSettings, exp: Experiment, config_id: &str, seed: u64) -> ganlab::Result<SeedOutput> {
    let (cfg, g) = t.config(GenLossKind::Original, seed)?;
    let (_, s) = train_discriminator(&cfg, &g, t.d_iters)?;
    let (first, last) = ends(&s)?;
    let gr = last.grad_x_median_real / first.grad_x_median_real;
    let gf = last.grad_x_median_fake / first.grad_x_median_fake;
    let mut out = series_output(s, exp, config_id);
    out.checks = vec![
        check(
            "final_loss_below_1e-3",
            last.disc_loss < 1e-3,
            format!("final loss {:.3e}", last.disc_loss),
        ),
        check(
            "holdout_accuracy_is_1",
            last.accuracy == 1.0,
            format!("held-out accuracy {}", last.accuracy),
        ),
        check(
            "median_grad_x_drops_100x",
            gr < 1e-2 && gf < 1e-2,
            format!("median |grad_x D| final/initial: real {gr:.3e}, fake {gf:.3e}"),
        ),
    ];
    Ok(out)
}

fn vanishing(t: &TrainSettings, exp: Experiment, config_id: &str, seed: u64) -> ganlab::Result<SeedOutput> {
    let (cfg, g) = t.config(GenLossKind::Original, seed)?;
    let s = vanishing_probe(&cfg, &g, t.d_iters)?;
    let status = vanishing_bound_status(&s);
    let applicable = status
        .iter()
        .filter(|(_, b)| !matches!(b, BoundStatus::NotApplicable { .. }))
        .count();
    let violated: Vec<usize> = status
        .iter()
        .filter(|(_, b)| matches!(b, BoundStatus::Violated { .. }))
        .map(|(i, _)| *i)
        .collect();
    let (first, last) = ends(&s)?;
    let first = first.gen_grad_norm;
    let decay = first / last.gen_grad_norm;
    let mut out = series_output(s, exp, config_id);
    out.metrics.insert("decay".into(), decay);
    out.checks.push(check(
        "bound_holds_at_every_checkpoint",
        violated.is_empty(),
        format!(
            "bound applicable at {applicable}/{} checkpoints; violated at {violated:?}",
            status.len()
        ),
    ));
    if t.d_iters >= FULL_SCHEDULE {
        let eps = last.eps_hat.unwrap_or(f64::NAN);
        out.checks.push(check(
            "final_eps_hat_below_1",
            eps < 1.0,
            format!("final eps_hat {eps:.3e}"),
        ));
        out.checks.push(check(
            "grad_norm_decays_1e3x",
            decay >= 1e3,
            format!(
                "gen_grad_norm {first:.3e} -> {:.3e}, decay {decay:.3e}x",
                last.gen_grad_norm
            ),
        ));
    }
    Ok(out)
}

fn logd_instability(t: &TrainSettings, exp: Experiment, config_id: &str, seed: u64) -> ganlab::Result<SeedOutput> {
    let (cfg, g) = t.config(GenLossKind::NegLogD, seed)?;
    let s = logd_instability_probe(&cfg, &g, t.d_iters)?;
    let finite = s
        .probes
        .iter()
        .all(|p| p.gen_grad_norm.is_finite() && p.grad_var.is_finite());
    let (first, last) = ends(&s)?;
    let growth = last.gen_grad_norm / first.gen_grad_norm;
    let checkpoints = s.probes.len();
    let mut out = series_output(s, exp, config_id);
    out.metrics.insert("growth".into(), growth);
    out.checks
        .push(check("probes_finite", finite, format!("{checkpoints} checkpoints")));
    if t.d_iters >= FULL_SCHEDULE {
        out.checks.push(check(
            "grad_norm_grows_10x",
            growth >= 10.0,
            format!(
                "gen_grad_norm {:.3e} -> {:.3e}, growth {growth:.3e}x",
                first.gen_grad_norm, last.gen_grad_norm
            ),
        ));
        out.checks.push(check(
            "grad_var_grows",
            last.grad_var > first.grad_var,
            format!("across-batch variance {:.3e} -> {:.3e}", first.grad_var, last.grad_var),
        ));
    }
    Ok(out)
}

fn cauchy_model(batch_z: usize, seed: u64) -> ganlab::Result<(CauchyModel, ganlab::rng::LabRng)> {
    let mut rng = stream(seed, streams::SIMULATION);
    let jac: Vec<f64> = (0..batch_z).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok((CauchyModel::unit_scale(jac)?, rng))
}

fn cauchy(n_draws: usize, batch_z: usize, batch_sizes: &[usize], seed: u64) -> ganlab::Result<SeedOutput> {
    let (model, mut rng) = cauchy_model(batch_z, seed)?;
    let s = cauchy_simulation(&model, n_draws, &CAUCHY_THRESHOLDS, batch_sizes, &mut rng)?;
    let tails_ok = s.tail_probs.iter().all(|&(_, e, c)| (e - c).abs() <= 0.2 * c);
    let tails: Vec<String> = s
        .tail_probs
        .iter()
        .map(|(t, e, c)| format!("P(|X|>{t}) = {e:.5} vs {c:.5}"))
        .collect();
    let vars: Vec<String> = s
        .batch_mean_variance
        .iter()
        .map(|(b, v)| format!("{b}:{v:.3e}"))
        .collect();
    let mut metrics = BTreeMap::new();
    metrics.insert("hill_index".into(), s.hill_index);
    metrics.insert("median".into(), s.median);
    let checks = vec![
        check(
            "hill_index_in_0.9_1.1",
            (0.9..=1.1).contains(&s.hill_index),
            format!("Hill index {:.4} at k = {}", s.hill_index, s.hill_k),
        ),
        check("tail_probs_within_20pct", tails_ok, tails.join(", ")),
        check(
            "batch_variance_not_monotone",
            !s.batch_variance_monotone_decreasing(),
            format!("batch-mean variance {}", vars.join(" ")),
        ),
    ];
    Ok(SeedOutput {
        files: vec![(String::new(), s.to_csv())],
        metrics,
        checks,
    })
}

fn logd_identity(thetas: &[f64], variance: f64, h: f64, fd_step: f64) -> ganlab::Result<SeedOutput> {
    let fam = GaussianShiftFamily { variance };
    let mut csv = String::from("theta0,lhs,rhs,kl_slope,rel_error\n");
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    for &t in thetas {
        let c = logd_identity_check(&fam, t, &fam.default_grid(t, h)?, fd_step)?;
        let _ = writeln!(
            csv,
            "{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            c.lhs, c.rhs, c.kl_slope, c.rel_error
        );
        worst = worst.max(c.rel_error);
        checks.push(check(
            &format!("identity_rel_error_below_1e-2_theta_{t}"),
            c.rel_error < 1e-2,
            format!(
                "lhs {:.6e}, rhs {:.6e}, relative error {:.3e}",
                c.lhs, c.rhs, c.rel_error
            ),
        ));
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("worst_rel_error".into(), worst);
    Ok(SeedOutput {
        files: vec![(String::new(), csv)],
        metrics,
        checks,
    })
}

fn noisy_decomposition(
    offset: f64,
    sigma: f64,
    quadrature: usize,
    z_batch: usize,
    probe_points: usize,
    seed: u64,
) -> ganlab::Result<SeedOutput> {
    let setup = NoisySegmentSetup::parallel(offset, sigma * sigma)?;
    let z = setup.prior.sample(z_batch, &mut stream(seed, streams::PROBE))?;
    let d = noisy_gradient_decomposition(&setup, &z, quadrature, &mut stream(seed, streams::QUADRATURE))?;
    let mut csv = String::from("component,attraction,repulsion,total,autodiff\n");
    for i in 0..d.total.len() {
        let _ = writeln!(
            csv,
            "{i},{:.16e},{:.16e},{:.16e},{:.16e}",
            d.attraction[i], d.repulsion[i], d.total[i], d.autodiff[i]
        );
    }
    // probe the band where neither noisy density underflows
    let m = 2.0 * sigma;
    let (lo_y, hi_y) = (offset.min(0.0) - m, offset.max(0.0) + m);
    let mut rng = stream(seed.wrapping_add(1), streams::PROBE);
    let mut probes = String::from("x0,x1,a,b,p_r,p_g,agree\n");
    let mut agree = 0;
    for _ in 0..probe_points {
        let x = [rng.random_range(-m..1.0 + m), rng.random_range(lo_y..hi_y)];
        let (a, b, pr, pg) = setup.weights(&x)?;
        let ok = a > 0.0 && b > 0.0 && (b - a).signum() == (pr - pg).signum();
        agree += usize::from(ok);
        let _ = writeln!(
            probes,
            "{:.16e},{:.16e},{a:.16e},{b:.16e},{pr:.16e},{pg:.16e},{}",
            x[0],
            x[1],
            u8::from(ok)
        );
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("rel_error".into(), d.rel_error);
    metrics.insert("sign_agreement".into(), agree as f64 / probe_points.max(1) as f64);
    let checks = vec![
        check(
            "decomposition_rel_error_below_5e-2",
            d.rel_error < 5e-2,
            format!("relative error {:.3e} at {quadrature} quadrature samples", d.rel_error),
        ),
        check(
            "weight_order_matches_densities",
            agree == probe_points,
            format!("sign(b - a) = sign(p_r - p_g) at {agree}/{probe_points} points"),
        ),
    ];
    Ok(SeedOutput {
        files: vec![(String::new(), csv), ("probes".into(), probes)],
        metrics,
        checks,
    })
}

fn noisy_jsd(
    offset: f64,
    sigma: f64,
    samples: usize,
    fd_step: f64,
    cells_per_sigma: f64,
    seed: u64,
) -> ganlab::Result<SeedOutput> {
    let setup = NoisySegmentSetup::parallel(offset, sigma * sigma)?;
    let grid = noisy_grid(&setup, 0.0, 6.0, cells_per_sigma)?;
    let c = noisy_jsd_gradient_check(
        &setup,
        &[0.0, 1.0],
        samples,
        fd_step,
        &grid,
        &mut stream(seed, streams::NOISE),
    )?;
    let csv = format!(
        "sigma,offset,lhs,lhs_stderr,rhs,rel_error,grid_cells\n{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
        c.sigma, c.offset, c.lhs, c.lhs_stderr, c.rhs, c.rel_error, c.grid_cells
    );
    let mut metrics = BTreeMap::new();
    metrics.insert("rel_error".into(), c.rel_error);
    Ok(SeedOutput {
        files: vec![(String::new(), csv)],
        metrics,
        checks: vec![check(
            "gradient_rel_error_below_5e-2",
            c.rel_error < 5e-2,
            format!(
                "Monte Carlo {:.6e} (se {:.1e}) vs 2 dJSD {:.6e}, relative error {:.3e}",
                c.lhs, c.lhs_stderr, c.rhs, c.rel_error
            ),
        )],
    })
}

fn wasserstein_bounds(
    sigma: Option<f64>,
    configs: usize,
    n: usize,
    res: usize,
    config_id: &str,
    seed: u64,
) -> ganlab::Result<SeedOutput> {
    let mut rng = stream(seed, streams::CONFIG);
    let mut rows: Vec<BoundCheckRow> = Vec::with_capacity(configs + 1);
    let mut shift = String::from("config_id,W_exact,V_sqrt,slack,holds\n");
    let mut shift_ok = 0;
    for i in 0..configs {
        let cfg = BoundConfig::random(sigma, &mut rng)?;
        let id = format!("{config_id}-r{i}");
        let l = noise_shift_check(&cfg.real, &cfg.noise, n, &mut rng)?;
        shift_ok += usize::from(l.holds);
        let _ = writeln!(
            shift,
            "{id},{:.16e},{:.16e},{:.16e},{}",
            l.w_exact,
            l.v_sqrt,
            l.slack,
            u8::from(l.holds)
        );
        rows.push(wasserstein_bound_check(&id, seed, &cfg, n, res, &mut rng)?);
    }
    let mut metrics = BTreeMap::new();
    if let Some(s) = sigma {
        let m = wasserstein_bound_check(
            &format!("{config_id}-matched"),
            seed,
            &BoundConfig::matched(s)?,
            n,
            res,
            &mut rng,
        )?;
        metrics.insert("matched_gap".into(), m.rhs - m.w_exact);
        rows.push(m);
    }
    let worst = rows.iter().map(|r| r.w_exact / r.rhs).fold(0.0_f64, f64::max);
    metrics.insert("worst_w_over_rhs".into(), worst);
    let total = rows.len();
    let bound_ok = rows.iter().filter(|r| r.holds).count();
    let checks = vec![
        check(
            "noise_shift_bound_holds_all_configs",
            shift_ok == configs,
            format!("W(P, P+e) <= sqrt(V) + slack at {shift_ok}/{configs} configs"),
        ),
        check(
            "jsd_bound_holds_all_configs",
            bound_ok == total,
            format!("W <= rhs + slack at {bound_ok}/{total} configs; worst W/rhs {worst:.3}"),
        ),
    ];
    Ok(SeedOutput {
        files: vec![(String::new(), bound_rows_csv(&rows)), ("noise_shift".into(), shift)],
        metrics,
        checks,
    })
}

/// The input Jacobian of `dim_z → dim_x` has at most `dim_z` singular values
/// by shape, so the image dimension is also probed with a secant matrix of
/// `2·dim_x` forward differences.
fn jacobian_rank(
    dim_z: usize,
    dim_x: usize,
    hidden: usize,
    points: usize,
    h: f64,
    seed: u64,
) -> ganlab::Result<SeedOutput> {
    let spec = MlpSpec {
        input_dim: dim_z,
        hidden: vec![hidden, hidden],
        output_dim: dim_x,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Identity,
    };
    let net = Mlp::init(&spec, &mut stream(seed, streams::GEN_INIT))?;
    let mut rng = stream(seed, streams::PROBE);
    let k = 2 * dim_x;
    let mut csv = String::from("point,sigma_max,jacobian_rank,secant_rank,secant_excess_ratio\n");
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let z = Tensor::vector((0..dim_z).map(|_| rng.random_range(-2.0..2.0)).collect());
        let u = Tensor::matrix(k, dim_z, (0..k * dim_z).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let j = jacobian(&net, &z, Wrt::Input)?;
        let s = secant_matrix(&net, &z, &u, h)?;
        let smax = singular_values(&s).first().copied().unwrap_or(0.0);
        let excess = rank_excess(&s, dim_z).max(rank_excess(&j, dim_z));
        worst = worst.max(excess);
        let _ = writeln!(
            csv,
            "{i},{smax:.16e},{},{},{excess:.16e}",
            numerical_rank(&j, 1e-8),
            numerical_rank(&s, 1e-8)
        );
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("worst_excess_ratio".into(), worst);
    Ok(SeedOutput {
        files: vec![(String::new(), csv)],
        metrics,
        checks: vec![check(
            "singular_values_beyond_dim_z_negligible",
            worst < 1e-8,
            format!("worst sigma_(dim_z+1)/sigma_max {worst:.3e} over {points} points"),
        )],
    })
}
