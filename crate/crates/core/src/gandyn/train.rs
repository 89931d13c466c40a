use super::config::{GanConfig, GenLossKind};
use super::loss::{add_noise, disc_loss_tape, disc_loss_values, gen_loss_tape};
use crate::diffcore::{input_gradients, jacobian, Mlp, Optimizer, Tape, Tensor, Wrt};
use crate::error::{invalid, LabError, Result};
use crate::manifolds::ManifoldDistribution;
use crate::rng::{stream, streams};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Measurements taken at one discriminator iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub iteration: usize,
    /// Negated objective on the held-out sets.
    pub disc_loss: f64,
    /// Fraction of held-out points on the correct side of ½.
    pub accuracy: f64,
    /// `‖∇_θ E[loss_g]‖₂` over the fixed probe batch.
    pub gen_grad_norm: f64,
    /// Mean squared deviation of per-batch generator gradients from their mean.
    pub grad_var: f64,
    pub grad_x_norm_real: f64,
    pub grad_x_norm_fake: f64,
    pub grad_x_median_real: f64,
    pub grad_x_median_fake: f64,
    /// Held-out points whose loss hit the log floor.
    pub floored: usize,
    pub eps_hat: Option<f64>,
    pub m_hat: Option<f64>,
}

impl GradientProbe {
    /// `M̂ ε̂ / (1 − ε̂)` when `ε̂ < 1`.
    pub fn vanishing_bound(&self) -> Option<f64> {
        match (self.eps_hat, self.m_hat) {
            (Some(e), Some(m)) if e < 1.0 => Some(m * e / (1.0 - e)),
            _ => None,
        }
    }
}

/// Iteration-indexed probes of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub experiment: String,
    pub config_id: String,
    pub seed: u64,
    pub probes: Vec<GradientProbe>,
}

impl MetricSeries {
    pub const CSV_HEADER: &'static str =
        "iteration,disc_loss,accuracy,gen_grad_norm,grad_var,grad_x_norm_real,grad_x_norm_fake,eps_hat,m_hat";

    pub fn first(&self) -> Option<&GradientProbe> {
        self.probes.first()
    }

    pub fn last(&self) -> Option<&GradientProbe> {
        self.probes.last()
    }

    pub fn at(&self, iteration: usize) -> Option<&GradientProbe> {
        self.probes.iter().find(|p| p.iteration == iteration)
    }

    /// `<experiment>_<config_id>_<seed>.csv`
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.experiment, self.config_id, self.seed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.16e}"));
        for p in &self.probes {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                p.iteration,
                p.disc_loss,
                p.accuracy,
                p.gen_grad_norm,
                p.grad_var,
                p.grad_x_norm_real,
                p.grad_x_norm_fake,
                opt(p.eps_hat),
                opt(p.m_hat)
            );
        }
        s
    }
}

/// Fixed evaluation data shared by every checkpoint of a run.
struct ProbeData {
    real_clean: Tensor,
    fake_clean: Tensor,
    real_in: Tensor,
    fake_in: Tensor,
    z_probe: Tensor,
    eps_probe: Option<Tensor>,
    z_var: Vec<Tensor>,
    eps_var: Vec<Option<Tensor>>,
    vanishing: Option<VanishingData>,
}

struct VanishingData {
    points: Tensor,
    target: Vec<f64>,
    m_hat: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn row_norms(g: &Tensor) -> Vec<f64> {
    (0..g.rows())
        .map(|i| g.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let d = parts[0].cols();
    let mut data = Vec::new();
    let mut n = 0;
    for p in parts {
        data.extend_from_slice(p.data());
        n += p.rows();
    }
    Tensor::matrix(n, d, data)
}

/// `∇_θ` of the generator loss over the batch `z` against a frozen `d`.
pub fn generator_gradient(g: &Mlp, d: &Mlp, z: &Tensor, eps: Option<&Tensor>, kind: GenLossKind) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bg = g.bind(&mut tape);
    let bd = d.bind_frozen(&mut tape);
    let zc = tape.constant(z.clone());
    let mut x = bg.forward(&mut tape, zc)?;
    if let Some(e) = eps {
        let ec = tape.constant(e.clone());
        x = tape.add(x, ec)?;
    }
    let out = bd.forward(&mut tape, x)?;
    let loss = gen_loss_tape(&mut tape, out, kind)?;
    let grads = tape.backward(loss)?;
    Ok(bg.gradients(&grads)?.flatten())
}

/// `√ mean ‖J_θ g(z)‖_F²` over the rows of `z`.
pub fn jacobian_scale(g: &Mlp, z: &Tensor) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..z.rows() {
        acc += jacobian(g, &Tensor::vector(z.row(i).to_vec()), Wrt::Parameters)?.norm_sq();
    }
    Ok((acc / z.rows() as f64).sqrt())
}

fn prepare(cfg: &GanConfig, g: &Mlp, fake: &ManifoldDistribution, vanishing: bool) -> Result<ProbeData> {
    let t = &cfg.training;
    let mut rng = stream(cfg.seed, streams::HOLDOUT);
    let real_clean = cfg.real.sample(t.holdout_per_side, &mut rng)?;
    let fake_clean = fake.sample(t.holdout_per_side, &mut rng)?;
    let mut noise_rng = stream(cfg.seed, streams::HOLDOUT_NOISE);
    let (real_in, fake_in) = match &cfg.noise {
        Some(n) => (
            add_noise(&real_clean, n, &mut noise_rng)?,
            add_noise(&fake_clean, n, &mut noise_rng)?,
        ),
        None => (real_clean.clone(), fake_clean.clone()),
    };
    let mut prng = stream(cfg.seed, streams::PROBE);
    let z_probe = cfg.prior.sample(t.probe_batch, &mut prng)?;
    let noisy = cfg.gen_loss == GenLossKind::NoisyOriginal;
    let eps_for = |z: &Tensor, rng: &mut crate::rng::LabRng| -> Result<Option<Tensor>> {
        match (&cfg.noise, noisy) {
            (Some(n), true) => Ok(Some(add_noise(
                &Tensor::zeros(&[z.rows(), cfg.real.ambient_dim()]),
                n,
                rng,
            )?)),
            _ => Ok(None),
        }
    };
    let eps_probe = eps_for(&z_probe, &mut prng)?;
    let mut z_var = Vec::with_capacity(t.variance_batches);
    let mut eps_var = Vec::with_capacity(t.variance_batches);
    for _ in 0..t.variance_batches {
        let z = cfg.prior.sample(cfg.batch, &mut prng)?;
        eps_var.push(eps_for(&z, &mut prng)?);
        z_var.push(z);
    }
    let vanishing = if vanishing {
        if cfg.noise.is_some() {
            return invalid("the vanishing probe compares against the noise-free optimal discriminator");
        }
        // D* is 1 on the real support and 0 on the generated one; its gradient
        // vanishes on both
        let k = t.holdout_per_side;
        let (real_q, _) = cfg.real.quadrature(k, &mut prng)?;
        let (fake_q, _) = fake.quadrature(k, &mut prng)?;
        let gen_pts = g.eval(&z_probe)?;
        let points = stack_rows(&[&real_q, &fake_q, &gen_pts])?;
        let mut target = vec![1.0; real_q.rows()];
        target.extend(std::iter::repeat_n(0.0, fake_q.rows() + gen_pts.rows()));
        Some(VanishingData {
            points,
            target,
            m_hat: jacobian_scale(g, &z_probe)?,
        })
    } else {
        None
    };
    Ok(ProbeData {
        real_clean,
        fake_clean,
        real_in,
        fake_in,
        z_probe,
        eps_probe,
        z_var,
        eps_var,
        vanishing,
    })
}

fn take_probe(cfg: &GanConfig, g: &Mlp, d: &Mlp, data: &ProbeData, iteration: usize) -> Result<GradientProbe> {
    let dr = d.eval(&data.real_in)?;
    let df = d.eval(&data.fake_in)?;
    let disc_loss = disc_loss_values(dr.data(), df.data());
    let floor = super::loss::LOG_FLOOR;
    let floored =
        dr.data().iter().filter(|&&u| u < floor).count() + df.data().iter().filter(|&&u| 1.0 - u < floor).count();
    let correct = dr.data().iter().filter(|&&u| u > 0.5).count() + df.data().iter().filter(|&&u| u < 0.5).count();
    let accuracy = correct as f64 / (dr.len() + df.len()) as f64;

    let grad = generator_gradient(g, d, &data.z_probe, data.eps_probe.as_ref(), cfg.gen_loss)?;
    let gen_grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    let batch_grads = data
        .z_var
        .iter()
        .zip(&data.eps_var)
        .map(|(z, e)| generator_gradient(g, d, z, e.as_ref(), cfg.gen_loss))
        .collect::<Result<Vec<_>>>()?;
    let p = grad.len();
    let k = batch_grads.len() as f64;
    let mean: Vec<f64> = (0..p)
        .map(|j| batch_grads.iter().map(|b| b[j]).sum::<f64>() / k)
        .collect();
    let grad_var = batch_grads
        .iter()
        .map(|b| b.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<f64>()
        / k;

    let mut nr = row_norms(&input_gradients(d, &data.real_clean)?);
    let mut nf = row_norms(&input_gradients(d, &data.fake_clean)?);
    let grad_x_norm_real = nr.iter().sum::<f64>() / nr.len() as f64;
    let grad_x_norm_fake = nf.iter().sum::<f64>() / nf.len() as f64;

    let (eps_hat, m_hat) = match &data.vanishing {
        Some(v) => {
            let out = d.eval(&v.points)?;
            let gx = row_norms(&input_gradients(d, &v.points)?);
            let eps = out
                .data()
                .iter()
                .zip(&v.target)
                .zip(&gx)
                .map(|((o, t), g)| (o - t).abs() + g)
                .fold(0.0, f64::max);
            (Some(eps), Some(v.m_hat))
        }
        None => (None, None),
    };
    for (name, v) in [
        ("gen_grad_norm", gen_grad_norm),
        ("grad_var", grad_var),
        ("disc_loss", disc_loss),
    ] {
        if !v.is_finite() {
            return Err(LabError::Diverged {
                iteration,
                what: name.to_string(),
            });
        }
    }
    Ok(GradientProbe {
        iteration,
        disc_loss,
        accuracy,
        gen_grad_norm,
        grad_var,
        grad_x_norm_real,
        grad_x_norm_fake,
        grad_x_median_real: median(&mut nr),
        grad_x_median_fake: median(&mut nf),
        floored,
        eps_hat,
        m_hat,
    })
}

/// Trains a fresh discriminator for `iters` steps against the frozen
/// generator `fixed_g`, probing on the configured schedule.
pub fn train_discriminator(cfg: &GanConfig, fixed_g: &Mlp, iters: usize) -> Result<(Mlp, MetricSeries)> {
    run_training(cfg, fixed_g, iters, "train", false)
}

pub(crate) fn run_training(
    cfg: &GanConfig,
    fixed_g: &Mlp,
    iters: usize,
    experiment: &str,
    vanishing: bool,
) -> Result<(Mlp, MetricSeries)> {
    cfg.validate()?;
    if fixed_g.input_dim() != cfg.prior.ambient_dim() || fixed_g.output_dim() != cfg.real.ambient_dim() {
        return invalid("generator does not map the prior space into the data space");
    }
    let fake = cfg.fake_distribution(fixed_g)?;
    let data = prepare(cfg, fixed_g, &fake, vanishing)?;
    let mut d = Mlp::init(&cfg.discriminator, &mut stream(cfg.seed, streams::DISC_INIT))?;
    let mut opt = Optimizer::new(cfg.training.optimizer, cfg.training.lr)?;
    let mut rng_real = stream(cfg.seed, streams::REAL_BATCH);
    let mut rng_fake = stream(cfg.seed, streams::FAKE_BATCH);
    let mut rng_noise = stream(cfg.seed, streams::NOISE);
    let mut probes = Vec::new();
    for it in 0..=iters {
        if it % cfg.training.checkpoint_every == 0 || it == iters {
            probes.push(take_probe(cfg, fixed_g, &d, &data, it)?);
        }
        if it == iters {
            break;
        }
        let mut real = cfg.real.sample(cfg.batch, &mut rng_real)?;
        let mut fk = fake.sample(cfg.batch, &mut rng_fake)?;
        if let Some(n) = &cfg.noise {
            real = add_noise(&real, n, &mut rng_noise)?;
            fk = add_noise(&fk, n, &mut rng_noise)?;
        }
        let mut tape = Tape::new();
        let bd = d.bind(&mut tape);
        let xr = tape.constant(real);
        let xf = tape.constant(fk);
        let dr = bd.forward(&mut tape, xr)?;
        let df = bd.forward(&mut tape, xf)?;
        let loss = disc_loss_tape(&mut tape, dr, df)?;
        let lv = tape.value(loss)?.item();
        if !lv.is_finite() {
            return Err(LabError::Diverged {
                iteration: it,
                what: "discriminator loss".into(),
            });
        }
        let grads = tape.backward(loss)?;
        let mg = bd.gradients(&grads)?;
        opt.step_mlp(&mut d, &mg).map_err(|e| match e {
            LabError::NonFiniteGradient(p) => LabError::Diverged {
                iteration: it,
                what: format!("gradient of {p}"),
            },
            other => other,
        })?;
    }
    let series = MetricSeries {
        experiment: experiment.to_string(),
        config_id: "default".to_string(),
        seed: cfg.seed,
        probes,
    };
    Ok((d, series))
}
