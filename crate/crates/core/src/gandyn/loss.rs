use super::config::GenLossKind;
use crate::diffcore::{Mlp, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::manifolds::NoiseSpec;
use rand::Rng;

/// Probability floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

// tensors cannot have zero-sized dimensions, but a 1-D tensor is a single
// point rather than a batch
fn nonempty(x: &Tensor, what: &str) -> Result<()> {
    if x.shape().len() != 2 {
        return invalid(format!("{what} batch must be an (n, d) matrix"));
    }
    Ok(())
}

/// `log(max(u, floor))`.
fn log_floor(tape: &mut Tape, u: Var) -> Result<Var> {
    let c = tape.clamp_min(u, LOG_FLOOR)?;
    tape.log(c)
}

/// `log(max(1 − u, floor))`.
fn log_one_minus(tape: &mut Tape, u: Var) -> Result<Var> {
    let n = tape.neg(u)?;
    let one_minus = tape.add_scalar(n, 1.0)?;
    log_floor(tape, one_minus)
}

/// Negated discriminator objective `−E[log D(x_r)] − E[log(1 − D(x_g))]`
/// from discriminator outputs already on the tape.
pub fn disc_loss_tape(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let lr = log_floor(tape, d_real)?;
    let lf = log_one_minus(tape, d_fake)?;
    let mr = tape.mean(lr)?;
    let mf = tape.mean(lf)?;
    let s = tape.add(mr, mf)?;
    tape.neg(s)
}

/// Value of the negated discriminator objective.
pub fn disc_loss(d: &Mlp, real: &Tensor, fake: &Tensor) -> Result<f64> {
    nonempty(real, "real")?;
    nonempty(fake, "fake")?;
    let dr = d.eval(real)?;
    let df = d.eval(fake)?;
    Ok(disc_loss_values(dr.data(), df.data()))
}

/// `−mean log D_r − mean log(1 − D_f)` with floors.
pub fn disc_loss_values(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let lr = d_real.iter().map(|&u| u.max(LOG_FLOOR).ln()).sum::<f64>() / d_real.len() as f64;
    let lf = d_fake.iter().map(|&u| (1.0 - u).max(LOG_FLOOR).ln()).sum::<f64>() / d_fake.len() as f64;
    -(lr + lf)
}

/// Generator loss from discriminator outputs on (possibly noisy) fakes.
pub fn gen_loss_tape(tape: &mut Tape, d_fake: Var, kind: GenLossKind) -> Result<Var> {
    match kind {
        GenLossKind::Original | GenLossKind::NoisyOriginal => {
            let l = log_one_minus(tape, d_fake)?;
            tape.mean(l)
        }
        GenLossKind::NegLogD => {
            let l = log_floor(tape, d_fake)?;
            let m = tape.mean(l)?;
            tape.neg(m)
        }
    }
}

/// Adds independent noise draws to every row.
pub fn add_noise<R: Rng + ?Sized>(x: &Tensor, noise: &NoiseSpec, rng: &mut R) -> Result<Tensor> {
    let mut out = x.clone();
    let d = x.cols();
    for row in out.data_mut().chunks_mut(d) {
        for (v, e) in row.iter_mut().zip(noise.sample(rng)) {
            *v += e;
        }
    }
    Ok(out)
}

/// Value of the generator loss on a batch of generated points. The noisy
/// variant perturbs each point with a fresh draw of `noise`.
pub fn gen_loss<R: Rng + ?Sized>(
    d: &Mlp,
    fake: &Tensor,
    kind: GenLossKind,
    noise: Option<&NoiseSpec>,
    rng: &mut R,
) -> Result<f64> {
    nonempty(fake, "fake")?;
    let x = match (kind, noise) {
        (GenLossKind::NoisyOriginal, Some(n)) => add_noise(fake, n, rng)?,
        (GenLossKind::NoisyOriginal, None) => return invalid("noisy_original generator loss requires a noise model"),
        _ => fake.clone(),
    };
    let out = d.eval(&x)?;
    let n = out.len() as f64;
    Ok(match kind {
        GenLossKind::NegLogD => -out.data().iter().map(|&u| u.max(LOG_FLOOR).ln()).sum::<f64>() / n,
        _ => out.data().iter().map(|&u| (1.0 - u).max(LOG_FLOOR).ln()).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, Layer};
    use crate::rng::stream;

    fn constant_half() -> Mlp {
        Mlp::new(vec![Layer::new(
            Tensor::zeros(&[2, 1]),
            Tensor::zeros(&[1]),
            Activation::Sigmoid,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn constant_half_losses() {
        let d = constant_half();
        let x = Tensor::matrix(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((disc_loss(&d, &x, &x).unwrap() - 4f64.ln()).abs() < 1e-15);
        let mut rng = stream(0, 0);
        assert!((gen_loss(&d, &x, GenLossKind::Original, None, &mut rng).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((gen_loss(&d, &x, GenLossKind::NegLogD, None, &mut rng).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_outputs_give_floor_loss() {
        let v = disc_loss_values(&[1.0, 1.0], &[0.0, 0.0]);
        assert!(v.abs() < 1e-15);
        let v = disc_loss_values(&[0.0], &[1.0]);
        assert!((v - 2.0 * -(LOG_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn missing_noise_rejected() {
        let d = constant_half();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(gen_loss(&d, &x, GenLossKind::NoisyOriginal, None, &mut stream(0, 0)).is_err());
    }
}
