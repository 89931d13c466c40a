use super::config::{GanConfig, GenLossKind};
use super::train::{run_training, MetricSeries};
use crate::diffcore::Mlp;
use crate::error::{invalid, Result};

/// Trains D under the original cost and records, at every checkpoint, the
/// generator gradient norm together with the measured discriminator error
/// `ε̂` and Jacobian scale `M̂` that bound it.
///
/// `ε̂` is the maximum of `|D − D*| + ‖∇_x D‖` over a probe set made of
/// stratified points on both supports and the generator's probe batch, with
/// `D* = 1` on the real support and `0` on the generated one. Points in the
/// gap between the supports are not probed because `D*` is unconstrained
/// there.
pub fn vanishing_probe(cfg: &GanConfig, fixed_g: &Mlp, iters: usize) -> Result<MetricSeries> {
    if cfg.gen_loss != GenLossKind::Original {
        return invalid("vanishing_probe measures the original generator cost");
    }
    Ok(run_training(cfg, fixed_g, iters, "vanishing", true)?.1)
}

/// Trains D and records `−log D` generator gradient norms and their
/// across-batch variance.
pub fn logd_instability_probe(cfg: &GanConfig, fixed_g: &Mlp, iters: usize) -> Result<MetricSeries> {
    if cfg.gen_loss != GenLossKind::NegLogD {
        return invalid("logd_instability_probe measures the -log D generator cost");
    }
    Ok(run_training(cfg, fixed_g, iters, "logd_instability", false)?.1)
}

/// Verdict of the bound `gen_grad_norm ≤ M̂ ε̂/(1 − ε̂)` at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundStatus {
    Holds {
        norm: f64,
        bound: f64,
    },
    Violated {
        norm: f64,
        bound: f64,
    },
    /// `ε̂ ≥ 1`; the bound says nothing.
    NotApplicable {
        eps_hat: f64,
    },
}

/// Slack added to the bound to absorb rounding in the gradient evaluation.
pub const BOUND_SLACK: f64 = 1e-8;

pub fn vanishing_bound_status(series: &MetricSeries) -> Vec<(usize, BoundStatus)> {
    series
        .probes
        .iter()
        .map(|p| {
            let status = match p.vanishing_bound() {
                Some(bound) if p.gen_grad_norm <= bound + BOUND_SLACK => BoundStatus::Holds {
                    norm: p.gen_grad_norm,
                    bound,
                },
                Some(bound) => BoundStatus::Violated {
                    norm: p.gen_grad_norm,
                    bound,
                },
                None => BoundStatus::NotApplicable {
                    eps_hat: p.eps_hat.unwrap_or(f64::NAN),
                },
            };
            (p.iteration, status)
        })
        .collect()
}
