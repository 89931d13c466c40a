mod cauchy;
mod checks;
mod config;
mod loss;
mod probes;
mod train;

pub use cauchy::{cauchy_simulation, hill_estimator, CauchyModel, TailStats};
pub use checks::{
    logd_identity_check, noisy_gradient_decomposition, noisy_grid, noisy_jsd_gradient_check, GaussianShiftFamily,
    IdentityCheck, NoisyGradientDecomposition, NoisyJsdCheck, NoisySegmentSetup, DENSITY_FLOOR,
};
pub use config::{offset_generator, DiscTraining, GanConfig, GenLossKind};
pub use loss::{add_noise, disc_loss, disc_loss_tape, disc_loss_values, gen_loss, gen_loss_tape, LOG_FLOOR};
pub use probes::{logd_instability_probe, vanishing_bound_status, vanishing_probe, BoundStatus, BOUND_SLACK};
pub use train::{generator_gradient, jacobian_scale, train_discriminator, GradientProbe, MetricSeries};
