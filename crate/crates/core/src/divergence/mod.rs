//! Grid f-divergences, exact Wasserstein-1 between empirical measures, the
//! optimal discriminator, and Wasserstein bounds for noisy distributions.

mod bounds;
mod checks;
mod grid;
mod simplex;
mod transport;
mod value;

pub use bounds::{
    bound_rows_csv, noise_wasserstein_bound, optimal_discriminator, optimal_discriminator_grid, wasserstein_jsd_bound,
    BoundCheckRow,
};
pub use checks::{noise_shift_check, wasserstein_bound_check, BoundConfig, NoiseShiftCheck};
pub use grid::{jsd_grid, jsd_masses, kl_grid, singular_divergences, tv_grid, SingularDivergences};
pub use transport::{empirical_slack, euclidean, wasserstein_exact, Coupling, EmpiricalMeasure, COST_SCALE, MAX_ATOMS};
pub use value::{Discretization, DivergenceValue, Method, LN_2};
