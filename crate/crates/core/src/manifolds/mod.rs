//! Synthetic distributions on low-dimensional supports, additive noise, and
//! grid discretizations of their (noise-convolved) densities.

mod density;
mod distribution;
mod grid;
mod noise;

pub use density::{
    convolved_density, convolved_density_exact, normal_cdf, segment_gaussian_density, segment_gaussian_density_tape,
};
pub use distribution::{support_gap, DistKind, ManifoldDistribution};
pub use grid::{
    rasterize, rasterize_with, GridDensity, GridSpec, RasterOptions, DEFAULT_DIAMETER, DEFAULT_RESOLUTION,
    LEAK_TOLERANCE,
};
pub use noise::{NoiseFamily, NoiseSpec, DEFAULT_CLIP_SIGMAS};
