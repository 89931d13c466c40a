use super::density::{normal_cdf, segment_gaussian_density};
use super::distribution::{DistKind, ManifoldDistribution};
use super::noise::{NoiseFamily, NoiseSpec};
use crate::error::{invalid, LabError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Largest fraction of mass allowed to fall outside the grid.
pub const LEAK_TOLERANCE: f64 = 1e-3;

/// Cells per axis used when nothing else is requested.
pub const DEFAULT_RESOLUTION: usize = 200;

/// Support diameter `C` assumed by the default grid.
pub const DEFAULT_DIAMETER: f64 = 6.0;

/// Regular lattice over an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != resolution.len() {
            return invalid("grid bounds and resolution must have one entry per axis");
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite())
        {
            return invalid("grid needs finite lower < upper on every axis");
        }
        if resolution.contains(&0) {
            return invalid("grid resolution must be positive");
        }
        let cells = resolution.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r));
        if cells.is_none_or(|c| c > 1 << 28) {
            return invalid("grid has too many cells");
        }
        Ok(GridSpec {
            lower,
            upper,
            resolution,
        })
    }

    /// Cube of side `diameter` centred at `center` with `res` cells per axis.
    pub fn cube(center: &[f64], diameter: f64, res: usize) -> Result<Self> {
        let h = 0.5 * diameter;
        Self::new(
            center.iter().map(|c| c - h).collect(),
            center.iter().map(|c| c + h).collect(),
            vec![res; center.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn num_cells(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.resolution[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.cell_width(i)).product()
    }

    /// Length of a cell diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.cell_width(i).powi(2)).sum::<f64>().sqrt()
    }

    /// Per-axis indices of flat cell `k` (last axis fastest).
    pub fn unravel(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for ax in (0..self.dim()).rev() {
            idx[ax] = k % self.resolution[ax];
            k /= self.resolution[ax];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.resolution).fold(0, |acc, (&i, &r)| acc * r + i)
    }

    pub fn center(&self, k: usize) -> Vec<f64> {
        self.unravel(k)
            .iter()
            .enumerate()
            .map(|(ax, &i)| self.lower[ax] + (i as f64 + 0.5) * self.cell_width(ax))
            .collect()
    }

    /// Flat index of the cell containing `x`, or `None` outside the grid.
    /// The upper faces belong to the last cell.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for ax in 0..self.dim() {
            if !(x[ax] >= self.lower[ax] && x[ax] <= self.upper[ax]) {
                return None;
            }
            let i = ((x[ax] - self.lower[ax]) / self.cell_width(ax)).floor() as usize;
            idx.push(i.min(self.resolution[ax] - 1));
        }
        Some(self.ravel(&idx))
    }

    /// Index range along `axis` of cells whose centres lie within `r` of `c`.
    fn axis_window(&self, axis: usize, c: f64, r: f64) -> (usize, usize) {
        let h = self.cell_width(axis);
        let lo = ((c - r - self.lower[axis]) / h - 0.5).ceil().max(0.0);
        let hi = ((c + r - self.lower[axis]) / h - 0.5).floor();
        let n = self.resolution[axis] as f64;
        if hi < 0.0 || lo > n - 1.0 {
            return (1, 0);
        }
        (lo as usize, hi.min(n - 1.0) as usize)
    }

    fn same_lattice(&self, other: &GridSpec) -> bool {
        self.resolution == other.resolution
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
            && self
                .upper
                .iter()
                .zip(&other.upper)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }
}

/// Cell probability masses over a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    spec: GridSpec,
    masses: Vec<f64>,
    raw_mass: f64,
    leak: f64,
    singular: bool,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
    raw_mass: f64,
    leak: f64,
    singular: bool,
}

impl GridDensity {
    /// Normalizes nonnegative `masses` to sum 1.
    pub fn from_masses(spec: GridSpec, masses: Vec<f64>, singular: bool) -> Result<Self> {
        if masses.len() != spec.num_cells() {
            return Err(LabError::GridMismatch(format!(
                "{} masses for {} cells",
                masses.len(),
                spec.num_cells()
            )));
        }
        if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return invalid("cell masses must be finite and nonnegative");
        }
        Self::normalized(spec, masses, 0.0, singular)
    }

    fn normalized(spec: GridSpec, mut masses: Vec<f64>, leak: f64, singular: bool) -> Result<Self> {
        let raw_mass: f64 = masses.iter().sum();
        if !(raw_mass > 0.0) {
            return Err(LabError::GridLeak {
                leak: 1.0,
                tolerance: LEAK_TOLERANCE,
            });
        }
        for m in &mut masses {
            *m /= raw_mass;
        }
        Ok(GridDensity {
            spec,
            masses,
            raw_mass,
            leak,
            singular,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Total mass before normalization; for noisy rasterizations this is the
    /// midpoint-rule integral of the density over the grid.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    /// Upper bound on the probability that fell outside the grid.
    pub fn leak(&self) -> f64 {
        self.leak
    }

    /// True when the underlying distribution has no Lebesgue density.
    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Mass divided by cell volume.
    pub fn density_at_cell(&self, k: usize) -> f64 {
        self.masses[k] / self.spec.cell_volume()
    }

    pub fn occupied_cells(&self) -> usize {
        self.masses.iter().filter(|&&m| m > 0.0).count()
    }

    pub fn check_compatible(&self, other: &GridDensity) -> Result<()> {
        if self.spec.same_lattice(&other.spec) {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!("{:?} vs {:?}", self.spec, other.spec)))
        }
    }

    /// Writes `<path>` as CSV rows `(i0, …, mass)` and `<path>.json` with
    /// the lattice description. Returns the sidecar path.
    pub fn write_csv(&self, path: &Path) -> Result<PathBuf> {
        let d = self.spec.dim();
        let mut out = String::new();
        for ax in 0..d {
            let _ = write!(out, "i{ax},");
        }
        out.push_str("mass\n");
        for (k, m) in self.masses.iter().enumerate() {
            for i in self.spec.unravel(k) {
                let _ = write!(out, "{i},");
            }
            let _ = writeln!(out, "{m:.17e}");
        }
        std::fs::write(path, out).map_err(io_err)?;
        let side = sidecar_path(path);
        let meta = Sidecar {
            lower: self.spec.lower.clone(),
            upper: self.spec.upper.clone(),
            resolution: self.spec.resolution.clone(),
            raw_mass: self.raw_mass,
            leak: self.leak,
            singular: self.singular,
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
        std::fs::write(&side, json).map_err(io_err)?;
        Ok(side)
    }

    /// Reads a grid written by [`GridDensity::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(sidecar_path(path)).map_err(io_err)?;
        let meta: Sidecar = serde_json::from_str(&json).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
        let spec = GridSpec::new(meta.lower, meta.upper, meta.resolution)?;
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        let mut masses = vec![0.0; spec.num_cells()];
        for (line_no, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != spec.dim() + 1 {
                return invalid(format!("line {}: expected {} fields", line_no + 1, spec.dim() + 1));
            }
            let idx = fields[..spec.dim()]
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| LabError::InvalidArgument(format!("line {}: {e}", line_no + 1)))?;
            if idx.iter().zip(spec.resolution()).any(|(i, r)| i >= r) {
                return invalid(format!("line {}: cell index out of range", line_no + 1));
            }
            let m: f64 = fields[spec.dim()]
                .trim()
                .parse()
                .map_err(|e| LabError::InvalidArgument(format!("line {}: {e}", line_no + 1)))?;
            masses[spec.ravel(&idx)] = m;
        }
        let mut g = GridDensity::from_masses(spec, masses, meta.singular)?;
        g.raw_mass = meta.raw_mass;
        g.leak = meta.leak;
        Ok(g)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(e: std::io::Error) -> LabError {
    LabError::InvalidArgument(format!("io: {e}"))
}

/// Controls how finely singular supports are discretized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterOptions {
    /// Quadrature atoms per cell width along one-dimensional supports.
    pub atoms_per_cell: usize,
    /// Sample count for pushforward histograms without noise.
    pub histogram_samples: usize,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions {
            atoms_per_cell: 4,
            histogram_samples: 200_000,
        }
    }
}

/// Discretizes `dist` (optionally convolved with `noise`) onto `spec`.
pub fn rasterize<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    noise: Option<&NoiseSpec>,
    spec: &GridSpec,
    rng: &mut R,
) -> Result<GridDensity> {
    rasterize_with(dist, noise, spec, RasterOptions::default(), rng)
}

pub fn rasterize_with<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    noise: Option<&NoiseSpec>,
    spec: &GridSpec,
    opts: RasterOptions,
    rng: &mut R,
) -> Result<GridDensity> {
    let d = dist.ambient_dim();
    if spec.dim() != d {
        return Err(LabError::Shape {
            op: "rasterize",
            detail: format!("distribution in R^{d}, grid in R^{}", spec.dim()),
        });
    }
    match noise {
        Some(n) => {
            if n.dim() != d {
                return Err(LabError::Shape {
                    op: "rasterize",
                    detail: format!("noise in R^{}, distribution in R^{d}", n.dim()),
                });
            }
            rasterize_noisy(dist, n, spec, opts, rng)
        }
        None => rasterize_clean(dist, spec, opts, rng),
    }
}

/// Weighted atoms standing in for `dist` when scattering noise kernels.
fn scatter_atoms<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    spec: &GridSpec,
    opts: RasterOptions,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let hmin = (0..spec.dim())
        .map(|i| spec.cell_width(i))
        .fold(f64::INFINITY, f64::min);
    let per = opts.atoms_per_cell.max(1) as f64;
    let k = match dist.kind() {
        DistKind::Segment { start, end } => {
            let len = start.iter().zip(end).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            ((per * len / hmin).ceil() as usize).max(64)
        }
        DistKind::Circle { radius, .. } => ((per * 2.0 * std::f64::consts::PI * radius / hmin).ceil() as usize).max(64),
        DistKind::BoxUniform { lower, upper } => lower
            .iter()
            .zip(upper)
            .map(|(l, u)| ((per * (u - l) / hmin).ceil() as usize).max(4))
            .product(),
        DistKind::PointCloud { .. } => 1,
        DistKind::Gaussian { .. } | DistKind::Pushforward { .. } => 20_000,
    };
    let (pts, w) = dist.quadrature(k, rng)?;
    Ok(((0..pts.rows()).map(|i| pts.row(i).to_vec()).collect(), w))
}

type PointDensity = Box<dyn Fn(&[f64]) -> f64>;

/// Union bound on the noise mass outside the grid over weighted atoms.
fn noisy_leak(atoms: &[Vec<f64>], weights: &[f64], noise: &NoiseSpec, spec: &GridSpec) -> f64 {
    let mut leak = 0.0;
    for (y, w) in atoms.iter().zip(weights) {
        let mut p = 0.0;
        for ax in 0..spec.dim() {
            let below = y[ax] - spec.lower[ax];
            let above = spec.upper[ax] - y[ax];
            p += axis_tail(noise, ax, below) + axis_tail(noise, ax, above);
        }
        leak += w * p.min(1.0);
    }
    leak
}

/// `P(ε_ax > t)`; Gaussian tail, exact zero beyond a clip radius.
fn axis_tail(noise: &NoiseSpec, ax: usize, t: f64) -> f64 {
    if let NoiseFamily::ClippedGaussian { clip_radius, .. } = noise.family() {
        if t >= *clip_radius {
            return 0.0;
        }
    }
    let sd = noise.axis_variance(ax).sqrt();
    normal_cdf(-t / sd)
}

fn rasterize_noisy<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    noise: &NoiseSpec,
    spec: &GridSpec,
    opts: RasterOptions,
    rng: &mut R,
) -> Result<GridDensity> {
    let (atoms, weights) = scatter_atoms(dist, spec, opts, rng)?;
    let leak = noisy_leak(&atoms, &weights, noise, spec);
    if leak > LEAK_TOLERANCE {
        return Err(LabError::GridLeak {
            leak,
            tolerance: LEAK_TOLERANCE,
        });
    }
    let vol = spec.cell_volume();
    let n = spec.num_cells();
    let closed_form: Option<PointDensity> = match (dist.kind(), noise.family()) {
        (DistKind::Segment { start, end }, NoiseFamily::GaussianIso { variance }) => {
            let (a, b, v) = (start.clone(), end.clone(), *variance);
            Some(Box::new(move |x: &[f64]| segment_gaussian_density(&a, &b, v, x)))
        }
        (DistKind::Gaussian { .. }, NoiseFamily::GaussianIso { .. } | NoiseFamily::GaussianFull { .. }) => {
            let (dc, nc) = (dist.clone(), noise.clone());
            Some(Box::new(move |x: &[f64]| {
                super::density::convolved_density_exact(&dc, &nc, x).expect("gaussian closed form")
            }))
        }
        _ => None,
    };
    let masses = match closed_form {
        Some(f) => (0..n).map(|k| f(&spec.center(k)) * vol).collect(),
        None => {
            let mut masses = vec![0.0; n];
            let r = noise.cutoff_radius();
            let mut e = vec![0.0; spec.dim()];
            for (y, &w) in atoms.iter().zip(&weights) {
                if w == 0.0 {
                    continue;
                }
                let windows: Vec<(usize, usize)> = (0..spec.dim()).map(|ax| spec.axis_window(ax, y[ax], r)).collect();
                if windows.iter().any(|(lo, hi)| lo > hi) {
                    continue;
                }
                let mut idx: Vec<usize> = windows.iter().map(|w| w.0).collect();
                'cells: loop {
                    for ax in 0..spec.dim() {
                        e[ax] = spec.lower[ax] + (idx[ax] as f64 + 0.5) * spec.cell_width(ax) - y[ax];
                    }
                    let p = noise.density(&e);
                    if p > 0.0 {
                        masses[spec.ravel(&idx)] += w * p * vol;
                    }
                    for ax in (0..spec.dim()).rev() {
                        if idx[ax] < windows[ax].1 {
                            idx[ax] += 1;
                            continue 'cells;
                        }
                        idx[ax] = windows[ax].0;
                    }
                    break;
                }
            }
            masses
        }
    };
    GridDensity::normalized(spec.clone(), masses, leak, false)
}

fn rasterize_clean<R: Rng + ?Sized>(
    dist: &ManifoldDistribution,
    spec: &GridSpec,
    opts: RasterOptions,
    rng: &mut R,
) -> Result<GridDensity> {
    let n = spec.num_cells();
    let mut masses = vec![0.0; n];
    let mut outside = 0.0;
    let mut bin = |x: &[f64], w: f64, masses: &mut Vec<f64>| match spec.locate(x) {
        Some(k) => masses[k] += w,
        None => outside += w,
    };
    match dist.kind() {
        DistKind::BoxUniform { lower, upper } => {
            let vol: f64 = lower.iter().zip(upper).map(|(l, u)| u - l).product();
            for (k, m) in masses.iter_mut().enumerate() {
                let idx = spec.unravel(k);
                let mut overlap = 1.0;
                for ax in 0..spec.dim() {
                    let c0 = spec.lower[ax] + idx[ax] as f64 * spec.cell_width(ax);
                    let c1 = c0 + spec.cell_width(ax);
                    overlap *= (c1.min(upper[ax]) - c0.max(lower[ax])).max(0.0);
                }
                *m = overlap / vol;
            }
            outside = (1.0 - masses.iter().sum::<f64>()).max(0.0);
        }
        DistKind::Gaussian { mean, .. } => {
            let vol = spec.cell_volume();
            for (k, m) in masses.iter_mut().enumerate() {
                *m = dist.density(&spec.center(k)).expect("gaussian density") * vol;
            }
            let noise = NoiseSpec::gaussian_full(
                match dist.kind() {
                    DistKind::Gaussian { cov, .. } => cov.clone(),
                    _ => unreachable!(),
                },
                mean.len(),
            )?;
            outside = noisy_leak(std::slice::from_ref(mean), &[1.0], &noise, spec);
        }
        DistKind::PointCloud { atoms, weights } => {
            for (a, &w) in atoms.iter().zip(weights) {
                bin(a, w, &mut masses);
            }
        }
        DistKind::Pushforward { .. } => {
            let s = dist.sample(opts.histogram_samples.max(1), rng)?;
            let w = 1.0 / s.rows() as f64;
            for i in 0..s.rows() {
                bin(s.row(i), w, &mut masses);
            }
        }
        DistKind::Segment { .. } | DistKind::Circle { .. } => {
            let hmin = (0..spec.dim())
                .map(|i| spec.cell_width(i))
                .fold(f64::INFINITY, f64::min);
            let (lo, hi) = dist.bounding_box().expect("bounded support");
            let extent = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
            let length = match dist.kind() {
                DistKind::Circle { radius, .. } => 2.0 * std::f64::consts::PI * radius,
                _ => extent,
            };
            let k = ((opts.atoms_per_cell.max(1) as f64 * 16.0 * length / hmin).ceil() as usize).max(10_000);
            let (pts, w) = dist.quadrature(k, rng)?;
            for (i, wi) in w.iter().enumerate() {
                bin(pts.row(i), *wi, &mut masses);
            }
        }
    }
    if outside > LEAK_TOLERANCE {
        return Err(LabError::GridLeak {
            leak: outside,
            tolerance: LEAK_TOLERANCE,
        });
    }
    GridDensity::normalized(spec.clone(), masses, outside, dist.is_singular())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn point_mass_at_cell_centre() {
        let spec = GridSpec::cube(&[0.0, 0.0], 2.0, 4).unwrap();
        let c = spec.center(6);
        let p = ManifoldDistribution::point_mass(c).unwrap();
        let g = rasterize(&p, None, &spec, &mut stream(0, 0)).unwrap();
        assert_eq!(g.masses()[6], 1.0);
        assert_eq!(g.masses().iter().sum::<f64>(), 1.0);
        assert!(g.is_singular());
    }

    #[test]
    fn box_on_grid_bounds_is_uniform() {
        let spec = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![10, 20]).unwrap();
        let b = ManifoldDistribution::box_uniform(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = rasterize(&b, None, &spec, &mut stream(0, 0)).unwrap();
        for &m in g.masses() {
            assert!((m - 1.0 / 200.0).abs() < 1e-15);
        }
    }

    #[test]
    fn leak_is_reported() {
        let spec = GridSpec::cube(&[0.0, 0.0], 1.0, 20).unwrap();
        let s = ManifoldDistribution::segment(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        match rasterize(&s, None, &spec, &mut stream(0, 0)) {
            Err(LabError::GridLeak { leak, .. }) => assert!((leak - 0.5).abs() < 1e-3, "{leak}"),
            other => panic!("expected leak error, got {other:?}"),
        }
    }

    #[test]
    fn noisy_segment_mass_within_grid() {
        let spec = GridSpec::cube(&[0.5, 0.0], 3.0, 200).unwrap();
        let s = ManifoldDistribution::segment(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let n = NoiseSpec::gaussian_iso(0.01, 2).unwrap();
        let g = rasterize(&s, Some(&n), &spec, &mut stream(0, 0)).unwrap();
        assert!(g.raw_mass() >= 0.999 && g.raw_mass() < 1.001, "{}", g.raw_mass());
        assert!((g.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_scatter_matches_closed_form() {
        // clipped at 8σ the kernel is numerically a Gaussian, so scattering must
        // agree with the exact segment density
        let spec = GridSpec::cube(&[0.5, 0.0], 3.0, 120).unwrap();
        let s = ManifoldDistribution::segment(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let exact = rasterize(
            &s,
            Some(&NoiseSpec::gaussian_iso(0.04, 2).unwrap()),
            &spec,
            &mut stream(0, 0),
        )
        .unwrap();
        let clipped = NoiseSpec::clipped_gaussian(0.04, 1.6, 2).unwrap();
        let opts = RasterOptions {
            atoms_per_cell: 8,
            ..Default::default()
        };
        let scat = rasterize_with(&s, Some(&clipped), &spec, opts, &mut stream(0, 0)).unwrap();
        let l1: f64 = exact
            .masses()
            .iter()
            .zip(scat.masses())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 1e-3, "{l1}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("grid_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = GridSpec::cube(&[0.0, 0.0], 2.0, 5).unwrap();
        let p = ManifoldDistribution::point_cloud(vec![vec![0.1, 0.1], vec![-0.5, 0.7]], vec![0.3, 0.7]).unwrap();
        let g = rasterize(
            &p,
            Some(&NoiseSpec::gaussian_iso(0.04, 2).unwrap()),
            &spec,
            &mut stream(0, 0),
        )
        .unwrap_or_else(|_| rasterize(&p, None, &spec, &mut stream(0, 0)).unwrap());
        let path = dir.join("g.csv");
        g.write_csv(&path).unwrap();
        let back = GridDensity::read_csv(&path).unwrap();
        assert_eq!(back.spec(), g.spec());
        for (a, b) in back.masses().iter().zip(g.masses()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn locate_and_centres_agree() {
        let spec = GridSpec::new(vec![-1.0, 0.0, 2.0], vec![1.0, 3.0, 4.0], vec![4, 3, 5]).unwrap();
        for k in 0..spec.num_cells() {
            assert_eq!(spec.locate(&spec.center(k)), Some(k));
        }
        assert_eq!(spec.locate(&[1.0, 3.0, 4.0]), Some(spec.num_cells() - 1));
        assert_eq!(spec.locate(&[1.1, 0.0, 2.0]), None);
    }
}
