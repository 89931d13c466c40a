use super::noise::cholesky;
use crate::diffcore::{Mlp, Tensor};
use crate::error::{invalid, LabError, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub enum DistKind {
    /// Uniform on the segment from `start` to `end`.
    Segment { start: Vec<f64>, end: Vec<f64> },
    /// Uniform on a circle in the plane.
    Circle { center: [f64; 2], radius: f64 },
    /// Finite mixture of point masses.
    PointCloud { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Uniform on an axis-aligned box.
    BoxUniform { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
        chol: Vec<f64>,
    },
    /// `g(z)` for `z` drawn from `prior`.
    Pushforward {
        generator: Mlp,
        prior: Box<ManifoldDistribution>,
    },
}

/// Sampler plus support description for `P_r`, `P_g` and priors.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldDistribution {
    kind: DistKind,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ManifoldDistribution {
    pub fn segment(start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if start.is_empty() || start.len() != end.len() || !finite(&start) || !finite(&end) {
            return invalid("segment endpoints must be finite points of equal dimension");
        }
        Ok(Self {
            kind: DistKind::Segment { start, end },
        })
    }

    pub fn circle(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !finite(&center) {
            return invalid(format!("circle radius must be positive, got {radius}"));
        }
        Ok(Self {
            kind: DistKind::Circle { center, radius },
        })
    }

    pub fn point_cloud(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return invalid("point cloud needs one weight per atom");
        }
        let d = atoms[0].len();
        if d == 0 || atoms.iter().any(|a| a.len() != d || !finite(a)) {
            return invalid("atoms must be finite points of equal dimension");
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return invalid("weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("weights must sum to 1, got {total}"));
        }
        Ok(Self {
            kind: DistKind::PointCloud { atoms, weights },
        })
    }

    pub fn point_mass(x: Vec<f64>) -> Result<Self> {
        Self::point_cloud(vec![x], vec![1.0])
    }

    pub fn box_uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty()
            || lower.len() != upper.len()
            || lower
                .iter()
                .zip(&upper)
                .any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite())
        {
            return invalid("box needs lower < upper on every axis");
        }
        Ok(Self {
            kind: DistKind::BoxUniform { lower, upper },
        })
    }

    pub fn gaussian(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || !finite(&mean) {
            return invalid("gaussian mean must be finite and non-empty");
        }
        let chol = cholesky(&cov, mean.len())?;
        Ok(Self {
            kind: DistKind::Gaussian { mean, cov, chol },
        })
    }

    pub fn pushforward(generator: Mlp, prior: ManifoldDistribution) -> Result<Self> {
        if prior.ambient_dim() != generator.input_dim() {
            return Err(LabError::Shape {
                op: "pushforward",
                detail: format!(
                    "prior lives in R^{} but generator expects {} inputs",
                    prior.ambient_dim(),
                    generator.input_dim()
                ),
            });
        }
        Ok(Self {
            kind: DistKind::Pushforward {
                generator,
                prior: Box::new(prior),
            },
        })
    }

    /// The default disjoint-support pair: unit segments along the x-axis at
    /// heights 0 and `offset`.
    pub fn parallel_segments(offset: f64) -> Result<(Self, Self)> {
        Ok((
            Self::segment(vec![0.0, 0.0], vec![1.0, 0.0])?,
            Self::segment(vec![0.0, offset], vec![1.0, offset])?,
        ))
    }

    /// Two unit segments crossing transversally at `(0.5, 0)`.
    pub fn crossing_segments() -> Result<(Self, Self)> {
        Ok((
            Self::segment(vec![0.0, 0.0], vec![1.0, 0.0])?,
            Self::segment(vec![0.5, -0.5], vec![0.5, 0.5])?,
        ))
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DistKind::Segment { .. } => "segment",
            DistKind::Circle { .. } => "circle",
            DistKind::PointCloud { .. } => "point_cloud",
            DistKind::BoxUniform { .. } => "box_uniform",
            DistKind::Gaussian { .. } => "gaussian",
            DistKind::Pushforward { .. } => "pushforward",
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.kind {
            DistKind::Segment { start, .. } => start.len(),
            DistKind::Circle { .. } => 2,
            DistKind::PointCloud { atoms, .. } => atoms[0].len(),
            DistKind::BoxUniform { lower, .. } => lower.len(),
            DistKind::Gaussian { mean, .. } => mean.len(),
            DistKind::Pushforward { generator, .. } => generator.output_dim(),
        }
    }

    /// True when the distribution has no density on its ambient space.
    pub fn is_singular(&self) -> bool {
        match &self.kind {
            DistKind::Segment { .. } | DistKind::Circle { .. } | DistKind::PointCloud { .. } => true,
            DistKind::BoxUniform { .. } | DistKind::Gaussian { .. } => false,
            DistKind::Pushforward { generator, prior } => {
                prior.is_singular() || generator.input_dim() < generator.output_dim()
            }
        }
    }

    /// Lebesgue density, or `None` when the distribution is singular (or the
    /// density is not available in closed form).
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            DistKind::BoxUniform { lower, upper } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (l, u))| v >= l && v <= u);
                let vol: f64 = lower.iter().zip(upper).map(|(l, u)| u - l).product();
                Some(if inside { 1.0 / vol } else { 0.0 })
            }
            DistKind::Gaussian { mean, chol, .. } => Some(gaussian_density(x, mean, chol)),
            _ => None,
        }
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            DistKind::Segment { start, end } => {
                let t: f64 = rng.random();
                start.iter().zip(end).map(|(a, b)| a + t * (b - a)).collect()
            }
            DistKind::Circle { center, radius } => {
                let phi = 2.0 * PI * rng.random::<f64>();
                vec![center[0] + radius * phi.cos(), center[1] + radius * phi.sin()]
            }
            DistKind::PointCloud { atoms, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return a.clone();
                    }
                }
                // rounding left u above the cumulative total
                let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                atoms[last].clone()
            }
            DistKind::BoxUniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            DistKind::Gaussian { mean, chol, .. } => {
                let d = mean.len();
                let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                (0..d)
                    .map(|i| mean[i] + (0..=i).map(|j| chol[i * d + j] * xi[j]).sum::<f64>())
                    .collect()
            }
            DistKind::Pushforward { generator, prior } => {
                let z = prior.sample_point(rng);
                generator
                    .eval(&Tensor::vector(z))
                    .expect("prior dimension checked at construction")
                    .into_data()
            }
        }
    }

    /// `n` i.i.d. samples as an `(n, d)` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        if n == 0 {
            return invalid("sample count must be at least 1");
        }
        if let DistKind::Pushforward { generator, prior } = &self.kind {
            let z = prior.sample(n, rng)?;
            return generator.eval(&z);
        }
        let d = self.ambient_dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend(self.sample_point(rng));
        }
        Tensor::matrix(n, d, data)
    }

    /// Deterministic quadrature of about `k` weighted atoms: midpoints for
    /// segments, circles and boxes, the atoms themselves for point clouds.
    /// Gaussians fall back to samples; pushforwards push the prior's
    /// quadrature through the generator.
    pub fn quadrature<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<(Tensor, Vec<f64>)> {
        if k == 0 {
            return invalid("quadrature size must be at least 1");
        }
        match &self.kind {
            DistKind::Segment { start, end } => {
                let d = start.len();
                let mut data = Vec::with_capacity(k * d);
                for i in 0..k {
                    let t = (i as f64 + 0.5) / k as f64;
                    data.extend(start.iter().zip(end).map(|(a, b)| a + t * (b - a)));
                }
                Ok((Tensor::matrix(k, d, data)?, vec![1.0 / k as f64; k]))
            }
            DistKind::Circle { center, radius } => {
                let mut data = Vec::with_capacity(2 * k);
                for i in 0..k {
                    let phi = 2.0 * PI * (i as f64 + 0.5) / k as f64;
                    data.push(center[0] + radius * phi.cos());
                    data.push(center[1] + radius * phi.sin());
                }
                Ok((Tensor::matrix(k, 2, data)?, vec![1.0 / k as f64; k]))
            }
            DistKind::PointCloud { atoms, weights } => Ok((Tensor::from_rows(atoms)?, weights.clone())),
            DistKind::BoxUniform { lower, upper } => {
                let d = lower.len();
                let per_axis = ((k as f64).powf(1.0 / d as f64).round() as usize).max(1);
                let total = per_axis.pow(d as u32);
                let mut data = Vec::with_capacity(total * d);
                for flat in 0..total {
                    let mut rem = flat;
                    let mut pt = vec![0.0; d];
                    for ax in (0..d).rev() {
                        let i = rem % per_axis;
                        rem /= per_axis;
                        pt[ax] = lower[ax] + (upper[ax] - lower[ax]) * (i as f64 + 0.5) / per_axis as f64;
                    }
                    data.extend(pt);
                }
                Ok((Tensor::matrix(total, d, data)?, vec![1.0 / total as f64; total]))
            }
            DistKind::Gaussian { .. } => Ok((self.sample(k, rng)?, vec![1.0 / k as f64; k])),
            DistKind::Pushforward { generator, prior } => {
                let (z, w) = prior.quadrature(k, rng)?;
                Ok((generator.eval(&z)?, w))
            }
        }
    }

    /// Axis-aligned bounding box of the support, if bounded.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            DistKind::Segment { start, end } => Some((
                start.iter().zip(end).map(|(a, b)| a.min(*b)).collect(),
                start.iter().zip(end).map(|(a, b)| a.max(*b)).collect(),
            )),
            DistKind::Circle { center, radius } => Some((
                vec![center[0] - radius, center[1] - radius],
                vec![center[0] + radius, center[1] + radius],
            )),
            DistKind::PointCloud { atoms, weights } => {
                let d = atoms[0].len();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for (a, &w) in atoms.iter().zip(weights) {
                    if w > 0.0 {
                        for i in 0..d {
                            lo[i] = lo[i].min(a[i]);
                            hi[i] = hi[i].max(a[i]);
                        }
                    }
                }
                Some((lo, hi))
            }
            DistKind::BoxUniform { lower, upper } => Some((lower.clone(), upper.clone())),
            DistKind::Gaussian { .. } | DistKind::Pushforward { .. } => None,
        }
    }
}

pub(crate) fn gaussian_density(x: &[f64], mean: &[f64], chol: &[f64]) -> f64 {
    let d = mean.len();
    let mut y = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|j| chol[i * d + j] * y[j]).sum();
        y[i] = (x[i] - mean[i] - s) / chol[i * d + i];
    }
    let logdet: f64 = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum();
    let q: f64 = y.iter().map(|v| v * v).sum();
    (-0.5 * (q + logdet + d as f64 * (2.0 * PI).ln())).exp()
}

// ---------------------------------------------------------------------------
// Support distances

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(&ab, &ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        (dot(&sub(p, a), &ab) / len2).clamp(0.0, 1.0)
    };
    let q: Vec<f64> = a.iter().zip(&ab).map(|(x, d)| x + t * d).collect();
    dist(p, &q)
}

/// Minimal distance between segments `[p1, q1]` and `[p2, q2]` in any dimension.
pub(crate) fn segment_segment_distance(p1: &[f64], q1: &[f64], p2: &[f64], q2: &[f64]) -> f64 {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(&d1, &d1);
    let e = dot(&d2, &d2);
    let f = dot(&d2, &r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return dist(p1, p2);
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(&d1, &r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(&d1, &d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1: Vec<f64> = p1.iter().zip(&d1).map(|(x, d)| x + s * d).collect();
    let c2: Vec<f64> = p2.iter().zip(&d2).map(|(x, d)| x + t * d).collect();
    // the clamped closed form can miss the exact optimum when both parameters
    // hit bounds; endpoint distances cover those cases
    dist(&c1, &c2)
        .min(point_segment_distance(p1, p2, q2))
        .min(point_segment_distance(q1, p2, q2))
        .min(point_segment_distance(p2, p1, q1))
        .min(point_segment_distance(q2, p1, q1))
}

fn point_box_distance(p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| {
            let d = (l - x).max(0.0).max(x - h);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn support_atoms(d: &ManifoldDistribution) -> Option<Vec<&Vec<f64>>> {
    match &d.kind {
        DistKind::PointCloud { atoms, weights } => Some(
            atoms
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(a, _)| a)
                .collect(),
        ),
        _ => None,
    }
}

/// Distance from a point to the support.
fn point_to_support(p: &[f64], d: &ManifoldDistribution) -> Result<f64> {
    Ok(match &d.kind {
        DistKind::Segment { start, end } => point_segment_distance(p, start, end),
        DistKind::Circle { center, radius } => (dist(p, center) - radius).abs(),
        DistKind::PointCloud { .. } => support_atoms(d)
            .expect("point cloud")
            .iter()
            .map(|a| dist(p, a))
            .fold(f64::INFINITY, f64::min),
        DistKind::BoxUniform { lower, upper } => point_box_distance(p, lower, upper),
        DistKind::Gaussian { .. } => 0.0,
        DistKind::Pushforward { .. } => {
            return Err(LabError::UnsupportedKind {
                op: "support_gap",
                kind: "pushforward",
            })
        }
    })
}

/// Minimal Euclidean distance between the supports of `a` and `b`.
pub fn support_gap(a: &ManifoldDistribution, b: &ManifoldDistribution) -> Result<f64> {
    use DistKind::*;
    for d in [a, b] {
        if let Pushforward { .. } = d.kind {
            return Err(LabError::UnsupportedKind {
                op: "support_gap",
                kind: "pushforward",
            });
        }
    }
    if a.ambient_dim() != b.ambient_dim() {
        return invalid("distributions live in different dimensions");
    }
    if let Some(atoms) = support_atoms(a) {
        return atoms
            .iter()
            .map(|p| point_to_support(p, b))
            .try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d)));
    }
    if support_atoms(b).is_some() {
        return support_gap(b, a);
    }
    match (&a.kind, &b.kind) {
        (Gaussian { .. }, _) | (_, Gaussian { .. }) => Ok(0.0),
        (Segment { start: p1, end: q1 }, Segment { start: p2, end: q2 }) => {
            Ok(segment_segment_distance(p1, q1, p2, q2))
        }
        (Circle { center: c1, radius: r1 }, Circle { center: c2, radius: r2 }) => {
            let d = dist(c1, c2);
            Ok((d - r1 - r2).max((r1 - r2).abs() - d).max(0.0))
        }
        (Circle { center, radius }, Segment { start, end }) | (Segment { start, end }, Circle { center, radius }) => {
            // distance to the centre varies continuously over [near, far] along the segment
            let near = point_segment_distance(center, start, end);
            let far = dist(center, start).max(dist(center, end));
            Ok(if *radius < near {
                near - radius
            } else if *radius > far {
                radius - far
            } else {
                0.0
            })
        }
        (BoxUniform { lower: l1, upper: u1 }, BoxUniform { lower: l2, upper: u2 }) => Ok(l1
            .iter()
            .zip(u1)
            .zip(l2.iter().zip(u2))
            .map(|((a0, a1), (b0, b1))| {
                let g = (b0 - a1).max(a0 - b1).max(0.0);
                g * g
            })
            .sum::<f64>()
            .sqrt()),
        _ => Err(LabError::UnsupportedKind {
            op: "support_gap",
            kind: if matches!(a.kind, BoxUniform { .. }) {
                b.kind_name()
            } else {
                a.kind_name()
            },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, Layer};
    use crate::rng::stream;

    #[test]
    fn constructors_enforce_invariants() {
        assert!(ManifoldDistribution::circle([0.0, 0.0], 0.0).is_err());
        assert!(ManifoldDistribution::point_cloud(vec![vec![0.0]], vec![0.5]).is_err());
        assert!(ManifoldDistribution::point_cloud(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        assert!(ManifoldDistribution::box_uniform(vec![0.0], vec![0.0]).is_err());
        let g = Mlp::new(vec![Layer::new(
            Tensor::zeros(&[2, 2]),
            Tensor::zeros(&[2]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let prior = ManifoldDistribution::box_uniform(vec![0.0], vec![1.0]).unwrap();
        assert!(ManifoldDistribution::pushforward(g, prior).is_err());
    }

    #[test]
    fn single_atom_always_sampled() {
        let d = ManifoldDistribution::point_mass(vec![1.0, 1.0]).unwrap();
        let s = d.sample(100, &mut stream(0, 0)).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn segment_mean_is_midpoint() {
        let d = ManifoldDistribution::segment(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let n = 100_000;
        let s = d.sample(n, &mut stream(1, 0)).unwrap();
        let mx = (0..n).map(|i| s.at(i, 0)).sum::<f64>() / n as f64;
        let my = (0..n).map(|i| s.at(i, 1)).sum::<f64>() / n as f64;
        let sd = (1.0f64 / 12.0).sqrt();
        assert!((mx - 0.5).abs() < 3.0 * sd / (n as f64).sqrt(), "{mx}");
        assert_eq!(my, 0.0);
    }

    #[test]
    fn circle_samples_have_unit_radius() {
        let d = ManifoldDistribution::circle([0.0, 0.0], 1.0).unwrap();
        let n = 100_000;
        let s = d.sample(n, &mut stream(2, 0)).unwrap();
        let r = (0..n).map(|i| s.at(i, 0).hypot(s.at(i, 1))).sum::<f64>() / n as f64;
        assert!((r - 1.0).abs() < 1e-3);
    }

    #[test]
    fn support_gaps_in_closed_form() {
        let (a, b) = ManifoldDistribution::parallel_segments(0.5).unwrap();
        assert!((support_gap(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(support_gap(&a, &a).unwrap(), 0.0);
        let p = ManifoldDistribution::point_mass(vec![2.0, 0.0]).unwrap();
        assert_eq!(support_gap(&a, &p).unwrap(), 1.0);
        let (s, t) = ManifoldDistribution::crossing_segments().unwrap();
        assert_eq!(support_gap(&s, &t).unwrap(), 0.0);
        let c = ManifoldDistribution::circle([0.5, 3.0], 1.0).unwrap();
        assert!((support_gap(&a, &c).unwrap() - 2.0).abs() < 1e-12);
        let c2 = ManifoldDistribution::circle([0.5, 3.0], 0.25).unwrap();
        assert!((support_gap(&c, &c2).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pushforward_gap_is_unsupported() {
        let g = Mlp::new(vec![Layer::new(
            Tensor::zeros(&[1, 2]),
            Tensor::zeros(&[2]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let prior = ManifoldDistribution::box_uniform(vec![0.0], vec![1.0]).unwrap();
        let pf = ManifoldDistribution::pushforward(g, prior).unwrap();
        let (a, _) = ManifoldDistribution::parallel_segments(0.5).unwrap();
        assert!(matches!(support_gap(&pf, &a), Err(LabError::UnsupportedKind { .. })));
    }

    #[test]
    fn skew_segments_in_3d() {
        let d = segment_segment_distance(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.5, -1.0, 2.0], &[0.5, 1.0, 2.0]);
        assert!((d - 2.0).abs() < 1e-12);
    }
}
