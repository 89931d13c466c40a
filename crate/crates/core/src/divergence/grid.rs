use super::value::{Discretization, DivergenceValue, Method, LN_2};
use crate::error::{LabError, Result};
use crate::manifolds::{support_gap, DistKind, GridDensity, ManifoldDistribution};

fn meta(p: &GridDensity) -> Option<Discretization> {
    Some(Discretization {
        cells: p.spec().num_cells(),
        cell_diagonal: p.spec().cell_diagonal(),
    })
}

fn grid_disjoint(p: &GridDensity, q: &GridDensity) -> bool {
    p.masses().iter().zip(q.masses()).all(|(&a, &b)| a == 0.0 || b == 0.0)
}

/// Outcome of the support test when either grid is singular.
enum Singular {
    /// Both distributions have densities; use cell ratios.
    Regular,
    /// Supports are mutually singular.
    Disjoint,
}

fn classify(p: &GridDensity, q: &GridDensity, op: &str) -> Result<Singular> {
    p.check_compatible(q)?;
    if grid_disjoint(p, q) {
        return Ok(Singular::Disjoint);
    }
    match (p.is_singular(), q.is_singular()) {
        (false, false) => Ok(Singular::Regular),
        // a density and a measure-zero support are mutually singular
        (true, false) | (false, true) => Ok(Singular::Disjoint),
        (true, true) => Err(LabError::Undefined(format!(
            "{op} between overlapping singular grids is resolution noise; use singular_divergences"
        ))),
    }
}

/// `Σ p_i log(p_i / q_i)`, `+∞` when `p` charges a cell `q` does not.
pub fn kl_grid(p: &GridDensity, q: &GridDensity) -> Result<DivergenceValue> {
    if let Singular::Disjoint = classify(p, q, "KL")? {
        return Ok(DivergenceValue::infinite(Method::SupportDisjointness, meta(p)));
    }
    let mut acc = 0.0;
    for (&a, &b) in p.masses().iter().zip(q.masses()) {
        if a > 0.0 {
            if b == 0.0 {
                return Ok(DivergenceValue::infinite(Method::Grid, meta(p)));
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(DivergenceValue::finite(acc.max(0.0), Method::Grid, meta(p)))
}

/// Jensen-Shannon divergence through the mixture `m = (p + q)/2`.
pub fn jsd_grid(p: &GridDensity, q: &GridDensity) -> Result<DivergenceValue> {
    if let Singular::Disjoint = classify(p, q, "JSD")? {
        return Ok(DivergenceValue::finite(LN_2, Method::SupportDisjointness, meta(p)));
    }
    Ok(DivergenceValue::finite(
        jsd_masses(p.masses(), q.masses()),
        Method::Grid,
        meta(p),
    ))
}

/// Jensen-Shannon divergence of two mass vectors, clamped to `[0, log 2]`.
pub fn jsd_masses(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).ln();
        }
    }
    acc.clamp(0.0, LN_2)
}

/// `½ Σ |p_i − q_i|`.
pub fn tv_grid(p: &GridDensity, q: &GridDensity) -> Result<DivergenceValue> {
    if let Singular::Disjoint = classify(p, q, "TV")? {
        return Ok(DivergenceValue::finite(1.0, Method::SupportDisjointness, meta(p)));
    }
    let s: f64 = p.masses().iter().zip(q.masses()).map(|(a, b)| (a - b).abs()).sum();
    Ok(DivergenceValue::finite((0.5 * s).min(1.0), Method::Grid, meta(p)))
}

/// Exact divergences between two singular distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularDivergences {
    pub jsd: DivergenceValue,
    pub kl_pq: DivergenceValue,
    pub kl_qp: DivergenceValue,
    pub support_gap: f64,
}

/// JSD, KL(p‖q) and KL(q‖p) for supports that are measure-theoretically
/// disjoint: separated by more than `resolution`, or two segments crossing
/// transversally (intersection is a single point).
pub fn singular_divergences(
    p: &ManifoldDistribution,
    q: &ManifoldDistribution,
    resolution: f64,
) -> Result<SingularDivergences> {
    if !p.is_singular() || !q.is_singular() {
        return Err(LabError::InvalidArgument(
            "singular_divergences expects two singular distributions".into(),
        ));
    }
    let gap = support_gap(p, q)?;
    let transversal = match (p.kind(), q.kind()) {
        (DistKind::Segment { start: a0, end: a1 }, DistKind::Segment { start: b0, end: b1 }) => {
            !segments_parallel(a0, a1, b0, b1)
        }
        _ => false,
    };
    if gap <= resolution && !transversal {
        return Err(LabError::Undefined(format!(
            "supports are within {gap} of each other and may overlap on a set of positive measure"
        )));
    }
    Ok(SingularDivergences {
        jsd: DivergenceValue::finite(LN_2, Method::SupportDisjointness, None),
        kl_pq: DivergenceValue::infinite(Method::SupportDisjointness, None),
        kl_qp: DivergenceValue::infinite(Method::SupportDisjointness, None),
        support_gap: gap,
    })
}

fn segments_parallel(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> bool {
    let u: Vec<f64> = a0.iter().zip(a1).map(|(x, y)| y - x).collect();
    let v: Vec<f64> = b0.iter().zip(b1).map(|(x, y)| y - x).collect();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let uv: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    // sin² of the angle between the directions
    uu == 0.0 || vv == 0.0 || (1.0 - uv * uv / (uu * vv)) < 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::GridSpec;

    fn two_cell(p: [f64; 2]) -> GridDensity {
        let spec = GridSpec::new(vec![0.0], vec![2.0], vec![2]).unwrap();
        GridDensity::from_masses(spec, p.to_vec(), false).unwrap()
    }

    #[test]
    fn hand_sums() {
        let p = two_cell([0.5, 0.5]);
        let q = two_cell([0.25, 0.75]);
        let kl = kl_grid(&p, &q).unwrap().value().unwrap();
        assert!((kl - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert!((tv_grid(&p, &q).unwrap().value().unwrap() - 0.25).abs() < 1e-15);
        let r = two_cell([1.0, 0.0]);
        let jsd = jsd_grid(&r, &p).unwrap().value().unwrap();
        let kl1 = (1.0f64 / 0.75).ln();
        let kl2 = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((jsd - 0.5 * (kl1 + kl2)).abs() < 1e-15);
        assert_eq!(kl_grid(&p, &p).unwrap().value(), Some(0.0));
        assert_eq!(jsd_grid(&p, &p).unwrap().value(), Some(0.0));
    }

    #[test]
    fn disjoint_grids_saturate() {
        let p = two_cell([1.0, 0.0]);
        let q = two_cell([0.0, 1.0]);
        assert_eq!(jsd_grid(&p, &q).unwrap().value(), Some(LN_2));
        assert!(kl_grid(&p, &q).unwrap().is_infinite());
        assert!(kl_grid(&q, &p).unwrap().is_infinite());
        assert_eq!(tv_grid(&p, &q).unwrap().value(), Some(1.0));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let p = two_cell([1.0, 0.0]);
        let spec = GridSpec::new(vec![0.0], vec![3.0], vec![2]).unwrap();
        let q = GridDensity::from_masses(spec, vec![0.5, 0.5], false).unwrap();
        assert!(matches!(kl_grid(&p, &q), Err(LabError::GridMismatch(_))));
    }

    #[test]
    fn crossing_segments_are_mutually_singular() {
        let (a, b) = ManifoldDistribution::crossing_segments().unwrap();
        let s = singular_divergences(&a, &b, 0.01).unwrap();
        assert_eq!(s.jsd.value(), Some(LN_2));
        let c = ManifoldDistribution::segment(vec![0.5, 0.0], vec![1.5, 0.0]).unwrap();
        assert!(singular_divergences(&a, &c, 0.01).is_err());
    }
}
