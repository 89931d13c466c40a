mod common;

use common::brute_force;
use ganlab::divergence::{euclidean, wasserstein_exact, EmpiricalMeasure};
use ganlab::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn cloud<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| scale * (rng.random::<f64>() - 0.5)).collect())
        .collect()
}

#[test]
fn matches_permutation_oracle_six_points() {
    let mut rng = stream(11, 0);
    for _ in 0..50 {
        let a = cloud(&mut rng, 6, 2, 2.0);
        let b = cloud(&mut rng, 6, 2, 2.0);
        let w = wasserstein_exact(
            &EmpiricalMeasure::uniform(a.clone()).unwrap(),
            &EmpiricalMeasure::uniform(b.clone()).unwrap(),
        )
        .unwrap()
        .0
        .value()
        .unwrap();
        let oracle = brute_force(&a, &b);
        assert!((w - oracle).abs() < 1e-9, "{w} vs {oracle}");
    }
}

#[test]
fn coupling_marginals_and_cost_agree() {
    let mut rng = stream(12, 0);
    let a = cloud(&mut rng, 40, 3, 4.0);
    let b = cloud(&mut rng, 25, 3, 4.0);
    let wa: Vec<f64> = {
        let raw: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    };
    let ma = EmpiricalMeasure::new(a.clone(), wa.clone()).unwrap();
    let mb = EmpiricalMeasure::uniform(b.clone()).unwrap();
    let (w, c) = wasserstein_exact(&ma, &mb).unwrap();
    for (s, t) in c.row_sums().iter().zip(&wa) {
        assert!((s - t).abs() < 1e-9);
    }
    for s in c.col_sums() {
        assert!((s - 1.0 / 25.0).abs() < 1e-9);
    }
    for &(_, _, m) in c.entries() {
        assert!(m >= -1e-9);
    }
    let recomputed = c.cost(|i, j| euclidean(&a[i], &b[j]));
    assert!((recomputed - w.value().unwrap()).abs() < 1e-12);
}

#[test]
fn large_instance_completes() {
    let mut rng = stream(13, 0);
    let a = cloud(&mut rng, 1000, 2, 1.0);
    let b = cloud(&mut rng, 1000, 2, 1.0);
    let (w, c) = wasserstein_exact(
        &EmpiricalMeasure::uniform(a).unwrap(),
        &EmpiricalMeasure::uniform(b).unwrap(),
    )
    .unwrap();
    assert!(w.value().unwrap() > 0.0);
    assert!(c.entries().len() <= 1999);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triangle_inequality(seed in 0u64..10_000, n in 2usize..12, m in 2usize..12, k in 2usize..12) {
        let mut rng = stream(seed, 1);
        let x = EmpiricalMeasure::uniform(cloud(&mut rng, n, 2, 3.0)).unwrap();
        let y = EmpiricalMeasure::uniform(cloud(&mut rng, m, 2, 3.0)).unwrap();
        let z = EmpiricalMeasure::uniform(cloud(&mut rng, k, 2, 3.0)).unwrap();
        let w = |p: &EmpiricalMeasure, q: &EmpiricalMeasure| wasserstein_exact(p, q).unwrap().0.value().unwrap();
        prop_assert!(w(&x, &z) <= w(&x, &y) + w(&y, &z) + 1e-7);
        prop_assert!((w(&x, &y) - w(&y, &x)).abs() < 1e-9);
    }

    #[test]
    fn permutation_oracle_small(seed in 0u64..10_000, n in 1usize..=7) {
        let mut rng = stream(seed, 2);
        let a = cloud(&mut rng, n, 2, 2.0);
        let b = cloud(&mut rng, n, 2, 2.0);
        let w = wasserstein_exact(
            &EmpiricalMeasure::uniform(a.clone()).unwrap(),
            &EmpiricalMeasure::uniform(b.clone()).unwrap(),
        ).unwrap().0.value().unwrap();
        prop_assert!((w - brute_force(&a, &b)).abs() < 1e-9);
    }
}
