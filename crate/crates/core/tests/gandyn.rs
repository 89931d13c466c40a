mod common;

use ganlab::diffcore::{Activation, Layer, Mlp, Tensor};
use ganlab::divergence::{jsd_grid, optimal_discriminator};
use ganlab::error::LabError;
use ganlab::gandyn::{
    cauchy_simulation, disc_loss_values, generator_gradient, logd_identity_check, noisy_gradient_decomposition,
    noisy_grid, noisy_jsd_gradient_check, train_discriminator, vanishing_bound_status, vanishing_probe, BoundStatus,
    CauchyModel, GanConfig, GaussianShiftFamily, GenLossKind, NoisySegmentSetup,
};
use ganlab::manifolds::{rasterize, GridSpec, ManifoldDistribution};
use ganlab::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn layer(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>, act: Activation) -> Layer {
    Layer::new(Tensor::matrix(rows, cols, w).unwrap(), Tensor::vector(b), act).unwrap()
}

/// `D = 1` on `y ≤ 0.25 − 1/8` and exactly `0` on `y ≥ 0.25`: a relu step
/// into a sigmoid with logits ±800.
fn step_discriminator() -> Mlp {
    Mlp::new(vec![
        layer(vec![0.0, -6400.0], 2, 1, vec![1600.0], Activation::Relu),
        layer(vec![1.0], 1, 1, vec![-800.0], Activation::Sigmoid),
    ])
    .unwrap()
}

fn unit_batch(n: usize) -> Tensor {
    Tensor::matrix(n, 1, (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()).unwrap()
}

#[test]
fn optimal_discriminator_on_disjoint_supports_gives_zero_gradient() {
    let (_, g) = GanConfig::parallel_segments(0.5, GenLossKind::Original, 0).unwrap();
    let d = step_discriminator();
    let z = unit_batch(64);
    assert_eq!(
        d.eval(&g.eval(&z).unwrap())
            .unwrap()
            .data()
            .iter()
            .copied()
            .fold(0.0, f64::max),
        0.0
    );
    let grad = generator_gradient(&g, &d, &z, None, GenLossKind::Original).unwrap();
    assert!(grad.iter().all(|&v| v == 0.0), "{grad:?}");
}

#[test]
fn loss_gradients_coincide_at_one_half() {
    // ∇log(1 − u) = −∇log u at u = ½, so log(1 − D) and −log D agree
    // D(x) = σ(2(y − ½)) is ½ on the generated segment but not flat there
    let (_, g) = GanConfig::parallel_segments(0.5, GenLossKind::Original, 0).unwrap();
    let d = Mlp::new(vec![layer(vec![0.0, 2.0], 2, 1, vec![-1.0], Activation::Sigmoid)]).unwrap();
    let z = unit_batch(32);
    let a = generator_gradient(&g, &d, &z, None, GenLossKind::Original).unwrap();
    let b = generator_gradient(&g, &d, &z, None, GenLossKind::NegLogD).unwrap();
    assert!(a.iter().any(|v| v.abs() > 1e-3));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn disc_loss_at_optimum_is_two_log_two_minus_two_jsd() {
    let mut rng = stream(31, 0);
    for _ in 0..20 {
        let mu: f64 = rng.random_range(0.0..3.0);
        let (v1, v2): (f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let pr = ManifoldDistribution::gaussian(vec![0.0], vec![v1]).unwrap();
        let pg = ManifoldDistribution::gaussian(vec![mu], vec![v2]).unwrap();
        let grid = GridSpec::new(vec![-12.0], vec![15.0], vec![5400]).unwrap();
        let jsd = jsd_grid(
            &rasterize(&pr, None, &grid, &mut rng).unwrap(),
            &rasterize(&pg, None, &grid, &mut rng).unwrap(),
        )
        .unwrap()
        .expect_finite()
        .unwrap();
        let dstar = |x: f64| optimal_discriminator(pr.density(&[x]).unwrap(), pg.density(&[x]).unwrap());
        let (nr, ng) = (
            Normal::new(0.0, v1.sqrt()).unwrap(),
            Normal::new(mu, v2.sqrt()).unwrap(),
        );
        let dr: Vec<f64> = (0..200_000).map(|_| dstar(nr.sample(&mut rng))).collect();
        let df: Vec<f64> = (0..200_000).map(|_| dstar(ng.sample(&mut rng))).collect();
        let loss = disc_loss_values(&dr, &df);
        let expected = 2.0 * std::f64::consts::LN_2 - 2.0 * jsd;
        assert!((loss - expected).abs() < 1e-2, "μ={mu}: {loss} vs {expected}");
    }
}

#[test]
fn identical_laws_cannot_be_told_apart() {
    let (cfg, g) = GanConfig::parallel_segments(0.0, GenLossKind::Original, 3).unwrap();
    let (_, series) = train_discriminator(&cfg, &g, 300).unwrap();
    let acc = series.last().unwrap().accuracy;
    let sd = (0.25f64 / 10_000.0).sqrt();
    assert!((acc - 0.5).abs() < 3.0 * sd, "accuracy {acc}");
}

#[test]
fn training_is_bit_reproducible() {
    let (cfg, g) = GanConfig::parallel_segments(0.5, GenLossKind::Original, 4).unwrap();
    let (d1, s1) = train_discriminator(&cfg, &g, 200).unwrap();
    let (d2, s2) = train_discriminator(&cfg, &g, 200).unwrap();
    assert_eq!(s1.to_csv(), s2.to_csv());
    assert_eq!(d1.flat_params(), d2.flat_params());
}

/// Generator gradient norm of the untrained discriminator at seed 0.
const INITIAL_GEN_GRAD_SEED0: f64 = 1.3874398105671099e-1;

#[test]
fn untrained_discriminator_passes_a_useful_gradient() {
    let (cfg, g) = GanConfig::parallel_segments(0.5, GenLossKind::Original, 0).unwrap();
    let series = vanishing_probe(&cfg, &g, 0).unwrap();
    let p = series.first().unwrap();
    assert!(p.gen_grad_norm > 1e-3);
    assert!((p.gen_grad_norm - INITIAL_GEN_GRAD_SEED0).abs() < 1e-12);
}

#[test]
fn vanishing_bound_holds_where_applicable() {
    let (cfg, g) = GanConfig::parallel_segments(0.5, GenLossKind::Original, 1).unwrap();
    let series = vanishing_probe(&cfg, &g, 1000).unwrap();
    for (it, status) in vanishing_bound_status(&series) {
        assert!(
            !matches!(status, BoundStatus::Violated { .. }),
            "iteration {it}: {status:?}"
        );
    }
}

#[test]
fn wrong_loss_kind_is_rejected_by_probes() {
    let (cfg, g) = GanConfig::parallel_segments(0.5, GenLossKind::NegLogD, 0).unwrap();
    assert!(vanishing_probe(&cfg, &g, 10).is_err());
    let mut bad = cfg.clone();
    bad.gen_loss = GenLossKind::NoisyOriginal;
    assert!(bad.validate().is_err());
    bad.gen_loss = GenLossKind::Original;
    bad.batch = 1;
    assert!(bad.validate().is_err());
}

#[test]
fn logd_identity_on_gaussian_shifts() {
    let fam = GaussianShiftFamily { variance: 1.0 };
    let at_zero = logd_identity_check(&fam, 0.0, &fam.default_grid(0.0, 0.005).unwrap(), 1e-4).unwrap();
    assert!(at_zero.lhs.abs() < 1e-9 && at_zero.rhs.abs() < 1e-9, "{at_zero:?}");
    let c = logd_identity_check(&fam, 1.0, &fam.default_grid(1.0, 0.005).unwrap(), 1e-4).unwrap();
    assert!(c.rel_error < 1e-2, "{c:?}");
    // KL grows with θ, and the −log D step −lhs moves θ toward 0
    assert!(c.kl_slope > 0.0 && c.lhs > 0.0);
    // analytic: E[−∂ log D*] = θ0 E_g[1 − D*] lies in (0, θ0)
    assert!(c.lhs < 1.0);
}

#[test]
fn decomposition_weights_follow_the_density_ordering() {
    let same = NoisySegmentSetup::parallel(0.0, 0.09).unwrap();
    for x in [[0.2, 0.0], [0.5, 0.4], [1.3, -0.2]] {
        let (a, b, _, _) = same.weights(&x).unwrap();
        assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
    }
    let apart = NoisySegmentSetup::parallel(0.5, 0.09).unwrap();
    // on the real segment, far from the fakes, the real density is larger
    let (a, b, pr, pg) = apart.weights(&[0.5, -0.1]).unwrap();
    assert!(pr > pg && b > a && a > 0.0);
    let (a, b, pr, pg) = apart.weights(&[0.5, 0.55]).unwrap();
    assert!(pr < pg && b < a && b > 0.0);
}

#[test]
fn decomposition_matches_autodiff() {
    let setup = NoisySegmentSetup::parallel(0.5, 0.09).unwrap();
    let z = setup.prior.sample(8, &mut stream(32, 0)).unwrap();
    let d = noisy_gradient_decomposition(&setup, &z, 100_000, &mut stream(32, 1)).unwrap();
    assert!(d.rel_error < 5e-2, "{d:?}");
    for (t, (a, r)) in d.total.iter().zip(d.attraction.iter().zip(&d.repulsion)) {
        assert!((t - (a - r)).abs() <= 1e-12 * t.abs().max(1.0));
    }
    assert!(d.a.iter().chain(&d.b).all(|&v| v > 0.0));
}

#[test]
fn decomposition_reports_underflow() {
    let setup = NoisySegmentSetup::parallel(0.5, 1e-4).unwrap();
    let z = setup.prior.sample(4, &mut stream(33, 0)).unwrap();
    let err = noisy_gradient_decomposition(&setup, &z, 100, &mut stream(33, 1)).unwrap_err();
    assert!(matches!(err, LabError::DensityUnderflow { .. }));
    assert!(err.to_string().contains("increase the noise scale"));
}

#[test]
fn noisy_jsd_gradient_on_offset_segments() {
    let setup = NoisySegmentSetup::parallel(1.0, 0.09).unwrap();
    let grid = noisy_grid(&setup, 0.0, 6.0, 20.0).unwrap();
    let c = noisy_jsd_gradient_check(&setup, &[0.0, 1.0], 400_000, 1e-3, &grid, &mut stream(34, 0)).unwrap();
    assert!(c.rel_error < 5e-2, "{c:?}");
    // JSD grows with the offset, so descent pulls the fakes toward the data
    assert!(c.rhs > 0.0 && c.lhs > 0.0);
}

#[test]
fn noisy_jsd_gradient_vanishes_on_matched_laws() {
    let setup = NoisySegmentSetup::parallel(0.0, 0.09).unwrap();
    let grid = noisy_grid(&setup, 0.0, 6.0, 20.0).unwrap();
    let c = noisy_jsd_gradient_check(&setup, &[0.0, 1.0], 100_000, 1e-3, &grid, &mut stream(35, 0)).unwrap();
    assert!(c.rhs.abs() < 1e-9, "{c:?}");
    assert!(c.lhs.abs() < 1e-9, "{c:?}");
}

#[test]
fn cauchy_update_median_and_tail_index() {
    let model = CauchyModel::unit_scale(vec![0.5, -1.0, 2.0, 1.5]).unwrap();
    let n = 200_000;
    let s = cauchy_simulation(&model, n, &[10.0], &[64, 128], &mut stream(36, 0)).unwrap();
    assert!(s.median.abs() < 5.0 * s.iqr / (n as f64).sqrt(), "{s:?}");
    assert!((s.hill_index - 1.0).abs() < 0.1, "{s:?}");
    assert!((s.iqr - 2.0).abs() < 0.05, "{s:?}");
}

#[test]
fn original_cost_shrinks_on_the_discriminator_that_inflates_logd() {
    let (cfg, g) = GanConfig::parallel_segments(0.5, GenLossKind::NegLogD, 2).unwrap();
    let (d, series) = train_discriminator(&cfg, &g, 2000).unwrap();
    let d0 = Mlp::init(
        &cfg.discriminator,
        &mut stream(cfg.seed, ganlab::rng::streams::DISC_INIT),
    )
    .unwrap();
    let z = unit_batch(256);
    let norm = |d: &Mlp, kind| {
        generator_gradient(&g, d, &z, None, kind)
            .unwrap()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    assert!(norm(&d, GenLossKind::NegLogD) > norm(&d0, GenLossKind::NegLogD));
    assert!(norm(&d, GenLossKind::Original) < 1e-2 * norm(&d0, GenLossKind::Original));
    assert!(series.last().unwrap().gen_grad_norm > series.first().unwrap().gen_grad_norm);
}
