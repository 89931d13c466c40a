#![allow(dead_code)]

use ganlab::diffcore::{Activation, Mlp, MlpSpec, Tape, Tensor};
use rand::Rng;

const SMOOTH: [Activation; 4] = [
    Activation::Tanh,
    Activation::Sigmoid,
    Activation::Softplus,
    Activation::Identity,
];

/// Random smooth MLP with 1–3 hidden layers and a random batch of inputs.
pub fn random_smooth_net<R: Rng>(rng: &mut R) -> (Mlp, Tensor) {
    let input_dim = rng.random_range(1..=4);
    let depth = rng.random_range(1..=3);
    let hidden = (0..depth).map(|_| rng.random_range(2..=8)).collect();
    let spec = MlpSpec {
        input_dim,
        hidden,
        output_dim: rng.random_range(1..=3),
        hidden_activation: SMOOTH[rng.random_range(0..SMOOTH.len())],
        output_activation: SMOOTH[rng.random_range(0..SMOOTH.len())],
    };
    let net = Mlp::init(&spec, rng).unwrap();
    let n = rng.random_range(1..=5);
    let x = Tensor::matrix(
        n,
        input_dim,
        (0..n * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    (net, x)
}

/// Scalar probe `Σ_i Σ_k c_k net(x_i)_k` with fixed weights `c`.
fn probe(net: &Mlp, x: &Tensor, c: &[f64]) -> f64 {
    let y = net.eval(x).unwrap();
    (0..y.rows())
        .map(|i| y.row(i).iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Tape gradients of the probe with respect to (parameters, inputs).
pub fn tape_gradients(net: &Mlp, x: &Tensor, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let xv = tape.var(x.clone());
    let y = bound.forward(&mut tape, xv).unwrap();
    let cv = tape.constant(Tensor::matrix(1, c.len(), c.to_vec()).unwrap());
    let weighted = tape.mul(y, cv).unwrap();
    let loss = tape.sum(weighted).unwrap();
    let grads = tape.backward(loss).unwrap();
    (
        bound.gradients(&grads).unwrap().flatten(),
        grads.wrt(xv).unwrap().into_data(),
    )
}

/// Central differences of the probe with step `h`.
pub fn fd_gradients(net: &Mlp, x: &Tensor, c: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let flat = net.flat_params();
    let mut work = net.clone();
    let mut gp = Vec::with_capacity(flat.len());
    for k in 0..flat.len() {
        let mut p = flat.clone();
        p[k] = flat[k] + h;
        work.set_flat_params(&p).unwrap();
        let up = probe(&work, x, c);
        p[k] = flat[k] - h;
        work.set_flat_params(&p).unwrap();
        let down = probe(&work, x, c);
        gp.push((up - down) / (2.0 * h));
    }
    let mut gx = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let up = probe(net, &xp, c);
        xp.data_mut()[k] -= 2.0 * h;
        let down = probe(net, &xp, c);
        gx.push((up - down) / (2.0 * h));
    }
    (gp, gx)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_norm_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error of tape against central differences over `nets`
/// random smooth networks.
pub fn worst_gradient_error<R: Rng>(nets: usize, rng: &mut R) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..nets {
        let (net, x) = random_smooth_net(rng);
        let c: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ap, ax) = tape_gradients(&net, &x, &c);
        let (fp, fx) = fd_gradients(&net, &x, &c, 1e-5);
        worst = worst.max(rel_norm_error(&ap, &fp)).max(rel_norm_error(&ax, &fx));
    }
    worst
}

/// Worst `σ_{dim_z+1} / σ_max` over random latent points of a random relu
/// generator, taken over both the input Jacobian and a secant matrix of
/// `2·d` forward differences whose rank is not capped by `dim_z`.
pub fn worst_rank_excess<R: Rng>(dim_z: usize, d: usize, points: usize, rng: &mut R) -> f64 {
    worst_excess_beyond(dim_z, dim_z, d, points, rng)
}

/// As [`worst_rank_excess`] but measuring `σ_{rank+1} / σ_max`.
pub fn worst_excess_beyond<R: Rng>(rank: usize, dim_z: usize, d: usize, points: usize, rng: &mut R) -> f64 {
    use ganlab::diffcore::{jacobian, rank_excess, secant_matrix, Wrt};
    let spec = MlpSpec {
        input_dim: dim_z,
        hidden: vec![32, 32],
        output_dim: d,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Identity,
    };
    let net = Mlp::init(&spec, rng).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let z = Tensor::vector((0..dim_z).map(|_| rng.random_range(-2.0..2.0)).collect());
        let k = 2 * d;
        let u = Tensor::matrix(k, dim_z, (0..k * dim_z).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let j = jacobian(&net, &z, Wrt::Input).unwrap();
        let s = secant_matrix(&net, &z, &u, 1e-3).unwrap();
        worst = worst.max(rank_excess(&j, rank)).max(rank_excess(&s, rank));
    }
    worst
}

/// Minimum over all permutations, by Heap's algorithm.
pub fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| {
        (0..n)
            .map(|i| ganlab::divergence::euclidean(&a[i], &b[p[i]]))
            .sum::<f64>()
            / n as f64
    };
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}
