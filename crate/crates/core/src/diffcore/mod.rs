//! Dense reverse-mode automatic differentiation, MLPs and optimizers.

mod activation;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use activation::{sigmoid, softplus, Activation, DEFAULT_LEAKY_SLOPE};
pub use mlp::{BoundMlp, Layer, Mlp, MlpGrads, MlpSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{LabError, Result};

/// What a Jacobian is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Input,
    Parameters,
}

fn require_scalar_output(net: &Mlp) -> Result<()> {
    if net.output_dim() != 1 {
        return Err(LabError::Shape {
            op: "grad_input_norm",
            detail: format!("network must have scalar output, has {}", net.output_dim()),
        });
    }
    Ok(())
}

/// Per-row input gradients `∇_x net(x_i)` of a scalar-output network for a
/// batch `(n, d)`. Rows are independent, so one backward pass of the summed
/// output suffices.
pub fn input_gradients(net: &Mlp, x: &Tensor) -> Result<Tensor> {
    require_scalar_output(net)?;
    let mut tape = Tape::new();
    let bound = net.bind_frozen(&mut tape);
    let xv = tape.var(x.clone());
    let out = bound.forward(&mut tape, xv)?;
    let total = tape.sum(out)?;
    tape.backward(total)?.wrt(xv)
}

/// `‖∇_x net(x)‖₂` for a single point.
pub fn grad_input_norm(net: &Mlp, x: &Tensor) -> Result<f64> {
    if x.shape().len() != 1 {
        return Err(LabError::Shape {
            op: "grad_input_norm",
            detail: format!("expected a single point, got {:?}", x.shape()),
        });
    }
    Ok(input_gradients(net, x)?.norm())
}

/// Full Jacobian of `net` at the single point `x`, one backward pass per
/// output coordinate. Rows index outputs; columns index inputs or the
/// flattened parameters (per layer: weight row-major, then bias).
pub fn jacobian(net: &Mlp, x: &Tensor, wrt: Wrt) -> Result<Tensor> {
    if x.shape() != [net.input_dim()] {
        return Err(LabError::Shape {
            op: "jacobian",
            detail: format!(
                "expected a single point of dimension {}, got {:?}",
                net.input_dim(),
                x.shape()
            ),
        });
    }
    let mut tape = Tape::new();
    let bound = match wrt {
        Wrt::Input => net.bind_frozen(&mut tape),
        Wrt::Parameters => net.bind(&mut tape),
    };
    let xv = match wrt {
        Wrt::Input => tape.var(x.clone()),
        Wrt::Parameters => tape.constant(x.clone()),
    };
    let out = bound.forward(&mut tape, xv)?;
    let m = net.output_dim();
    let cols = match wrt {
        Wrt::Input => net.input_dim(),
        Wrt::Parameters => net.num_params(),
    };
    let mut data = Vec::with_capacity(m * cols);
    for i in 0..m {
        let mut seed = Tensor::zeros(&[m]);
        seed.data_mut()[i] = 1.0;
        let grads = tape.vjp(out, seed)?;
        match wrt {
            Wrt::Input => data.extend_from_slice(grads.wrt(xv)?.data()),
            Wrt::Parameters => data.extend(bound.gradients(&grads)?.flatten()),
        }
    }
    Tensor::matrix(m, cols, data)
}

/// Singular values of a matrix, largest first.
pub fn singular_values(m: &Tensor) -> Vec<f64> {
    let mat = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &Tensor, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * max).count()
}

/// Secant matrix of `net` at the point `x`: column `i` is
/// `(net(x + h·u_i) − net(x)) / h` for row `u_i` of `directions` `(k, n_in)`.
/// Unlike the input Jacobian its rank is not capped by the input dimension,
/// so with `k > n_in` it measures the local dimension of the image.
///
/// Each step starts at `h` and is halved, at most 40 times, until
/// `x + h·u_i` has the rectifier pattern of `x`, so columns of a piecewise
/// linear network come from the affine piece containing `x`.
pub fn secant_matrix(net: &Mlp, x: &Tensor, directions: &Tensor, h: f64) -> Result<Tensor> {
    let n_in = net.input_dim();
    if x.shape() != [n_in] || directions.shape().len() != 2 || directions.cols() != n_in {
        return Err(LabError::Shape {
            op: "secant_matrix",
            detail: format!(
                "expected a point of dimension {n_in} and directions (k, {n_in}), got {:?} and {:?}",
                x.shape(),
                directions.shape()
            ),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(LabError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let k = directions.rows();
    let base_pattern = net.activation_pattern(x.data())?;
    let mut pts = x.data().to_vec();
    let mut steps = Vec::with_capacity(k);
    for i in 0..k {
        let mut step = h;
        let mut p: Vec<f64> = Vec::new();
        for _ in 0..=40 {
            p = x
                .data()
                .iter()
                .zip(directions.row(i))
                .map(|(a, u)| a + step * u)
                .collect();
            if net.activation_pattern(&p)? == base_pattern {
                break;
            }
            step *= 0.5;
        }
        pts.extend(p);
        steps.push(step);
    }
    let y = net.eval(&Tensor::matrix(k + 1, n_in, pts)?)?;
    let m = net.output_dim();
    let base = y.row(0);
    let mut data = vec![0.0; m * k];
    for (i, step) in steps.iter().enumerate() {
        for (r, (a, b)) in y.row(i + 1).iter().zip(base).enumerate() {
            data[r * k + i] = (a - b) / step;
        }
    }
    Tensor::matrix(m, k, data)
}

/// `σ_{k+1} / σ_max` of `m`; zero when `m` has at most `k` singular values or
/// vanishes.
pub fn rank_excess(m: &Tensor, k: usize) -> f64 {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.get(k).map_or(0.0, |v| v / max),
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: Vec<f64>, rows: usize, cols: usize) -> Mlp {
        let layer = Layer::new(
            Tensor::matrix(rows, cols, w).unwrap(),
            Tensor::zeros(&[cols]),
            Activation::Identity,
        )
        .unwrap();
        Mlp::new(vec![layer]).unwrap()
    }

    #[test]
    fn constant_net_has_zero_input_gradient() {
        let layer = Layer::new(Tensor::zeros(&[2, 1]), Tensor::zeros(&[1]), Activation::Sigmoid).unwrap();
        let net = Mlp::new(vec![layer]).unwrap();
        assert_eq!(grad_input_norm(&net, &Tensor::vector(vec![0.3, -2.0])).unwrap(), 0.0);
    }

    #[test]
    fn linear_net_gradient_norm_is_weight_norm() {
        let net = linear(vec![1.0, 2.0], 2, 1);
        let g = grad_input_norm(&net, &Tensor::vector(vec![5.0, -1.0])).unwrap();
        assert!((g - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vector_output_rejected_for_grad_norm() {
        let net = linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(grad_input_norm(&net, &Tensor::vector(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn jacobian_of_linear_map_is_its_matrix() {
        // y = x W with W (2,3) -> J = W^T (3,2)
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let net = linear(w.clone(), 2, 3);
        let j = jacobian(&net, &Tensor::vector(vec![0.5, 0.5]), Wrt::Input).unwrap();
        assert_eq!(j, Tensor::matrix(2, 3, w).unwrap().transpose());
        let id = linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let j = jacobian(&id, &Tensor::vector(vec![3.0, -3.0]), Wrt::Input).unwrap();
        assert_eq!(j.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn parameter_jacobian_of_affine_generator() {
        // g(z) = z W + b with W (1,2): J = [[z, 0, 1, 0], [0, z, 0, 1]]
        let net = linear(vec![1.0, 0.0], 1, 2);
        let j = jacobian(&net, &Tensor::vector(vec![0.25]), Wrt::Parameters).unwrap();
        assert_eq!(j.data(), &[0.25, 0.0, 1.0, 0.0, 0.0, 0.25, 0.0, 1.0]);
    }

    #[test]
    fn secant_of_affine_map_spans_its_image() {
        // z W with W (1,3): every secant column is W
        let net = linear(vec![1.0, -2.0, 0.5], 1, 3);
        let u = Tensor::matrix(4, 1, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let s = secant_matrix(&net, &Tensor::vector(vec![0.3]), &u, 1e-3).unwrap();
        assert_eq!(s.shape(), &[3, 4]);
        assert!(rank_excess(&s, 1) < 1e-12);
        assert!(rank_excess(&s, 0) > 0.5);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let m = Tensor::matrix(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        assert_eq!(numerical_rank(&m, 1e-8), 1);
        assert_eq!(numerical_rank(&Tensor::zeros(&[2, 2]), 1e-8), 0);
    }
}
