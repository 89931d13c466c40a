use super::activation::Activation;
use super::tape::{Gradients, Tape, Var};
use super::tensor::{matmul, Tensor};
use crate::error::{invalid, LabError, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// One affine map `x W + b` followed by a pointwise nonlinearity.
/// `weight` has shape `(inputs, outputs)`, `bias` has shape `(outputs)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return invalid(format!("weight must be 2-D, got {:?}", weight.shape()));
        }
        if bias.shape() != [weight.cols()] {
            return Err(LabError::Shape {
                op: "Layer::new",
                detail: format!("bias {:?} does not match weight {:?}", bias.shape(), weight.shape()),
            });
        }
        if !activation.is_valid() {
            return invalid(format!("invalid activation {activation:?}"));
        }
        if !weight.all_finite() || !bias.all_finite() {
            return invalid("layer parameters must be finite");
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Architecture description used to initialise an [`Mlp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    /// Scalar-output discriminator with a sigmoid head.
    pub fn discriminator(input_dim: usize, hidden: Vec<usize>, act: Activation) -> Self {
        MlpSpec {
            input_dim,
            hidden,
            output_dim: 1,
            hidden_activation: act,
            output_activation: Activation::Sigmoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpGrads {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.norm_sq() + b.norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Flattens in parameter order: per layer, weight row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }
}

/// Parameters of an [`Mlp`] recorded on a tape.
pub struct BoundMlp {
    params: Vec<(Var, Var)>,
    activations: Vec<Activation>,
    input_dim: usize,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("an MLP needs at least one layer");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(LabError::Shape {
                    op: "Mlp::new",
                    detail: format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        pair[0].outputs(),
                        i + 1,
                        pair[1].inputs()
                    ),
                });
            }
        }
        Ok(Mlp { layers })
    }

    /// Gaussian initialisation scaled by fan-in (He for rectifiers), zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.contains(&0) {
            return invalid("layer widths must be positive");
        }
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden);
        dims.push(spec.output_dim);
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let act = if i + 1 == n_layers {
                spec.output_activation
            } else {
                spec.hidden_activation
            };
            let gain = match spec.hidden_activation {
                Activation::Relu | Activation::LeakyRelu { .. } if i + 1 < n_layers => 2.0,
                _ => 1.0,
            };
            let std = (gain / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            layers.push(Layer::new(
                Tensor::matrix(fan_in, fan_out, data)?,
                Tensor::zeros(&[fan_out]),
                act,
            )?);
        }
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, _)| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let ok = match x.shape() {
            [d] => *d == self.input_dim(),
            [_, d] => *d == self.input_dim(),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Shape {
                op: "forward",
                detail: format!(
                    "input {:?} does not match network input dimension {}",
                    x.shape(),
                    self.input_dim()
                ),
            })
        }
    }

    /// Evaluates the network without recording a tape. Accepts a single point
    /// `(d)` or a batch `(n, d)`; the output has matching rank.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.rows();
        let mut h = x.data().to_vec();
        for layer in &self.layers {
            let (k, m) = (layer.inputs(), layer.outputs());
            let mut out = matmul(&h, layer.weight.data(), n, k, m);
            for row in out.chunks_mut(m) {
                for (o, b) in row.iter_mut().zip(layer.bias.data()) {
                    *o = layer.activation.apply(*o + b);
                }
            }
            h = out;
        }
        let shape = if x.shape().len() == 1 {
            vec![self.output_dim()]
        } else {
            vec![n, self.output_dim()]
        };
        Tensor::new(shape, h)
    }

    /// Signs of the pre-activations of every rectifier unit at the single
    /// point `x`. Two points with equal patterns lie in the same affine piece
    /// of a network whose activations are all piecewise linear.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        self.check_input(&Tensor::vector(x.to_vec()))?;
        let mut h = x.to_vec();
        let mut pattern = Vec::new();
        for layer in &self.layers {
            let (k, m) = (layer.inputs(), layer.outputs());
            let mut out = matmul(&h, layer.weight.data(), 1, k, m);
            let rect = matches!(layer.activation, Activation::Relu | Activation::LeakyRelu { .. });
            for (o, b) in out.iter_mut().zip(layer.bias.data()) {
                *o += b;
                if rect {
                    pattern.push(*o > 0.0);
                }
                *o = layer.activation.apply(*o);
            }
            h = out;
        }
        Ok(pattern)
    }

    /// Records the parameters as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, true)
    }

    /// Records the parameters as constants (network held fixed).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let params = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.var(l.weight.clone()), tape.var(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundMlp {
            params,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            input_dim: self.input_dim(),
        }
    }

    /// Replaces parameters from a flat vector in [`MlpGrads::flatten`] order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return invalid(format!("expected {} parameters, got {}", self.num_params(), flat.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.data_mut().copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }
}

impl BoundMlp {
    /// Forward pass on the tape. `x` is `(d)` or `(n, d)`; a 1-D input gives a
    /// 1-D output.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape().to_vec();
        let vector_input = match shape.as_slice() {
            [d] if *d == self.input_dim => true,
            [_, d] if *d == self.input_dim => false,
            _ => {
                return Err(LabError::Shape {
                    op: "forward",
                    detail: format!(
                        "input {shape:?} does not match network input dimension {}",
                        self.input_dim
                    ),
                })
            }
        };
        let mut h = if vector_input {
            tape.reshape(x, vec![1, self.input_dim])?
        } else {
            x
        };
        for (&(w, b), &act) in self.params.iter().zip(&self.activations) {
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = if act == Activation::Identity {
                z
            } else {
                tape.activation(z, act)?
            };
        }
        if vector_input {
            let out = tape.value(h)?.cols();
            h = tape.reshape(h, vec![out])?;
        }
        Ok(h)
    }

    pub fn params(&self) -> &[(Var, Var)] {
        &self.params
    }

    pub fn gradients(&self, grads: &Gradients) -> Result<MlpGrads> {
        let layers = self
            .params
            .iter()
            .map(|&(w, b)| Ok((grads.wrt(w)?, grads.wrt(b)?)))
            .collect::<Result<_>>()?;
        Ok(MlpGrads { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn single(weight: Vec<f64>, act: Activation) -> Mlp {
        let w = Tensor::matrix(2, 2, weight).unwrap();
        Mlp::new(vec![Layer::new(w, Tensor::zeros(&[2]), act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], Activation::Identity);
        let y = net.eval(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_layer_rectifies() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], Activation::Relu);
        let y = net.eval(&Tensor::vector(vec![-1.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0]);
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![-1.0, 3.0]));
        let out = b.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[0.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_reports_dimensions() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], Activation::Identity);
        let err = net.eval(&Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(err.to_string().contains("input dimension 2"), "{err}");
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![1.0]));
        assert!(b.forward(&mut tape, x).is_err());
    }

    #[test]
    fn layer_dimensions_must_compose() {
        let l1 = Layer::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3]), Activation::Relu).unwrap();
        let l2 = Layer::new(Tensor::zeros(&[2, 1]), Tensor::zeros(&[1]), Activation::Relu).unwrap();
        assert!(Mlp::new(vec![l1, l2]).is_err());
        assert!(Layer::new(
            Tensor::zeros(&[2, 1]),
            Tensor::zeros(&[1]),
            Activation::LeakyRelu { slope: 0.0 }
        )
        .is_err());
    }

    #[test]
    fn tape_and_eval_agree_and_are_deterministic() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![8, 8],
            output_dim: 2,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
        };
        let net = Mlp::init(&spec, &mut stream(0, 0)).unwrap();
        let again = Mlp::init(&spec, &mut stream(0, 0)).unwrap();
        assert_eq!(net, again);
        let x = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, -1.0]).unwrap();
        let y = net.eval(&x).unwrap();
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = b.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(out).unwrap(), &y);
        assert_eq!(net.eval(&x).unwrap().data(), y.data());
    }

    #[test]
    fn flat_params_roundtrip() {
        let spec = MlpSpec::discriminator(2, vec![4], Activation::Relu);
        let mut net = Mlp::init(&spec, &mut stream(1, 0)).unwrap();
        let flat: Vec<f64> = (0..net.num_params()).map(|i| i as f64).collect();
        net.set_flat_params(&flat).unwrap();
        assert_eq!(net.flat_params(), flat);
    }
}
