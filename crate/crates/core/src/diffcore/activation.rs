use super::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Pointwise nonlinearity applied after an affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
    Softplus,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` with the tails evaluated in closed form.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at input `x` with output `y = apply(x)`. The rectifier
    /// subgradient at 0 is 0.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn derivative_tensor(self, input: &Tensor, output: &Tensor) -> Tensor {
        input.zip_map(output, |x, y| self.derivative(x, y))
    }

    pub fn is_valid(self) -> bool {
        match self {
            Activation::LeakyRelu { slope } => slope > 0.0 && slope.is_finite(),
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_in_the_tails() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(29.9) - 29.9).abs() < 1e-12);
        assert!((softplus(-29.9) - (-29.9f64).exp()).abs() < 1e-25);
    }

    #[test]
    fn rectifier_kink_subgradient_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0, 0.0), 0.0);
        assert_eq!(Activation::leaky().derivative(0.0, 0.0), 0.2);
        assert_eq!(Activation::leaky().apply(-1.0), -0.2);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [0.1, 3.0, 40.0, 800.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
