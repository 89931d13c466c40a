use super::mlp::{Mlp, MlpGrads};
use super::tensor::Tensor;
use crate::error::{invalid, LabError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer. Adam moment buffers are created lazily on the first
/// step and must keep matching the parameter shapes afterwards.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    moments: Vec<(Tensor, Tensor)>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {lr}"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return invalid("adam needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        Ok(Optimizer {
            kind,
            lr,
            moments: Vec::new(),
            t: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam_default(), lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update. `names` label parameters in error messages.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return invalid(format!("{} parameters but {} gradients", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = || names.get(i).cloned().unwrap_or_else(|| format!("param[{i}]"));
            if p.shape() != g.shape() {
                return Err(LabError::Shape {
                    op: "Optimizer::step",
                    detail: format!("{}: gradient {:?} vs parameter {:?}", name(), g.shape(), p.shape()),
                });
            }
            if !g.all_finite() {
                return Err(LabError::NonFiniteGradient(name()));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.moments.is_empty() {
                    self.moments = params
                        .iter()
                        .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                        .collect();
                }
                if self.moments.len() != params.len()
                    || self
                        .moments
                        .iter()
                        .zip(params.iter())
                        .any(|((m, _), p)| m.shape() != p.shape())
                {
                    return invalid("adam moment buffers do not match parameter shapes");
                }
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
                    for ((x, &d), (mi, vi)) in it {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *x -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        let names = net.parameter_names();
        if grads.layers.len() != net.layers().len() {
            return invalid("gradient layout does not match the network");
        }
        let mut params: Vec<&mut Tensor> = Vec::new();
        for l in net.layers_mut() {
            params.push(&mut l.weight);
            params.push(&mut l.bias);
        }
        let g: Vec<&Tensor> = grads.layers.iter().flat_map(|(w, b)| [w, b]).collect();
        self.step(&mut params, &g, &names)
    }
}
