//! First-order optimizers applied to outer gradients.

use super::config::OptimizerKind;
use crate::params::ParamSet;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Self {
        let state = match kind {
            OptimizerKind::Adam => dim,
            OptimizerKind::Sgd => 0,
        };
        Self {
            kind,
            lr,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    /// One descent step of `params` along `grad`.
    pub fn step(&mut self, params: &mut ParamSet, grad: &ParamSet) {
        debug_assert!(params.same_shape(grad));
        match self.kind {
            OptimizerKind::Sgd => params.axpy(-self.lr, grad),
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                let p = params.as_mut_slice();
                for (i, g) in grad.as_slice().iter().enumerate() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    p[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}
