//! The per-user learning-rate head: a small ReLU network on the user
//! embedding whose output is squashed into `(0, scale)`.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mlp::Stack;
use crate::params::{Layout, ParamSet};

#[derive(Debug, Clone)]
pub struct LrHead {
    stack: Stack,
    layout: Arc<Layout>,
    scale: f64,
}

/// A rate together with its derivatives w.r.t. the head parameters and the
/// user embedding.
#[derive(Debug, Clone)]
pub struct AlphaGrad {
    pub alpha: f64,
    pub d_psi: ParamSet,
    pub d_h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LrHead {
    pub fn new(input_dim: usize, hidden: &[usize], scale: f64) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(hidden);
        dims.push(1);
        let stack = Stack::new("lr", &dims);
        let layout = stack.register(Layout::builder()).build();
        Self {
            stack,
            layout,
            scale,
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Weights and biases uniform in +-1/sqrt(fan_in).
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut psi = ParamSet::zeros(self.layout.clone());
        for entry in self.layout.entries() {
            let fan_in = if entry.shape.len() == 2 {
                entry.shape[1]
            } else {
                self.layout
                    .get(&entry.name.replace(".bias", ".weight"))
                    .map_or(1, |w| w.shape[1])
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in psi.entry_mut(&entry.name) {
                *v = rng.random_range(-bound..bound);
            }
        }
        psi
    }

    fn check(&self, psi: &ParamSet, h: &[f64]) -> Result<()> {
        if **psi.layout() != *self.layout {
            return Err(Error::ModelConstruction("LR head parameters do not match the head".into()));
        }
        let want = self.layout.entries()[0].shape[1];
        if h.len() != want {
            return Err(Error::ShapeMismatch(format!("user embedding of {} values, head expects {want}", h.len())));
        }
        Ok(())
    }

    fn logit(&self, psi: &ParamSet, h: &[f64]) -> Result<(f64, crate::mlp::Trace)> {
        self.check(psi, h)?;
        let x = Array2::from_shape_vec((1, h.len()), h.to_vec()).expect("row vector");
        let trace = self.stack.forward(psi, x)?;
        Ok((trace.output()[[0, 0]], trace))
    }

    /// `scale * sigmoid(head(h))`
    pub fn alpha(&self, psi: &ParamSet, h: &[f64]) -> Result<f64> {
        Ok(self.scale * sigmoid(self.logit(psi, h)?.0))
    }

    pub fn alpha_with_grad(&self, psi: &ParamSet, h: &[f64]) -> Result<AlphaGrad> {
        let (z, trace) = self.logit(psi, h)?;
        let s = sigmoid(z);
        let mut d_psi = psi.zeros_like();
        let d_out = Array2::from_elem((1, 1), self.scale * s * (1.0 - s));
        let d_x = self.stack.backward(psi, &trace, d_out, &mut d_psi);
        Ok(AlphaGrad {
            alpha: self.scale * s,
            d_psi,
            d_h: d_x.row(0).to_vec(),
        })
    }

    /// Distance of the hidden pre-activations from the ReLU kink.
    pub fn kink_margin(&self, psi: &ParamSet, h: &[f64]) -> Result<f64> {
        let (_, trace) = self.logit(psi, h)?;
        Ok(Stack::kink_margin(&trace, &self.stack))
    }
}

/// The inner rate: the head's output plus the tree's blended rate, if any.
pub fn compute_alpha(head: &LrHead, psi: &ParamSet, h: &[f64], tree_contribution: Option<f64>) -> Result<f64> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::RejectedInput("non-finite user embedding".into()));
    }
    Ok(head.alpha(psi, h)? + tree_contribution.unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_logit_gives_half_scale() {
        let head = LrHead::new(3, &[4, 2], 1e-3);
        let psi = ParamSet::zeros(head.layout().clone());
        assert_eq!(head.alpha(&psi, &[0.1, 0.2, 0.3]).unwrap(), 5e-4);
    }

    #[test]
    fn tree_contribution_adds() {
        let head = LrHead::new(2, &[3], 1e-3);
        let psi = ParamSet::zeros(head.layout().clone());
        let a = compute_alpha(&head, &psi, &[0.0, 0.0], Some(2e-3)).unwrap();
        assert!((a - 2.5e-3).abs() < 1e-18);
        assert_eq!(compute_alpha(&head, &psi, &[0.0, 0.0], None).unwrap(), 5e-4);
    }

    #[test]
    fn alpha_stays_in_range() {
        let head = LrHead::new(4, &[8, 4], 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let mut psi = head.init(&mut rng);
            psi.scale(20.0);
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = head.alpha(&psi, &h).unwrap();
            // Saturates to the closed interval at extreme logits.
            assert!((0.0..=1e-3).contains(&a), "{a}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let head = LrHead::new(3, &[5, 4], 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let psi = head.init(&mut rng);
        let h = [0.3, -0.7, 0.2];
        let g = head.alpha_with_grad(&psi, &h).unwrap();
        let eps = 1e-6;
        for i in 0..psi.total_dim() {
            let mut p = psi.clone();
            p.as_mut_slice()[i] += eps;
            let mut m = psi.clone();
            m.as_mut_slice()[i] -= eps;
            let fd = (head.alpha(&p, &h).unwrap() - head.alpha(&m, &h).unwrap()) / (2.0 * eps);
            let a = g.d_psi.as_slice()[i];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-9), "{a} vs {fd}");
        }
        for d in 0..3 {
            let mut p = h;
            p[d] += eps;
            let mut m = h;
            m[d] -= eps;
            let fd = (head.alpha(&psi, &p).unwrap() - head.alpha(&psi, &m).unwrap()) / (2.0 * eps);
            assert!((g.d_h[d] - fd).abs() <= 1e-6 * fd.abs().max(1e-9));
        }
    }
}
