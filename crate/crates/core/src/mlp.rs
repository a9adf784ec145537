//! Fully connected stacks with exact reverse-mode gradients and
//! forward-over-reverse Hessian-vector products.
//!
//! Rows of every activation matrix are independent samples. Hidden layers use
//! ReLU with subgradient 0 at 0; the last layer is linear.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::params::{LayoutBuilder, ParamSet};

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub weight: String,
    pub bias: String,
    pub relu: bool,
}

/// Layer naming and activation pattern of a dense stack living in a
/// [`ParamSet`] under `prefix`.
#[derive(Debug, Clone)]
pub(crate) struct Stack {
    layers: Vec<Dense>,
    dims: Vec<usize>,
}

impl Stack {
    /// `dims` lists widths from input to output; every layer but the last
    /// gets a ReLU.
    pub fn new(prefix: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "a stack needs an input and an output width");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| Dense {
                weight: format!("{prefix}.{l}.weight"),
                bias: format!("{prefix}.{l}.bias"),
                relu: l + 1 < n,
            })
            .collect();
        Self {
            layers,
            dims: dims.to_vec(),
        }
    }

    pub fn register(&self, mut builder: LayoutBuilder) -> LayoutBuilder {
        for (l, layer) in self.layers.iter().enumerate() {
            builder = builder
                .push(layer.weight.clone(), &[self.dims[l + 1], self.dims[l]])
                .push(layer.bias.clone(), &[self.dims[l + 1]]);
        }
        builder
    }

    pub fn forward(&self, params: &ParamSet, x: Array2<f64>) -> Result<Trace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for layer in &self.layers {
            let w = params.matrix(&layer.weight);
            let b = params.vector(&layer.bias);
            let mut z = current.dot(&w.t());
            z += &b;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    layer: layer.weight.trim_end_matches(".weight").to_string(),
                });
            }
            let next = if layer.relu {
                z.mapv(|v| if v > 0.0 { v } else { 0.0 })
            } else {
                z.clone()
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        Ok(Trace { inputs, pre })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the stack input.
    pub fn backward(
        &self,
        params: &ParamSet,
        trace: &Trace,
        d_out: Array2<f64>,
        grads: &mut ParamSet,
    ) -> Array2<f64> {
        let mut delta = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                mask_relu(&mut delta, &trace.pre[l]);
            }
            let input = &trace.inputs[l];
            {
                let mut gw = grads.matrix_mut(&layer.weight);
                gw += &delta.t().dot(input);
            }
            {
                let mut gb = grads.vector_mut(&layer.bias);
                gb += &delta.sum_axis(Axis(0));
            }
            let w = params.matrix(&layer.weight);
            delta = delta.dot(&w);
        }
        delta
    }

    /// Directional derivative of the forward pass along (`tangent`, `r_x`).
    pub fn forward_tangent(
        &self,
        params: &ParamSet,
        tangent: &ParamSet,
        trace: &Trace,
        r_x: Array2<f64>,
    ) -> TangentTrace {
        let mut r_inputs = Vec::with_capacity(self.layers.len());
        let mut r_pre = Vec::with_capacity(self.layers.len());
        let mut current = r_x;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = params.matrix(&layer.weight);
            let rw = tangent.matrix(&layer.weight);
            let rb = tangent.vector(&layer.bias);
            let mut rz = current.dot(&w.t());
            rz += &trace.inputs[l].dot(&rw.t());
            rz += &rb;
            let next = if layer.relu {
                let mut m = rz.clone();
                mask_relu(&mut m, &trace.pre[l]);
                m
            } else {
                rz.clone()
            };
            r_inputs.push(current);
            r_pre.push(rz);
            current = next;
        }
        TangentTrace { r_inputs, r_pre }
    }

    /// Backward pass together with its directional derivative. Accumulates
    /// the gradient into `grads` and the Hessian-vector product into
    /// `r_grads`; returns `(d_x, r_d_x)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_tangent(
        &self,
        params: &ParamSet,
        tangent: &ParamSet,
        trace: &Trace,
        r_trace: &TangentTrace,
        d_out: Array2<f64>,
        r_d_out: Array2<f64>,
        grads: &mut ParamSet,
        r_grads: &mut ParamSet,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut delta = d_out;
        let mut r_delta = r_d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                mask_relu(&mut delta, &trace.pre[l]);
                mask_relu(&mut r_delta, &trace.pre[l]);
            }
            let input = &trace.inputs[l];
            let r_input = &r_trace.r_inputs[l];
            {
                let mut gw = grads.matrix_mut(&layer.weight);
                gw += &delta.t().dot(input);
            }
            {
                let mut gb = grads.vector_mut(&layer.bias);
                gb += &delta.sum_axis(Axis(0));
            }
            {
                let mut rgw = r_grads.matrix_mut(&layer.weight);
                rgw += &r_delta.t().dot(input);
                rgw += &delta.t().dot(r_input);
            }
            {
                let mut rgb = r_grads.vector_mut(&layer.bias);
                rgb += &r_delta.sum_axis(Axis(0));
            }
            let w = params.matrix(&layer.weight);
            let rw = tangent.matrix(&layer.weight);
            let next_r = r_delta.dot(&w) + delta.dot(&rw);
            delta = delta.dot(&w);
            r_delta = next_r;
        }
        (delta, r_delta)
    }

    /// Smallest |pre-activation| over all ReLU units; distance to the nearest
    /// kink of the piecewise-linear map.
    pub fn kink_margin(trace: &Trace, stack: &Stack) -> f64 {
        stack
            .layers
            .iter()
            .zip(&trace.pre)
            .filter(|(layer, _)| layer.relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

fn mask_relu(delta: &mut Array2<f64>, pre: &Array2<f64>) {
    ndarray::Zip::from(delta).and(pre).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Cached forward activations.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// Input to each layer.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.pre.last().expect("non-empty stack").view()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TangentTrace {
    pub r_inputs: Vec<Array2<f64>>,
    pub r_pre: Vec<Array2<f64>>,
}

impl TangentTrace {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.r_pre.last().expect("non-empty stack").view()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Layout;
    use ndarray::array;

    fn small_stack() -> (Stack, ParamSet) {
        let stack = Stack::new("s", &[2, 3, 1]);
        let layout = stack.register(Layout::builder()).build();
        let mut p = ParamSet::zeros(layout);
        p.as_mut_slice()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = ((i as f64) * 0.37).sin());
        (stack, p)
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let (stack, p) = small_stack();
        let x = array![[0.3, -1.2]];
        let trace = stack.forward(&p, x.clone()).unwrap();
        let w0 = p.matrix("s.0.weight");
        let b0 = p.vector("s.0.bias");
        let w1 = p.matrix("s.1.weight");
        let b1 = p.vector("s.1.bias");
        let mut out = b1[0];
        for j in 0..3 {
            let z = w0[[j, 0]] * x[[0, 0]] + w0[[j, 1]] * x[[0, 1]] + b0[j];
            out += w1[[0, j]] * z.max(0.0);
        }
        assert!((trace.output()[[0, 0]] - out).abs() < 1e-14);
    }

    #[test]
    fn overflow_names_the_layer() {
        let (stack, mut p) = small_stack();
        p.entry_mut("s.0.weight")[0] = f64::INFINITY;
        match stack.forward(&p, array![[1.0, 1.0]]) {
            Err(Error::NumericOverflow { layer }) => assert_eq!(layer, "s.0"),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
