//! Rating and click losses.

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-label weights of the weighted negative-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelWeights {
    pub neg: f64,
    pub pos: f64,
}

impl Default for NelWeights {
    fn default() -> Self {
        Self { neg: 0.1, pos: 0.9 }
    }
}

impl NelWeights {
    pub fn for_label(&self, click: f64) -> f64 {
        if click > 0.5 {
            self.pos
        } else {
            self.neg
        }
    }
}

/// How a click label is spread over the two output classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelEncoding {
    /// One-hot over (not clicked, clicked): every item contributes.
    #[default]
    TwoClass,
    /// Only the clicked class is encoded; non-clicked items contribute 0.
    ClickOnly,
}

impl LabelEncoding {
    /// Label vector over (not clicked, clicked).
    pub fn encode(self, click: f64) -> [f64; 2] {
        let c = if click > 0.5 { 1.0 } else { 0.0 };
        match self {
            LabelEncoding::TwoClass => [1.0 - c, c],
            LabelEncoding::ClickOnly => [0.0, c],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    WeightedNel {
        weights: NelWeights,
        encoding: LabelEncoding,
    },
}

impl LossKind {
    pub fn weighted_nel() -> Self {
        LossKind::WeightedNel {
            weights: NelWeights::default(),
            encoding: LabelEncoding::default(),
        }
    }
}

/// Mean of squared residuals.
pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), targets.len())?;
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean over items of `-w_j * sum_c yhat_jc * ln(max(p_jc, 1e-12))`, with
/// `probs[j] = (P(not clicked), P(clicked))`.
pub fn weighted_nel(
    probs: &[[f64; 2]],
    clicks: &[f64],
    weights: NelWeights,
    encoding: LabelEncoding,
) -> Result<f64> {
    check_lengths(probs.len(), clicks.len())?;
    let n = probs.len() as f64;
    let total: f64 = probs
        .iter()
        .zip(clicks)
        .map(|(p, &c)| {
            let y = encoding.encode(c);
            let w = weights.for_label(c);
            -w * (y[0] * p[0].max(PROB_FLOOR).ln() + y[1] * p[1].max(PROB_FLOOR).ln())
        })
        .sum();
    Ok(total / n)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{a} predictions for {b} targets"
        )));
    }
    Ok(())
}

/// Two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}
