//! The decision network: per-feature embeddings, a fusing concatenation of
//! user and item embeddings, and a ReLU stack ending in either a rating
//! regressor or a two-way click softmax.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::{self, LabelEncoding, LossKind, NelWeights, PROB_FLOOR};
use crate::mlp::{Stack, Trace};
use crate::params::{Gradient, Layout, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    RatingRegression,
    CtrSoftmax,
}

impl OutputKind {
    pub fn width(self) -> usize {
        match self {
            OutputKind::RatingRegression => 1,
            OutputKind::CtrSoftmax => 2,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            OutputKind::RatingRegression => LossKind::Mse,
            OutputKind::CtrSoftmax => LossKind::weighted_nel(),
        }
    }
}

/// Shape of the decision network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Vocabulary size of each categorical user feature.
    pub user_vocab: Vec<usize>,
    /// Vocabulary size of each categorical item feature.
    pub item_vocab: Vec<usize>,
    pub embedding_dim: usize,
    /// Hidden widths of the decision stack; the output layer is appended.
    pub hidden_dims: Vec<usize>,
    pub output: OutputKind,
}

impl ModelSpec {
    /// Width of the fused user+item embedding fed to the decision stack.
    pub fn fused_dim(&self) -> usize {
        (self.user_vocab.len() + self.item_vocab.len()) * self.embedding_dim
    }

    pub fn user_dim(&self) -> usize {
        self.user_vocab.len() * self.embedding_dim
    }
}

/// One user's items, ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub user: Vec<usize>,
    pub items: Vec<Vec<usize>>,
    /// Rating, or click label in {0, 1}.
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Rating(Vec<f64>),
    /// (P(not clicked), P(clicked)) per item.
    Click(Vec<[f64; 2]>),
}

impl Predictions {
    /// Rating, or click probability, per item.
    pub fn scores(&self) -> Vec<f64> {
        match self {
            Predictions::Rating(v) => v.clone(),
            Predictions::Click(p) => p.iter().map(|p| p[1]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub predictions: Predictions,
    /// Concatenated user-feature embeddings, before fusion with items.
    pub user_embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layout: Arc<Layout>,
    stack: Stack,
    loss_kind: LossKind,
}

fn user_emb_name(k: usize) -> String {
    format!("emb.user.{k}")
}

fn item_emb_name(k: usize) -> String {
    format!("emb.item.{k}")
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.embedding_dim == 0 {
            return Err(Error::ModelConstruction("embedding_dim must be positive".into()));
        }
        if spec.user_vocab.is_empty() {
            return Err(Error::ModelConstruction("at least one user feature required".into()));
        }
        if let Some(k) = spec
            .user_vocab
            .iter()
            .chain(&spec.item_vocab)
            .position(|&v| v == 0)
        {
            return Err(Error::ModelConstruction(format!("feature {k} has an empty vocabulary")));
        }
        if spec.hidden_dims.contains(&0) {
            return Err(Error::ModelConstruction("zero-width hidden layer".into()));
        }
        let mut dims = vec![spec.fused_dim()];
        dims.extend(&spec.hidden_dims);
        dims.push(spec.output.width());
        let stack = Stack::new("dec", &dims);

        let mut builder = Layout::builder();
        for (k, &v) in spec.user_vocab.iter().enumerate() {
            builder = builder.push(user_emb_name(k), &[v, spec.embedding_dim]);
        }
        for (k, &v) in spec.item_vocab.iter().enumerate() {
            builder = builder.push(item_emb_name(k), &[v, spec.embedding_dim]);
        }
        let layout = stack.register(builder).build();
        let loss_kind = spec.output.loss_kind();
        Ok(Self {
            spec,
            layout,
            stack,
            loss_kind,
        })
    }

    /// Overrides the click-loss weighting (ignored for rating models).
    pub fn with_nel(mut self, weights: NelWeights, encoding: LabelEncoding) -> Self {
        if self.spec.output == OutputKind::CtrSoftmax {
            self.loss_kind = LossKind::WeightedNel { weights, encoding };
        }
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    /// Embeddings uniform in +-0.05, dense weights and biases uniform in
    /// +-1/sqrt(fan_in).
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut theta = ParamSet::zeros(self.layout.clone());
        for entry in self.layout.entries() {
            let bound = if entry.name.starts_with("emb.") {
                0.05
            } else {
                let fan_in = *entry.shape.last().unwrap();
                let fan_in = if entry.shape.len() == 1 {
                    // bias: fan-in of the matching weight
                    self.layout
                        .get(&entry.name.replace(".bias", ".weight"))
                        .map(|w| w.shape[1])
                        .unwrap_or(fan_in)
                } else {
                    fan_in
                };
                1.0 / (fan_in as f64).sqrt()
            };
            for v in theta.entry_mut(&entry.name) {
                *v = rng.random_range(-bound..bound);
            }
        }
        theta
    }

    fn check_theta(&self, theta: &ParamSet) -> Result<()> {
        if Arc::ptr_eq(theta.layout(), &self.layout) || **theta.layout() == *self.layout {
            Ok(())
        } else {
            Err(Error::ModelConstruction(
                "parameter layout does not match the model spec".into(),
            ))
        }
    }

    fn check_ids(&self, user: &[usize], items: &[Vec<usize>]) -> Result<()> {
        if user.len() != self.spec.user_vocab.len() {
            return Err(Error::RejectedInput(format!(
                "{} user features, expected {}",
                user.len(),
                self.spec.user_vocab.len()
            )));
        }
        for (k, (&id, &v)) in user.iter().zip(&self.spec.user_vocab).enumerate() {
            if id >= v {
                return Err(Error::RejectedInput(format!(
                    "user feature {k}: id {id} outside vocabulary of {v}"
                )));
            }
        }
        for item in items {
            if item.len() != self.spec.item_vocab.len() {
                return Err(Error::RejectedInput(format!(
                    "{} item features, expected {}",
                    item.len(),
                    self.spec.item_vocab.len()
                )));
            }
            for (k, (&id, &v)) in item.iter().zip(&self.spec.item_vocab).enumerate() {
                if id >= v {
                    return Err(Error::RejectedInput(format!(
                        "item feature {k}: id {id} outside vocabulary of {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Concatenated user-feature embeddings.
    pub fn user_embedding(&self, theta: &ParamSet, user: &[usize]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_ids(user, &[])?;
        Ok(self.gather_user(theta, user))
    }

    fn gather_user(&self, params: &ParamSet, user: &[usize]) -> Vec<f64> {
        let e = self.spec.embedding_dim;
        let mut h = Vec::with_capacity(self.spec.user_dim());
        for (k, &id) in user.iter().enumerate() {
            let m = params.entry(&user_emb_name(k));
            h.extend_from_slice(&m[id * e..(id + 1) * e]);
        }
        h
    }

    fn fused(&self, params: &ParamSet, user: &[usize], items: &[Vec<usize>]) -> Array2<f64> {
        let e = self.spec.embedding_dim;
        let h = self.gather_user(params, user);
        let ud = h.len();
        let mut x = Array2::zeros((items.len(), self.spec.fused_dim()));
        for (j, item) in items.iter().enumerate() {
            let mut row = x.row_mut(j);
            row.slice_mut(s![..ud])
                .iter_mut()
                .zip(&h)
                .for_each(|(d, s)| *d = *s);
            for (k, &id) in item.iter().enumerate() {
                let m = params.entry(&item_emb_name(k));
                let start = ud + k * e;
                row.slice_mut(s![start..start + e])
                    .iter_mut()
                    .zip(&m[id * e..(id + 1) * e])
                    .for_each(|(d, s)| *d = *s);
            }
        }
        x
    }

    /// Adds `dh` (gradient w.r.t. the user embedding) into the user
    /// embedding rows of `grads`.
    pub fn user_embedding_backward(&self, user: &[usize], dh: &[f64], grads: &mut ParamSet) {
        let e = self.spec.embedding_dim;
        for (k, &id) in user.iter().enumerate() {
            let m = grads.entry_mut(&user_emb_name(k));
            m[id * e..(id + 1) * e]
                .iter_mut()
                .zip(&dh[k * e..(k + 1) * e])
                .for_each(|(g, d)| *g += d);
        }
    }

    fn scatter_fused(&self, batch: &Batch, dx: ArrayView2<'_, f64>, grads: &mut ParamSet) {
        let e = self.spec.embedding_dim;
        let ud = self.spec.user_dim();
        let dh: Vec<f64> = (0..ud).map(|c| dx.column(c).sum()).collect();
        self.user_embedding_backward(&batch.user, &dh, grads);
        for (j, item) in batch.items.iter().enumerate() {
            let row = dx.row(j);
            for (k, &id) in item.iter().enumerate() {
                let start = ud + k * e;
                let m = grads.entry_mut(&item_emb_name(k));
                m[id * e..(id + 1) * e]
                    .iter_mut()
                    .zip(row.slice(s![start..start + e]))
                    .for_each(|(g, d)| *g += d);
            }
        }
    }

    fn run(&self, theta: &ParamSet, batch: &Batch) -> Result<Trace> {
        self.check_theta(theta)?;
        if batch.is_empty() {
            return Err(Error::DegenerateInput("batch has no items".into()));
        }
        if batch.targets.len() != batch.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {} items",
                batch.targets.len(),
                batch.len()
            )));
        }
        self.check_ids(&batch.user, &batch.items)?;
        let x = self.fused(theta, &batch.user, &batch.items);
        self.stack.forward(theta, x)
    }

    pub fn forward(&self, theta: &ParamSet, user: &[usize], items: &[Vec<usize>]) -> Result<Forward> {
        self.check_theta(theta)?;
        self.check_ids(user, items)?;
        let user_embedding = self.gather_user(theta, user);
        if items.is_empty() {
            let predictions = match self.spec.output {
                OutputKind::RatingRegression => Predictions::Rating(vec![]),
                OutputKind::CtrSoftmax => Predictions::Click(vec![]),
            };
            return Ok(Forward {
                predictions,
                user_embedding,
            });
        }
        let trace = self.stack.forward(theta, self.fused(theta, user, items))?;
        Ok(Forward {
            predictions: self.predictions(trace.output()),
            user_embedding,
        })
    }

    fn predictions(&self, out: ArrayView2<'_, f64>) -> Predictions {
        match self.spec.output {
            OutputKind::RatingRegression => Predictions::Rating(out.column(0).to_vec()),
            OutputKind::CtrSoftmax => Predictions::Click(
                out.rows()
                    .into_iter()
                    .map(|r| loss::softmax2([r[0], r[1]]))
                    .collect(),
            ),
        }
    }

    pub fn predict(&self, theta: &ParamSet, batch: &Batch) -> Result<Predictions> {
        let trace = self.run(theta, batch)?;
        Ok(self.predictions(trace.output()))
    }

    fn loss_of(&self, preds: &Predictions, targets: &[f64]) -> Result<f64> {
        match (preds, self.loss_kind) {
            (Predictions::Rating(p), LossKind::Mse) => loss::mse(p, targets),
            (Predictions::Click(p), LossKind::WeightedNel { weights, encoding }) => {
                loss::weighted_nel(p, targets, weights, encoding)
            }
            _ => unreachable!("loss kind follows the output kind"),
        }
    }

    pub fn loss(&self, theta: &ParamSet, batch: &Batch) -> Result<f64> {
        let preds = self.predict(theta, batch)?;
        self.loss_of(&preds, &batch.targets)
    }

    /// Loss value and its gradient w.r.t. the network output.
    fn loss_head(&self, out: ArrayView2<'_, f64>, targets: &[f64]) -> (f64, Array2<f64>) {
        let n = targets.len() as f64;
        match self.loss_kind {
            LossKind::Mse => {
                let mut d = Array2::zeros(out.raw_dim());
                let mut total = 0.0;
                for (j, &t) in targets.iter().enumerate() {
                    let r = out[[j, 0]] - t;
                    total += r * r;
                    d[[j, 0]] = 2.0 * r / n;
                }
                (total / n, d)
            }
            LossKind::WeightedNel { weights, encoding } => {
                let mut d = Array2::zeros(out.raw_dim());
                let mut total = 0.0;
                for (j, &t) in targets.iter().enumerate() {
                    let p = loss::softmax2([out[[j, 0]], out[[j, 1]]]);
                    let y = encoding.encode(t);
                    let w = weights.for_label(t);
                    for c in 0..2 {
                        if y[c] == 0.0 {
                            continue;
                        }
                        total -= w * y[c] * p[c].max(PROB_FLOOR).ln();
                        if p[c] >= PROB_FLOOR {
                            // d(-ln p_c)/dz = p - e_c
                            for c2 in 0..2 {
                                let e = if c2 == c { 1.0 } else { 0.0 };
                                d[[j, c2]] += w * y[c] * (p[c2] - e) / n;
                            }
                        }
                    }
                }
                (total / n, d)
            }
        }
    }

    /// Directional derivative of [`Self::loss_head`]'s output gradient.
    fn loss_head_tangent(
        &self,
        out: ArrayView2<'_, f64>,
        r_out: ArrayView2<'_, f64>,
        targets: &[f64],
    ) -> Array2<f64> {
        let n = targets.len() as f64;
        let mut rd = Array2::zeros(out.raw_dim());
        match self.loss_kind {
            LossKind::Mse => {
                for j in 0..targets.len() {
                    rd[[j, 0]] = 2.0 * r_out[[j, 0]] / n;
                }
            }
            LossKind::WeightedNel { weights, encoding } => {
                for (j, &t) in targets.iter().enumerate() {
                    let p = loss::softmax2([out[[j, 0]], out[[j, 1]]]);
                    let rz = [r_out[[j, 0]], r_out[[j, 1]]];
                    let mean = p[0] * rz[0] + p[1] * rz[1];
                    let rp = [p[0] * (rz[0] - mean), p[1] * (rz[1] - mean)];
                    let y = encoding.encode(t);
                    let w = weights.for_label(t);
                    let mass: f64 = (0..2)
                        .filter(|&c| y[c] != 0.0 && p[c] >= PROB_FLOOR)
                        .map(|c| y[c])
                        .sum();
                    for c2 in 0..2 {
                        rd[[j, c2]] = w * mass * rp[c2] / n;
                    }
                }
            }
        }
        rd
    }

    /// Exact gradient of the batch loss.
    pub fn grad(&self, theta: &ParamSet, batch: &Batch) -> Result<Gradient> {
        let trace = self.run(theta, batch)?;
        let (loss, d_out) = self.loss_head(trace.output(), &batch.targets);
        let mut grads = theta.zeros_like();
        let dx = self.stack.backward(theta, &trace, d_out, &mut grads);
        self.scatter_fused(batch, dx.view(), &mut grads);
        finite_or_overflow(&grads)?;
        Ok(Gradient {
            params: grads,
            loss,
        })
    }

    /// Gradient together with the Hessian-vector product `H v`, computed by
    /// forward-over-reverse differentiation.
    pub fn grad_and_hvp(
        &self,
        theta: &ParamSet,
        batch: &Batch,
        v: &ParamSet,
    ) -> Result<(Gradient, ParamSet)> {
        theta.check_same_shape(v)?;
        let trace = self.run(theta, batch)?;
        let r_x = self.fused(v, &batch.user, &batch.items);
        let r_trace = self.stack.forward_tangent(theta, v, &trace, r_x);
        let (loss, d_out) = self.loss_head(trace.output(), &batch.targets);
        let r_d_out = self.loss_head_tangent(trace.output(), r_trace.output(), &batch.targets);
        let mut grads = theta.zeros_like();
        let mut hv = theta.zeros_like();
        let (dx, r_dx) = self.stack.backward_tangent(
            theta, v, &trace, &r_trace, d_out, r_d_out, &mut grads, &mut hv,
        );
        self.scatter_fused(batch, dx.view(), &mut grads);
        self.scatter_fused(batch, r_dx.view(), &mut hv);
        finite_or_overflow(&grads)?;
        finite_or_overflow(&hv)?;
        Ok((
            Gradient {
                params: grads,
                loss,
            },
            hv,
        ))
    }

    pub fn hvp(&self, theta: &ParamSet, batch: &Batch, v: &ParamSet) -> Result<ParamSet> {
        Ok(self.grad_and_hvp(theta, batch, v)?.1)
    }

    /// Distance of the batch's hidden pre-activations from the ReLU kink.
    pub fn kink_margin(&self, theta: &ParamSet, batch: &Batch) -> Result<f64> {
        let trace = self.run(theta, batch)?;
        Ok(Stack::kink_margin(&trace, &self.stack))
    }
}

fn finite_or_overflow(p: &ParamSet) -> Result<()> {
    match p.first_non_finite() {
        None => Ok(()),
        Some(name) => Err(Error::NumericOverflow {
            layer: name.to_string(),
        }),
    }
}
