//! One trainer for every algorithm: per-user inner step, exact outer
//! gradient, and the epoch loop with validation-based model selection.
//!
//! For a scalar rate `a_i` the outer objective of one episode is
//! `L_q(theta - a_i g_s) + gamma * |g_s|^2 * a_i`, with `g_s` the support
//! gradient at `theta`. Its gradient is
//! `u + H_s (2 gamma a_i g_s - a_i u) + c_i * d a_i / d theta`
//! with `u` the query gradient at the adapted parameters, `H_s` the support
//! Hessian and `c_i = gamma |g_s|^2 - <u, g_s>`; the last term flows through
//! the user embedding into the LR head, the tree blend and the embedding
//! rows.

use std::collections::BTreeMap;

use log::{debug, error, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Algorithm, PsiUpdate, TrainerConfig};
use super::lr_head::{AlphaGrad, LrHead};
use super::optim::Optimizer;
use crate::error::{Error, Result};
use crate::memory::{NodeGrad, NodeId, TreeLookup, TreeMemory};
use crate::model::{Batch, Model, ModelSpec, Predictions};
use crate::params::{axpy_update, Gradient, ParamSet, Step};
use crate::tasks::{DatasetSplits, FeatureSchema, TaskEpisode};

/// Independent random streams derived from one seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_THETA: u64 = 0;
const STREAM_PSI: u64 = 1;
const STREAM_BATCHES: u64 = 2;

/// `theta - alpha * grad L_support(theta)`, with the support gradient.
pub fn inner_adapt(model: &Model, theta: &ParamSet, alpha: Step<'_>, support: &Batch) -> Result<(ParamSet, Gradient)> {
    match alpha {
        Step::Scalar(a) if !(a.is_finite() && a >= 0.0) => {
            return Err(Error::RejectedInput(format!("inner rate {a} must be finite and non-negative")))
        }
        Step::PerEntry(r) if r.as_slice().iter().any(|a| !(a.is_finite() && *a >= 0.0)) => {
            return Err(Error::RejectedInput("per-parameter inner rates must be finite and non-negative".into()))
        }
        _ => {}
    }
    let g = model.grad(theta, support)?;
    let adapted = axpy_update(theta, &g.params, alpha)?;
    Ok((adapted, g))
}

/// `|grad|^2 * |alpha|`
pub fn reg_term(grad: &ParamSet, alpha: f64) -> f64 {
    grad.norm_sq() * alpha.abs()
}

/// Parameters carried across outer steps.
#[derive(Debug, Clone)]
pub struct MetaState {
    pub theta: ParamSet,
    pub psi: Option<ParamSet>,
    /// Per-parameter inner rates (meta-sgd).
    pub alpha_vec: Option<ParamSet>,
    pub tree: Option<TreeMemory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Fixed inner rate; tree nodes are stored but not searched.
    Warmup,
    Main,
}

/// Per-episode quantities of one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub user_id: u32,
    pub support_loss: f64,
    /// Query loss after adaptation.
    pub query_loss: f64,
    /// `|g_s|`
    pub grad_norm: f64,
    /// Scalar rate, or the mean per-parameter rate.
    pub alpha: f64,
    /// `|g_s|^2 * |alpha|`
    pub reg: f64,
    pub embedding_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub gamma: f64,
    pub episodes: Vec<EpisodeLog>,
    /// Outer objective accumulated during the step.
    pub total_loss: f64,
}

#[derive(Debug, Clone)]
pub struct OuterGradient {
    pub theta: ParamSet,
    pub psi: Option<ParamSet>,
    pub alpha_vec: Option<ParamSet>,
    pub nodes: Vec<NodeGrad>,
    /// Literal-rule direction for the LR head, when configured.
    pub psi_literal: Option<ParamSet>,
    pub episodes: Vec<EpisodeLog>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-episode training objective (pooled loss for transfer).
    pub train_loss: f64,
    /// Mean per-user adapted query loss on the validation split.
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    pub state: MetaState,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepLog>,
    /// Epoch whose parameters are kept.
    pub best_epoch: Option<usize>,
}

/// One test user's adapted predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct UserResult {
    pub user_id: u32,
    pub alpha: f64,
    pub item_ids: Vec<u32>,
    pub targets: Vec<f64>,
    pub predictions: Predictions,
    pub query_loss: f64,
}

pub struct Optimizers {
    theta: Optimizer,
    psi: Option<Optimizer>,
    alpha_vec: Option<Optimizer>,
}

enum Rate {
    Scalar {
        alpha: f64,
        head: Option<AlphaGrad>,
        lookup: Option<TreeLookup>,
    },
    PerParam,
}

impl Rate {
    fn fixed(alpha: f64) -> Self {
        Rate::Scalar {
            alpha,
            head: None,
            lookup: None,
        }
    }

    fn alpha(&self, alpha_vec: Option<&ParamSet>) -> f64 {
        match self {
            Rate::Scalar { alpha, .. } => *alpha,
            Rate::PerParam => {
                let v = alpha_vec.expect("meta-sgd state");
                v.as_slice().iter().sum::<f64>() / v.total_dim().max(1) as f64
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Learner {
    config: TrainerConfig,
    model: Model,
    head: Option<LrHead>,
}

impl Learner {
    pub fn new(config: TrainerConfig, schema: &FeatureSchema) -> Result<Self> {
        let spec = ModelSpec {
            user_vocab: schema.user_vocab.clone(),
            item_vocab: schema.item_vocab.clone(),
            embedding_dim: config.embedding_dim,
            hidden_dims: config.hidden_dims.clone(),
            output: config.output,
        };
        Self::from_spec(config, spec)
    }

    pub fn from_spec(config: TrainerConfig, spec: ModelSpec) -> Result<Self> {
        config.validate()?;
        let model = Model::new(spec)?;
        let head = (config.algorithm.uses_lr_head() && config.frozen_alpha.is_none())
            .then(|| LrHead::new(model.spec().user_dim(), &config.lr_hidden_dims, config.lr_scale));
        Ok(Self { config, model, head })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn head(&self) -> Option<&LrHead> {
        self.head.as_ref()
    }

    pub fn init_state(&self) -> Result<MetaState> {
        let seed = self.config.seed;
        let theta = self.model.init(&mut stream_rng(seed, STREAM_THETA));
        let psi = self.head.as_ref().map(|h| h.init(&mut stream_rng(seed, STREAM_PSI)));
        let alpha_vec = (self.config.algorithm == Algorithm::MetaSgd)
            .then(|| theta.filled_like(self.config.meta_sgd_init_lr));
        let tree = if self.config.algorithm == Algorithm::AtPaml {
            let cfg = crate::memory::TreeConfig {
                seed,
                ..self.config.tree.clone()
            };
            Some(TreeMemory::new(self.model.spec().user_dim(), cfg)?)
        } else {
            None
        };
        Ok(MetaState {
            theta,
            psi,
            alpha_vec,
            tree,
        })
    }

    pub fn optimizers(&self, state: &MetaState) -> Optimizers {
        let c = &self.config;
        Optimizers {
            theta: Optimizer::new(c.optimizer, c.outer_lr, state.theta.total_dim()),
            psi: state.psi.as_ref().map(|p| Optimizer::new(c.optimizer, c.outer_lr, p.total_dim())),
            alpha_vec: state
                .alpha_vec
                .as_ref()
                .map(|p| Optimizer::new(c.optimizer, c.outer_lr, p.total_dim())),
        }
    }

    fn rate(&self, psi: Option<&ParamSet>, h: &[f64], lookup: Option<TreeLookup>, phase: Phase) -> Result<Rate> {
        let c = &self.config;
        Ok(match c.algorithm {
            Algorithm::MamlFixed | Algorithm::Transfer => Rate::fixed(c.fixed_inner_lr),
            Algorithm::MetaSgd => Rate::PerParam,
            Algorithm::Paml | Algorithm::RegPaml | Algorithm::AtPaml => {
                if let Some(a) = c.frozen_alpha {
                    Rate::fixed(a)
                } else if c.algorithm == Algorithm::AtPaml && phase == Phase::Warmup {
                    Rate::fixed(c.warmup_inner_lr)
                } else {
                    let head = self.head.as_ref().expect("LR head present");
                    let g = head.alpha_with_grad(psi.expect("psi present"), h)?;
                    let alpha = g.alpha + lookup.as_ref().map_or(0.0, |l| l.alpha);
                    Rate::Scalar {
                        alpha,
                        head: Some(g),
                        lookup,
                    }
                }
            }
        })
    }

    fn wants_lookup(&self, phase: Phase) -> bool {
        self.config.algorithm == Algorithm::AtPaml && self.config.frozen_alpha.is_none() && phase == Phase::Main
    }

    /// Gradient of the summed outer objective over `episodes`. At-paml
    /// searches the tree (marking neighbors used) and stores each user's
    /// node after its rate is computed.
    pub fn outer_gradient(&self, state: &mut MetaState, episodes: &[&TaskEpisode], phase: Phase) -> Result<OuterGradient> {
        self.outer_gradient_impl(state, episodes, phase, true)
    }

    /// As [`Self::outer_gradient`] with read-only tree lookups and no stores.
    pub fn outer_gradient_readonly(&self, state: &MetaState, episodes: &[&TaskEpisode]) -> Result<OuterGradient> {
        let mut copy = MetaState {
            theta: state.theta.clone(),
            psi: state.psi.clone(),
            alpha_vec: state.alpha_vec.clone(),
            tree: None,
        };
        copy.tree = state.tree.clone();
        self.outer_gradient_impl(&mut copy, episodes, Phase::Main, false)
    }

    fn outer_gradient_impl(
        &self,
        state: &mut MetaState,
        episodes: &[&TaskEpisode],
        phase: Phase,
        tree_writes: bool,
    ) -> Result<OuterGradient> {
        let gamma = self.config.effective_gamma();
        let literal = self.config.psi_update == PsiUpdate::Literal;
        let MetaState {
            theta,
            psi,
            alpha_vec,
            tree,
        } = state;
        let mut d_theta = theta.zeros_like();
        let mut d_psi = psi.as_ref().map(ParamSet::zeros_like);
        let mut d_psi_literal = psi.as_ref().filter(|_| literal).map(ParamSet::zeros_like);
        let mut d_alpha = alpha_vec.as_ref().map(ParamSet::zeros_like);
        let mut nodes: BTreeMap<NodeId, NodeGrad> = BTreeMap::new();
        let mut logs = Vec::with_capacity(episodes.len());
        let mut objective = 0.0;

        for ep in episodes {
            let h = self.model.user_embedding(theta, &ep.user.features)?;
            let lookup = match tree.as_mut() {
                Some(t) if self.wants_lookup(phase) && !t.is_empty() => {
                    let k = t.config().k_train;
                    Some(if tree_writes { t.lookup(&h, k)? } else { t.lookup_readonly(&h, k)? })
                }
                _ => None,
            };
            let rate = self.rate(psi.as_ref(), &h, lookup, phase)?;
            let alpha = rate.alpha(alpha_vec.as_ref());
            let support = ep.support_batch();
            let query = ep.query_batch();
            let gs = self.model.grad(theta, &support)?;
            let (query_loss, reg);
            match &rate {
                Rate::Scalar { alpha, head, lookup } => {
                    let adapted = axpy_update(theta, &gs.params, Step::Scalar(*alpha))?;
                    let u = self.model.grad(&adapted, &query)?;
                    let mut v = u.params.clone();
                    v.scale(-alpha);
                    v.axpy(2.0 * gamma * alpha, &gs.params);
                    let hv = self.model.hvp(theta, &support, &v)?;
                    d_theta.axpy(1.0, &u.params);
                    d_theta.axpy(1.0, &hv);
                    let c = gamma * gs.params.norm_sq() - u.params.dot(&gs.params);
                    let mut d_h: Option<Vec<f64>> = None;
                    if let Some(hg) = head {
                        if let Some(dp) = d_psi.as_mut() {
                            dp.axpy(c, &hg.d_psi);
                        }
                        if let Some(dl) = d_psi_literal.as_mut() {
                            dl.axpy(gs.loss, &hg.d_psi);
                        }
                        d_h = Some(hg.d_h.iter().map(|d| c * d).collect());
                    }
                    if let Some(l) = lookup {
                        let gq = l.grad_query();
                        let dh = d_h.get_or_insert_with(|| vec![0.0; gq.len()]);
                        dh.iter_mut().zip(&gq).for_each(|(a, b)| *a += c * b);
                        for g in l.grad_nodes(c) {
                            match nodes.get_mut(&g.id) {
                                Some(acc) => {
                                    acc.lr += g.lr;
                                    acc.embedding.iter_mut().zip(&g.embedding).for_each(|(a, b)| *a += b);
                                }
                                None => {
                                    nodes.insert(g.id, g);
                                }
                            }
                        }
                    }
                    if let Some(dh) = d_h {
                        self.model.user_embedding_backward(&ep.user.features, &dh, &mut d_theta);
                    }
                    query_loss = u.loss;
                    reg = reg_term(&gs.params, *alpha);
                }
                Rate::PerParam => {
                    let av = alpha_vec.as_ref().expect("meta-sgd state");
                    let adapted = axpy_update(theta, &gs.params, Step::PerEntry(av))?;
                    let u = self.model.grad(&adapted, &query)?;
                    let hv = self.model.hvp(theta, &support, &av.hadamard(&u.params))?;
                    d_theta.axpy(1.0, &u.params);
                    d_theta.axpy(-1.0, &hv);
                    d_alpha
                        .as_mut()
                        .expect("meta-sgd gradient")
                        .axpy(-1.0, &u.params.hadamard(&gs.params));
                    query_loss = u.loss;
                    reg = reg_term(&gs.params, alpha);
                }
            }
            objective += query_loss + gamma * reg;
            if tree_writes {
                if let Some(t) = tree.as_mut() {
                    t.store_node(&h, alpha)?;
                }
            }
            logs.push(EpisodeLog {
                user_id: ep.user.user_id,
                support_loss: gs.loss,
                query_loss,
                grad_norm: gs.params.norm(),
                alpha,
                reg,
                embedding_norm: h.iter().map(|x| x * x).sum::<f64>().sqrt(),
            });
        }
        Ok(OuterGradient {
            theta: d_theta,
            psi: d_psi,
            alpha_vec: d_alpha,
            nodes: nodes.into_values().collect(),
            psi_literal: d_psi_literal,
            episodes: logs,
            objective,
        })
    }

    /// The summed outer objective with read-only tree lookups.
    pub fn outer_objective(&self, state: &MetaState, episodes: &[&TaskEpisode]) -> Result<f64> {
        let gamma = self.config.effective_gamma();
        let mut total = 0.0;
        for ep in episodes {
            let h = self.model.user_embedding(&state.theta, &ep.user.features)?;
            let lookup = match &state.tree {
                Some(t) if self.wants_lookup(Phase::Main) && !t.is_empty() => {
                    Some(t.lookup_readonly(&h, t.config().k_train)?)
                }
                _ => None,
            };
            let rate = self.rate(state.psi.as_ref(), &h, lookup, Phase::Main)?;
            let support = ep.support_batch();
            let (adapted, gs) = match &rate {
                Rate::Scalar { alpha, .. } => inner_adapt(&self.model, &state.theta, Step::Scalar(*alpha), &support)?,
                Rate::PerParam => inner_adapt(
                    &self.model,
                    &state.theta,
                    Step::PerEntry(state.alpha_vec.as_ref().expect("meta-sgd state")),
                    &support,
                )?,
            };
            let alpha = rate.alpha(state.alpha_vec.as_ref());
            total += self.model.loss(&adapted, &ep.query_batch())? + gamma * reg_term(&gs.params, alpha);
        }
        Ok(total)
    }

    /// Clips and applies an outer gradient.
    pub fn apply(&self, state: &mut MetaState, opt: &mut Optimizers, mut grad: OuterGradient) -> Result<()> {
        let c = &self.config;
        let norm_sq = grad.theta.norm_sq()
            + grad.psi.as_ref().map_or(0.0, ParamSet::norm_sq)
            + grad.alpha_vec.as_ref().map_or(0.0, ParamSet::norm_sq);
        let norm = norm_sq.sqrt();
        if !norm.is_finite() {
            error!(
                "non-finite outer gradient: theta {:?}, psi {:?}, alpha {:?}",
                grad.theta.first_non_finite(),
                grad.psi.as_ref().and_then(|p| p.first_non_finite()),
                grad.alpha_vec.as_ref().and_then(|p| p.first_non_finite())
            );
            return Err(Error::NumericOverflow {
                layer: grad.theta.first_non_finite().unwrap_or("outer gradient").to_string(),
            });
        }
        if norm > c.clip_norm {
            let s = c.clip_norm / norm;
            grad.theta.scale(s);
            grad.psi.iter_mut().for_each(|p| p.scale(s));
            grad.alpha_vec.iter_mut().for_each(|p| p.scale(s));
        }
        opt.theta.step(&mut state.theta, &grad.theta);
        if let (Some(psi), Some(dl)) = (state.psi.as_mut(), grad.psi_literal.as_ref()) {
            psi.axpy(c.outer_lr, dl);
        } else if let (Some(psi), Some(dp), Some(o)) = (state.psi.as_mut(), grad.psi.as_ref(), opt.psi.as_mut()) {
            o.step(psi, dp);
        }
        if let (Some(av), Some(da), Some(o)) = (state.alpha_vec.as_mut(), grad.alpha_vec.as_ref(), opt.alpha_vec.as_mut()) {
            o.step(av, da);
            av.as_mut_slice().iter_mut().for_each(|a| *a = a.max(0.0));
        }
        if let Some(tree) = state.tree.as_mut() {
            let live: Vec<NodeGrad> = grad.nodes.into_iter().filter(|g| tree.node(g.id).is_some()).collect();
            if live.is_empty() {
                tree.rebuild();
            } else {
                tree.update_nodes(&live, c.outer_lr)?;
            }
        }
        let finite = state.theta.is_finite()
            && state.psi.as_ref().is_none_or(ParamSet::is_finite)
            && state.alpha_vec.as_ref().is_none_or(ParamSet::is_finite);
        if !finite {
            return Err(Error::NumericOverflow {
                layer: state.theta.first_non_finite().unwrap_or("outer update").to_string(),
            });
        }
        Ok(())
    }

    /// Outer gradient followed by its application.
    pub fn outer_step(
        &self,
        state: &mut MetaState,
        opt: &mut Optimizers,
        episodes: &[&TaskEpisode],
        phase: Phase,
    ) -> Result<OuterGradient> {
        let grad = self.outer_gradient(state, episodes, phase)?;
        let kept = OuterGradient {
            theta: grad.theta.clone(),
            psi: grad.psi.clone(),
            alpha_vec: grad.alpha_vec.clone(),
            nodes: grad.nodes.clone(),
            psi_literal: grad.psi_literal.clone(),
            episodes: grad.episodes.clone(),
            objective: grad.objective,
        };
        self.apply(state, opt, grad)?;
        Ok(kept)
    }

    /// Inner rate used at evaluation time and the adapted parameters.
    pub fn adapt(&self, state: &MetaState, ep: &TaskEpisode) -> Result<(ParamSet, f64)> {
        let support = ep.support_batch();
        if let Some(av) = &state.alpha_vec {
            let (adapted, _) = inner_adapt(&self.model, &state.theta, Step::PerEntry(av), &support)?;
            return Ok((adapted, Rate::PerParam.alpha(Some(av))));
        }
        let c = &self.config;
        let alpha = match (&self.head, &state.psi) {
            (Some(head), Some(psi)) => {
                let h = self.model.user_embedding(&state.theta, &ep.user.features)?;
                let tree_alpha = match &state.tree {
                    Some(t) if !t.is_empty() => Some(t.lookup_readonly(&h, t.config().k_infer)?.alpha),
                    _ => None,
                };
                super::lr_head::compute_alpha(head, psi, &h, tree_alpha)?
            }
            _ => c.frozen_alpha.filter(|_| c.algorithm.uses_lr_head()).unwrap_or(c.fixed_inner_lr),
        };
        let (adapted, _) = inner_adapt(&self.model, &state.theta, Step::Scalar(alpha), &support)?;
        Ok((adapted, alpha))
    }

    /// Adapts on each support set and predicts the query set. Users without
    /// query items are skipped.
    pub fn evaluate(&self, state: &MetaState, episodes: &[TaskEpisode]) -> Result<Vec<UserResult>> {
        let mut out = Vec::with_capacity(episodes.len());
        for ep in episodes {
            if ep.query.is_empty() || ep.support.is_empty() {
                warn!("user {} has an empty support or query set; skipped", ep.user.user_id);
                continue;
            }
            let (adapted, alpha) = self.adapt(state, ep)?;
            let query = ep.query_batch();
            let predictions = self.model.predict(&adapted, &query)?;
            let query_loss = self.model.loss(&adapted, &query)?;
            out.push(UserResult {
                user_id: ep.user.user_id,
                alpha,
                item_ids: ep.query.iter().map(|i| i.item_id).collect(),
                targets: query.targets,
                predictions,
                query_loss,
            });
        }
        Ok(out)
    }

    fn validation_loss(&self, state: &MetaState, validation: &[TaskEpisode]) -> Result<Option<f64>> {
        let res = self.evaluate(state, validation)?;
        if res.is_empty() {
            return Ok(None);
        }
        Ok(Some(res.iter().map(|r| r.query_loss).sum::<f64>() / res.len() as f64))
    }

    pub fn train(&self, splits: &DatasetSplits) -> Result<TrainedModel> {
        if splits.train.is_empty() {
            return Err(Error::DegenerateInput("empty training split".into()));
        }
        if self.config.algorithm == Algorithm::Transfer {
            return self.transfer_train(splits);
        }
        let mut state = self.init_state()?;
        let mut opt = self.optimizers(&state);
        let mut rng = stream_rng(self.config.seed, STREAM_BATCHES);
        let mut history = Vec::new();
        let mut steps = Vec::new();
        let mut best: Option<(f64, usize, MetaState)> = None;
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let phase = if self.config.algorithm == Algorithm::AtPaml && epoch < self.config.warmup_epochs {
                Phase::Warmup
            } else {
                Phase::Main
            };
            let mut total = 0.0;
            for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&TaskEpisode> = chunk.iter().map(|&i| &splits.train[i]).collect();
                let grad = self.outer_gradient(&mut state, &batch, phase)?;
                total += grad.objective;
                if self.config.log_steps {
                    steps.push(StepLog {
                        epoch,
                        step,
                        gamma: self.config.effective_gamma(),
                        episodes: grad.episodes.clone(),
                        total_loss: grad.objective,
                    });
                }
                self.apply(&mut state, &mut opt, grad).map_err(|e| {
                    error!("epoch {epoch} step {step} aborted: {e}");
                    e
                })?;
            }
            let train_loss = total / splits.train.len() as f64;
            let validation_loss = self.validation_loss(&state, &splits.validation)?.unwrap_or(train_loss);
            debug!("{} epoch {epoch}: train {train_loss:.6} validation {validation_loss:.6}", self.config.algorithm);
            history.push(EpochRecord {
                epoch,
                train_loss,
                validation_loss,
            });
            if best.as_ref().is_none_or(|b| validation_loss < b.0) {
                best = Some((validation_loss, epoch, state.clone()));
            }
        }
        let (best_epoch, state) = match best {
            Some((_, e, s)) => (Some(e), s),
            None => (None, state),
        };
        Ok(TrainedModel {
            algorithm: self.config.algorithm,
            state,
            history,
            steps,
            best_epoch,
        })
    }

    /// Pooled supervised training on every training interaction.
    pub fn transfer_train(&self, splits: &DatasetSplits) -> Result<TrainedModel> {
        if splits.train.is_empty() {
            return Err(Error::DegenerateInput("empty training split".into()));
        }
        let mut state = self.init_state()?;
        let mut opt = self.optimizers(&state);
        let mut rng = stream_rng(self.config.seed, STREAM_BATCHES);
        let pooled: Vec<Batch> = splits
            .train
            .iter()
            .map(|ep| {
                let mut b = ep.support_batch();
                let q = ep.query_batch();
                b.items.extend(q.items);
                b.targets.extend(q.targets);
                b
            })
            .collect();
        let mut history = Vec::new();
        let mut best: Option<(f64, usize, MetaState)> = None;
        let mut order: Vec<usize> = (0..pooled.len()).collect();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let mut g = state.theta.zeros_like();
                for &i in chunk {
                    let gi = self.model.grad(&state.theta, &pooled[i])?;
                    total += gi.loss;
                    g.axpy(1.0, &gi.params);
                }
                let grad = OuterGradient {
                    theta: g,
                    psi: None,
                    alpha_vec: None,
                    nodes: vec![],
                    psi_literal: None,
                    episodes: vec![],
                    objective: 0.0,
                };
                self.apply(&mut state, &mut opt, grad)?;
            }
            let train_loss = total / pooled.len() as f64;
            let validation_loss = self.validation_loss(&state, &splits.validation)?.unwrap_or(train_loss);
            history.push(EpochRecord {
                epoch,
                train_loss,
                validation_loss,
            });
            if best.as_ref().is_none_or(|b| validation_loss < b.0) {
                best = Some((validation_loss, epoch, state.clone()));
            }
        }
        let (best_epoch, state) = match best {
            Some((_, e, s)) => (Some(e), s),
            None => (None, state),
        };
        Ok(TrainedModel {
            algorithm: Algorithm::Transfer,
            state,
            history,
            steps: vec![],
            best_epoch,
        })
    }
}

/// One fine-tuning step on a user's support set.
pub fn finetune(model: &Model, theta: &ParamSet, support: &Batch, lr: f64) -> Result<ParamSet> {
    Ok(inner_adapt(model, theta, Step::Scalar(lr), support)?.0)
}
