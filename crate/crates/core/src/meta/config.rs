//! Trainer settings and the algorithm selector.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::memory::TreeConfig;
use crate::model::OutputKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Paml,
    AtPaml,
    RegPaml,
    MamlFixed,
    MetaSgd,
    Transfer,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Paml,
        Algorithm::AtPaml,
        Algorithm::RegPaml,
        Algorithm::MamlFixed,
        Algorithm::MetaSgd,
        Algorithm::Transfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Paml => "paml",
            Algorithm::AtPaml => "at-paml",
            Algorithm::RegPaml => "reg-paml",
            Algorithm::MamlFixed => "maml-fixed",
            Algorithm::MetaSgd => "meta-sgd",
            Algorithm::Transfer => "transfer",
        }
    }

    /// Whether the inner rate comes from the learned LR head.
    pub fn uses_lr_head(self) -> bool {
        matches!(self, Algorithm::Paml | Algorithm::AtPaml | Algorithm::RegPaml)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// How the LR-head parameters are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiUpdate {
    /// Exact gradient of the outer objective through the inner step.
    Backprop,
    /// `psi <- psi + beta * sum_i L_support,i(theta) * d alpha_i / d psi`,
    /// applied without the optimizer.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub output: OutputKind,
    pub embedding_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub lr_hidden_dims: Vec<usize>,
    /// Upper bound of the LR head's output.
    pub lr_scale: f64,
    /// Outer learning rate.
    pub outer_lr: f64,
    pub fixed_inner_lr: f64,
    pub meta_sgd_init_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub warmup_inner_lr: f64,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub psi_update: PsiUpdate,
    /// Replaces the LR head by this constant rate and leaves it untrained.
    pub frozen_alpha: Option<f64>,
    pub tree: TreeConfig,
    /// Keep per-episode diagnostics of every outer step.
    pub log_steps: bool,
    pub seed: u64,
}

impl TrainerConfig {
    /// Defaults for `algorithm`.
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            output: OutputKind::RatingRegression,
            embedding_dim: 32,
            hidden_dims: vec![320, 192],
            lr_hidden_dims: vec![64, 32],
            lr_scale: 1e-3,
            outer_lr: if algorithm == Algorithm::Paml { 5e-6 } else { 5e-5 },
            fixed_inner_lr: 1e-5,
            meta_sgd_init_lr: 5e-4,
            epochs: 20,
            batch_size: 32,
            gamma: 1e-3,
            warmup_epochs: 1,
            warmup_inner_lr: 5e-4,
            clip_norm: 10.0,
            optimizer: OptimizerKind::Adam,
            psi_update: PsiUpdate::Backprop,
            frozen_alpha: None,
            tree: TreeConfig::default(),
            log_steps: false,
            seed: 0,
        }
    }

    /// Regularizer weight in effect (zero except for reg-paml).
    pub fn effective_gamma(&self) -> f64 {
        if self.algorithm == Algorithm::RegPaml {
            self.gamma
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fixed_inner_lr", self.fixed_inner_lr),
            ("lr_scale", self.lr_scale),
            ("warmup_inner_lr", self.warmup_inner_lr),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("outer_lr", self.outer_lr), ("gamma", self.gamma), ("meta_sgd_init_lr", self.meta_sgd_init_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(a) = self.frozen_alpha {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidConfig(format!("frozen_alpha must be non-negative, got {a}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be positive".into()));
        }
        Ok(())
    }
}
