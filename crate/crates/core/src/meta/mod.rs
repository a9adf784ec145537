//! Meta-training: configuration, the learning-rate head, optimizers, the
//! trainer and checkpoints.

pub mod checkpoint;
mod config;
mod learner;
mod lr_head;
mod optim;

pub use config::{Algorithm, OptimizerKind, PsiUpdate, TrainerConfig};
pub use learner::{
    finetune, inner_adapt, reg_term, EpisodeLog, EpochRecord, Learner, MetaState, Optimizers, OuterGradient, Phase,
    StepLog, TrainedModel, UserResult,
};
pub use lr_head::{compute_alpha, AlphaGrad, LrHead};
pub use optim::Optimizer;
