//! Two-group scalar regression tasks.
//!
//! Each task belongs to group 1 with probability `p1`, otherwise group 2, and
//! every target of a group-g task is `x_g` plus Gaussian noise. The only user
//! feature is the group id (0 for group 1, 1 for group 2); items carry one
//! constant dummy feature.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    split_counts, DatasetSplits, FeatureSchema, FeedbackKind, Group, Interaction, TaskEpisode,
    UserProfile,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub p1: f64,
    pub p2: f64,
    pub x1: f64,
    pub x2: f64,
    pub n_tasks: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub support_size: usize,
    pub query_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            p1: 0.8,
            p2: 0.2,
            x1: 0.0,
            x2: 1.0,
            n_tasks: 2000,
            noise_sd: 0.1,
            seed: 0,
            support_size: 5,
            query_size: 5,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.p1.is_finite()
            && self.p2.is_finite()
            && (self.p1 + self.p2 - 1.0).abs() < 1e-9
            && self.p1 >= self.p2
            && self.p2 >= 0.0;
        if !ok {
            return Err(Error::RejectedInput(format!(
                "group probabilities ({}, {}) must be non-negative, ordered and sum to 1",
                self.p1, self.p2
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::RejectedInput(format!("noise_sd {} invalid", self.noise_sd)));
        }
        if self.support_size == 0 || self.query_size == 0 {
            return Err(Error::RejectedInput("support and query sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Group of a synthetic task from its single user feature.
pub fn synth_group(ep: &TaskEpisode) -> Group {
    if ep.user.features[0] == 0 {
        Group::Major
    } else {
        Group::Minor
    }
}

pub fn synth_two_group(config: &SynthConfig) -> Result<Vec<TaskEpisode>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_task = config.support_size + config.query_size;
    let episodes = (0..config.n_tasks)
        .map(|t| {
            let group = if rng.random::<f64>() < config.p1 { 0 } else { 1 };
            let x = if group == 0 { config.x1 } else { config.x2 };
            let mut items: Vec<Interaction> = (0..per_task)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    Interaction {
                        item_id: j as u32,
                        features: vec![0],
                        feedback: x + config.noise_sd * z,
                        timestamp: None,
                    }
                })
                .collect();
            let query = items.split_off(config.support_size);
            TaskEpisode {
                user: UserProfile {
                    user_id: t as u32,
                    features: vec![group],
                },
                support: items,
                query,
            }
        })
        .collect();
    Ok(episodes)
}

/// Synthetic tasks split into train/validation/test users, labelled major
/// (group 1) and minor (group 2).
pub fn synth_splits(config: &SynthConfig, split: [u32; 3]) -> Result<DatasetSplits> {
    let mut episodes = synth_two_group(config)?;
    if episodes.is_empty() {
        return Err(Error::DegenerateInput("no synthetic tasks requested".into()));
    }
    // a stream distinct from the one that drew the tasks
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    episodes.shuffle(&mut rng);
    let labels: BTreeMap<u32, Group> = episodes
        .iter()
        .map(|e| (e.user.user_id, synth_group(e)))
        .collect();
    let (n_train, n_val, _) = split_counts(episodes.len(), split);
    let test = episodes.split_off(n_train + n_val);
    let validation = episodes.split_off(n_train);
    Ok(DatasetSplits {
        train: episodes,
        validation,
        test,
        schema: FeatureSchema {
            user_names: vec!["group".into()],
            user_vocab: vec![2],
            item_names: vec!["dummy".into()],
            item_vocab: vec![1],
        },
        feedback: FeedbackKind::Rating,
        labels,
    })
}
