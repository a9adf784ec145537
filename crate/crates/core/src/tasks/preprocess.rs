//! Cold-start selection, filtering, user splits and support/query splits.

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::movielens::{RawDataset, RawRating, RawUser};
use super::{
    classify_major_minor, DatasetSplits, FeatureSchema, FeedbackKind, Interaction, TaskEpisode,
    UserProfile,
};
use crate::error::{Error, Result};

const MIN_AGE: u32 = 10;
const MAX_AGE: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub seed: u64,
    /// Share of users, by ascending log count, kept as cold-start users.
    pub cold_start_fraction: f64,
    pub min_items: usize,
    /// Train, validation, test proportions.
    pub split: [u32; 3],
    pub support_ratio: f64,
    /// Seeded subsample of the filtered users, if set.
    pub max_users: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cold_start_fraction: 0.8,
            min_items: 2,
            split: [7, 1, 2],
            support_ratio: 0.8,
            max_users: None,
        }
    }
}

/// Years covered by a MovieLens age code. Codes outside the published set
/// are read as a literal age.
fn age_range(code: u32) -> (u32, u32) {
    match code {
        1 => (1, 17),
        18 => (18, 24),
        25 => (25, 34),
        35 => (35, 44),
        45 => (45, 49),
        50 => (50, 55),
        56 => (56, u32::MAX),
        other => (other, other),
    }
}

fn age_admissible(code: u32) -> bool {
    let (lo, hi) = age_range(code);
    hi >= MIN_AGE && lo <= MAX_AGE
}

/// First five characters, if they are all ASCII digits.
fn zip_prefix(zip: &str) -> Option<&str> {
    let p = zip.get(..5)?;
    p.bytes().all(|b| b.is_ascii_digit()).then_some(p)
}

/// User feature values as strings, or `None` for a blank or garbled profile.
fn user_values(u: &RawUser) -> Option<[String; 4]> {
    let gender = u.gender.trim();
    if gender.is_empty() {
        return None;
    }
    let age = u.age.filter(|&a| age_admissible(a))?;
    let occupation = u.occupation?;
    let zip = zip_prefix(u.zip.trim())?;
    Some([gender.to_string(), age.to_string(), occupation.to_string(), zip.to_string()])
}

/// Sizes of the (train, validation, test) parts for `n` users.
pub fn split_counts(n: usize, ratio: [u32; 3]) -> (usize, usize, usize) {
    let total: u32 = ratio.iter().sum();
    let part = |r: u32| ((n as f64) * r as f64 / total as f64).round() as usize;
    let val = part(ratio[1]).min(n);
    let test = part(ratio[2]).min(n - val);
    (n - val - test, val, test)
}

/// Support size for `n` interactions: the ceiling of `ratio * n`, leaving at
/// least one query item.
fn support_size(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).ceil() as usize).clamp(1, n - 1)
}

struct Vocab(BTreeMap<String, usize>);

impl Vocab {
    fn build<'a>(values: impl Iterator<Item = &'a String>) -> Self {
        let set: BTreeSet<&String> = values.collect();
        Vocab(set.into_iter().enumerate().map(|(i, v)| (v.clone(), i)).collect())
    }

    fn id(&self, v: &str) -> usize {
        self.0[v]
    }

    fn len(&self) -> usize {
        self.0.len()
    }
}

pub fn preprocess(raw: &RawDataset, config: &PreprocessConfig) -> Result<DatasetSplits> {
    if raw.users.is_empty() || raw.ratings.is_empty() {
        return Err(Error::DegenerateInput("raw dataset is empty".into()));
    }
    if !(config.support_ratio > 0.0 && config.support_ratio < 1.0) {
        return Err(Error::InvalidConfig("support_ratio must lie in (0, 1)".into()));
    }
    if config.split.iter().sum::<u32>() == 0 {
        return Err(Error::InvalidConfig("split proportions sum to zero".into()));
    }

    let mut by_user: BTreeMap<u32, Vec<&RawRating>> = BTreeMap::new();
    for r in &raw.ratings {
        by_user.entry(r.user).or_default().push(r);
    }

    // 1. cold-start users: fewest logs, ties by id
    let mut ranked: Vec<(usize, &RawUser)> = raw
        .users
        .iter()
        .map(|u| (by_user.get(&u.id).map_or(0, Vec::len), u))
        .collect();
    ranked.sort_by_key(|(n, u)| (*n, u.id));
    let keep = (config.cold_start_fraction * ranked.len() as f64).floor() as usize;
    ranked.truncate(keep);

    // 2. feature and item-count filters
    let item_values = |movie: u32| -> Option<Vec<String>> {
        let m = raw.movies.get(&movie)?;
        let mut v = vec![m.genres.first()?.clone()];
        if let Some(e) = &raw.enrichment {
            match e.values.get(&movie) {
                Some(cols) => v.extend(cols.iter().map(|c| {
                    if c.is_empty() {
                        "<none>".to_string()
                    } else {
                        c.clone()
                    }
                })),
                None => v.extend(e.names.iter().map(|_| "<none>".to_string())),
            }
        }
        Some(v)
    };
    struct Kept {
        id: u32,
        values: [String; 4],
        items: Vec<(RawRating, Vec<String>)>,
    }
    let mut kept: Vec<Kept> = Vec::new();
    for (_, u) in &ranked {
        let Some(values) = user_values(u) else { continue };
        let mut items: Vec<(RawRating, Vec<String>)> = by_user
            .get(&u.id)
            .into_iter()
            .flatten()
            .filter_map(|r| item_values(r.movie).map(|v| (**r, v)))
            .collect();
        if items.len() < config.min_items.max(2) {
            continue;
        }
        items.sort_by_key(|(r, _)| (r.timestamp, r.movie));
        kept.push(Kept {
            id: u.id,
            values,
            items,
        });
    }
    info!("{} of {} cold-start users survive filtering", kept.len(), ranked.len());
    if kept.is_empty() {
        return Err(Error::DegenerateInput("every user was filtered out".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    kept.shuffle(&mut rng);
    if let Some(max) = config.max_users {
        kept.truncate(max);
    }

    let user_vocab: Vec<Vocab> = (0..4)
        .map(|k| Vocab::build(kept.iter().map(|u| &u.values[k])))
        .collect();
    let n_item_features = 1 + raw.enrichment.as_ref().map_or(0, |e| e.names.len());
    let item_vocab: Vec<Vocab> = (0..n_item_features)
        .map(|k| Vocab::build(kept.iter().flat_map(|u| u.items.iter().map(move |(_, v)| &v[k]))))
        .collect();

    let mut episodes: Vec<TaskEpisode> = kept
        .into_iter()
        .map(|u| {
            let features = (0..4).map(|k| user_vocab[k].id(&u.values[k])).collect();
            let mut items: Vec<Interaction> = u
                .items
                .iter()
                .map(|(r, v)| Interaction {
                    item_id: r.movie,
                    features: v.iter().enumerate().map(|(k, s)| item_vocab[k].id(s)).collect(),
                    feedback: r.rating as f64,
                    timestamp: Some(r.timestamp),
                })
                .collect();
            items.shuffle(&mut rng);
            let query = items.split_off(support_size(items.len(), config.support_ratio));
            TaskEpisode {
                user: UserProfile {
                    user_id: u.id,
                    features,
                },
                support: items,
                query,
            }
        })
        .collect();

    let (n_train, n_val, _) = split_counts(episodes.len(), config.split);
    let test = episodes.split_off(n_train + n_val);
    let validation = episodes.split_off(n_train);
    let mut schema = FeatureSchema {
        user_names: ["gender", "age", "occupation", "zip"].map(String::from).to_vec(),
        user_vocab: user_vocab.iter().map(Vocab::len).collect(),
        item_names: vec!["genre".into()],
        item_vocab: item_vocab.iter().map(Vocab::len).collect(),
    };
    if let Some(e) = &raw.enrichment {
        schema.item_names.extend(e.names.iter().cloned());
    }
    let mut splits = DatasetSplits {
        train: episodes,
        validation,
        test,
        schema,
        feedback: FeedbackKind::Rating,
        labels: BTreeMap::new(),
    };
    splits.labels = classify_major_minor(&splits);
    Ok(splits)
}
