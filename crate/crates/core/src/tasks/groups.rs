//! Major/minor user labelling by feature-value popularity.

use std::collections::{BTreeMap, BTreeSet};

use super::{DatasetSplits, Group, TaskEpisode};

const TOP_FRACTION: f64 = 0.3;
const TOP_FRACTION_BINARY: f64 = 0.5;
/// A user is major with strictly more than this many popular features.
const MAJOR_THRESHOLD: usize = 2;

/// Per user feature, the most populous values among `population`: the top
/// 30% of observed values (50% for binary features) by user count, ties
/// broken by ascending value id.
pub fn top_value_sets(population: &[TaskEpisode], n_features: usize) -> Vec<BTreeSet<usize>> {
    (0..n_features)
        .map(|k| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for ep in population {
                *counts.entry(ep.user.features[k]).or_default() += 1;
            }
            let fraction = if counts.len() == 2 {
                TOP_FRACTION_BINARY
            } else {
                TOP_FRACTION
            };
            let take = (fraction * counts.len() as f64).ceil() as usize;
            let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().take(take).map(|(v, _)| v).collect()
        })
        .collect()
}

pub(crate) fn label(features: &[usize], top: &[BTreeSet<usize>]) -> Group {
    let popular = features
        .iter()
        .zip(top)
        .filter(|(v, set)| set.contains(v))
        .count();
    if popular > MAJOR_THRESHOLD {
        Group::Major
    } else {
        Group::Minor
    }
}

/// Labels every user in the splits, with popularity measured on the
/// training population.
pub fn classify_major_minor(splits: &DatasetSplits) -> BTreeMap<u32, Group> {
    let top = top_value_sets(&splits.train, splits.schema.user_vocab.len());
    splits
        .all_episodes()
        .map(|ep| (ep.user.user_id, label(&ep.user.features, &top)))
        .collect()
}
