//! Per-user metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::loss::{self, LabelEncoding, NelWeights};

/// Mean squared error over one user's query items.
pub fn mse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    loss::mse(predictions, targets)
}

/// Unweighted mean over users of per-user values.
pub fn mean_over_users(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("no users to average".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(r, g)| (2f64.powf(g) - 1.0) / ((r + 2) as f64).log2())
        .sum()
}

/// nDCG@K with gains `2^rating - 1`. Items are ranked by descending score,
/// ties broken by ascending item id. `k` is truncated to the item count and
/// a zero ideal DCG gives 1.
pub fn ndcg_at_k(ratings: &[f64], scores: &[f64], item_ids: &[u32], k: usize) -> Result<f64> {
    if ratings.len() != scores.len() || ratings.len() != item_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ratings, {} scores, {} item ids",
            ratings.len(),
            scores.len(),
            item_ids.len()
        )));
    }
    if ratings.is_empty() {
        return Err(Error::DegenerateInput("no items to rank".into()));
    }
    if k == 0 {
        return Err(Error::RejectedInput("nDCG cut-off must be positive".into()));
    }
    if ratings.iter().any(|r| r.is_nan() || *r < 0.0) {
        return Err(Error::UndefinedMetric("nDCG needs non-negative ratings".into()));
    }
    let k = k.min(ratings.len());
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(item_ids[a].cmp(&item_ids[b]))
    });
    let mut ideal = ratings.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(order.into_iter().take(k).map(|i| ratings[i])) / idcg)
}

/// Area under the ROC curve as the Mann-Whitney statistic; tied
/// positive-negative pairs count one half. Labels above 0.5 are positive.
pub fn auc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!("{} labels, {} scores", labels.len(), scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let n_pos = labels.iter().filter(|&&l| l > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    // Midranks of tied runs give the half-credit convention.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&t| labels[t] > 0.5).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Weighted negative entropy of click probabilities `P(clicked)` for one
/// user, natural log.
pub fn weighted_nel(clicks: &[f64], click_probs: &[f64], weights: NelWeights, encoding: LabelEncoding) -> Result<f64> {
    let probs: Vec<[f64; 2]> = click_probs.iter().map(|&p| [1.0 - p, p]).collect();
    loss::weighted_nel(&probs, clicks, weights, encoding)
}
