//! Metrics, significance testing and report assembly.

pub mod metrics;
pub mod report;
pub mod stats;

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::loss::{LabelEncoding, NelWeights};
use crate::meta::UserResult;
use crate::model::{OutputKind, Predictions};
use crate::tasks::Group;

pub use metrics::{auc, mean_over_users, mse, ndcg_at_k, weighted_nel};
pub use report::{build_report, Aggregate, Metric, MetricsReport, Summary, UserMetric};
pub use stats::{incomplete_beta, ln_gamma, t_test_two_sample, TTest};

/// Which metrics to compute per user.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSet {
    pub ndcg_ks: Vec<usize>,
    pub nel_weights: NelWeights,
    pub nel_encoding: LabelEncoding,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            ndcg_ks: vec![3, 5],
            nel_weights: NelWeights::default(),
            nel_encoding: LabelEncoding::default(),
        }
    }
}

/// Per-user metric rows: MSE and nDCG@K for ratings, AUC and NEL for
/// clicks. Users whose query holds a single class get no AUC row, and users
/// with negative targets get no nDCG row.
pub fn score_users(
    results: &[UserResult],
    trial: usize,
    labels: &BTreeMap<u32, Group>,
    output: OutputKind,
    set: &MetricSet,
) -> Result<Vec<UserMetric>> {
    let mut rows = Vec::new();
    for r in results {
        let group = *labels
            .get(&r.user_id)
            .ok_or_else(|| Error::RejectedInput(format!("user {} has no group label", r.user_id)))?;
        let mut push = |metric, value| {
            rows.push(UserMetric {
                trial,
                user_id: r.user_id,
                group,
                metric,
                value,
            })
        };
        let scores = r.predictions.scores();
        match (output, &r.predictions) {
            (OutputKind::RatingRegression, Predictions::Rating(p)) => {
                push(Metric::Mse, mse(&r.targets, p)?);
                for &k in &set.ndcg_ks {
                    match ndcg_at_k(&r.targets, &scores, &r.item_ids, k) {
                        Ok(v) => push(Metric::Ndcg(k), v),
                        Err(Error::UndefinedMetric(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            (OutputKind::CtrSoftmax, Predictions::Click(_)) => {
                match auc(&r.targets, &scores) {
                    Ok(v) => push(Metric::Auc, v),
                    Err(Error::UndefinedMetric(_)) => {}
                    Err(e) => return Err(e),
                }
                push(
                    Metric::Nel,
                    weighted_nel(&r.targets, &scores, set.nel_weights, set.nel_encoding)?,
                );
            }
            _ => return Err(Error::ShapeMismatch("predictions do not match the output head".into())),
        }
    }
    if results.is_empty() {
        warn!("trial {trial}: no users to score");
    }
    Ok(rows)
}
