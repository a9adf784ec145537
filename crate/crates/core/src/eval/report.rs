//! Aggregation of per-user metrics over trials and major/minor groups.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use log::warn;

use super::stats::{t_test_two_sample, TTest};
use crate::error::{Error, Result};
use crate::tasks::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Mse,
    Ndcg(usize),
    Auc,
    Nel,
}

impl Metric {
    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Mse | Metric::Nel)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mse => f.write_str("mse"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Auc => f.write_str("auc"),
            Metric::Nel => f.write_str("nel"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetric {
    pub trial: usize,
    pub user_id: u32,
    pub group: Group,
    pub metric: Metric,
    pub value: f64,
}

/// Mean and sample standard deviation of per-trial values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    /// The standard deviation is 0 for a single value.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub metric: Metric,
    /// Mean over users within each trial.
    pub per_trial: Vec<f64>,
    pub overall: Summary,
    pub major: Option<Summary>,
    pub minor: Option<Summary>,
    pub n_major: usize,
    pub n_minor: usize,
    /// Minor against major per-user values, pooled over trials.
    pub t_test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_trials: usize,
    pub rows: Vec<UserMetric>,
    pub aggregates: Vec<Aggregate>,
}

fn group_means(rows: &[&UserMetric], n_trials: usize, group: Option<Group>) -> Vec<f64> {
    (0..n_trials)
        .filter_map(|t| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.trial == t && group.is_none_or(|g| r.group == g))
                .map(|r| r.value)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Per-trial user means, their mean and sd, group sub-means and the
/// minor-against-major t-test for every metric present in `rows`.
pub fn build_report(rows: Vec<UserMetric>, n_trials: usize) -> Result<MetricsReport> {
    if n_trials == 0 {
        return Err(Error::RejectedInput("a report needs at least one trial".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.trial >= n_trials) {
        return Err(Error::RejectedInput(format!("row for trial {} of {n_trials}", r.trial)));
    }
    let mut by_metric: BTreeMap<Metric, Vec<&UserMetric>> = BTreeMap::new();
    for r in &rows {
        by_metric.entry(r.metric).or_default().push(r);
    }
    let mut aggregates = Vec::new();
    for (metric, rs) in by_metric {
        let per_trial = group_means(&rs, n_trials, None);
        if per_trial.len() < n_trials {
            warn!("{metric}: {} of {n_trials} trials have values", per_trial.len());
        }
        let overall = Summary::of(&per_trial).expect("metric has rows");
        let major = Summary::of(&group_means(&rs, n_trials, Some(Group::Major)));
        let minor = Summary::of(&group_means(&rs, n_trials, Some(Group::Minor)));
        let sample = |g: Group| -> Vec<f64> { rs.iter().filter(|r| r.group == g).map(|r| r.value).collect() };
        let (maj, min) = (sample(Group::Major), sample(Group::Minor));
        if maj.is_empty() || min.is_empty() {
            warn!("{metric}: a user group is empty; group fields omitted");
        }
        let t_test = match t_test_two_sample(&min, &maj) {
            Ok(t) => Some(t),
            Err(e) => {
                if !maj.is_empty() && !min.is_empty() {
                    warn!("{metric}: no t-test ({e})");
                }
                None
            }
        };
        aggregates.push(Aggregate {
            metric,
            per_trial,
            overall,
            major,
            minor,
            n_major: maj.len(),
            n_minor: min.len(),
            t_test,
        });
    }
    Ok(MetricsReport {
        n_trials,
        rows,
        aggregates,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn opt_fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    pub fn aggregate(&self, metric: Metric) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.metric == metric)
    }

    /// Tab-separated rows `trial user group metric value`, then a blank
    /// line and the aggregate block with its own header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("trial\tuser\tgroup\tmetric\tvalue\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{}\t{}\t{}", r.trial, r.user_id, r.group.as_str(), r.metric, r.value).unwrap();
        }
        s.push_str("\nmetric\tmean\tsd\tmajor_mean\tmajor_sd\tminor_mean\tminor_sd\tn_major\tn_minor\tt\tp_value\n");
        for a in &self.aggregates {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                a.metric,
                a.overall.mean,
                a.overall.sd,
                opt(a.major.map(|m| m.mean)),
                opt(a.major.map(|m| m.sd)),
                opt(a.minor.map(|m| m.mean)),
                opt(a.minor.map(|m| m.sd)),
                a.n_major,
                a.n_minor,
                opt(a.t_test.map(|t| t.t)),
                opt(a.t_test.map(|t| t.p_value)),
            )
            .unwrap();
        }
        s
    }

    /// Human-readable summary, one line per metric.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>17} {:>10} {:>10} {:>10}   ({} trial{})\n",
            "metric",
            "mean +- sd",
            "major",
            "minor",
            "p-value",
            self.n_trials,
            if self.n_trials == 1 { "" } else { "s" }
        );
        for a in &self.aggregates {
            writeln!(
                s,
                "{:<8} {:>8.4} +- {:<6.4} {:>10} {:>10} {:>10}",
                a.metric.to_string(),
                a.overall.mean,
                a.overall.sd,
                opt_fixed(a.major.map(|m| m.mean)),
                opt_fixed(a.minor.map(|m| m.mean)),
                opt_fixed(a.t_test.map(|t| t.p_value)),
            )
            .unwrap();
        }
        s
    }
}
