//! Files written by a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use paml_core::eval::MetricsReport;
use paml_core::meta::{checkpoint, Algorithm, Learner, MetaState, StepLog, TrainedModel};
use paml_core::tasks::{DatasetSplits, TaskEpisode};
use paml_core::{Error, Result};

use crate::config::LoadedConfig;
use crate::runner::TrialOutcome;

/// Marker present in an output directory whose contents are incomplete.
pub const STALE: &str = "STALE";

pub fn version() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("PAML_GIT_REV"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn history_tsv(trained: &TrainedModel) -> String {
    let mut s = String::from("epoch\ttrain_loss\tvalidation_loss\tselected\n");
    for r in &trained.history {
        let selected = trained.best_epoch == Some(r.epoch);
        writeln!(s, "{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.validation_loss, u8::from(selected)).unwrap();
    }
    s
}

pub fn steps_tsv(steps: &[StepLog]) -> String {
    let mut s = String::from("epoch\tstep\tuser\tsupport_loss\tquery_loss\treg\talpha\tgrad_norm\tembedding_norm\tstep_total\n");
    for st in steps {
        for e in &st.episodes {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                st.epoch,
                st.step,
                e.user_id,
                e.support_loss,
                e.query_loss,
                e.reg,
                e.alpha,
                e.grad_norm,
                e.embedding_norm,
                st.total_loss
            )
            .unwrap();
        }
    }
    s
}

/// Rows `user split group alpha e1 ... ed` for every user of `splits`.
pub fn embeddings_tsv(learner: &Learner, state: &MetaState, splits: &DatasetSplits) -> Result<String> {
    let dim = learner.model().spec().user_dim();
    let mut s = String::from("user\tsplit\tgroup\talpha");
    for d in 0..dim {
        write!(s, "\te{d}").unwrap();
    }
    s.push('\n');
    let parts: [(&str, &[TaskEpisode]); 3] =
        [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)];
    for (name, eps) in parts {
        for ep in eps {
            let h = learner.model().user_embedding(&state.theta, &ep.user.features)?;
            let (_, alpha) = learner.adapt(state, ep)?;
            let group = splits.group_of(ep.user.user_id).map_or("NA", |g| g.as_str());
            write!(s, "{}\t{name}\t{group}\t{alpha}", ep.user.user_id).unwrap();
            for v in h {
                write!(s, "\t{v}").unwrap();
            }
            s.push('\n');
        }
    }
    Ok(s)
}

fn summary_tsv(reports: &BTreeMap<Algorithm, MetricsReport>) -> String {
    let mut s = String::from("algorithm\tmetric\tmean\tsd\tmajor_mean\tminor_mean\tp_value\n");
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
    for (alg, r) in reports {
        for a in &r.aggregates {
            writeln!(
                s,
                "{alg}\t{}\t{}\t{}\t{}\t{}\t{}",
                a.metric,
                a.overall.mean,
                a.overall.sd,
                na(a.major.map(|m| m.mean)),
                na(a.minor.map(|m| m.mean)),
                na(a.t_test.map(|t| t.p_value))
            )
            .unwrap();
        }
    }
    s
}

fn manifest(loaded: &LoadedConfig, trials: &[TrialOutcome], wall_seconds: f64) -> String {
    let cfg = &loaded.config;
    let mut s = String::new();
    writeln!(s, "version = \"{}\"", version()).unwrap();
    writeln!(s, "config_hash = \"{}\"", loaded.hash).unwrap();
    writeln!(s, "config = \"config.toml\"").unwrap();
    let seeds: Vec<String> = cfg.seeds().iter().map(u64::to_string).collect();
    writeln!(s, "seeds = [{}]", seeds.join(", ")).unwrap();
    let algs: Vec<String> = trials[0].algorithms.iter().map(|a| format!("\"{}\"", a.algorithm)).collect();
    writeln!(s, "algorithms = [{}]", algs.join(", ")).unwrap();
    writeln!(s, "parallel_trials = {}", cfg.run.parallel_trials).unwrap();
    writeln!(s, "wall_seconds = {wall_seconds:.3}").unwrap();
    for t in trials {
        for a in &t.algorithms {
            writeln!(s, "\n[[trial]]\nindex = {}\nseed = {}\nalgorithm = \"{}\"", t.trial, t.seed, a.algorithm).unwrap();
            writeln!(s, "best_epoch = {}", a.trained.best_epoch.map_or(-1, |e| e as i64)).unwrap();
            writeln!(s, "wall_seconds = {:.3}", a.wall_seconds).unwrap();
        }
    }
    s
}

/// Writes reports, per-trial artifacts and the manifest under `dir`.
pub fn write_run(
    dir: &Path,
    loaded: &LoadedConfig,
    trials: &[TrialOutcome],
    reports: &BTreeMap<Algorithm, MetricsReport>,
    wall_seconds: f64,
) -> Result<()> {
    let cfg = &loaded.config;
    write(&dir.join("config.toml"), &loaded.canonical)?;
    for (alg, report) in reports {
        let adir = dir.join(alg.name());
        write(&adir.join("report.tsv"), &report.to_tsv())?;
        write(&adir.join("report.txt"), &report.to_table())?;
    }
    for t in trials {
        for a in &t.algorithms {
            let tdir = dir.join(a.algorithm.name()).join(format!("trial-{}", t.trial));
            if cfg.emit.history {
                write(&tdir.join("history.tsv"), &history_tsv(&a.trained))?;
            }
            if cfg.emit.lr_dump {
                let mut s = String::from("user\tgroup\talpha\n");
                for r in &a.results {
                    let group = t.splits.group_of(r.user_id).map_or("NA", |g| g.as_str());
                    writeln!(s, "{}\t{group}\t{}", r.user_id, r.alpha).unwrap();
                }
                write(&tdir.join("lr.tsv"), &s)?;
            }
            if cfg.emit.checkpoint {
                write(&tdir.join("checkpoint.txt"), &checkpoint::to_text(a.algorithm, &loaded.hash, &a.trained.state))?;
            }
            if let (true, Some(tree)) = (cfg.emit.tree_dump, &a.trained.state.tree) {
                write(&tdir.join("tree.txt"), &tree.dump())?;
            }
            if cfg.emit.embeddings {
                let learner = Learner::new(cfg.trainer_config(a.algorithm, t.seed), &t.splits.schema)?;
                write(&tdir.join("embeddings.tsv"), &embeddings_tsv(&learner, &a.trained.state, &t.splits)?)?;
            }
            if !a.trained.steps.is_empty() {
                write(&tdir.join("steps.tsv"), &steps_tsv(&a.trained.steps))?;
            }
        }
    }
    let mut table = String::new();
    for (alg, report) in reports {
        writeln!(table, "== {alg} ==\n{}", report.to_table()).unwrap();
    }
    write(&dir.join("summary.tsv"), &summary_tsv(reports))?;
    write(&dir.join("summary.txt"), &table)?;
    write(&dir.join("manifest.toml"), &manifest(loaded, trials, wall_seconds))
}
