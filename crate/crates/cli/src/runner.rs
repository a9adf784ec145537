//! Orchestration of a run: data, per-trial training of every configured
//! algorithm, scoring and report files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use paml_core::eval::{build_report, score_users, MetricSet, MetricsReport, UserMetric};
use paml_core::meta::{Algorithm, Learner, TrainedModel, UserResult};
use paml_core::tasks::{load_item_enrichment, load_movielens, preprocess, synth_splits, DatasetSplits, FeedbackKind};
use thiserror::Error;

use crate::config::{DataConfig, Feedback, LoadedConfig};
use crate::output;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Preprocess,
    Train,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} failed{}: {source}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
pub struct RunError {
    pub stage: Stage,
    pub context: Option<String>,
    #[source]
    pub source: paml_core::Error,
}

fn at(stage: Stage, context: impl Into<Option<String>>) -> impl FnOnce(paml_core::Error) -> RunError {
    let context = context.into();
    move |source| RunError {
        stage,
        context,
        source,
    }
}

/// Builds the splits of the trial seeded with `seed`.
pub fn load_data(data: &DataConfig, seed: u64) -> Result<DatasetSplits, RunError> {
    match data {
        DataConfig::Synthetic(s) => synth_splits(&s.synth_config(seed), s.split).map_err(at(Stage::Ingest, None)),
        DataConfig::Movielens(m) => {
            let dir = &m.dir;
            let mut raw = load_movielens(dir.join("ratings.dat"), dir.join("users.dat"), dir.join("movies.dat"))
                .map_err(at(Stage::Ingest, dir.display().to_string()))?;
            if let Some(path) = &m.enrichment {
                raw.enrichment = Some(load_item_enrichment(path).map_err(at(Stage::Ingest, path.display().to_string()))?);
            }
            let mut splits = preprocess(&raw, &m.preprocess_config(seed)).map_err(at(Stage::Preprocess, None))?;
            if m.feedback == Feedback::Click {
                to_clicks(&mut splits, m.click_threshold);
            }
            Ok(splits)
        }
    }
}

/// Replaces ratings by clicks: 1 at or above `threshold`, else 0.
pub fn to_clicks(splits: &mut DatasetSplits, threshold: f64) {
    for ep in splits.train.iter_mut().chain(&mut splits.validation).chain(&mut splits.test) {
        for i in ep.support.iter_mut().chain(&mut ep.query) {
            i.feedback = if i.feedback >= threshold { 1.0 } else { 0.0 };
        }
    }
    splits.feedback = FeedbackKind::Click;
}

/// One algorithm in one trial.
#[derive(Debug, Clone)]
pub struct AlgorithmTrial {
    pub algorithm: Algorithm,
    pub trained: TrainedModel,
    pub results: Vec<UserResult>,
    pub rows: Vec<UserMetric>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub splits: DatasetSplits,
    pub algorithms: Vec<AlgorithmTrial>,
}

/// Trains and scores every configured algorithm on the data of one trial.
pub fn run_trial(loaded: &LoadedConfig, trial: usize, seed: u64) -> Result<TrialOutcome, RunError> {
    let cfg = &loaded.config;
    let splits = load_data(&cfg.data, seed)?;
    info!(
        "trial {trial} (seed {seed}): {} train, {} validation, {} test users",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    let algorithms = cfg.algorithms().expect("validated config");
    let mut out = Vec::with_capacity(algorithms.len());
    for algorithm in algorithms {
        let ctx = format!("{algorithm}, trial {trial}");
        let start = Instant::now();
        let learner = Learner::new(cfg.trainer_config(algorithm, seed), &splits.schema).map_err(at(Stage::Train, ctx.clone()))?;
        let trained = learner.train(&splits).map_err(at(Stage::Train, ctx.clone()))?;
        let results = learner.evaluate(&trained.state, &splits.test).map_err(at(Stage::Evaluate, ctx.clone()))?;
        let rows = score_users(&results, trial, &splits.labels, cfg.output_kind(), &MetricSet::default())
            .map_err(at(Stage::Evaluate, ctx))?;
        let wall_seconds = start.elapsed().as_secs_f64();
        info!("trial {trial}: {algorithm} done in {wall_seconds:.1}s");
        out.push(AlgorithmTrial {
            algorithm,
            trained,
            results,
            rows,
            wall_seconds,
        });
    }
    Ok(TrialOutcome {
        trial,
        seed,
        splits,
        algorithms: out,
    })
}

#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub reports: BTreeMap<Algorithm, MetricsReport>,
    pub trials: Vec<TrialOutcome>,
    pub wall_seconds: f64,
}

/// Runs every trial, then writes reports and artifacts under the output
/// directory. A `STALE` marker is present while the run is incomplete and
/// is left, with the failing stage, if it fails.
pub fn run(loaded: &LoadedConfig) -> Result<RunSummary, RunError> {
    let cfg = &loaded.config;
    let dir = cfg.run.output_dir.clone();
    let io = |path: &Path| {
        let p = path.to_path_buf();
        move |e: std::io::Error| RunError {
            stage: Stage::Report,
            context: None,
            source: paml_core::Error::Io { path: p, source: e },
        }
    };
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let stale = dir.join(output::STALE);
    std::fs::write(&stale, "run in progress\n").map_err(io(&stale))?;
    let result = run_inner(loaded, &dir);
    match &result {
        Ok(_) => std::fs::remove_file(&stale).map_err(io(&stale))?,
        Err(e) => {
            if let Err(w) = std::fs::write(&stale, format!("{e}\n")) {
                warn!("cannot write {}: {w}", stale.display());
            }
        }
    }
    result
}

fn run_inner(loaded: &LoadedConfig, dir: &Path) -> Result<RunSummary, RunError> {
    let cfg = &loaded.config;
    let start = Instant::now();
    let seeds = cfg.seeds();
    let trials: Vec<TrialOutcome> = if cfg.run.parallel_trials {
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .iter()
                .enumerate()
                .map(|(t, &seed)| s.spawn(move || run_trial(loaded, t, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trial thread panicked"))
                .collect::<Result<_, _>>()
        })?
    } else {
        seeds
            .iter()
            .enumerate()
            .map(|(t, &seed)| run_trial(loaded, t, seed))
            .collect::<Result<_, _>>()?
    };
    let mut reports = BTreeMap::new();
    for algorithm in cfg.algorithms().expect("validated config") {
        let rows: Vec<UserMetric> = trials
            .iter()
            .flat_map(|t| t.algorithms.iter().filter(|a| a.algorithm == algorithm))
            .flat_map(|a| a.rows.iter().copied())
            .collect();
        let report = build_report(rows, trials.len()).map_err(at(Stage::Report, algorithm.to_string()))?;
        reports.insert(algorithm, report);
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    output::write_run(dir, loaded, &trials, &reports, wall_seconds).map_err(at(Stage::Report, None))?;
    Ok(RunSummary {
        output_dir: dir.to_path_buf(),
        reports,
        trials,
        wall_seconds,
    })
}
