//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the verdict lines always reach
//! the terminal. A criterion fails the target unless it appears in
//! `KNOWN_UNATTAINABLE`; those print FAIL with their measured values and
//! leave the exit status alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use paml_cli::config::LoadedConfig;
use paml_cli::runner::{self, RunSummary};
use paml_core::eval::{auc, mse, ndcg_at_k, t_test_two_sample, weighted_nel, Metric, MetricsReport};
use paml_core::lemma::{alpha2_equalizing, bound_check, theta_star_adaptive, theta_star_fixed, InnerSign, TwoGroupSpec};
use paml_core::loss::{LabelEncoding, NelWeights};
use paml_core::memory::{brute_force, Candidate, Forest, KdTree, NodeId, SearchMode, TreeConfig};
use paml_core::meta::{inner_adapt, Algorithm, Learner, MetaState, TrainerConfig};
use paml_core::tasks::{synth_splits, Group, Interaction, SynthConfig, TaskEpisode, UserProfile};
use paml_core::{ModelSpec, OutputKind, ParamSet, Step};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Criteria that cannot pass as stated; see the project notes.
const KNOWN_UNATTAINABLE: &[&str] = &[
    // the equalizing rate raises the optimal loss for strongly imbalanced specs
    "1",
    // the stated p-value bound is below the reference implementation's value
    "5",
    // needs the MovieLens-1M files, which are not bundled
    "6",
];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

// ---------------------------------------------------------------- 1

/// Vertex of the parabola through three samples of a quadratic.
fn parabola_vertex(f: impl Fn(f64) -> f64) -> f64 {
    let (a, b, c) = (f(-1.0), f(0.0), f(1.0));
    (a - c) / (2.0 * (a - 2.0 * b + c))
}

fn lemma_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1000;
    let (mut worst_closed, mut lemma1, mut lemma2, mut worst_gap) = (0.0f64, 0, 0, f64::NEG_INFINITY);
    for _ in 0..n {
        let p1 = rng.random_range(0.5..=0.99);
        let x1 = rng.random_range(-3.0..3.0);
        let x2 = x1 + rng.random_range(0.1..=5.0);
        let a1 = rng.random_range(0.0..=0.2);
        let a2 = rng.random_range(0.0..=0.2);

        let fixed = TwoGroupSpec::fixed(p1, x1, x2, a1).unwrap();
        let adaptive = TwoGroupSpec::adaptive(p1, x1, x2, a1, a2).unwrap();
        for s in [&fixed, &adaptive] {
            let oracle = parabola_vertex(|t| s.loss(t));
            worst_closed = worst_closed.max((theta_star_adaptive(s, InnerSign::Descent) - oracle).abs());
        }
        worst_closed = worst_closed.max((theta_star_fixed(&fixed) - parabola_vertex(|t| fixed.loss(t))).abs());

        let t = parabola_vertex(|t| fixed.loss(t));
        let (l1, l2) = fixed.group_losses(t);
        if l1 <= l2 {
            lemma1 += 1;
        }

        let eq = TwoGroupSpec::adaptive(p1, x1, x2, a1, alpha2_equalizing(a1, p1, 1.0 - p1).unwrap()).unwrap();
        let l_star = fixed.loss(t);
        let l_star_prime = eq.loss(parabola_vertex(|t| eq.loss(t)));
        worst_gap = worst_gap.max(l_star_prime - l_star);
        if l_star_prime <= l_star + 1e-10 {
            lemma2 += 1;
        }
    }
    assert!(worst_closed < 1e-8, "closed form off by {worst_closed:e}");
    assert_eq!(lemma1, n, "per-group ordering");
    verdict(
        lemma2 == n,
        format!(
            "closed form max |err| {worst_closed:.1e}; group ordering {lemma1}/{n}; \
             equalizing rate L*' <= L* in {lemma2}/{n} (worst excess {worst_gap:.3e})"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn tiny_learner(algorithm: Algorithm) -> Learner {
    let config = TrainerConfig {
        embedding_dim: 2,
        hidden_dims: vec![3],
        lr_hidden_dims: vec![3],
        lr_scale: 0.5,
        gamma: 0.3,
        fixed_inner_lr: 0.05,
        ..TrainerConfig::new(algorithm)
    };
    let spec = ModelSpec {
        user_vocab: vec![3],
        item_vocab: vec![3],
        embedding_dim: 2,
        hidden_dims: vec![3],
        output: OutputKind::RatingRegression,
    };
    Learner::from_spec(config, spec).unwrap()
}

fn random_episode(rng: &mut ChaCha8Rng, user_id: u32) -> TaskEpisode {
    let item = |rng: &mut ChaCha8Rng| Interaction {
        item_id: rng.random_range(0..100),
        features: vec![rng.random_range(0..3)],
        feedback: rng.random_range(1..=5) as f64,
        timestamp: None,
    };
    TaskEpisode {
        user: UserProfile {
            user_id,
            features: vec![rng.random_range(0..3)],
        },
        support: (0..3).map(|_| item(rng)).collect(),
        query: (0..2).map(|_| item(rng)).collect(),
    }
}

fn randomize(rng: &mut ChaCha8Rng, set: &mut ParamSet) {
    set.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
}

/// Distance of the nearest ReLU pre-activation from its kink.
fn kink_margin(learner: &Learner, state: &MetaState, eps: &[TaskEpisode]) -> f64 {
    let model = learner.model();
    let mut m = f64::INFINITY;
    for ep in eps {
        let (adapted, _) = learner.adapt(state, ep).unwrap();
        m = m.min(model.kink_margin(&state.theta, &ep.support_batch()).unwrap());
        m = m.min(model.kink_margin(&adapted, &ep.query_batch()).unwrap());
        let h = model.user_embedding(&state.theta, &ep.user.features).unwrap();
        if let (Some(head), Some(psi)) = (learner.head(), &state.psi) {
            m = m.min(head.kink_margin(psi, &h).unwrap());
        }
    }
    m
}

fn central_difference(learner: &Learner, state: &MetaState, eps: &[TaskEpisode], nudge: impl Fn(&mut MetaState, f64)) -> f64 {
    let refs: Vec<&TaskEpisode> = eps.iter().collect();
    let h = 1e-6;
    let mut plus = state.clone();
    nudge(&mut plus, h);
    let mut minus = state.clone();
    nudge(&mut minus, -h);
    (learner.outer_objective(&plus, &refs).unwrap() - learner.outer_objective(&minus, &refs).unwrap()) / (2.0 * h)
}

/// Relative error with an absolute floor at the difference quotient's
/// roundoff level.
fn fd_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-4)
}

fn meta_gradient() -> Verdict {
    let mut lines = Vec::new();
    let mut all = true;
    for algorithm in [Algorithm::Paml, Algorithm::RegPaml] {
        let learner = tiny_learner(algorithm);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = learner.init_state().unwrap();
        let n_params = init.theta.total_dim() + init.psi.as_ref().map_or(0, |p| p.total_dim());
        assert!(n_params <= 50, "{n_params} parameters");
        let (mut worst, mut draws) = (0.0f64, 0);
        while draws < 50 {
            let mut state = learner.init_state().unwrap();
            randomize(&mut rng, &mut state.theta);
            randomize(&mut rng, state.psi.as_mut().unwrap());
            let eps: Vec<TaskEpisode> = (0..2).map(|i| random_episode(&mut rng, i)).collect();
            if kink_margin(&learner, &state, &eps) < 1e-3 {
                continue;
            }
            draws += 1;
            let refs: Vec<&TaskEpisode> = eps.iter().collect();
            let g = learner.outer_gradient_readonly(&state, &refs).unwrap();
            for i in 0..state.theta.total_dim() {
                let f = central_difference(&learner, &state, &eps, |s, h| s.theta.as_mut_slice()[i] += h);
                worst = worst.max(fd_err(g.theta.as_slice()[i], f));
            }
            let dpsi = g.psi.as_ref().unwrap();
            for i in 0..dpsi.total_dim() {
                let f = central_difference(&learner, &state, &eps, |s, h| s.psi.as_mut().unwrap().as_mut_slice()[i] += h);
                worst = worst.max(fd_err(dpsi.as_slice()[i], f));
            }
        }
        all &= worst < 1e-4;
        lines.push(format!("{algorithm} ({n_params} params) worst rel err {worst:.2e}"));
    }
    verdict(all, format!("{} over 50 draws each", lines.join(", ")))
}

// ---------------------------------------------------------------- 3

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn items(points: &[Vec<f64>]) -> Vec<(NodeId, &[f64])> {
    points.iter().enumerate().map(|(i, p)| (i as NodeId, p.as_slice())).collect()
}

fn ids(c: &[Candidate]) -> Vec<NodeId> {
    c.iter().map(|c| c.id).collect()
}

fn knn_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact_ok = 0;
    for _ in 0..200 {
        let dim = rng.random_range(1..=16);
        let n = rng.random_range(1..=400);
        let k = rng.random_range(1..=25);
        let pts = random_points(&mut rng, n, dim);
        let it = items(&pts);
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        if KdTree::build(dim, &it).knn(&q, k, |_| true).neighbors == brute_force(&it, &q, k) {
            exact_ok += 1;
        }
    }

    let pts = random_points(&mut rng, 500, 8);
    let queries = random_points(&mut rng, 100, 8);
    let it = items(&pts);
    let SearchMode::Approximate { trees, checks, top_dims } = SearchMode::approximate_default() else {
        unreachable!()
    };
    let forest = Forest::build(8, &it, trees, top_dims, &mut rng);
    let k = TreeConfig::default().k_infer;
    let mut hit = 0;
    for q in &queries {
        let truth = ids(&brute_force(&it, q, k));
        hit += ids(&forest.knn(q, k, checks, |_| true).neighbors)
            .iter()
            .filter(|id| truth.contains(id))
            .count();
    }
    let recall = hit as f64 / (queries.len() * k) as f64;
    verdict(
        exact_ok == 200 && recall >= 0.9,
        format!("exact == brute force in {exact_ok}/200 cases; approximate recall@{k} = {recall:.3} ({trees} trees, {checks} checks)"),
    )
}

// ---------------------------------------------------------------- 4 and 8

fn run_config(path: &Path, out: &Path) -> RunSummary {
    let over = format!("run.output_dir={:?}", out.display().to_string());
    let loaded = LoadedConfig::from_file(path, &[over]).unwrap();
    runner::run(&loaded).unwrap()
}

/// Mean MSE of `group` users in each trial.
fn group_mse_per_trial(report: &MetricsReport, group: Group) -> Vec<f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in report.rows.iter().filter(|r| r.metric == Metric::Mse && r.group == group) {
        let e = acc.entry(r.trial).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    acc.values().map(|(s, n)| s / *n as f64).collect()
}

fn overall_mse(report: &MetricsReport) -> f64 {
    report.aggregates.iter().find(|a| a.metric == Metric::Mse).unwrap().overall.mean
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/")
}

fn synthetic_imbalance(out: &Path) -> Verdict {
    let summary = run_config(&root().join("configs/synthetic.toml"), out);
    assert_eq!(summary.trials.len(), 3);
    let maml = &summary.reports[&Algorithm::MamlFixed];
    let base_minor = group_mse_per_trial(maml, Group::Minor);
    let base_total = overall_mse(maml);
    let mut pass = true;
    let mut parts = vec![format!("maml-fixed minor {} total {base_total:.4}", fmt(&base_minor))];
    for alg in [Algorithm::RegPaml, Algorithm::Paml] {
        let report = &summary.reports[&alg];
        let minor = group_mse_per_trial(report, Group::Minor);
        let total = overall_mse(report);
        let lower = minor.iter().zip(&base_minor).all(|(a, b)| a < b);
        let within = total <= 1.05 * base_total;
        pass &= lower && within && minor.len() == 3;
        parts.push(format!("{alg} minor {} total {total:.4}", fmt(&minor)));
    }
    verdict(pass, parts.join("; "))
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    run_config(&root().join("configs/synthetic.toml"), second);
    let mut files = vec![PathBuf::from("summary.tsv")];
    for alg in ["reg-paml", "paml", "maml-fixed"] {
        files.push(Path::new(alg).join("report.tsv"));
    }
    let same: Vec<bool> = files
        .iter()
        .map(|f| fs::read(first.join(f)).unwrap() == fs::read(second.join(f)).unwrap())
        .collect();
    let n_same = same.iter().filter(|s| **s).count();
    verdict(n_same == files.len(), format!("{n_same}/{} report files byte-identical", files.len()))
}

// ---------------------------------------------------------------- 5

fn reference_p(a: &[f64], b: &[f64]) -> f64 {
    let t = t_test_two_sample(a, b).unwrap();
    let d = StudentsT::new(0.0, 1.0, t.df).unwrap();
    2.0 * (1.0 - d.cdf(t.t.abs()))
}

fn metric_goldens() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6;
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };

    check("mse residuals (1,-1)", close(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0));
    let per_user = [mse(&[0.0], &[1.0]).unwrap(), mse(&[0.0; 3], &[3f64.sqrt(); 3]).unwrap()];
    check("mse per-user mean", close((per_user[0] + per_user[1]) / 2.0, 2.0));

    let l3 = 3f64.log2();
    let by_hand = (1.0 + 31.0 / l3) / (31.0 + 1.0 / l3);
    let ndcg = ndcg_at_k(&[1.0, 5.0], &[0.9, 0.1], &[1, 2], 2).unwrap();
    check("ndcg (1,5)", close(ndcg, by_hand));

    check("auc (1,0,1,0)", close(auc(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.8, 0.7, 0.1]).unwrap(), 0.75));
    let nel = weighted_nel(&[1.0], &[(-1f64).exp()], NelWeights::default(), LabelEncoding::default()).unwrap();
    check("nel p=1/e", close(nel, 0.9));

    let example = t_test_two_sample(&[1.0, 2.0, 3.0, 4.0], &[10.0, 11.0, 12.0, 13.0]).unwrap();
    check("t-test example p < 1e-6", example.p_value < 1e-6);
    check("t-test example vs reference", close(example.p_value, reference_p(&[1.0, 2.0, 3.0, 4.0], &[10.0, 11.0, 12.0, 13.0])));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let na = rng.random_range(2..30);
        let nb = rng.random_range(2..30);
        let shift = rng.random_range(-2.0..2.0);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..3.0) + shift).collect();
        worst = worst.max((t_test_two_sample(&a, &b).unwrap().p_value - reference_p(&a, &b)).abs());
    }
    check("t-test random pairs", worst <= 1e-6);

    // Everything except the stated p-value bound must hold.
    assert!(fails.iter().all(|f| f == "t-test example p < 1e-6"), "{fails:?}");
    verdict(
        fails.is_empty(),
        format!(
            "ndcg example {ndcg:.6} (its own arithmetic gives {by_hand:.6}); t-test example p = {:.3e}; \
             random-pair max |p - reference| {worst:.1e}; failing: {}",
            example.p_value,
            if fails.is_empty() { "none".to_string() } else { fails.join(", ") }
        ),
    )
}

// ---------------------------------------------------------------- 6

fn movielens_direction(out: &Path) -> Verdict {
    let dir = std::env::var_os("PAML_MOVIELENS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| root().join("data/ml-1m"));
    if !dir.join("ratings.dat").is_file() {
        return verdict(false, format!("dataset not found at {} (set PAML_MOVIELENS_DIR)", dir.display()));
    }
    let overrides = [
        format!("data.dir={:?}", dir.display().to_string()),
        format!("run.output_dir={:?}", out.display().to_string()),
    ];
    let loaded = LoadedConfig::from_file(&root().join("configs/movielens.toml"), &overrides).unwrap();
    let summary = runner::run(&loaded).unwrap();
    let stats = |alg: Algorithm| {
        let r = &summary.reports[&alg];
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let gap = mean(group_mse_per_trial(r, Group::Minor)) - mean(group_mse_per_trial(r, Group::Major));
        (overall_mse(r), gap)
    };
    let (reg, reg_gap) = stats(Algorithm::RegPaml);
    let (maml, maml_gap) = stats(Algorithm::MamlFixed);
    verdict(
        reg <= maml && reg_gap <= maml_gap,
        format!("reg-paml mse {reg:.4} gap {reg_gap:.4}; maml-fixed mse {maml:.4} gap {maml_gap:.4}"),
    )
}

// ---------------------------------------------------------------- 7

fn regularizer_accounting() -> Verdict {
    let splits = synth_splits(
        &SynthConfig {
            n_tasks: 200,
            seed: 7,
            ..SynthConfig::default()
        },
        [7, 1, 2],
    )
    .unwrap();
    let config = TrainerConfig {
        embedding_dim: 4,
        hidden_dims: vec![8],
        lr_hidden_dims: vec![4, 4],
        epochs: 3,
        batch_size: 16,
        log_steps: true,
        ..TrainerConfig::new(Algorithm::RegPaml)
    };
    let learner = Learner::new(config, &splits.schema).unwrap();
    let trained = learner.train(&splits).unwrap();

    // The first step starts from the initial state, so its log can be
    // recomputed independently.
    let init = learner.init_state().unwrap();
    let model = learner.model();
    let head = learner.head().unwrap();
    let mut recomputed = 0.0;
    for log in &trained.steps[0].episodes {
        let ep = splits.train.iter().find(|e| e.user.user_id == log.user_id).unwrap();
        let g = model.grad(&init.theta, &ep.support_batch()).unwrap();
        let h = model.user_embedding(&init.theta, &ep.user.features).unwrap();
        let alpha = head.alpha(init.psi.as_ref().unwrap(), &h).unwrap();
        let (adapted, _) = inner_adapt(model, &init.theta, Step::Scalar(alpha), &ep.support_batch()).unwrap();
        recomputed += model.loss(&adapted, &ep.query_batch()).unwrap() + 1e-3 * g.params.norm_sq() * alpha.abs();
    }
    let first_err = (recomputed - trained.steps[0].total_loss).abs();

    let (mut worst, mut pairs, mut violations) = (first_err, 0, 0);
    for step in &trained.steps {
        let total: f64 = step.episodes.iter().map(|e| e.query_loss + step.gamma * e.reg).sum();
        worst = worst.max((total - step.total_loss).abs());
        let losses: Vec<f64> = step.episodes.iter().map(|e| e.query_loss).collect();
        let norms: Vec<f64> = step.episodes.iter().map(|e| e.grad_norm).collect();
        let alphas: Vec<f64> = step.episodes.iter().map(|e| e.alpha).collect();
        let embs: Vec<Vec<f64>> = step.episodes.iter().map(|e| vec![e.embedding_norm]).collect();
        let b = bound_check(&losses, &norms, &alphas, &embs).unwrap();
        pairs += b.pairs;
        violations += b.violations;
    }
    verdict(
        worst <= 1e-10 && violations == 0,
        format!(
            "{} steps, max |logged - recomputed| {worst:.1e}; bound violated in {violations}/{pairs} pairs",
            trained.steps.len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("synthetic-a");
    let second = tmp.path().join("synthetic-b");
    let ml = tmp.path().join("movielens");

    type Criterion<'a> = (&'a str, Duration, Box<dyn FnOnce() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1", Duration::from_secs(10), Box::new(lemma_oracle)),
        ("2", Duration::from_secs(60), Box::new(meta_gradient)),
        ("3", Duration::from_secs(30), Box::new(knn_oracle)),
        ("4", Duration::from_secs(600), Box::new(|| synthetic_imbalance(&first))),
        ("5", Duration::MAX, Box::new(metric_goldens)),
        ("6", Duration::from_secs(45 * 60), Box::new(|| movielens_direction(&ml))),
        ("7", Duration::MAX, Box::new(regularizer_accounting)),
        ("8", Duration::MAX, Box::new(|| determinism(&first, &second))),
    ];

    let mut unexpected = Vec::new();
    for (id, budget, check) in criteria {
        let start = Instant::now();
        let mut v = check();
        let took = start.elapsed();
        if took > budget {
            v.pass = false;
            v.detail.push_str(&format!("; over the {}s budget", budget.as_secs()));
        }
        let status = if v.pass { "PASS" } else { "FAIL" };
        let known = if !v.pass && KNOWN_UNATTAINABLE.contains(&id) { " [known]" } else { "" };
        println!("criterion {id}: {status}{known} ({:.1}s) {}", took.as_secs_f64(), v.detail);
        if !v.pass && known.is_empty() {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
