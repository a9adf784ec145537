//! The `lemmas`, `inspect-tree` and `dump-embeddings` subcommands.

use std::fmt::Write as _;
use std::path::Path;

use paml_core::lemma::{alpha2_equalizing, bound_check, verify_lemmas, BoundReport, LemmaReport, TwoGroupSpec};
use paml_core::memory::TreeMemory;
use paml_core::meta::{checkpoint, Learner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LoadedConfig;
use crate::{output, runner, CliError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaArgs {
    pub p1: f64,
    pub x1: f64,
    pub x2: f64,
    pub alpha: f64,
    /// Rate of group 2; the equalizing rate when unset.
    pub alpha2: Option<f64>,
    pub users: usize,
    pub seed: u64,
}

impl Default for LemmaArgs {
    fn default() -> Self {
        Self {
            p1: 0.7,
            x1: 0.0,
            x2: 1.0,
            alpha: 0.1,
            alpha2: None,
            users: 8,
            seed: 0,
        }
    }
}

/// Users drawn from the two groups, adapted from the per-group optimum on
/// `(theta - x_g)^2`; their embeddings are the group one-hot.
fn sampled_bound(spec: &TwoGroupSpec, theta: f64, users: usize, seed: u64) -> Result<BoundReport, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut losses, mut grads, mut alphas, mut embs) = (vec![], vec![], vec![], vec![]);
    for _ in 0..users {
        let first = rng.random::<f64>() < spec.p1;
        let (x, a) = if first { (spec.x1, spec.alpha1) } else { (spec.x2, spec.alpha2) };
        let g = 2.0 * (theta - x);
        losses.push((theta - a * g - x).powi(2));
        grads.push(g.abs());
        alphas.push(a);
        embs.push(if first { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
    }
    Ok(bound_check(&losses, &grads, &alphas, &embs)?)
}

pub fn lemma_report(args: &LemmaArgs) -> Result<(LemmaReport, BoundReport), CliError> {
    if !(args.p1 > 0.5 - 1e-12 && args.p1 < 1.0) {
        return Err(CliError::Usage(format!("p1 = {} must lie in [0.5, 1)", args.p1)));
    }
    let alpha2 = match args.alpha2 {
        Some(a) => a,
        None => alpha2_equalizing(args.alpha, args.p1, 1.0 - args.p1)?,
    };
    let spec = TwoGroupSpec::adaptive(args.p1, args.x1, args.x2, args.alpha, alpha2)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = verify_lemmas(&spec)?;
    let bound = sampled_bound(&spec, report.theta_star_prime, args.users, args.seed)?;
    Ok((report, bound))
}

/// Structured text of a lemma check.
pub fn format_lemmas(r: &LemmaReport, b: &BoundReport, users: usize) -> String {
    let s = &r.spec;
    let mut o = String::new();
    writeln!(o, "[spec]\np1 = {}\np2 = {}\nx1 = {}\nx2 = {}\nalpha1 = {}\nalpha2 = {}", s.p1, s.p2, s.x1, s.x2, s.alpha1, s.alpha2)
        .unwrap();
    writeln!(
        o,
        "\n[lemma1]\ntheta_star = {}\ntheta_star_closed_form = {}\nmajor_loss = {}\nminor_loss = {}\nequal_losses = {}\nholds = {}",
        r.theta_star,
        r.theta_star_closed,
        r.group_losses.0,
        r.group_losses.1,
        (r.group_losses.0 - r.group_losses.1).abs() <= 1e-12,
        r.lemma1_holds
    )
    .unwrap();
    writeln!(
        o,
        "\n[lemma2]\ntheta_star_prime = {}\ntheta_star_prime_closed_form = {}\nminor_loss_prime = {}\nl_star = {}\nl_star_prime = {}\nminor_holds = {}\ntotal_holds = {}\nholds = {}",
        r.theta_star_prime,
        r.theta_star_prime_closed,
        r.group_losses_prime.1,
        r.l_star,
        r.l_star_prime,
        r.lemma2_minor_holds,
        r.lemma2_total_holds,
        r.lemma2_holds()
    )
    .unwrap();
    writeln!(
        o,
        "\n[bound]\nusers = {}\npairs = {}\nlhs = {}\nfirst_order_rhs = {}\nviolations = {}\nholds_first_order = {}",
        users,
        b.pairs,
        b.lhs,
        b.first_order_rhs,
        b.violations,
        b.holds_first_order
    )
    .unwrap();
    o
}

/// Node count, rate statistics and optionally every node of a tree dump.
pub fn inspect_tree(path: &Path, list_nodes: bool) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| paml_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let tree = TreeMemory::restore(&text, Default::default())?;
    let lrs: Vec<f64> = tree.nodes().map(|n| n.lr).collect();
    let mut o = format!("nodes = {}\ndim = {}\nevictions = {}\n", tree.len(), tree.dim(), tree.evictions());
    if !lrs.is_empty() {
        let mean = lrs.iter().sum::<f64>() / lrs.len() as f64;
        let min = lrs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = lrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(o, "lr_min = {min}\nlr_mean = {mean}\nlr_max = {max}").unwrap();
        let hits: u64 = tree.nodes().map(|n| n.hits).sum();
        writeln!(o, "total_hits = {hits}").unwrap();
    }
    if list_nodes {
        o.push_str("\nid\trecency\thits\tlr\n");
        for n in tree.nodes() {
            writeln!(o, "{}\t{}\t{}\t{}", n.id, n.recency, n.hits, n.lr).unwrap();
        }
    }
    Ok(o)
}

/// Embedding rows of every user of `trial`, from a checkpoint trained under
/// the same configuration.
pub fn dump_embeddings(loaded: &LoadedConfig, checkpoint_path: &Path, trial: usize) -> Result<String, CliError> {
    let seeds = loaded.config.seeds();
    let seed = *seeds
        .get(trial)
        .ok_or_else(|| CliError::Usage(format!("trial {trial} out of range ({} trials)", seeds.len())))?;
    let text = std::fs::read_to_string(checkpoint_path).map_err(|e| paml_core::Error::Io {
        path: checkpoint_path.to_path_buf(),
        source: e,
    })?;
    let algorithm = checkpoint::peek_algorithm(&text)?;
    let splits = runner::load_data(&loaded.config.data, seed)?;
    let learner = Learner::new(loaded.config.trainer_config(algorithm, seed), &splits.schema)?;
    let ck = checkpoint::from_text(&text, &learner)?;
    if ck.config_hash != loaded.hash {
        log::warn!("checkpoint config hash {} differs from the config's {}", ck.config_hash, loaded.hash);
    }
    Ok(output::embeddings_tsv(&learner, &ck.state, &splits)?)
}
