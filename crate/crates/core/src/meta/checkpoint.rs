//! Plain-text checkpoints of a [`MetaState`]. Values are written with the
//! shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use super::config::Algorithm;
use super::learner::{Learner, MetaState};
use crate::error::{Error, Result};
use crate::memory::TreeMemory;
use crate::params::ParamSet;

const HEADER: &str = "# paml-checkpoint v1";
const TREE_BEGIN: &str = "[tree]";

fn write_set(out: &mut String, group: &str, set: &ParamSet) {
    for entry in set.layout().entries() {
        let shape: Vec<String> = entry.shape.iter().map(usize::to_string).collect();
        let values: Vec<String> = set.entry(&entry.name).iter().map(f64::to_string).collect();
        writeln!(out, "{group}\t{}\t{}\t{}", entry.name, shape.join("x"), values.join(" ")).unwrap();
    }
}

/// Serializes `state` trained by `algorithm` under a config with `config_hash`.
pub fn to_text(algorithm: Algorithm, config_hash: &str, state: &MetaState) -> String {
    let mut out = format!("{HEADER}\nalgorithm\t{algorithm}\nconfig_hash\t{config_hash}\n");
    write_set(&mut out, "theta", &state.theta);
    if let Some(psi) = &state.psi {
        write_set(&mut out, "psi", psi);
    }
    if let Some(a) = &state.alpha_vec {
        write_set(&mut out, "alpha", a);
    }
    if let Some(tree) = &state.tree {
        out.push_str(TREE_BEGIN);
        out.push('\n');
        out.push_str(&tree.dump());
    }
    out
}

/// A parsed checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub config_hash: String,
    pub state: MetaState,
}

/// Algorithm recorded in a checkpoint's header.
pub fn peek_algorithm(text: &str) -> Result<Algorithm> {
    let mut lines = text.lines();
    match (lines.next(), lines.next().and_then(|l| l.strip_prefix("algorithm\t"))) {
        (Some(HEADER), Some(name)) => name.parse(),
        _ => Err(Error::Parse {
            path: "<checkpoint>".into(),
            message: "missing header or algorithm line".into(),
        }),
    }
}

/// Parses a checkpoint, checking every entry against `learner`'s layouts.
pub fn from_text(text: &str, learner: &Learner) -> Result<Checkpoint> {
    let bad = |m: String| Error::Parse {
        path: "<checkpoint>".into(),
        message: m,
    };
    let (body, tree_text) = match text.split_once(&format!("\n{TREE_BEGIN}\n")) {
        Some((b, t)) => (b, Some(t)),
        None => (text, None),
    };
    let mut lines = body.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("unrecognized header".into()));
    }
    let mut field = |key: &str| -> Result<String> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key)?.strip_prefix('\t').map(str::to_string))
            .ok_or_else(|| bad(format!("missing {key}")))
    };
    let algorithm: Algorithm = field("algorithm")?.parse()?;
    let config_hash = field("config_hash")?;
    if algorithm != learner.config().algorithm {
        return Err(bad(format!(
            "checkpoint holds {algorithm}, learner is {}",
            learner.config().algorithm
        )));
    }
    let mut state = learner.init_state()?;
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("line {}: expected 4 fields", i + 4)));
        }
        let set = match f[0] {
            "theta" => Some(&mut state.theta),
            "psi" => state.psi.as_mut(),
            "alpha" => state.alpha_vec.as_mut(),
            _ => None,
        }
        .ok_or_else(|| bad(format!("unexpected group `{}`", f[0])))?;
        let entry = set
            .layout()
            .get(f[1])
            .ok_or_else(|| bad(format!("unknown parameter `{}`", f[1])))?;
        let shape: Vec<String> = entry.shape.iter().map(usize::to_string).collect();
        if shape.join("x") != f[2] {
            return Err(bad(format!("`{}` has shape {}, expected {}", f[1], f[2], shape.join("x"))));
        }
        let values: Vec<f64> = if f[3].is_empty() {
            vec![]
        } else {
            f[3].split(' ')
                .map(|v| v.parse().map_err(|_| bad(format!("bad value in `{}`", f[1]))))
                .collect::<Result<_>>()?
        };
        let slot = set.entry_mut(f[1]);
        if values.len() != slot.len() {
            return Err(bad(format!("`{}` has {} values, expected {}", f[1], values.len(), slot.len())));
        }
        slot.copy_from_slice(&values);
        seen.insert(format!("{}/{}", f[0], f[1]));
    }
    let expected = state.theta.layout().entries().len()
        + state.psi.as_ref().map_or(0, |p| p.layout().entries().len())
        + state.alpha_vec.as_ref().map_or(0, |p| p.layout().entries().len());
    if seen.len() != expected {
        return Err(bad(format!("{} of {expected} parameter entries present", seen.len())));
    }
    match (&mut state.tree, tree_text) {
        (Some(tree), Some(t)) => *tree = TreeMemory::restore(t, tree.config().clone())?,
        (None, None) => {}
        (Some(_), None) => return Err(bad("tree memory missing".into())),
        (None, Some(_)) => return Err(bad("unexpected tree memory".into())),
    }
    Ok(Checkpoint {
        algorithm,
        config_hash,
        state,
    })
}

pub fn save(path: &Path, algorithm: Algorithm, config_hash: &str, state: &MetaState) -> Result<()> {
    std::fs::write(path, to_text(algorithm, config_hash, state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, learner: &Learner) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, learner)
}
