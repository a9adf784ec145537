//! Bounded memory of (user embedding, learning rate) nodes with
//! nearest-neighbor lookup and least-recently-used eviction.
//!
//! Inserted nodes are searched by a linear scan until the next
//! [`TreeMemory::rebuild`], so every search reflects every mutation. Updating
//! node embeddings rebuilds the index immediately.

mod kdtree;
mod kernel;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use kdtree::{brute_force, dist_sq, Candidate, Forest, KdTree, SearchResult};
pub use kernel::{blend_lr, kernel_similarity, NeighborLr, NodeGrad, TreeLookup};

use crate::error::{Error, Result};

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryNode {
    pub id: NodeId,
    pub embedding: Vec<f64>,
    pub lr: f64,
    /// Clock value of the last store or search hit.
    pub recency: u64,
    /// Number of search hits.
    pub hits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Exact,
    /// Randomized kd-trees searched under a budget of distinct point checks.
    Approximate { trees: usize, checks: usize, top_dims: usize },
}

impl SearchMode {
    pub fn approximate_default() -> Self {
        SearchMode::Approximate {
            trees: 4,
            checks: 64,
            top_dims: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eviction {
    LeastRecentlyUsed,
    LeastFrequentlyUsed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeConfig {
    pub capacity: usize,
    pub k_train: usize,
    pub k_infer: usize,
    pub delta: f64,
    pub sigma: f64,
    pub mode: SearchMode,
    pub eviction: Eviction,
    /// Seed of the randomized trees.
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            k_train: 20,
            k_infer: 5,
            delta: 2.0,
            sigma: 1e-5,
            mode: SearchMode::Exact,
            eviction: Eviction::LeastRecentlyUsed,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Index {
    None,
    Exact(KdTree),
    Approximate(Forest),
}

#[derive(Debug, Clone)]
pub struct TreeMemory {
    config: TreeConfig,
    dim: usize,
    nodes: BTreeMap<NodeId, MemoryNode>,
    /// Ids inserted since the index was built.
    pending: Vec<NodeId>,
    index: Index,
    clock: u64,
    next_id: NodeId,
    evictions: u64,
    rebuilds: u64,
}

impl TreeMemory {
    pub fn new(dim: usize, config: TreeConfig) -> Result<Self> {
        if config.capacity == 0 {
            return Err(Error::InvalidConfig("tree capacity must be positive".into()));
        }
        if !(config.delta > 0.0 && config.sigma > 0.0) {
            return Err(Error::InvalidConfig("kernel delta and sigma must be positive".into()));
        }
        Ok(Self {
            config,
            dim,
            nodes: BTreeMap::new(),
            pending: Vec::new(),
            index: Index::None,
            clock: 0,
            next_id: 0,
            evictions: 0,
            rebuilds: 0,
        })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&MemoryNode> {
        self.nodes.get(&id)
    }

    fn check_dim(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding of dimension {}, tree holds {}",
                h.len(),
                self.dim
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput("non-finite embedding".into()));
        }
        Ok(())
    }

    fn victim(&self) -> Option<NodeId> {
        self.nodes
            .values()
            .min_by_key(|n| match self.config.eviction {
                Eviction::LeastRecentlyUsed => (n.recency, 0, n.id),
                Eviction::LeastFrequentlyUsed => (n.hits, n.recency, n.id),
            })
            .map(|n| n.id)
    }

    /// Inserts a node, first evicting one if at capacity. Returns its id.
    pub fn store_node(&mut self, h: &[f64], lr: f64) -> Result<NodeId> {
        self.check_dim(h)?;
        if !lr.is_finite() {
            return Err(Error::RejectedInput(format!("non-finite learning rate {lr}")));
        }
        if self.nodes.len() >= self.config.capacity {
            if let Some(v) = self.victim() {
                self.nodes.remove(&v);
                self.evictions += 1;
            }
        }
        self.clock += 1;
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.insert(
            id,
            MemoryNode {
                id,
                embedding: h.to_vec(),
                lr: lr.clamp(0.0, 1.0),
                recency: self.clock,
                hits: 0,
            },
        );
        self.pending.push(id);
        Ok(id)
    }

    /// Rebuilds the spatial index over all live nodes.
    pub fn rebuild(&mut self) {
        let items: Vec<(NodeId, &[f64])> = self
            .nodes
            .values()
            .map(|n| (n.id, n.embedding.as_slice()))
            .collect();
        self.index = if items.is_empty() {
            Index::None
        } else {
            match self.config.mode {
                SearchMode::Exact => Index::Exact(KdTree::build(self.dim, &items)),
                SearchMode::Approximate { trees, top_dims, .. } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.rebuilds);
                    Index::Approximate(Forest::build(self.dim, &items, trees, top_dims, &mut rng))
                }
            }
        };
        self.pending.clear();
        self.rebuilds += 1;
    }

    /// K nearest live nodes, distances ascending, without touching recency.
    pub fn search_readonly(&self, h: &[f64], k: usize) -> Result<Vec<Candidate>> {
        self.check_dim(h)?;
        if self.nodes.is_empty() {
            return Err(Error::Memory("search on an empty tree".into()));
        }
        if k == 0 {
            return Err(Error::RejectedInput("K must be at least 1".into()));
        }
        let live = |id: NodeId| self.nodes.contains_key(&id);
        let mut found = match &self.index {
            Index::None => vec![],
            Index::Exact(t) => t.knn(h, k, live).neighbors,
            Index::Approximate(f) => {
                let checks = match self.config.mode {
                    SearchMode::Approximate { checks, .. } => checks,
                    SearchMode::Exact => usize::MAX,
                };
                f.knn(h, k, checks, live).neighbors
            }
        };
        found.extend(self.pending.iter().filter_map(|id| {
            self.nodes.get(id).map(|n| Candidate {
                dist_sq: dist_sq(h, &n.embedding),
                id: *id,
            })
        }));
        found.sort();
        found.truncate(k);
        Ok(found)
    }

    /// K nearest live nodes; marks the returned nodes as used.
    pub fn search(&mut self, h: &[f64], k: usize) -> Result<Vec<Candidate>> {
        let found = self.search_readonly(h, k)?;
        self.clock += 1;
        for c in &found {
            let n = self.nodes.get_mut(&c.id).expect("search returns live nodes");
            n.recency = self.clock;
            n.hits += 1;
        }
        Ok(found)
    }

    fn to_lookup(&self, h: &[f64], found: &[Candidate]) -> Result<TreeLookup> {
        let neighbors = found
            .iter()
            .map(|c| {
                let n = &self.nodes[&c.id];
                NeighborLr {
                    id: n.id,
                    embedding: n.embedding.clone(),
                    lr: n.lr,
                    similarity: 0.0,
                }
            })
            .collect();
        TreeLookup::new(h.to_vec(), neighbors, self.config.delta, self.config.sigma)
    }

    /// Kernel-blended learning rate of the K nearest nodes.
    pub fn lookup(&mut self, h: &[f64], k: usize) -> Result<TreeLookup> {
        let found = self.search(h, k)?;
        self.to_lookup(h, &found)
    }

    pub fn lookup_readonly(&self, h: &[f64], k: usize) -> Result<TreeLookup> {
        let found = self.search_readonly(h, k)?;
        self.to_lookup(h, &found)
    }

    /// One descent step on the given nodes' embeddings and rates, then an
    /// index rebuild. Rates are kept in [0, 1].
    pub fn update_nodes(&mut self, grads: &[NodeGrad], beta: f64) -> Result<()> {
        if let Some(g) = grads.iter().find(|g| !self.nodes.contains_key(&g.id)) {
            return Err(Error::Memory(format!("gradient for unknown node {}", g.id)));
        }
        if let Some(g) = grads.iter().find(|g| g.embedding.len() != self.dim) {
            return Err(Error::ShapeMismatch(format!("node {} gradient has wrong dimension", g.id)));
        }
        for g in grads {
            let n = self.nodes.get_mut(&g.id).unwrap();
            let moved: Vec<f64> = n
                .embedding
                .iter()
                .zip(&g.embedding)
                .map(|(e, d)| e - beta * d)
                .collect();
            let lr = n.lr - beta * g.lr;
            if moved.iter().any(|v| !v.is_finite()) || !lr.is_finite() {
                return Err(Error::NumericOverflow {
                    layer: format!("tree node {}", g.id),
                });
            }
            n.embedding = moved;
            n.lr = lr.clamp(0.0, 1.0);
        }
        self.rebuild();
        Ok(())
    }

    /// Text dump: a header line, then `id recency hits lr e1,e2,...` per node.
    pub fn dump(&self) -> String {
        let mut s = format!(
            "# tree-memory v1 dim={} clock={} next_id={} evictions={}\n",
            self.dim, self.clock, self.next_id, self.evictions
        );
        for n in self.nodes.values() {
            let emb: Vec<String> = n.embedding.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}\t{}\t{}\t{}\t{}", n.id, n.recency, n.hits, n.lr, emb.join(",")).unwrap();
        }
        s
    }

    /// Restores a [`Self::dump`]; the index is rebuilt.
    pub fn restore(text: &str, config: TreeConfig) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            path: "<tree dump>".into(),
            message: m,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty dump".into()))?;
        let field = |key: &str| -> Result<u64> {
            header
                .split_whitespace()
                .find_map(|w| w.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("header lacks {key}")))
        };
        if !header.starts_with("# tree-memory v1") {
            return Err(bad("unrecognized header".into()));
        }
        let mut tree = TreeMemory::new(field("dim")? as usize, config)?;
        tree.clock = field("clock")?;
        tree.next_id = field("next_id")?;
        tree.evictions = field("evictions")?;
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let parse_err = || bad(format!("node line {}", i + 2));
            if f.len() != 5 {
                return Err(parse_err());
            }
            let embedding: Vec<f64> = if f[4].is_empty() {
                vec![]
            } else {
                f[4].split(',').map(|v| v.parse().map_err(|_| parse_err())).collect::<Result<_>>()?
            };
            if embedding.len() != tree.dim {
                return Err(parse_err());
            }
            let node = MemoryNode {
                id: f[0].parse().map_err(|_| parse_err())?,
                recency: f[1].parse().map_err(|_| parse_err())?,
                hits: f[2].parse().map_err(|_| parse_err())?,
                lr: f[3].parse().map_err(|_| parse_err())?,
                embedding,
            };
            tree.nodes.insert(node.id, node);
        }
        tree.rebuild();
        tree.rebuilds = 0;
        Ok(tree)
    }
}
