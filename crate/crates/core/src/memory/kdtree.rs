//! Static kd-trees over embedding snapshots.
//!
//! [`KdTree::build`] splits on the widest dimension at the median and answers
//! exact k-nearest queries. [`Forest`] holds several randomized trees (split
//! dimension drawn among the highest-variance ones) searched together
//! best-bin-first under a budget of distinct point checks.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;

use super::NodeId;

const LEAF_SIZE: usize = 4;
/// Randomized trees keep one point per leaf so best-bin-first ordering is
/// point-granular.
const RANDOM_LEAF_SIZE: usize = 1;
/// Points sampled when estimating per-dimension variance for a split.
const VARIANCE_SAMPLE: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub dist_sq: f64,
    pub id: NodeId,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.id.cmp(&other.id))
    }
}

/// Neighbors sorted by (distance, id) and the number of points whose
/// distance was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub neighbors: Vec<Candidate>,
    pub visited: usize,
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Bounded max-heap keeping the best `k` candidates.
struct Best {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn full(&self) -> bool {
        self.heap.len() >= self.k
    }

    fn worst(&self) -> f64 {
        if self.full() {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist_sq)
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, c: Candidate) {
        if !self.full() {
            self.heap.push(c);
        } else if c < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Points in tree order, row-major.
    points: Vec<f64>,
    ids: Vec<NodeId>,
    /// Position of each tree-order point in the build input.
    source: Vec<usize>,
    nodes: Vec<KdNode>,
}

enum SplitRule<'a, R: Rng + ?Sized> {
    Widest,
    RandomTopVariance { top: usize, rng: &'a mut R },
}

impl KdTree {
    /// Exact tree: widest dimension, median split.
    pub fn build(dim: usize, items: &[(NodeId, &[f64])]) -> Self {
        Self::build_with::<rand_chacha::ChaCha8Rng>(dim, items, SplitRule::Widest)
    }

    /// Randomized tree: split dimension drawn uniformly among the `top`
    /// highest-variance dimensions of each cell.
    pub fn build_randomized<R: Rng + ?Sized>(
        dim: usize,
        items: &[(NodeId, &[f64])],
        top: usize,
        rng: &mut R,
    ) -> Self {
        Self::build_with(dim, items, SplitRule::RandomTopVariance { top, rng })
    }

    fn build_with<R: Rng + ?Sized>(dim: usize, items: &[(NodeId, &[f64])], mut rule: SplitRule<'_, R>) -> Self {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            build_node(items, dim, &mut order, 0, &mut nodes, &mut rule);
        }
        let mut points = Vec::with_capacity(items.len() * dim);
        for &i in &order {
            points.extend_from_slice(items[i].1);
        }
        Self {
            dim,
            points,
            ids: order.iter().map(|&i| items[i].0).collect(),
            source: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact k nearest among points with `live(id)`.
    pub fn knn(&self, q: &[f64], k: usize, live: impl Fn(NodeId) -> bool) -> SearchResult {
        let mut best = Best::new(k);
        let mut visited = 0;
        if !self.nodes.is_empty() && k > 0 {
            self.exact(0, q, &mut best, &mut visited, &live);
        }
        SearchResult {
            neighbors: best.into_sorted(),
            visited,
        }
    }

    fn exact(&self, node: usize, q: &[f64], best: &mut Best, visited: &mut usize, live: &impl Fn(NodeId) -> bool) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for i in start..end {
                    *visited += 1;
                    if live(self.ids[i]) {
                        best.offer(Candidate {
                            dist_sq: dist_sq(q, self.point(i)),
                            id: self.ids[i],
                        });
                    }
                }
            }
            KdNode::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.exact(near, q, best, visited, live);
                if diff * diff <= best.worst() {
                    self.exact(far, q, best, visited, live);
                }
            }
        }
    }
}

fn build_node<R: Rng + ?Sized>(
    items: &[(NodeId, &[f64])],
    dim: usize,
    order: &mut [usize],
    offset: usize,
    nodes: &mut Vec<KdNode>,
    rule: &mut SplitRule<'_, R>,
) -> usize {
    let id = nodes.len();
    let leaf = match rule {
        SplitRule::Widest => LEAF_SIZE,
        SplitRule::RandomTopVariance { .. } => RANDOM_LEAF_SIZE,
    };
    if order.len() <= leaf || dim == 0 {
        nodes.push(KdNode::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let split_dim = match rule {
        SplitRule::Widest => (0..dim)
            .map(|d| {
                let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(items[i].1[d]), hi.max(items[i].1[d]))
                });
                (d, hi - lo)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(d, _)| d)
            .unwrap(),
        SplitRule::RandomTopVariance { top, rng } => {
            let sample = &order[..order.len().min(VARIANCE_SAMPLE)];
            let n = sample.len() as f64;
            let mut var: Vec<(usize, f64)> = (0..dim)
                .map(|d| {
                    let mean = sample.iter().map(|&i| items[i].1[d]).sum::<f64>() / n;
                    let v = sample.iter().map(|&i| (items[i].1[d] - mean).powi(2)).sum::<f64>() / n;
                    (d, v)
                })
                .collect();
            var.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            var[rng.random_range(0..(*top).clamp(1, dim))].0
        }
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| items[a].1[split_dim].total_cmp(&items[b].1[split_dim]));
    let value = items[order[mid]].1[split_dim];
    nodes.push(KdNode::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(items, dim, lo, offset, nodes, rule);
    let right = build_node(items, dim, hi, offset + mid, nodes, rule);
    nodes[id] = KdNode::Split {
        dim: split_dim,
        value,
        left,
        right,
    };
    id
}

/// Randomized kd-trees searched jointly.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<KdTree>,
    n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    bound: f64,
    tree: usize,
    node: usize,
}

impl Eq for Branch {}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.tree.cmp(&other.tree))
            .then(self.node.cmp(&other.node))
    }
}

impl Forest {
    pub fn build<R: Rng + ?Sized>(
        dim: usize,
        items: &[(NodeId, &[f64])],
        n_trees: usize,
        top: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            trees: (0..n_trees.max(1))
                .map(|_| KdTree::build_randomized(dim, items, top, rng))
                .collect(),
            n_points: items.len(),
        }
    }

    /// Best-effort k nearest: stops once `checks` distinct points have been
    /// examined and at least `k` live candidates are held.
    pub fn knn(&self, q: &[f64], k: usize, checks: usize, live: impl Fn(NodeId) -> bool) -> SearchResult {
        let mut best = Best::new(k);
        let mut seen = vec![false; self.n_points];
        let mut checked = 0;
        let mut queue: BinaryHeap<Reverse<Branch>> = BinaryHeap::new();
        if k == 0 || self.n_points == 0 {
            return SearchResult {
                neighbors: vec![],
                visited: 0,
            };
        }
        for t in 0..self.trees.len() {
            self.descend(t, 0, 0.0, q, &mut best, &mut seen, &mut checked, &mut queue, &live);
        }
        while let Some(Reverse(b)) = queue.pop() {
            if checked >= checks && best.full() {
                break;
            }
            if b.bound > best.worst() {
                continue;
            }
            self.descend(b.tree, b.node, b.bound, q, &mut best, &mut seen, &mut checked, &mut queue, &live);
        }
        SearchResult {
            neighbors: best.into_sorted(),
            visited: checked,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        t: usize,
        mut node: usize,
        bound: f64,
        q: &[f64],
        best: &mut Best,
        seen: &mut [bool],
        checked: &mut usize,
        queue: &mut BinaryHeap<Reverse<Branch>>,
        live: &impl Fn(NodeId) -> bool,
    ) {
        let tree = &self.trees[t];
        loop {
            match tree.nodes[node] {
                KdNode::Leaf { start, end } => {
                    for i in start..end {
                        let src = tree.source[i];
                        if seen[src] {
                            continue;
                        }
                        seen[src] = true;
                        *checked += 1;
                        if live(tree.ids[i]) {
                            best.offer(Candidate {
                                dist_sq: dist_sq(q, tree.point(i)),
                                id: tree.ids[i],
                            });
                        }
                    }
                    return;
                }
                KdNode::Split { dim, value, left, right } => {
                    let diff = q[dim] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    queue.push(Reverse(Branch {
                        bound: bound + diff * diff,
                        tree: t,
                        node: far,
                    }));
                    node = near;
                }
            }
        }
    }
}

/// Exhaustive k nearest, the reference the trees are checked against.
pub fn brute_force(items: &[(NodeId, &[f64])], q: &[f64], k: usize) -> Vec<Candidate> {
    let mut best = Best::new(k);
    for (id, p) in items {
        best.offer(Candidate {
            dist_sq: dist_sq(q, p),
            id: *id,
        });
    }
    best.into_sorted()
}
