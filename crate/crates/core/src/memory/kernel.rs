//! Gaussian-kernel similarity and kernel-weighted learning-rate blending,
//! with derivatives of the blend w.r.t. the query and the stored nodes.

use super::NodeId;
use crate::error::{Error, Result};

/// `exp(-delta * |a - b|^2)`
pub fn kernel_similarity(a: &[f64], b: &[f64], delta: f64) -> f64 {
    (-delta * super::kdtree::dist_sq(a, b)).exp()
}

/// `sum_k s_k lr_k / (sum_j s_j + sigma)` over (similarity, lr) pairs.
pub fn blend_lr(neighbors: &[(f64, f64)], sigma: f64) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::DegenerateInput("no neighbors to blend".into()));
    }
    let s: f64 = neighbors.iter().map(|n| n.0).sum();
    Ok(neighbors.iter().map(|(sk, lr)| sk * lr).sum::<f64>() / (s + sigma))
}

/// One neighbor as seen by a lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLr {
    pub id: NodeId,
    pub embedding: Vec<f64>,
    pub lr: f64,
    pub similarity: f64,
}

/// Gradient of the blended rate w.r.t. one stored node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrad {
    pub id: NodeId,
    pub embedding: Vec<f64>,
    pub lr: f64,
}

/// Result of blending the neighbors of a query embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeLookup {
    pub query: Vec<f64>,
    pub neighbors: Vec<NeighborLr>,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
}

impl TreeLookup {
    pub fn new(query: Vec<f64>, mut neighbors: Vec<NeighborLr>, delta: f64, sigma: f64) -> Result<Self> {
        for n in &mut neighbors {
            n.similarity = kernel_similarity(&query, &n.embedding, delta);
        }
        let pairs: Vec<(f64, f64)> = neighbors.iter().map(|n| (n.similarity, n.lr)).collect();
        let alpha = blend_lr(&pairs, sigma)?;
        Ok(Self {
            query,
            neighbors,
            alpha,
            delta,
            sigma,
        })
    }

    fn denom(&self) -> f64 {
        self.neighbors.iter().map(|n| n.similarity).sum::<f64>() + self.sigma
    }

    /// `d alpha / d s_k = (lr_k - alpha) / (S + sigma)`
    fn d_similarity(&self, n: &NeighborLr) -> f64 {
        (n.lr - self.alpha) / self.denom()
    }

    /// Derivative of the blended rate w.r.t. the query embedding.
    pub fn grad_query(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.query.len()];
        for n in &self.neighbors {
            let c = -2.0 * self.delta * n.similarity * self.d_similarity(n);
            for ((gi, q), e) in g.iter_mut().zip(&self.query).zip(&n.embedding) {
                *gi += c * (q - e);
            }
        }
        g
    }

    /// Derivatives of the blended rate w.r.t. each neighbor's embedding and
    /// stored rate, scaled by `scale`.
    pub fn grad_nodes(&self, scale: f64) -> Vec<NodeGrad> {
        let denom = self.denom();
        self.neighbors
            .iter()
            .map(|n| {
                let c = 2.0 * self.delta * n.similarity * self.d_similarity(n) * scale;
                NodeGrad {
                    id: n.id,
                    embedding: self.query.iter().zip(&n.embedding).map(|(q, e)| c * (q - e)).collect(),
                    lr: scale * n.similarity / denom,
                }
            })
            .collect()
    }
}
