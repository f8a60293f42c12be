//! Seeded synthetic graphs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphLabels, WeightedGraph};
use crate::model::Split;

/// `n_clusters` cliques of weight `s`, chained into a unit-weight ring: the
/// last node of each cluster links to the first node of the next.
pub fn synth_two_scale_family(n_clusters: usize, cluster_size: usize, s: f64) -> Result<WeightedGraph> {
    if n_clusters == 0 || cluster_size == 0 || !(s > 0.0) {
        return Err(Error::Config(format!(
            "two-scale family needs positive parameters, got ({n_clusters}, {cluster_size}, {s})"
        )));
    }
    let n = n_clusters * cluster_size;
    let mut w = DMatrix::zeros(n, n);
    for c in 0..n_clusters {
        let base = c * cluster_size;
        for i in 0..cluster_size {
            for j in i + 1..cluster_size {
                w[(base + i, base + j)] = s;
                w[(base + j, base + i)] = s;
            }
        }
    }
    let ring_edges = match n_clusters {
        1 => 0,
        2 => 1,
        m => m,
    };
    for c in 0..ring_edges {
        let u = c * cluster_size + cluster_size - 1;
        let v = ((c + 1) % n_clusters) * cluster_size;
        w[(u, v)] = 1.0;
        w[(v, u)] = 1.0;
    }
    WeightedGraph::unweighted_nodes(w)
}

/// Stochastic block model with Gaussian class features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmParams {
    pub communities: usize,
    pub community_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Length of the class mean vectors; unit-variance noise is added.
    pub separation: f64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            communities: 4,
            community_size: 60,
            p_in: 0.2,
            p_out: 0.005,
            feature_dim: 5,
            separation: 1.0,
            train_frac: 0.6,
            val_frac: 0.2,
        }
    }
}

impl SbmParams {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_in, self.p_out];
        if self.communities < 2 || self.community_size == 0 || self.feature_dim == 0 {
            return Err(Error::Config("block model needs at least two non-empty communities".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("edge probabilities must lie in [0, 1]".into()));
        }
        if self.train_frac <= 0.0 || self.val_frac <= 0.0 || self.train_frac + self.val_frac >= 1.0 {
            return Err(Error::Config("split fractions must leave room for a test set".into()));
        }
        Ok(())
    }
}

fn gaussian_row(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// A labeled block-model graph with unit node weights and its seeded split.
pub fn sbm(params: &SbmParams, seed: u64) -> Result<(WeightedGraph, Split)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = params.communities;
    let n = c * params.community_size;
    let labels: Vec<usize> = (0..n).map(|i| i / params.community_size).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { params.p_in } else { params.p_out };
            if rng.random::<f64>() < p {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    let d = params.feature_dim;
    let means: Vec<DVector<f64>> = (0..c)
        .map(|_| {
            let m = gaussian_row(&mut rng, d);
            let norm = m.norm();
            m / norm * params.separation
        })
        .collect();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let row = &means[labels[i]] + gaussian_row(&mut rng, d);
        x.set_row(i, &row.transpose());
    }
    let g = WeightedGraph::unweighted_nodes(w)?
        .with_features(x)?
        .with_labels(GraphLabels::NodeClasses(labels))?;
    let split = Split::random(n, params.train_frac, params.val_frac, seed);
    Ok((g, split))
}
