#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resolvnet::model::{Mode, ModelSpec, ResolvNetModel};
use resolvnet::{decompose, WeightedGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random connected-ish graph with random node weights.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> WeightedGraph {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < 0.5 || j == i + 1 {
                let x = rng.random_range(0.1..2.0);
                w[(i, j)] = x;
                w[(j, i)] = x;
            }
        }
    }
    let mu = DVector::from_fn(n, |_, _| rng.random_range(0.3..3.0));
    WeightedGraph::new(mu, w).unwrap()
}

/// Random blocks joined by regular edges; intra-block weights are `s` times a
/// random factor in [1, 2).
pub fn random_two_scale(rng: &mut ChaCha8Rng, n: usize, s: f64, unit_mu: bool) -> (WeightedGraph, f64) {
    let blocks = rng.random_range(1..=n.min(4));
    let block: Vec<usize> = (0..n).map(|i| if i < blocks { i } else { rng.random_range(0..blocks) }).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let x = if block[i] == block[j] {
                if rng.random::<f64>() < 0.7 {
                    s * rng.random_range(1.0..2.0)
                } else {
                    0.0
                }
            } else if rng.random::<f64>() < 0.4 {
                rng.random_range(0.1..1.0)
            } else {
                0.0
            };
            w[(i, j)] = x;
            w[(j, i)] = x;
        }
    }
    let mu = if unit_mu {
        DVector::from_element(n, 1.0)
    } else {
        DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0))
    };
    (WeightedGraph::new(mu, w).unwrap(), s / 2.0)
}

pub fn random_coarsening(rng: &mut ChaCha8Rng, n: usize) -> resolvnet::Coarsening {
    let (g, tau) = random_two_scale(rng, n, 50.0, false);
    resolvnet::coarsen(&decompose(&g, tau).unwrap()).unwrap()
}

pub fn random_model(
    rng: &mut ChaCha8Rng,
    f_in: usize,
    layers: usize,
    a: usize,
    mode: Mode,
    head_hidden: Option<usize>,
) -> ResolvNetModel {
    let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=4)).collect();
    let spec = ModelSpec {
        input_dim: f_in,
        layer_dims: widths,
        a,
        k_max: a + rng.random_range(0..=2),
        z: -rng.random_range(0.3..2.0),
        mode,
        head_hidden,
        output_dim: if mode == Mode::GraphRegression { 1 } else { 3 },
        c_nf: None,
    };
    let mut m = ResolvNetModel::init(&spec, rng.random()).unwrap();
    for l in &mut m.layers {
        for b in l.beta.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    if let Some(h) = &mut m.head.hidden {
        for b in h.bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    m
}
