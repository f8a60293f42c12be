//! Clique expansion and the node-classification comparison it drives.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::synth::sbm;
use super::{ExperimentConfig, ModelHyper};
use crate::baselines::gcn_operator;
use crate::error::{Error, Result};
use crate::graph::{GraphLabels, WeightedGraph};
use crate::report::CheckReport;
use crate::model::{
    accuracy, predict_classes, train, Dataset, Mode, ModelSpec, Prepared, ResolvNetModel, SparseShift, Split,
};

/// How an original edge (i, j) is attached after expansion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    /// Copy 0 of i to copy 0 of j.
    #[default]
    Representative,
    /// Every copy of i to every copy of j.
    AllPairs,
}

/// Replaces every node by a unit-weight k-clique of copies. Copy `c` of
/// node `i` has index `i·k + c` and inherits its node weight, features and
/// label.
pub fn clique_expand(g: &WeightedGraph, k: usize, wiring: Wiring) -> Result<WeightedGraph> {
    if k == 0 {
        return Err(Error::Config("expansion factor must be at least 1".into()));
    }
    if k == 1 {
        return Ok(g.clone());
    }
    let n = g.n();
    let big = n * k;
    let w = g.weights();
    let mut wk = DMatrix::zeros(big, big);
    for i in 0..n {
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    wk[(i * k + a, i * k + b)] = 1.0;
                }
            }
        }
        for j in 0..n {
            let x = w[(i, j)];
            if x == 0.0 {
                continue;
            }
            match wiring {
                Wiring::Representative => wk[(i * k, j * k)] = x,
                Wiring::AllPairs => {
                    for a in 0..k {
                        for b in 0..k {
                            wk[(i * k + a, j * k + b)] = x;
                        }
                    }
                }
            }
        }
    }
    let ids = (0..big).map(|p| format!("{}#{}", g.ids()[p / k], p % k)).collect();
    let mu = nalgebra::DVector::from_fn(big, |p, _| g.mu()[p / k]);
    let mut out = WeightedGraph::with_ids(ids, mu, wk)?;
    if let Some(x) = g.features() {
        out = out.with_features(DMatrix::from_fn(big, x.ncols(), |p, c| x[(p / k, c)]))?;
    }
    if let Some(l) = g.labels() {
        let l = match l {
            GraphLabels::NodeClasses(c) => GraphLabels::NodeClasses((0..big).map(|p| c[p / k]).collect()),
            GraphLabels::GraphTarget(t) => GraphLabels::GraphTarget(*t),
        };
        out = out.with_labels(l)?;
    }
    Ok(out)
}

/// Copies of a node land in the same part as the node.
pub fn expand_split(split: &Split, k: usize) -> Split {
    let ex = |v: &[usize]| v.iter().flat_map(|&i| (0..k).map(move |c| i * k + c)).collect();
    Split {
        train: ex(&split.train),
        val: ex(&split.val),
        test: ex(&split.test),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CliqueRow {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CliqueReport {
    pub rows: Vec<CliqueRow>,
}

pub const RESOLVNET: &str = "resolvnet";
pub const GCN: &str = "gcn";

impl CliqueReport {
    pub fn mean_accuracy(&self, model: &str, k: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.k == k)
            .map(|r| r.test_accuracy)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// Mean accuracy lost between the smallest and largest k, in points.
    pub fn drop_points(&self, model: &str) -> Option<f64> {
        let ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
        let lo = *ks.iter().min()?;
        let hi = *ks.iter().max()?;
        Some(100.0 * (self.mean_accuracy(model, lo)? - self.mean_accuracy(model, hi)?))
    }

    /// ResolvNet keeps its accuracy within 2 points across expansion while
    /// the GCN-propagation model loses at least 10.
    pub fn checks(&self) -> Vec<CheckReport> {
        let r = self.drop_points(RESOLVNET).unwrap_or(f64::NAN);
        let g = self.drop_points(GCN).unwrap_or(f64::NAN);
        vec![
            CheckReport {
                name: "resolvnet_accuracy_drop_points".into(),
                lhs: Some(r),
                rhs_bound: Some(2.0),
                scan: Vec::new(),
                slope: None,
                pass: r <= 2.0,
            },
            CheckReport {
                name: "gcn_accuracy_drop_points".into(),
                lhs: Some(10.0),
                rhs_bound: Some(g),
                scan: Vec::new(),
                slope: None,
                pass: g >= 10.0,
            },
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,k,seed,test_accuracy,best_epoch\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.model, r.k, r.seed, r.test_accuracy, r.best_epoch));
        }
        s
    }
}

fn node_spec(h: &ModelHyper, input_dim: usize, classes: usize, a: usize, k_max: usize) -> ModelSpec {
    ModelSpec {
        input_dim,
        layer_dims: vec![h.hidden; h.layers],
        a,
        k_max,
        z: h.z,
        mode: Mode::NodeClassification,
        head_hidden: h.head_hidden,
        output_dim: classes,
        c_nf: h.c_nf,
    }
}

fn fit_and_score(
    mut model: ResolvNetModel,
    prep: &Prepared,
    labels: &[usize],
    split: &Split,
    cfg: &crate::model::TrainConfig,
) -> Result<(f64, usize)> {
    let hist = train(
        &mut model,
        &Dataset::Nodes {
            graph: prep,
            labels,
            split,
        },
        cfg,
    )?;
    let pred = predict_classes(&model.forward(prep)?);
    Ok((accuracy(&pred, labels, &split.test), hist.best_epoch))
}

/// Trains ResolvNet and a GCN-propagation model on every expansion factor
/// and seed. `source`, when given, replaces the block-model graph; it needs
/// features and class labels.
pub fn run_clique_experiment(cfg: &ExperimentConfig, source: Option<&WeightedGraph>) -> Result<CliqueReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for r in 0..cfg.repeats {
        let seed = cfg.seed + r as u64;
        let (g, split) = match source {
            Some(g) => (
                g.clone(),
                Split::random(g.n(), cfg.sbm.train_frac, cfg.sbm.val_frac, seed),
            ),
            None => sbm(&cfg.sbm, seed)?,
        };
        let x0 = g
            .features()
            .ok_or_else(|| Error::Config("clique experiment needs node features".into()))?;
        let l0 = g
            .class_labels()
            .ok_or_else(|| Error::Config("clique experiment needs class labels".into()))?;
        let classes = l0.iter().max().map_or(0, |&c| c + 1);
        let f = x0.ncols();
        for &k in &cfg.k_values {
            let gk = clique_expand(&g, k, cfg.wiring)?;
            let sk = expand_split(&split, k);
            let x = gk.features().expect("copied features").clone();
            let labels = gk.class_labels().expect("copied labels").to_vec();

            let h = &cfg.resolvnet;
            let m = ResolvNetModel::init(&node_spec(h, f, classes, h.a, h.k_max), seed)?;
            let prep = m.prepare(&gk, &x)?;
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            let (acc, ep) = fit_and_score(m, &prep, &labels, &sk, &tc)?;
            rows.push(CliqueRow {
                model: RESOLVNET.into(),
                k,
                seed,
                test_accuracy: acc,
                best_epoch: ep,
            });

            let b = &cfg.baseline;
            let m = ResolvNetModel::init(&node_spec(b, f, classes, 1, 1), seed)?;
            let shift = SparseShift::from_dense(&gcn_operator(gk.weights()), gk.mu().clone())?;
            let prep = Prepared::new(Box::new(shift), x, &m.layers[0])?;
            let mut tc = cfg.baseline_train.clone();
            tc.seed = seed;
            let (acc, ep) = fit_and_score(m, &prep, &labels, &sk, &tc)?;
            rows.push(CliqueRow {
                model: GCN.into(),
                k,
                seed,
                test_accuracy: acc,
                best_epoch: ep,
            });
        }
    }
    rows.sort_by(|a, b| (&a.model, a.k, a.seed).cmp(&(&b.model, b.k, b.seed)));
    Ok(CliqueReport { rows })
}
