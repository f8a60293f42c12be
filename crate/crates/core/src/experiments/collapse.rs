//! Hydrogen deflection versus collapse on molecule-like graphs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::molecule::{generate_molecules, molecule_collapse, molecule_deflect, MoleculeLikeGraph, CHARGE_COLUMNS};
use super::clique::{GCN, RESOLVNET};
use super::{ExperimentConfig, ModelHyper};
use crate::baselines::gcn_operator;
use crate::error::Result;
use crate::graph::WeightedGraph;
use crate::model::{aggregate, graph_mae, train, Dataset, Mode, ModelSpec, Prepared, ResolvNetModel, SparseShift};
use crate::multiscale::{coarsen, decompose_by_partition};
use crate::report::{CheckReport, ScanPoint};
use crate::stability::graph_consistency_check;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Resolvent,
    Gcn,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Resolvent => RESOLVNET,
            Kind::Gcn => GCN,
        }
    }
}

fn prepare(kind: Kind, model: &ResolvNetModel, g: &WeightedGraph) -> Result<Prepared> {
    let x = g.features().expect("molecule graphs carry features").clone();
    match kind {
        Kind::Resolvent => model.prepare(g, &x),
        Kind::Gcn => {
            let shift = SparseShift::from_dense(&gcn_operator(g.weights()), g.mu().clone())?;
            Prepared::new(Box::new(shift), x, &model.layers[0])
        }
    }
}

fn graph_features(kind: Kind, model: &ResolvNetModel, g: &WeightedGraph) -> Result<DMatrix<f64>> {
    let f = model.features(&prepare(kind, model, g)?)?;
    let psi = aggregate(&f, g.mu())?;
    Ok(DMatrix::from_column_slice(psi.len(), 1, psi.as_slice()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub model: String,
    pub t: f64,
    /// Mean over test molecules of ‖Ψ(fine) − Ψ(collapsed)‖ / ‖Ψ(collapsed)‖.
    pub relative_distance: f64,
    /// Test molecules whose graph-level consistency bound held, if checked.
    pub bound_holds: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub model: String,
    pub fine_mae: f64,
    pub collapsed_mae: f64,
}

impl MaeRow {
    pub fn ratio(&self) -> f64 {
        self.collapsed_mae / self.fine_mae
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub test_molecules: usize,
    pub distances: Vec<DistanceRow>,
    pub mae: Vec<MaeRow>,
}

impl CollapseReport {
    pub fn distance(&self, model: &str, t: f64) -> Option<f64> {
        self.distances
            .iter()
            .find(|r| r.model == model && r.t == t)
            .map(|r| r.relative_distance)
    }

    pub fn distances_of(&self, model: &str) -> Vec<(f64, f64)> {
        self.distances
            .iter()
            .filter(|r| r.model == model)
            .map(|r| (r.t, r.relative_distance))
            .collect()
    }

    pub fn mae_of(&self, model: &str) -> Option<&MaeRow> {
        self.mae.iter().find(|r| r.model == model)
    }

    /// The qualitative outcomes expected of the experiment.
    pub fn checks(&self) -> Vec<CheckReport> {
        let mut out = Vec::new();
        let res = self.distances_of(RESOLVNET);
        let (d5, d99) = (self.distance(RESOLVNET, 0.5), self.distance(RESOLVNET, 0.99));
        if let (Some(a), Some(b)) = (d5, d99) {
            out.push(CheckReport {
                name: "resolvnet_distance_t099_vs_t05".into(),
                lhs: Some(b),
                rhs_bound: Some(0.05 * a),
                scan: Vec::new(),
                slope: None,
                pass: b <= 0.05 * a,
            });
        }
        let gcn = self.distances_of(GCN);
        let monotone = gcn.windows(2).all(|w| w[1].1 >= 0.9 * w[0].1);
        out.push(CheckReport {
            name: "gcn_distance_non_decreasing".into(),
            lhs: gcn.first().map(|p| p.1),
            rhs_bound: gcn.last().map(|p| p.1),
            scan: gcn.iter().map(|&(t, d)| ScanPoint { s: t, gap: d }).collect(),
            slope: None,
            pass: gcn.len() >= 2 && monotone,
        });
        if let Some(m) = self.mae_of(RESOLVNET) {
            out.push(CheckReport {
                name: "resolvnet_collapsed_mae_ratio".into(),
                lhs: Some(m.ratio()),
                rhs_bound: Some(1.5),
                scan: Vec::new(),
                slope: None,
                pass: m.ratio() <= 1.5,
            });
        }
        if let Some(m) = self.mae_of(GCN) {
            out.push(CheckReport {
                name: "gcn_collapsed_mae_ratio".into(),
                lhs: Some(3.0),
                rhs_bound: Some(m.ratio()),
                scan: Vec::new(),
                slope: None,
                pass: m.ratio() >= 3.0,
            });
        }
        let held: Vec<usize> = self
            .distances
            .iter()
            .filter(|r| r.model == RESOLVNET)
            .filter_map(|r| r.bound_holds)
            .collect();
        if !held.is_empty() {
            let worst = *held.iter().min().unwrap_or(&0);
            out.push(CheckReport {
                name: "graph_consistency_bound_every_t".into(),
                lhs: Some(worst as f64),
                rhs_bound: Some(self.test_molecules as f64),
                scan: res.iter().map(|&(t, d)| ScanPoint { s: t, gap: d }).collect(),
                slope: None,
                pass: worst == self.test_molecules,
            });
        }
        out
    }

    pub fn distance_csv(&self) -> String {
        let mut s = String::from("model,t,relative_distance,bound_holds,test_molecules\n");
        for r in &self.distances {
            let b = r.bound_holds.map_or(String::new(), |b| b.to_string());
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.model, r.t, r.relative_distance, b, self.test_molecules
            ));
        }
        s
    }

    pub fn mae_csv(&self) -> String {
        let mut s = String::from("model,fine_mae,collapsed_mae,ratio\n");
        for r in &self.mae {
            s.push_str(&format!("{},{},{},{}\n", r.model, r.fine_mae, r.collapsed_mae, r.ratio()));
        }
        s
    }
}

fn graph_spec(h: &ModelHyper, a: usize, k_max: usize) -> ModelSpec {
    ModelSpec {
        input_dim: CHARGE_COLUMNS,
        layer_dims: vec![h.hidden; h.layers],
        a,
        k_max,
        z: h.z,
        mode: Mode::GraphRegression,
        head_hidden: h.head_hidden,
        output_dim: 1,
        c_nf: h.c_nf,
    }
}

struct Sets {
    train: Vec<MoleculeLikeGraph>,
    val: Vec<MoleculeLikeGraph>,
    test: Vec<MoleculeLikeGraph>,
}

fn labelled(kind: Kind, model: &ResolvNetModel, ms: &[MoleculeLikeGraph]) -> Result<Vec<(Prepared, f64)>> {
    ms.iter()
        .map(|m| Ok((prepare(kind, model, &m.graph()?)?, m.target)))
        .collect()
}

fn collapsed(ms: &[MoleculeLikeGraph]) -> Result<Vec<MoleculeLikeGraph>> {
    ms.iter().map(molecule_collapse).collect()
}

fn run_model(kind: Kind, cfg: &ExperimentConfig, sets: &Sets) -> Result<(MaeRow, Vec<DistanceRow>)> {
    let (h, tc) = match kind {
        Kind::Resolvent => (&cfg.resolvnet, &cfg.train),
        Kind::Gcn => (&cfg.baseline, &cfg.baseline_train),
    };
    let (a, k_max) = match kind {
        Kind::Resolvent => (h.a, h.k_max),
        Kind::Gcn => (1, 1),
    };
    let mut model = ResolvNetModel::init(&graph_spec(h, a, k_max), cfg.seed)?;
    let tr = labelled(kind, &model, &sets.train)?;
    let va = labelled(kind, &model, &sets.val)?;
    let mut tc = tc.clone();
    tc.seed = cfg.seed;
    train(&mut model, &Dataset::Graphs { train: &tr, val: &va }, &tc)?;

    let fine_mae = graph_mae(&model, &labelled(kind, &model, &sets.test)?)?;
    let coarse = collapsed(&sets.test)?;
    let collapsed_mae = graph_mae(&model, &labelled(kind, &model, &coarse)?)?;

    let coarse_feats = coarse
        .iter()
        .map(|c| graph_features(kind, &model, &c.graph()?))
        .collect::<Result<Vec<_>>>()?;
    let check_bound = kind == Kind::Resolvent && model.layers.iter().all(|l| l.a == 1) && model.c_nf.is_none();
    let mut rows = Vec::new();
    for &t in &cfg.t_values {
        let mut acc = 0.0;
        let mut holds = 0;
        for (m, fc) in sets.test.iter().zip(&coarse_feats) {
            let g = molecule_deflect(m, t)?.graph()?;
            let f = graph_features(kind, &model, &g)?;
            acc += (f - fc).norm() / fc.norm();
            if check_bound {
                let c = coarsen(&decompose_by_partition(&g, &m.groups()?)?)?;
                let x = g.features().expect("features").clone();
                holds += graph_consistency_check(&model, &c, &x)?.pass as usize;
            }
        }
        rows.push(DistanceRow {
            model: kind.name().into(),
            t,
            relative_distance: acc / sets.test.len() as f64,
            bound_holds: check_bound.then_some(holds),
        });
    }
    Ok((
        MaeRow {
            model: kind.name().into(),
            fine_mae,
            collapsed_mae,
        },
        rows,
    ))
}

/// Trains both models on undeflected molecules, then compares graph-level
/// features of deflected molecules with those of their collapsed versions
/// and measures how well predictions transfer to the collapsed graphs.
pub fn run_collapse_experiment(cfg: &ExperimentConfig) -> Result<CollapseReport> {
    cfg.validate()?;
    let s = &cfg.split;
    let all = generate_molecules(&cfg.molecules, s.train + s.val + s.test, cfg.seed)?;
    let sets = Sets {
        train: all[..s.train].to_vec(),
        val: all[s.train..s.train + s.val].to_vec(),
        test: all[s.train + s.val..].to_vec(),
    };
    let mut report = CollapseReport {
        test_molecules: sets.test.len(),
        ..Default::default()
    };
    for kind in [Kind::Gcn, Kind::Resolvent] {
        let (mae, rows) = run_model(kind, cfg, &sets)?;
        report.mae.push(mae);
        report.distances.extend(rows);
    }
    Ok(report)
}
