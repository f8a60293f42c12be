//! Desk-scale experiments: the clique-expansion node-classification task and
//! the hydrogen-collapse regression task.

pub mod clique;
pub mod collapse;
pub mod molecule;
pub mod synth;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Optimizer, TrainConfig};

pub use clique::{clique_expand, expand_split, run_clique_experiment, CliqueReport, CliqueRow, Wiring};
pub use collapse::{run_collapse_experiment, CollapseReport, DistanceRow, MaeRow};
pub use molecule::{
    generate_molecule, generate_molecules, molecule_collapse, molecule_deflect, molecule_target, MoleculeLikeGraph,
    MoleculeParams,
};
pub use synth::{sbm, synth_two_scale_family, SbmParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clique,
    Collapse,
}

/// Shape of one model in an experiment. The baseline ignores `a`, `K` and `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub layers: usize,
    pub hidden: usize,
    pub a: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub z: f64,
    pub c_nf: Option<f64>,
    pub head_hidden: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeSplit {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Graph document replacing the synthetic block model (clique only).
    pub source: Option<String>,
    pub resolvnet: ModelHyper,
    pub baseline: ModelHyper,
    pub k_values: Vec<usize>,
    pub t_values: Vec<f64>,
    pub train: TrainConfig,
    pub baseline_train: TrainConfig,
    pub wiring: Wiring,
    pub sbm: SbmParams,
    pub molecules: MoleculeParams,
    pub split: MoleculeSplit,
    /// Clique runs use seeds `seed, seed + 1, ..., seed + repeats − 1`.
    pub repeats: usize,
    pub seed: u64,
    pub out: Option<String>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Clique => {
                let train = TrainConfig {
                    max_epochs: 2000,
                    ..TrainConfig::default()
                };
                Self {
                    experiment: kind,
                    source: None,
                    resolvnet: ModelHyper {
                        layers: 1,
                        hidden: 32,
                        a: 0,
                        k_max: 1,
                        z: -0.1,
                        c_nf: None,
                        head_hidden: None,
                    },
                    baseline: ModelHyper {
                        layers: 2,
                        hidden: 32,
                        a: 1,
                        k_max: 1,
                        z: -1.0,
                        c_nf: None,
                        head_hidden: None,
                    },
                    k_values: vec![1, 8],
                    t_values: vec![0.0],
                    baseline_train: train.clone(),
                    train,
                    wiring: Wiring::Representative,
                    sbm: SbmParams::default(),
                    molecules: MoleculeParams::default(),
                    split: MoleculeSplit {
                        train: 300,
                        val: 50,
                        test: 100,
                    },
                    repeats: 5,
                    seed: 0,
                    out: None,
                }
            }
            ExperimentKind::Collapse => {
                let train = TrainConfig {
                    learning_rate: 0.01,
                    max_epochs: 1000,
                    patience: 1000,
                    weight_decay: 0.0,
                    dropout_p: 0.0,
                    seed: 0,
                    optimizer: Optimizer::adam(),
                };
                let model = ModelHyper {
                    layers: 2,
                    hidden: 32,
                    a: 1,
                    k_max: 1,
                    z: -1.0,
                    c_nf: None,
                    head_hidden: Some(32),
                };
                Self {
                    experiment: kind,
                    resolvnet: model.clone(),
                    baseline: model,
                    t_values: vec![0.0, 0.5, 0.9, 0.99],
                    baseline_train: train.clone(),
                    train,
                    repeats: 1,
                    ..Self::defaults(ExperimentKind::Clique)
                }
            }
        }
    }

    /// Parses a JSON config; absent fields take the defaults of the named
    /// experiment.
    pub fn from_json(text: &str) -> Result<Self> {
        let over: Value = serde_json::from_str(text)?;
        let kind: ExperimentKind = serde_json::from_value(
            over.get("experiment")
                .cloned()
                .ok_or_else(|| Error::Config("missing `experiment`".into()))?,
        )?;
        let mut base = serde_json::to_value(Self::defaults(kind))?;
        merge(&mut base, over);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.baseline_train.validate()?;
        for h in [&self.resolvnet, &self.baseline] {
            if h.layers == 0 || h.hidden == 0 || h.a > h.k_max || !(h.z < 0.0) {
                return Err(Error::Config(format!("invalid model shape {h:?}")));
            }
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        match self.experiment {
            ExperimentKind::Clique => {
                self.sbm.validate()?;
                if self.k_values.is_empty() || self.k_values.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("k_values must be non-empty and strictly increasing".into()));
                }
                if self.k_values[0] == 0 {
                    return Err(Error::Config("expansion factors start at 1".into()));
                }
            }
            ExperimentKind::Collapse => {
                self.molecules.validate()?;
                let t = &self.t_values;
                if t.is_empty() || t.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Config("t_values must be non-empty and strictly increasing".into()));
                }
                if t.iter().any(|&x| !(0.0..1.0).contains(&x)) {
                    return Err(Error::Deflection(*t.iter().find(|&&x| !(0.0..1.0).contains(&x)).unwrap()));
                }
                let s = &self.split;
                if s.train == 0 || s.val == 0 || s.test == 0 {
                    return Err(Error::Config("molecule splits must be non-empty".into()));
                }
            }
        }
        Ok(())
    }
}
