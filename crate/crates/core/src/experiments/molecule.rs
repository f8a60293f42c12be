//! Molecule-like point clouds with Coulomb edge weights.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphLabels, WeightedGraph};

/// One column per charge 0..=8.
pub const CHARGE_COLUMNS: usize = 9;
const HYDROGEN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MoleculeLikeGraph {
    pub positions: Vec<Vector3<f64>>,
    pub charges: Vec<f64>,
    pub features: DMatrix<f64>,
    pub target: f64,
}

fn one_hot(charges: &[f64]) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(charges.len(), CHARGE_COLUMNS);
    for (i, &z) in charges.iter().enumerate() {
        let col = z.round() as usize;
        if z.fract() != 0.0 || z < 1.0 || col >= CHARGE_COLUMNS {
            return Err(Error::Config(format!("unsupported charge {z}")));
        }
        x[(i, col)] = 1.0;
    }
    Ok(x)
}

impl MoleculeLikeGraph {
    /// Atoms with one-hot charge features.
    pub fn new(positions: Vec<Vector3<f64>>, charges: Vec<f64>, target: f64) -> Result<Self> {
        if positions.len() != charges.len() {
            return Err(Error::Dimension {
                expected: positions.len(),
                got: charges.len(),
            });
        }
        let features = one_hot(&charges)?;
        Ok(Self {
            positions,
            charges,
            features,
            target,
        })
    }

    pub fn n(&self) -> usize {
        self.charges.len()
    }

    pub fn is_heavy(&self, i: usize) -> bool {
        self.charges[i] > HYDROGEN
    }

    pub fn hydrogen_count(&self) -> usize {
        (0..self.n()).filter(|&i| !self.is_heavy(i)).count()
    }

    /// Z_iZ_j / |x_i − x_j| off the diagonal.
    pub fn coulomb_weights(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                self.charges[i] * self.charges[j] / (self.positions[i] - self.positions[j]).norm()
            }
        })
    }

    /// Graph with μ = Z, the stored features and the target.
    pub fn graph(&self) -> Result<WeightedGraph> {
        let mu = DVector::from_column_slice(&self.charges);
        WeightedGraph::new(mu, self.coulomb_weights())?
            .with_features(self.features.clone())?
            .with_labels(GraphLabels::GraphTarget(self.target))
    }

    /// For every atom, the heavy atom it belongs to: itself if heavy, the
    /// nearest heavy atom otherwise (lowest index on ties).
    pub fn owners(&self) -> Result<Vec<usize>> {
        let heavy: Vec<usize> = (0..self.n()).filter(|&i| self.is_heavy(i)).collect();
        if heavy.is_empty() {
            return Err(Error::NoHeavyAtoms);
        }
        Ok((0..self.n())
            .map(|i| {
                if self.is_heavy(i) {
                    return i;
                }
                let mut best = heavy[0];
                let mut best_d = f64::INFINITY;
                for &h in &heavy {
                    let d = (self.positions[i] - self.positions[h]).norm();
                    if d < best_d {
                        best = h;
                        best_d = d;
                    }
                }
                best
            })
            .collect())
    }

    /// Heavy-atom index of each atom's group, numbered by heavy-atom order.
    pub fn groups(&self) -> Result<Vec<usize>> {
        let owners = self.owners()?;
        let mut slot = vec![usize::MAX; self.n()];
        let mut next = 0;
        for (i, s) in slot.iter_mut().enumerate() {
            if self.is_heavy(i) {
                *s = next;
                next += 1;
            }
        }
        Ok(owners.iter().map(|&o| slot[o]).collect())
    }
}

/// Moves every hydrogen a fraction `t` of the way to its nearest heavy atom.
pub fn molecule_deflect(m: &MoleculeLikeGraph, t: f64) -> Result<MoleculeLikeGraph> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Deflection(t));
    }
    let owners = m.owners()?;
    let mut out = m.clone();
    for (i, &o) in owners.iter().enumerate() {
        if o != i {
            out.positions[i] = m.positions[i] + (m.positions[o] - m.positions[i]) * t;
        }
    }
    Ok(out)
}

/// Merges each heavy atom with its hydrogens. The merged node sits at the
/// heavy atom, carries the summed charge and the charge-weighted average of
/// the one-hot features.
pub fn molecule_collapse(m: &MoleculeLikeGraph) -> Result<MoleculeLikeGraph> {
    let groups = m.groups()?;
    let heavy: Vec<usize> = (0..m.n()).filter(|&i| m.is_heavy(i)).collect();
    let nc = heavy.len();
    let mut mu = vec![0.0; nc];
    let mut x = DMatrix::zeros(nc, m.features.ncols());
    for (i, &g) in groups.iter().enumerate() {
        mu[g] += m.charges[i];
        let row = m.features.row(i) * m.charges[i];
        let mut target = x.row_mut(g);
        target += row;
    }
    for (g, &w) in mu.iter().enumerate() {
        x.row_mut(g).unscale_mut(w);
    }
    Ok(MoleculeLikeGraph {
        positions: heavy.iter().map(|&h| m.positions[h]).collect(),
        charges: mu,
        features: x,
        target: m.target,
    })
}

/// Settings of the molecule generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoleculeParams {
    pub min_heavy: usize,
    pub max_heavy: usize,
    pub heavy_charges: Vec<f64>,
    pub max_hydrogens: usize,
    pub lattice_spacing: f64,
    pub jitter: f64,
    pub bond_length: f64,
    /// Standard deviation of noise added to the raw target.
    pub target_noise: f64,
}

impl Default for MoleculeParams {
    fn default() -> Self {
        Self {
            min_heavy: 3,
            max_heavy: 8,
            heavy_charges: vec![6.0, 7.0, 8.0],
            max_hydrogens: 3,
            lattice_spacing: 1.5,
            jitter: 0.1,
            bond_length: 0.6,
            target_noise: 0.01,
        }
    }
}

impl MoleculeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_heavy == 0 || self.min_heavy > self.max_heavy {
            return Err(Error::Config("heavy atom range must be non-empty and positive".into()));
        }
        if self.heavy_charges.is_empty() || self.heavy_charges.iter().any(|&z| z <= HYDROGEN) {
            return Err(Error::Config("heavy charges must exceed 1".into()));
        }
        if !(self.bond_length > 0.0) || !(self.lattice_spacing > 2.0 * self.jitter) {
            return Err(Error::Config("geometry would place atoms on top of each other".into()));
        }
        Ok(())
    }
}

/// Smooth function of the collapsed graph: a tenth of a percent of its
/// total Coulomb weight plus half the hydrogen count.
pub fn molecule_target(m: &MoleculeLikeGraph) -> Result<f64> {
    let c = molecule_collapse(m)?;
    Ok(0.01 * c.coulomb_weights().sum() / 2.0 + 0.5 * m.hydrogen_count() as f64)
}

const STEPS: [[i32; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// Heavy atoms on a jittered lattice grown by a random walk, hydrogens at
/// bond length in random directions around them.
pub fn generate_molecule(params: &MoleculeParams, rng: &mut ChaCha8Rng) -> Result<MoleculeLikeGraph> {
    params.validate()?;
    let nh = rng.random_range(params.min_heavy..=params.max_heavy);
    let mut sites: Vec<[i32; 3]> = vec![[0, 0, 0]];
    while sites.len() < nh {
        let base = sites[rng.random_range(0..sites.len())];
        let step = STEPS[rng.random_range(0..STEPS.len())];
        let p = [base[0] + step[0], base[1] + step[1], base[2] + step[2]];
        if !sites.contains(&p) {
            sites.push(p);
        }
    }
    let j = params.jitter;
    let mut positions: Vec<Vector3<f64>> = sites
        .iter()
        .map(|s| {
            Vector3::from_fn(|k, _| {
                let off = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
                s[k] as f64 * params.lattice_spacing + off
            })
        })
        .collect();
    let mut charges: Vec<f64> = (0..nh)
        .map(|_| params.heavy_charges[rng.random_range(0..params.heavy_charges.len())])
        .collect();
    for h in 0..nh {
        for _ in 0..rng.random_range(0..=params.max_hydrogens) {
            let v = loop {
                let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                if v.norm() > 1e-8 {
                    break v;
                }
            };
            positions.push(positions[h] + v.normalize() * params.bond_length);
            charges.push(HYDROGEN);
        }
    }
    let mut m = MoleculeLikeGraph::new(positions, charges, 0.0)?;
    let noise: f64 = rng.sample(StandardNormal);
    m.target = molecule_target(&m)? + params.target_noise * noise;
    Ok(m)
}

/// `count` molecules from one seed, with targets standardized to zero mean
/// and unit variance across the set.
pub fn generate_molecules(params: &MoleculeParams, count: usize, seed: u64) -> Result<Vec<MoleculeLikeGraph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ms = (0..count)
        .map(|_| generate_molecule(params, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    if count > 1 {
        let mean = ms.iter().map(|m| m.target).sum::<f64>() / count as f64;
        let var = ms.iter().map(|m| (m.target - mean).powi(2)).sum::<f64>() / count as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for m in &mut ms {
            m.target = (m.target - mean) / sd;
        }
    }
    Ok(ms)
}
