//! Two-scale splits of a graph, components of the high-scale part, and the
//! coarse graph they induce.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{laplacian_of, GraphDocument, GraphLabels, WeightedGraph, WeightedNormContext};
use crate::spectral;

#[derive(Clone, Debug)]
pub struct ScaleDecomposition {
    base: WeightedGraph,
    tau: Option<f64>,
    w_reg: DMatrix<f64>,
    w_high: DMatrix<f64>,
    delta_reg: DMatrix<f64>,
    delta_high: DMatrix<f64>,
    components: Vec<Vec<usize>>,
    lambda_max_reg: f64,
    lambda_1_high: Option<f64>,
}

/// Splits `g` by weight: edges with `w >= tau` form the high-scale part.
pub fn decompose(g: &WeightedGraph, tau: f64) -> Result<ScaleDecomposition> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("threshold must be positive, got {tau}")));
    }
    let w = g.weights();
    let high = w.map(|x| if x >= tau { x } else { 0.0 });
    let reg = w.map(|x| if x >= tau { 0.0 } else { x });
    from_parts(g, Some(tau), reg, high)
}

/// Splits `g` by a node partition: edges inside a block form the high-scale part.
pub fn decompose_by_partition(g: &WeightedGraph, block: &[usize]) -> Result<ScaleDecomposition> {
    let n = g.n();
    if block.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: block.len(),
        });
    }
    let w = g.weights();
    let high = DMatrix::from_fn(n, n, |i, j| if block[i] == block[j] { w[(i, j)] } else { 0.0 });
    let reg = w - &high;
    from_parts(g, None, reg, high)
}

fn from_parts(
    g: &WeightedGraph,
    tau: Option<f64>,
    w_reg: DMatrix<f64>,
    w_high: DMatrix<f64>,
) -> Result<ScaleDecomposition> {
    let mu = g.mu();
    let delta_reg = laplacian_of(&w_reg, mu);
    let delta_high = laplacian_of(&w_high, mu);
    let components = components_of(&w_high);
    let ctx = g.norm_context();
    let lambda_max_reg = spectral::lambda_max(&delta_reg, &ctx)?;
    let lambda_1_high = if w_high.iter().any(|&x| x > 0.0) {
        Some(spectral::lambda_1_nonzero(&delta_high, &components, mu)?)
    } else {
        None
    };
    Ok(ScaleDecomposition {
        base: g.clone(),
        tau,
        w_reg,
        w_high,
        delta_reg,
        delta_high,
        components,
        lambda_max_reg,
        lambda_1_high,
    })
}

impl ScaleDecomposition {
    pub fn base(&self) -> &WeightedGraph {
        &self.base
    }

    /// `None` when the split came from a node partition.
    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn w_reg(&self) -> &DMatrix<f64> {
        &self.w_reg
    }

    pub fn w_high(&self) -> &DMatrix<f64> {
        &self.w_high
    }

    pub fn delta_reg(&self) -> &DMatrix<f64> {
        &self.delta_reg
    }

    pub fn delta_high(&self) -> &DMatrix<f64> {
        &self.delta_high
    }

    pub fn lambda_max_reg(&self) -> f64 {
        self.lambda_max_reg
    }

    /// `None` when there are no high edges.
    pub fn lambda_1_high(&self) -> Option<f64> {
        self.lambda_1_high
    }

    pub fn has_high_part(&self) -> bool {
        self.lambda_1_high.is_some()
    }

    /// λ_max(Δ_reg) / λ₁(Δ_high). Values below one certify scale separation.
    pub fn separation_ratio(&self) -> Result<f64> {
        self.lambda_1_high
            .map(|l1| self.lambda_max_reg / l1)
            .ok_or(Error::NoHighScale)
    }

    /// Connected components of the high-scale graph, singletons included,
    /// ordered by smallest member.
    pub fn high_components(&self) -> &[Vec<usize>] {
        &self.components
    }

    /// Nodes with at least one incident high edge.
    pub fn high_attached(&self) -> Vec<bool> {
        self.w_high
            .row_iter()
            .map(|r| r.iter().any(|&x| x > 0.0))
            .collect()
    }

    /// The regular edges with no incident high edge at either end.
    pub fn excl_reg_weights(&self) -> DMatrix<f64> {
        let attached = self.high_attached();
        let n = self.base.n();
        DMatrix::from_fn(n, n, |i, j| {
            if attached[i] || attached[j] {
                0.0
            } else {
                self.w_reg[(i, j)]
            }
        })
    }

    pub fn excl_reg_graph(&self) -> Result<WeightedGraph> {
        WeightedGraph::with_ids(
            self.base.ids().to_vec(),
            self.base.mu().clone(),
            self.excl_reg_weights(),
        )
    }

    /// Same split with every high weight multiplied by `factor`.
    pub fn with_high_scaled(&self, factor: f64) -> Result<Self> {
        let w_high = &self.w_high * factor;
        let g = self.base.with_weights(&self.w_reg + &w_high)?;
        from_parts(&g, self.tau.map(|t| t * factor), self.w_reg.clone(), w_high)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn components_of(w_high: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = w_high.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if w_high[(i, j)] > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    // Keep the smaller index as root.
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = out.len();
            out.push(Vec::new());
        }
        out[slot[r]].push(i);
    }
    out
}

/// A decomposition together with its coarse graph and the maps between them.
#[derive(Clone, Debug)]
pub struct Coarsening {
    decomposition: ScaleDecomposition,
    membership: Vec<usize>,
    coarse: WeightedGraph,
}

pub fn coarsen(d: &ScaleDecomposition) -> Result<Coarsening> {
    let g = d.base();
    let n = g.n();
    let comps = d.high_components();
    let nc = comps.len();
    let mut membership = vec![0; n];
    for (r, c) in comps.iter().enumerate() {
        for &i in c {
            membership[i] = r;
        }
    }
    let mut mu_c = DVector::zeros(nc);
    for i in 0..n {
        mu_c[membership[i]] += g.mu()[i];
    }
    let mut w_c = DMatrix::zeros(nc, nc);
    let w = g.weights();
    for i in 0..n {
        for j in 0..n {
            let (r, p) = (membership[i], membership[j]);
            if r != p {
                w_c[(r, p)] += w[(i, j)];
            }
        }
    }
    let ids = comps.iter().map(|c| g.ids()[c[0]].clone()).collect();
    let mut coarse = WeightedGraph::with_ids(ids, mu_c, w_c)?;
    let mut c = Coarsening {
        decomposition: d.clone(),
        membership,
        coarse: coarse.clone(),
    };
    if let Some(x) = g.features() {
        coarse = coarse.with_features(c.project_down(x)?)?;
    }
    if let Some(GraphLabels::GraphTarget(t)) = g.labels() {
        coarse = coarse.with_labels(GraphLabels::GraphTarget(*t))?;
    }
    c.coarse = coarse;
    Ok(c)
}

impl Coarsening {
    pub fn decomposition(&self) -> &ScaleDecomposition {
        &self.decomposition
    }

    pub fn base(&self) -> &WeightedGraph {
        self.decomposition.base()
    }

    pub fn coarse(&self) -> &WeightedGraph {
        &self.coarse
    }

    pub fn components(&self) -> &[Vec<usize>] {
        self.decomposition.high_components()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn fine_context(&self) -> WeightedNormContext {
        self.base().norm_context()
    }

    pub fn coarse_context(&self) -> WeightedNormContext {
        self.coarse.norm_context()
    }

    /// J↓: μ-weighted average of rows over each component.
    pub fn project_down(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.base().n();
        if x.nrows() != n {
            return Err(Error::Dimension {
                expected: n,
                got: x.nrows(),
            });
        }
        let mu = self.base().mu();
        let mu_c = self.coarse.mu();
        let mut out = DMatrix::zeros(self.coarse.n(), x.ncols());
        for i in 0..n {
            let r = self.membership[i];
            let s = mu[i] / mu_c[r];
            for j in 0..x.ncols() {
                out[(r, j)] += s * x[(i, j)];
            }
        }
        Ok(out)
    }

    /// J↑: every node receives the row of its component.
    pub fn lift_up(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let nc = self.coarse.n();
        if x.nrows() != nc {
            return Err(Error::Dimension {
                expected: nc,
                got: x.nrows(),
            });
        }
        let n = self.base().n();
        Ok(DMatrix::from_fn(n, x.ncols(), |i, j| x[(self.membership[i], j)]))
    }

    pub fn down_matrix(&self) -> DMatrix<f64> {
        let n = self.base().n();
        let mu = self.base().mu();
        let mu_c = self.coarse.mu();
        let mut m = DMatrix::zeros(self.coarse.n(), n);
        for i in 0..n {
            let r = self.membership[i];
            m[(r, i)] = mu[i] / mu_c[r];
        }
        m
    }

    pub fn up_matrix(&self) -> DMatrix<f64> {
        let n = self.base().n();
        let mut m = DMatrix::zeros(n, self.coarse.n());
        for i in 0..n {
            m[(i, self.membership[i])] = 1.0;
        }
        m
    }

    /// P₀ = J↑J↓.
    pub fn zero_projection(&self) -> DMatrix<f64> {
        self.up_matrix() * self.down_matrix()
    }

    pub fn coarse_laplacian(&self) -> DMatrix<f64> {
        self.coarse.laplacian()
    }

    pub fn to_document(&self) -> CoarseningDocument {
        let ids = self.base().ids();
        CoarseningDocument {
            components: self
                .components()
                .iter()
                .map(|c| c.iter().map(|&i| ids[i].clone()).collect())
                .collect(),
            coarse_graph: self.coarse.to_document(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoarseningDocument {
    pub components: Vec<Vec<String>>,
    pub coarse_graph: GraphDocument,
}
