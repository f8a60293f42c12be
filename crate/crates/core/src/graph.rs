//! Node- and edge-weighted undirected graphs, their Laplacians, and the
//! node-weighted norms every stability bound in this crate is measured in.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Dim, Matrix, Storage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge weights below this value are dropped at construction.
pub const EDGE_NOISE_FLOOR: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub enum GraphLabels {
    /// One class index per node.
    NodeClasses(Vec<usize>),
    /// A single real-valued target for the whole graph.
    GraphTarget(f64),
}

/// Undirected graph with positive node weights `mu` and a dense symmetric
/// weight matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    ids: Vec<String>,
    mu: DVector<f64>,
    weights: DMatrix<f64>,
    features: Option<DMatrix<f64>>,
    labels: Option<GraphLabels>,
}

impl WeightedGraph {
    pub fn new(mu: DVector<f64>, weights: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::with_ids(ids, mu, weights)
    }

    pub fn with_ids(ids: Vec<String>, mu: DVector<f64>, mut weights: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if weights.nrows() != n || weights.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: weights.nrows().max(weights.ncols()),
            });
        }
        if ids.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: ids.len(),
            });
        }
        for (i, &m) in mu.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NonPositiveNodeWeight {
                    node: ids[i].clone(),
                    weight: m,
                });
            }
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 || (i == j && w != 0.0) {
                    return Err(Error::InvalidEdgeWeight {
                        u: ids[i].clone(),
                        v: ids[j].clone(),
                        weight: w,
                    });
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (weights[(i, j)], weights[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Asymmetric(i, j));
                }
                let w = if a < EDGE_NOISE_FLOOR { 0.0 } else { 0.5 * (a + b) };
                weights[(i, j)] = w;
                weights[(j, i)] = w;
            }
        }
        Ok(Self {
            ids,
            mu,
            weights,
            features: None,
            labels: None,
        })
    }

    /// Graph with unit node weights.
    pub fn unweighted_nodes(weights: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::from_element(weights.nrows(), 1.0), weights)
    }

    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: features.nrows(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: GraphLabels) -> Result<Self> {
        if let GraphLabels::NodeClasses(c) = &labels {
            if c.len() != self.n() {
                return Err(Error::Dimension {
                    expected: self.n(),
                    got: c.len(),
                });
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn features(&self) -> Option<&DMatrix<f64>> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&GraphLabels> {
        self.labels.as_ref()
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        match &self.labels {
            Some(GraphLabels::NodeClasses(c)) => Some(c),
            _ => None,
        }
    }

    /// μ(G), the sum of all node weights.
    pub fn total_weight(&self) -> f64 {
        self.mu.sum()
    }

    pub fn degrees(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.weights.row_iter().map(|r| r.sum()))
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .map(|i| ((i + 1)..n).filter(|&j| self.weights[(i, j)] > 0.0).count())
            .sum()
    }

    /// Δ = M⁻¹(D − W).
    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian_of(&self.weights, &self.mu)
    }

    pub fn norm_context(&self) -> WeightedNormContext {
        WeightedNormContext::new(self.mu.clone())
    }

    /// Same graph with the last `labels`/`features` removed and weights replaced.
    pub fn with_weights(&self, weights: DMatrix<f64>) -> Result<Self> {
        let mut g = Self::with_ids(self.ids.clone(), self.mu.clone(), weights)?;
        g.features = self.features.clone();
        g.labels = self.labels.clone();
        Ok(g)
    }

    pub fn to_document(&self) -> GraphDocument {
        let classes = self.class_labels();
        let nodes = (0..self.n())
            .map(|i| NodeRecord {
                id: self.ids[i].clone(),
                mu: Some(self.mu[i]),
                features: self
                    .features
                    .as_ref()
                    .map(|f| f.row(i).iter().copied().collect()),
                label: classes.map(|c| serde_json::Value::from(c[i] as u64)),
            })
            .collect();
        let n = self.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.weights[(i, j)];
                if w > 0.0 {
                    edges.push(EdgeRecord {
                        u: self.ids[i].clone(),
                        v: self.ids[j].clone(),
                        w,
                    });
                }
            }
        }
        let target = match self.labels {
            Some(GraphLabels::GraphTarget(t)) => Some(t),
            _ => None,
        };
        GraphDocument {
            nodes,
            edges,
            target,
        }
    }
}

/// Laplacian M⁻¹(D − W) of an arbitrary symmetric weight matrix.
pub fn laplacian_of(weights: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let n = mu.len();
    let mut lap = -weights.clone();
    for i in 0..n {
        let d: f64 = weights.row(i).sum();
        lap[(i, i)] += d;
    }
    for i in 0..n {
        let inv = 1.0 / mu[i];
        lap.row_mut(i).scale_mut(inv);
    }
    lap
}

/// The inner product ⟨x, y⟩_μ = Σ_i μ_i x_i y_i, applied column-wise to
/// feature matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedNormContext {
    mu: DVector<f64>,
    sqrt_mu: DVector<f64>,
}

impl WeightedNormContext {
    pub fn new(mu: DVector<f64>) -> Self {
        let sqrt_mu = mu.map(f64::sqrt);
        Self { mu, sqrt_mu }
    }

    pub fn unit(n: usize) -> Self {
        Self::new(DVector::from_element(n, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sqrt_mu(&self) -> &DVector<f64> {
        &self.sqrt_mu
    }

    /// √(Σ_j Σ_i |x_ij|² μ_i).
    pub fn norm<C: Dim, S: Storage<f64, nalgebra::Dyn, C>>(
        &self,
        x: &Matrix<f64, nalgebra::Dyn, C, S>,
    ) -> Result<f64> {
        if x.nrows() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.nrows(),
            });
        }
        let mut acc = 0.0;
        for (i, row) in x.row_iter().enumerate() {
            acc += self.mu[i] * row.norm_squared();
        }
        Ok(acc.sqrt())
    }

    /// M^{1/2} X.
    pub fn to_euclidean(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.sqrt_mu[i];
        }
        y
    }

    /// M^{-1/2} X.
    pub fn from_euclidean(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row /= self.sqrt_mu[i];
        }
        y
    }
}

/// Operator norm of `a` as a map from the `ctx_in`-weighted space to the
/// `ctx_out`-weighted space: the largest singular value of
/// M_out^{1/2} A M_in^{-1/2}.
pub fn weighted_operator_norm(
    a: &DMatrix<f64>,
    ctx_out: &WeightedNormContext,
    ctx_in: &WeightedNormContext,
) -> Result<f64> {
    if a.nrows() != ctx_out.dim() {
        return Err(Error::Dimension {
            expected: ctx_out.dim(),
            got: a.nrows(),
        });
    }
    if a.ncols() != ctx_in.dim() {
        return Err(Error::Dimension {
            expected: ctx_in.dim(),
            got: a.ncols(),
        });
    }
    let mut b = a.clone();
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            b[(i, j)] *= ctx_out.sqrt_mu[i] / ctx_in.sqrt_mu[j];
        }
    }
    Ok(spectral_norm(&b))
}

/// Largest singular value in the Euclidean geometry.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EdgeRecord {
    pub u: String,
    pub v: String,
    pub w: f64,
}

/// On-disk graph description.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphDocument {
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl GraphDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Whitespace-separated `u v w` lines; `w` defaults to 1. Lines starting
    /// with `#` are skipped. Nodes appear in order of first mention.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut nodes: Vec<NodeRecord> = Vec::new();
        let mut seen: HashMap<String, ()> = HashMap::new();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(Error::Parse(format!(
                    "line {}: expected `u v [w]`",
                    lineno + 1
                )));
            }
            let w = match parts.get(2) {
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
                None => 1.0,
            };
            for id in &parts[..2] {
                if seen.insert(id.to_string(), ()).is_none() {
                    nodes.push(NodeRecord {
                        id: id.to_string(),
                        mu: None,
                        features: None,
                        label: None,
                    });
                }
            }
            edges.push(EdgeRecord {
                u: parts[0].to_string(),
                v: parts[1].to_string(),
                w,
            });
        }
        Ok(Self {
            nodes,
            edges,
            target: None,
        })
    }

    /// Parses JSON when the text looks like a JSON object, an edge list otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_edge_list(text)
        }
    }
}

/// Builds a validated [`WeightedGraph`] from a document.
pub fn load_graph(doc: &GraphDocument) -> Result<WeightedGraph> {
    let n = doc.nodes.len();
    let mut index = HashMap::with_capacity(n);
    for (i, node) in doc.nodes.iter().enumerate() {
        if index.insert(node.id.clone(), i).is_some() {
            return Err(Error::Parse(format!("duplicate node id `{}`", node.id)));
        }
    }
    let mut mu = DVector::from_element(n, 1.0);
    for (i, node) in doc.nodes.iter().enumerate() {
        if let Some(m) = node.mu {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NonPositiveNodeWeight {
                    node: node.id.clone(),
                    weight: m,
                });
            }
            mu[i] = m;
        }
    }
    let mut weights = DMatrix::zeros(n, n);
    let mut set = vec![false; n * n];
    for e in &doc.edges {
        let u = *index
            .get(&e.u)
            .ok_or_else(|| Error::UnknownNode(e.u.clone()))?;
        let v = *index
            .get(&e.v)
            .ok_or_else(|| Error::UnknownNode(e.v.clone()))?;
        if u == v {
            return Err(Error::Parse(format!("self-loop at `{}`", e.u)));
        }
        if !e.w.is_finite() || e.w < 0.0 {
            return Err(Error::InvalidEdgeWeight {
                u: e.u.clone(),
                v: e.v.clone(),
                weight: e.w,
            });
        }
        if set[u * n + v] {
            let first = weights[(u, v)];
            if first != e.w {
                return Err(Error::ConflictingEdge {
                    u: e.u.clone(),
                    v: e.v.clone(),
                    first,
                    second: e.w,
                });
            }
            continue;
        }
        set[u * n + v] = true;
        set[v * n + u] = true;
        weights[(u, v)] = e.w;
        weights[(v, u)] = e.w;
    }
    let ids = doc.nodes.iter().map(|n| n.id.clone()).collect();
    let mut g = WeightedGraph::with_ids(ids, mu, weights)?;

    let with_features: Vec<&Vec<f64>> = doc.nodes.iter().filter_map(|n| n.features.as_ref()).collect();
    if !with_features.is_empty() {
        if with_features.len() != n {
            return Err(Error::Parse("features must be given for all nodes or none".into()));
        }
        let f = with_features[0].len();
        if with_features.iter().any(|r| r.len() != f) {
            return Err(Error::Parse("feature rows differ in length".into()));
        }
        let x = DMatrix::from_fn(n, f, |i, j| with_features[i][j]);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite feature value".into()));
        }
        g = g.with_features(x)?;
    }

    let labels: Vec<&serde_json::Value> = doc.nodes.iter().filter_map(|n| n.label.as_ref()).collect();
    if !labels.is_empty() {
        if labels.len() != n {
            return Err(Error::Parse("labels must be given for all nodes or none".into()));
        }
        let classes = labels
            .iter()
            .map(|v| {
                v.as_u64()
                    .map(|c| c as usize)
                    .ok_or_else(|| Error::Parse(format!("node label {v} is not a class index")))
            })
            .collect::<Result<Vec<_>>>()?;
        g = g.with_labels(GraphLabels::NodeClasses(classes))?;
    } else if let Some(t) = doc.target {
        g = g.with_labels(GraphLabels::GraphTarget(t))?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn doc(text: &str) -> GraphDocument {
        GraphDocument::from_json(text).unwrap()
    }

    #[test]
    fn two_node_document() {
        let g = load_graph(&doc(
            r#"{"nodes":[{"id":"a"},{"id":"b"}],"edges":[{"u":"a","v":"b","w":1.0}]}"#,
        ))
        .unwrap();
        assert_eq!(g.weights(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(g.mu(), &DVector::from_element(2, 1.0));
    }

    #[test]
    fn zero_node_weight_is_rejected() {
        let err = load_graph(&doc(
            r#"{"nodes":[{"id":"a"},{"id":"b","mu":0.0}],"edges":[]}"#,
        ))
        .unwrap_err();
        assert!(err.to_string().contains("non-positive node weight"));
    }

    #[test]
    fn path_degrees() {
        let g = load_graph(&doc(
            r#"{"nodes":[{"id":"a"},{"id":"b"},{"id":"c"}],
                "edges":[{"u":"a","v":"b","w":2},{"u":"b","v":"c","w":3}]}"#,
        ))
        .unwrap();
        assert_eq!(g.degrees().as_slice(), &[2.0, 5.0, 3.0]);
    }

    #[test]
    fn conflicting_duplicate_edge() {
        let err = load_graph(&doc(
            r#"{"nodes":[{"id":"a"},{"id":"b"}],
                "edges":[{"u":"a","v":"b","w":1},{"u":"b","v":"a","w":2}]}"#,
        ))
        .unwrap_err();
        assert!(matches!(err, Error::ConflictingEdge { .. }));
        // Consistent duplicates are fine.
        load_graph(&doc(
            r#"{"nodes":[{"id":"a"},{"id":"b"}],
                "edges":[{"u":"a","v":"b","w":1},{"u":"b","v":"a","w":1}]}"#,
        ))
        .unwrap();
    }

    #[test]
    fn unknown_node_and_bad_json() {
        assert!(matches!(
            load_graph(&doc(r#"{"nodes":[{"id":"a"}],"edges":[{"u":"a","v":"z","w":1}]}"#)),
            Err(Error::UnknownNode(_))
        ));
        assert!(matches!(GraphDocument::from_json("{nodes"), Err(Error::Parse(_))));
    }

    #[test]
    fn edge_list_text() {
        let d = GraphDocument::parse("# path\na b 2\nb c 3\nc d\n").unwrap();
        let g = load_graph(&d).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.weights()[(2, 3)], 1.0);
        assert_eq!(g.total_weight(), 4.0);
    }

    #[test]
    fn features_and_labels_roundtrip() {
        let g = load_graph(&doc(
            r#"{"nodes":[{"id":"a","mu":2,"features":[1,0],"label":1},
                         {"id":"b","features":[0,1],"label":0}],
                "edges":[{"u":"a","v":"b","w":0.5}]}"#,
        ))
        .unwrap();
        assert_eq!(g.class_labels(), Some(&[1usize, 0][..]));
        let again = load_graph(&g.to_document()).unwrap();
        assert_eq!(again.weights(), g.weights());
        assert_eq!(again.features(), g.features());
        assert_eq!(again.mu(), g.mu());
    }

    #[test]
    fn noise_floor_edges_are_dropped() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1e-16, 1e-16, 0.0]);
        let g = WeightedGraph::unweighted_nodes(w).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(WeightedGraph::unweighted_nodes(w), Err(Error::Asymmetric(0, 1))));
    }

    #[test]
    fn laplacian_examples() {
        let g = WeightedGraph::unweighted_nodes(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(g.laplacian(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let empty = WeightedGraph::unweighted_nodes(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(empty.laplacian(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn weighted_laplacian_is_self_adjoint() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.5, 2.0, 0.0, 1.0, 0.5, 1.0, 0.0]);
        let g = WeightedGraph::new(DVector::from_row_slice(&[1.0, 3.0, 0.5]), w).unwrap();
        let lap = g.laplacian();
        let m = DMatrix::from_diagonal(g.mu());
        let ml = &m * &lap;
        assert_abs_diff_eq!(ml.clone(), ml.transpose(), epsilon = 1e-14);
        for row in lap.row_iter() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn vector_norm_examples() {
        let ctx = WeightedNormContext::unit(2);
        assert_eq!(ctx.norm(&DVector::from_row_slice(&[1.0, 0.0])).unwrap(), 1.0);
        let ctx = WeightedNormContext::new(DVector::from_row_slice(&[2.0, 3.0]));
        assert_abs_diff_eq!(
            ctx.norm(&DVector::from_row_slice(&[1.0, 1.0])).unwrap(),
            5f64.sqrt(),
            epsilon = 1e-15
        );
        let ctx = WeightedNormContext::new(DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]));
        assert_abs_diff_eq!(
            ctx.norm(&DVector::from_element(4, 1.0)).unwrap(),
            10f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(matches!(
            ctx.norm(&DVector::from_element(3, 1.0)),
            Err(Error::Dimension { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn identity_has_unit_operator_norm() {
        let ctx = WeightedNormContext::new(DVector::from_row_slice(&[0.3, 2.0, 7.0]));
        let n = weighted_operator_norm(&DMatrix::identity(3, 3), &ctx, &ctx).unwrap();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-14);
    }
}
