//! Standard graph shift operators, their limits under scale separation, and
//! the scale-blindness of plain message passing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spectral_norm, WeightedGraph};
use crate::multiscale::{coarsen, decompose_by_partition, ScaleDecomposition};
use crate::report::{loglog_slope, CheckReport, ScanPoint};
use crate::spectral::{lambda_max, resolvent_difference};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftOperatorKind {
    GcnRenormalized,
    SymmetricNormalizedLaplacian,
    SpectrallyNormalizedLaplacian,
}

impl ShiftOperatorKind {
    pub const ALL: [ShiftOperatorKind; 3] = [
        ShiftOperatorKind::GcnRenormalized,
        ShiftOperatorKind::SymmetricNormalizedLaplacian,
        ShiftOperatorKind::SpectrallyNormalizedLaplacian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftOperatorKind::GcnRenormalized => "gcn",
            ShiftOperatorKind::SymmetricNormalizedLaplacian => "symmetric",
            ShiftOperatorKind::SpectrallyNormalizedLaplacian => "spectral",
        }
    }

    /// Slope a scan must reach to pass.
    pub fn slope_threshold(self) -> f64 {
        match self {
            ShiftOperatorKind::SpectrallyNormalizedLaplacian => -0.9,
            _ => -0.45,
        }
    }
}

fn inv_sqrt(d: &DVector<f64>) -> DVector<f64> {
    d.map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 })
}

/// diag(l) · W · diag(r).
fn scale(w: &DMatrix<f64>, l: &DVector<f64>, r: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| l[i] * w[(i, j)] * r[j])
}

fn degrees(w: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(w.nrows(), w.row_iter().map(|r| r.sum()))
}

/// D̃^{-1/2}(W + Id)D̃^{-1/2} with D̃ = D + Id.
pub fn gcn_operator(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let wt = w + DMatrix::identity(n, n);
    let s = inv_sqrt(&degrees(&wt));
    scale(&wt, &s, &s)
}

pub fn shift_operator(kind: ShiftOperatorKind, g: &WeightedGraph) -> Result<DMatrix<f64>> {
    let w = g.weights();
    let n = g.n();
    match kind {
        ShiftOperatorKind::GcnRenormalized => Ok(gcn_operator(w)),
        ShiftOperatorKind::SymmetricNormalizedLaplacian => {
            let d = degrees(w);
            if let Some(i) = d.iter().position(|&x| x <= 0.0) {
                return Err(Error::IsolatedNode(i));
            }
            let s = inv_sqrt(&d);
            Ok(DMatrix::identity(n, n) - scale(w, &s, &s))
        }
        ShiftOperatorKind::SpectrallyNormalizedLaplacian => {
            let lap = g.laplacian();
            let l = lambda_max(&lap, &g.norm_context())?;
            Ok(if l > 0.0 { lap / l } else { lap })
        }
    }
}

pub fn limit_operator(kind: ShiftOperatorKind, d: &ScaleDecomposition) -> Result<DMatrix<f64>> {
    if !d.has_high_part() {
        return Err(Error::NoHighScale);
    }
    let n = d.base().n();
    let w_high = d.w_high();
    let s_high = inv_sqrt(&degrees(w_high));
    let high = scale(w_high, &s_high, &s_high);
    let excl = d.excl_reg_weights();
    let attached = d.high_attached();
    match kind {
        ShiftOperatorKind::GcnRenormalized => {
            let mut wt = excl.clone();
            for i in 0..n {
                if !attached[i] {
                    wt[(i, i)] += 1.0;
                }
            }
            let dt = degrees(d.w_reg()).add_scalar(1.0);
            let s = inv_sqrt(&dt);
            Ok(high + scale(&wt, &s, &s))
        }
        ShiftOperatorKind::SymmetricNormalizedLaplacian => {
            let dr = degrees(d.w_reg());
            for i in 0..n {
                if !attached[i] && dr[i] <= 0.0 {
                    return Err(Error::IsolatedNode(i));
                }
            }
            let s = inv_sqrt(&dr);
            Ok(DMatrix::identity(n, n) - high - scale(&excl, &s, &s))
        }
        ShiftOperatorKind::SpectrallyNormalizedLaplacian => {
            let dh = d.delta_high();
            let l = lambda_max(dh, &d.base().norm_context())?;
            Ok(dh / l)
        }
    }
}

/// ‖shift − limit‖₂ in the Euclidean spectral norm.
pub fn limit_gap(kind: ShiftOperatorKind, d: &ScaleDecomposition) -> Result<f64> {
    let a = shift_operator(kind, d.base())?;
    Ok(spectral_norm(&(a - limit_operator(kind, d)?)))
}

/// Gaps along a scan of the high-scale multiplier, with the fitted log-log slope.
pub fn limit_gap_scan(
    kind: ShiftOperatorKind,
    family: impl Fn(f64) -> Result<ScaleDecomposition>,
    s_values: &[f64],
) -> Result<CheckReport> {
    if s_values.len() < 3 {
        return Err(Error::ScanTooShort {
            needed: 3,
            got: s_values.len(),
        });
    }
    let mut scan = Vec::with_capacity(s_values.len());
    for &s in s_values {
        scan.push(ScanPoint {
            s,
            gap: limit_gap(kind, &family(s)?)?,
        });
    }
    let gaps: Vec<f64> = scan.iter().map(|p| p.gap).collect();
    let slope = loglog_slope(s_values, &gaps)?;
    Ok(CheckReport {
        name: format!("limit_gap_{}", kind.name()),
        lhs: gaps.last().copied(),
        rhs_bound: None,
        scan,
        slope: Some(slope),
        pass: slope <= kind.slope_threshold(),
    })
}

/// Features and mixing matrices of the three-node demonstration.
#[derive(Clone, Debug)]
pub struct MpnnSetup {
    /// Rows are the states of nodes 1, 2, 3.
    pub x: DMatrix<f64>,
    pub w13: f64,
    pub w23: f64,
    /// Message matrix: φ(x_i, x_j, w) = w · B x_j.
    pub message: DMatrix<f64>,
    /// Update matrix: γ(x, m) = U x + m.
    pub update: DMatrix<f64>,
    pub z: f64,
}

impl Default for MpnnSetup {
    fn default() -> Self {
        Self {
            x: DMatrix::from_row_slice(3, 2, &[1.0, -0.5, -0.25, 2.0, 0.5, 0.75]),
            w13: 1.0,
            w23: 0.5,
            message: DMatrix::from_row_slice(2, 2, &[0.8, -0.3, 0.2, 1.1]),
            update: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.9]),
            z: -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpnnDemoPoint {
    #[serde(rename = "S")]
    pub s: f64,
    pub mpnn_distance: f64,
    pub resolvnet_distance: f64,
}

impl MpnnSetup {
    pub fn graph(&self, s: f64) -> Result<WeightedGraph> {
        let mut w = DMatrix::zeros(3, 3);
        w[(0, 1)] = s;
        w[(1, 0)] = s;
        w[(0, 2)] = self.w13;
        w[(2, 0)] = self.w13;
        w[(1, 2)] = self.w23;
        w[(2, 1)] = self.w23;
        WeightedGraph::unweighted_nodes(w)
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    fn phi(&self, j: usize, w: f64) -> DVector<f64> {
        &self.message * self.row(j) * w
    }

    /// γ(X₃, φ(X₃, X₁, w₃₁) + φ(X₃, X₂, w₃₂)).
    pub fn actual(&self) -> DVector<f64> {
        &self.update * self.row(2) + self.phi(0, self.w13) + self.phi(1, self.w23)
    }

    /// γ(X₃, φ(X₃, (X₁ + X₂)/2, w₃₁ + w₃₂)).
    pub fn desired(&self) -> DVector<f64> {
        let mean = (self.row(0) + self.row(1)) * 0.5;
        &self.update * self.row(2) + &self.message * mean * (self.w13 + self.w23)
    }

    /// Distance at node 3 between R_z(Δ)X and its coarse-graph counterpart
    /// with nodes 1 and 2 merged.
    pub fn resolvnet_distance(&self, s: f64) -> Result<f64> {
        let g = self.graph(s)?;
        let d = decompose_by_partition(&g, &[0, 0, 1])?;
        let c = coarsen(&d)?;
        let diff = resolvent_difference(&c, self.z, 1)? * &self.x;
        Ok(diff.row(2).norm())
    }
}

pub fn mpnn_scale_demo(setup: &MpnnSetup, s_values: &[f64]) -> Result<Vec<MpnnDemoPoint>> {
    let mpnn = (setup.actual() - setup.desired()).norm();
    s_values
        .iter()
        .map(|&s| {
            if !(s > 0.0) {
                return Err(Error::Config(format!("scale must be positive, got {s}")));
            }
            Ok(MpnnDemoPoint {
                s,
                mpnn_distance: mpnn,
                resolvnet_distance: setup.resolvnet_distance(s)?,
            })
        })
        .collect()
}

/// One scan as CSV rows `kind,S,gap` followed by a slope summary row.
pub fn scan_csv(report: &CheckReport, kind: ShiftOperatorKind) -> String {
    let mut s = String::from("kind,S,gap\n");
    for p in &report.scan {
        s.push_str(&format!("{},{},{}\n", kind.name(), p.s, p.gap));
    }
    s.push_str(&format!("{},slope,{}\n", kind.name(), report.slope.unwrap_or(f64::NAN)));
    s
}
