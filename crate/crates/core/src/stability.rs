//! Stability and multi-scale consistency bounds, with constants assembled
//! layer by layer and checked against direct forward passes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{spectral_norm, weighted_operator_norm, WeightedNormContext};
use crate::model::{aggregate, Prepared, ResolvNetLayer, ResolvNetModel};
use crate::multiscale::Coarsening;
use crate::report::{holds, loglog_slope, CheckReport, ScanPoint};
use crate::spectral::{resolvent_difference, resolvent_gap, ResolventFactorization};

/// Relative slack absorbed as roundoff.
pub const SLACK_TOL: f64 = 1e-9;

/// ‖𝒲‖_z = Σ_k ‖W_k‖ / |z|^k.
pub fn weight_norm_z(layer: &ResolvNetLayer) -> f64 {
    let az = layer.z.abs();
    (layer.a..=layer.k_max)
        .map(|k| spectral_norm(layer.weight(k)) / az.powi(k as i32))
        .sum()
}

/// Σ_{k≥1} k‖W_k‖ / |z|^{k−1}, the factor picked up when every resolvent
/// power is replaced by an approximation of the first power.
pub fn power_factor(layer: &ResolvNetLayer) -> f64 {
    let az = layer.z.abs();
    (layer.a.max(1)..=layer.k_max)
        .map(|k| k as f64 * spectral_norm(layer.weight(k)) / az.powi(k as i32 - 1))
        .sum()
}

/// ‖𝟙βᵀ‖ on a graph of total weight μ(G).
pub fn bias_norm(layer: &ResolvNetLayer, total_weight: f64) -> f64 {
    layer.beta.norm() * total_weight.sqrt()
}

/// Per-layer norms and the assembled constants of the consistency bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityConstants {
    pub layer_norms: Vec<f64>,
    pub bias_norms: Vec<f64>,
    /// ‖Φ(X)‖ ≤ forward.0·‖X‖ + forward.1.
    pub forward: (f64, f64),
    pub c1: f64,
    pub c2: f64,
}

impl StabilityConstants {
    /// Runs the recursion
    /// b_ℓ = ‖𝒲^ℓ‖_z b_{ℓ−1} + ‖B^ℓ‖,
    /// e_ℓ = Λ_ℓ b_{ℓ−1} + ‖𝒲^ℓ‖_z e_{ℓ−1},
    /// with b_0 = ‖X‖ and e_0 = 0, tracking the coefficients of ‖X‖ and 1.
    pub fn assemble(model: &ResolvNetModel, total_weight: f64) -> Self {
        let mut b = (1.0, 0.0);
        let mut e = (0.0, 0.0);
        let mut layer_norms = Vec::new();
        let mut bias_norms = Vec::new();
        for l in &model.layers {
            let nz = weight_norm_z(l);
            let lam = power_factor(l);
            let bn = bias_norm(l, total_weight);
            e = (lam * b.0 + nz * e.0, lam * b.1 + nz * e.1);
            b = (nz * b.0, nz * b.1 + bn);
            layer_norms.push(nz);
            bias_norms.push(bn);
        }
        Self {
            layer_norms,
            bias_norms,
            forward: b,
            c1: e.0,
            c2: e.1,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.layer_norms.iter().product()
    }

    pub fn bound(&self, input_norm: f64) -> f64 {
        self.c1 * input_norm + self.c2
    }
}

fn features(model: &ResolvNetModel, f: ResolventFactorization, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = Prepared::new(Box::new(f), x.clone(), &model.layers[0])?;
    model.features(&p)
}

fn fine_features(model: &ResolvNetModel, g: &crate::graph::WeightedGraph, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.features(&model.prepare(g, x)?)
}

fn require_unscaled(model: &ResolvNetModel) -> Result<()> {
    if model.c_nf.is_some() {
        return Err(Error::InvalidModel(
            "consistency checks compare graphs and need an unscaled Laplacian".into(),
        ));
    }
    Ok(())
}

/// ‖Φ(X) − Φ(Y)‖ ≤ ‖X − Y‖ · Π_ℓ ‖𝒲^ℓ‖_z.
pub fn input_stability_check(
    model: &ResolvNetModel,
    g: &crate::graph::WeightedGraph,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<CheckReport> {
    let ctx = g.norm_context();
    let lhs = ctx.norm(&(fine_features(model, g, x)? - fine_features(model, g, y)?))?;
    let k = StabilityConstants::assemble(model, g.total_weight());
    let rhs = ctx.norm(&(x - y))? * k.lipschitz();
    Ok(CheckReport::inequality("input_stability", lhs, rhs, SLACK_TOL))
}

/// ‖Φ(X)‖ against the layer-recursive bound.
pub fn forward_norm_bound_check(
    model: &ResolvNetModel,
    g: &crate::graph::WeightedGraph,
    x: &DMatrix<f64>,
) -> Result<CheckReport> {
    let ctx = g.norm_context();
    let lhs = ctx.norm(&fine_features(model, g, x)?)?;
    let k = StabilityConstants::assemble(model, g.total_weight());
    let rhs = k.forward.0 * ctx.norm(x)? + k.forward.1;
    Ok(CheckReport::inequality("forward_norm_bound", lhs, rhs, SLACK_TOL))
}

/// ‖R_z(Δ) − R_z(Δ̃)‖ ≤ ‖Δ − Δ̃‖ / |z|².
pub fn resolvent_perturbation_lemma(
    ctx: &WeightedNormContext,
    delta: &DMatrix<f64>,
    delta_t: &DMatrix<f64>,
    z: f64,
) -> Result<CheckReport> {
    let r = ResolventFactorization::new(delta, ctx, z)?.dense_power(1);
    let rt = ResolventFactorization::new(delta_t, ctx, z)?.dense_power(1);
    let lhs = weighted_operator_norm(&(r - rt), ctx, ctx)?;
    let rhs = weighted_operator_norm(&(delta - delta_t), ctx, ctx)? / (z * z);
    Ok(CheckReport::inequality("resolvent_perturbation", lhs, rhs, SLACK_TOL))
}

/// ‖R^k − R̃^k‖ ≤ k/|z|^{k−1} · ‖R − R̃‖ for two Laplacians on the same nodes.
pub fn power_lemma(
    ctx: &WeightedNormContext,
    delta: &DMatrix<f64>,
    delta_t: &DMatrix<f64>,
    z: f64,
    k: usize,
) -> Result<CheckReport> {
    let f = ResolventFactorization::new(delta, ctx, z)?;
    let ft = ResolventFactorization::new(delta_t, ctx, z)?;
    let d1 = weighted_operator_norm(&(f.dense_power(1) - ft.dense_power(1)), ctx, ctx)?;
    let dk = weighted_operator_norm(&(f.dense_power(k) - ft.dense_power(k)), ctx, ctx)?;
    let rhs = k as f64 / z.abs().powi(k as i32 - 1) * d1;
    Ok(CheckReport::inequality(format!("power_lemma_k{k}"), dk, rhs, SLACK_TOL))
}

/// ‖R^k − J↑R̲^kJ↓‖ ≤ k/|z|^{k−1} · ‖R − J↑R̲J↓‖.
pub fn coarse_power_lemma(c: &Coarsening, z: f64, k: usize) -> Result<CheckReport> {
    let g1 = resolvent_gap(c, z, 1)?;
    let gk = resolvent_gap(c, z, k)?;
    let rhs = k as f64 / z.abs().powi(k as i32 - 1) * g1;
    Ok(CheckReport::inequality(format!("coarse_power_lemma_k{k}"), gk, rhs, SLACK_TOL))
}

/// ‖Φ_Δ(X) − Φ_Δ̃(X)‖ ≤ (C₁‖X‖ + C₂)/|z|² · ‖Δ − Δ̃‖. The model's rescale
/// setting is ignored; both operators are used as given.
pub fn laplacian_perturbation_check(
    model: &ResolvNetModel,
    ctx: &WeightedNormContext,
    delta: &DMatrix<f64>,
    delta_t: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<CheckReport> {
    if delta.shape() != delta_t.shape() {
        return Err(Error::Dimension {
            expected: delta.nrows(),
            got: delta_t.nrows(),
        });
    }
    let z = model.z();
    let a = features(model, ResolventFactorization::new(delta, ctx, z)?, x)?;
    let b = features(model, ResolventFactorization::new(delta_t, ctx, z)?, x)?;
    let lhs = ctx.norm(&(a - b))?;
    let k = StabilityConstants::assemble(model, ctx.mu().sum());
    let eps = weighted_operator_norm(&(delta - delta_t), ctx, ctx)?;
    let rhs = k.bound(ctx.norm(x)?) * eps / (z * z);
    Ok(CheckReport::inequality("laplacian_perturbation", lhs, rhs, SLACK_TOL))
}

/// Which side of the coarsening the input lives on.
#[derive(Clone, Debug)]
pub enum ConsistencyInput {
    /// X on the fine graph; compares Φ(X) with J↑Φ̲(J↓X). Needs Type-I filters.
    Fine(DMatrix<f64>),
    /// X̲ on the coarse graph; compares Φ(J↑X̲) with J↑Φ̲(X̲).
    Coarse(DMatrix<f64>),
}

fn consistency_parts(
    model: &ResolvNetModel,
    c: &Coarsening,
    input: &ConsistencyInput,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    require_unscaled(model)?;
    let fine_g = c.base();
    let coarse_g = c.coarse();
    match input {
        ConsistencyInput::Fine(x) => {
            if model.layers.iter().any(|l| l.a != 1) {
                return Err(Error::FilterType("Type-I filters (a = 1) in every layer"));
            }
            let f = fine_features(model, fine_g, x)?;
            let fc = fine_features(model, coarse_g, &c.project_down(x)?)?;
            Ok((f, fc, c.fine_context().norm(x)?))
        }
        ConsistencyInput::Coarse(xc) => {
            let f = fine_features(model, fine_g, &c.lift_up(xc)?)?;
            let fc = fine_features(model, coarse_g, xc)?;
            Ok((f, fc, c.coarse_context().norm(xc)?))
        }
    }
}

/// Node-level consistency between a graph and its coarse version.
pub fn scale_consistency_check(model: &ResolvNetModel, c: &Coarsening, input: &ConsistencyInput) -> Result<CheckReport> {
    let (f, fc, xn) = consistency_parts(model, c, input)?;
    let lhs = c.fine_context().norm(&(f - c.lift_up(&fc)?))?;
    let delta = resolvent_gap(c, model.z(), 1)?;
    let k = StabilityConstants::assemble(model, c.base().total_weight());
    let rhs = k.bound(xn) * delta;
    let name = match input {
        ConsistencyInput::Fine(_) => "scale_consistency_type1",
        ConsistencyInput::Coarse(_) => "scale_consistency_type0",
    };
    Ok(CheckReport::inequality(name, lhs, rhs, SLACK_TOL))
}

/// Graph-level consistency ‖Ψ(Φ(X)) − Ψ(Φ̲(J↓X))‖ ≤ √μ(G)(C₁‖X‖ + C₂)·gap.
pub fn graph_consistency_check(model: &ResolvNetModel, c: &Coarsening, x: &DMatrix<f64>) -> Result<CheckReport> {
    if model.layers.iter().any(|l| l.a != 1) {
        return Err(Error::FilterType("Type-I filters (a = 1) in every layer"));
    }
    let (f, fc, xn) = consistency_parts(model, c, &ConsistencyInput::Fine(x.clone()))?;
    let lhs = (aggregate(&f, c.base().mu())? - aggregate(&fc, c.coarse().mu())?).norm();
    let delta = resolvent_gap(c, model.z(), 1)?;
    let mu_g = c.base().total_weight();
    let k = StabilityConstants::assemble(model, mu_g);
    let rhs = mu_g.sqrt() * k.bound(xn) * delta;
    Ok(CheckReport::inequality("graph_consistency", lhs, rhs, SLACK_TOL))
}

/// Runs `check` at every scale and fits the decay of its left-hand side.
/// Passes iff every inequality holds and the slope is at most `max_slope`.
pub fn consistency_scan(
    name: &str,
    s_values: &[f64],
    max_slope: f64,
    mut check: impl FnMut(f64) -> Result<CheckReport>,
) -> Result<CheckReport> {
    let mut scan = Vec::new();
    let mut all_hold = true;
    let mut worst: Option<CheckReport> = None;
    for &s in s_values {
        let r = check(s)?;
        all_hold &= r.pass;
        scan.push(ScanPoint {
            s,
            gap: r.lhs.unwrap_or(f64::NAN),
        });
        let ratio = |r: &CheckReport| r.lhs.unwrap_or(0.0) / r.rhs_bound.unwrap_or(1.0).max(f64::MIN_POSITIVE);
        if worst.as_ref().is_none_or(|w| ratio(&r) > ratio(w)) {
            worst = Some(r);
        }
    }
    let xs: Vec<f64> = scan.iter().map(|p| p.s).collect();
    let ys: Vec<f64> = scan.iter().map(|p| p.gap).collect();
    let slope = loglog_slope(&xs, &ys)?;
    let w = worst.ok_or(Error::ScanTooShort { needed: 2, got: 0 })?;
    Ok(CheckReport {
        name: name.to_string(),
        lhs: w.lhs,
        rhs_bound: w.rhs_bound,
        scan,
        slope: Some(slope),
        pass: all_hold && slope <= max_slope,
    })
}

/// ‖R_z(Δ) − J↑R_z(Δ̲)J↓‖ over a scan, fitted against λ₁(Δ_high).
pub fn resolvent_gap_scan(
    family: impl Fn(f64) -> Result<Coarsening>,
    s_values: &[f64],
    z: f64,
    max_slope: f64,
) -> Result<CheckReport> {
    let mut scan = Vec::new();
    let mut lambdas = Vec::new();
    for &s in s_values {
        let c = family(s)?;
        lambdas.push(c.decomposition().lambda_1_high().ok_or(Error::NoHighScale)?);
        scan.push(ScanPoint {
            s,
            gap: resolvent_gap(&c, z, 1)?,
        });
    }
    let gaps: Vec<f64> = scan.iter().map(|p| p.gap).collect();
    let slope = loglog_slope(&lambdas, &gaps)?;
    Ok(CheckReport {
        name: "resolvent_gap".into(),
        lhs: gaps.last().copied(),
        rhs_bound: None,
        scan,
        slope: Some(slope),
        pass: slope <= max_slope,
    })
}

/// The dense difference R_z(Δ)^k − J↑R_z(Δ̲)^kJ↓, for callers that want it
/// alongside the checks.
pub fn coarse_difference(c: &Coarsening, z: f64, k: usize) -> Result<DMatrix<f64>> {
    resolvent_difference(c, z, k)
}

pub fn all_hold(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

pub fn slack_ok(lhs: f64, rhs: f64) -> bool {
    holds(lhs, rhs, SLACK_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use crate::model::{Head, Linear, Mode};
    use crate::multiscale::{coarsen, decompose};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn layer(a: usize, ws: Vec<DMatrix<f64>>, z: f64) -> ResolvNetLayer {
        let fo = ws[0].ncols();
        ResolvNetLayer {
            a,
            k_max: a + ws.len() - 1,
            z,
            weights: ws,
            beta: DVector::zeros(fo),
        }
    }

    fn model(layers: Vec<ResolvNetLayer>) -> ResolvNetModel {
        let f = layers.last().unwrap().out_dim();
        let head = Head {
            hidden: None,
            out: Linear {
                weight: DMatrix::identity(f, 1),
                bias: DVector::zeros(1),
            },
        };
        ResolvNetModel::new(layers, head, Mode::GraphRegression, None).unwrap()
    }

    fn two_cliques(s: f64) -> Coarsening {
        let mut w = DMatrix::zeros(4, 4);
        for &(u, v, x) in &[(0, 1, s), (2, 3, s), (1, 2, 1.0)] {
            w[(u, v)] = x;
            w[(v, u)] = x;
        }
        let g = WeightedGraph::unweighted_nodes(w).unwrap();
        coarsen(&decompose(&g, s / 2.0).unwrap()).unwrap()
    }

    #[test]
    fn weight_norm_examples() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(weight_norm_z(&layer(1, vec![w], -1.0)), 2.0, epsilon = 1e-12);
        let id = DMatrix::identity(2, 2);
        assert_abs_diff_eq!(weight_norm_z(&layer(0, vec![id], -2.0)), 1.0, epsilon = 1e-12);
        let w1 = DMatrix::identity(2, 2);
        let w2 = DMatrix::identity(2, 2) * 3.0;
        assert_abs_diff_eq!(weight_norm_z(&layer(1, vec![w1, w2], -2.0)), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn single_layer_constants() {
        let w1 = DMatrix::identity(2, 2);
        let w2 = DMatrix::identity(2, 2) * 3.0;
        let mut l = layer(1, vec![w1, w2], -2.0);
        l.beta = DVector::from_row_slice(&[3.0, 4.0]);
        let k = StabilityConstants::assemble(&model(vec![l]), 4.0);
        // Λ = 1 + 2·3/2 = 4.
        assert_abs_diff_eq!(k.c1, 4.0, epsilon = 1e-12);
        assert_eq!(k.c2, 0.0);
        assert_abs_diff_eq!(k.forward.1, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.lipschitz(), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn bias_only_nets_are_exactly_consistent() {
        let c = two_cliques(100.0);
        let mut l = layer(1, vec![DMatrix::zeros(2, 3)], -1.0);
        l.beta = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
        let m = model(vec![l]);
        let x = DMatrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64);
        let r = scale_consistency_check(&m, &c, &ConsistencyInput::Fine(x.clone())).unwrap();
        assert_eq!(r.lhs, Some(0.0));
        let r = graph_consistency_check(&m, &c, &x).unwrap();
        assert_eq!(r.lhs, Some(0.0));
    }

    #[test]
    fn type0_on_fine_input_is_rejected() {
        let c = two_cliques(10.0);
        let m = model(vec![layer(0, vec![DMatrix::identity(2, 2)], -1.0)]);
        let x = DMatrix::zeros(4, 2);
        assert!(matches!(
            scale_consistency_check(&m, &c, &ConsistencyInput::Fine(x.clone())),
            Err(Error::FilterType(_))
        ));
        assert!(matches!(graph_consistency_check(&m, &c, &x), Err(Error::FilterType(_))));
        assert!(scale_consistency_check(&m, &c, &ConsistencyInput::Coarse(DMatrix::zeros(2, 2))).is_ok());
    }

    #[test]
    fn identical_laplacians_give_zero_perturbation() {
        let c = two_cliques(10.0);
        let g = c.base();
        let m = model(vec![layer(1, vec![DMatrix::identity(2, 2)], -1.0)]);
        let x = DMatrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64));
        let r = laplacian_perturbation_check(&m, &g.norm_context(), &g.laplacian(), &g.laplacian(), &x).unwrap();
        assert_eq!(r.lhs, Some(0.0));
        assert!(r.pass);
    }

    #[test]
    fn zero_inputs_and_biases_give_zero_features() {
        let c = two_cliques(1e8);
        let m = model(vec![layer(1, vec![DMatrix::identity(2, 2)], -1.0)]);
        let r = graph_consistency_check(&m, &c, &DMatrix::zeros(4, 2)).unwrap();
        assert_eq!(r.lhs, Some(0.0));
    }
}
