//! Spectra in the node-weighted geometry, factorized resolvents, and the
//! identities relating fine and coarse resolvents.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{weighted_operator_norm, WeightedNormContext};
use crate::multiscale::{Coarsening, ScaleDecomposition};

const SELF_ADJOINT_TOL: f64 = 1e-8;
const ZERO_EIGENVALUE_REL: f64 = 1e-9;

/// M^{1/2} A M^{-1/2}, checked for symmetry and returned exactly symmetric.
pub fn symmetrized(a: &DMatrix<f64>, ctx: &WeightedNormContext) -> Result<DMatrix<f64>> {
    let n = ctx.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.nrows(),
        });
    }
    let s = ctx.sqrt_mu();
    let b = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * s[i] / s[j]);
    let scale = b.amax().max(1.0);
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            dev = dev.max((b[(i, j)] - b[(j, i)]).abs());
        }
    }
    if dev > SELF_ADJOINT_TOL * scale {
        return Err(Error::NotSelfAdjoint(dev));
    }
    Ok((&b + b.transpose()) * 0.5)
}

/// Ascending eigenvalues with a Euclidean-orthonormal eigenbasis of the
/// symmetrized operator.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    ctx: WeightedNormContext,
}

pub fn spectrum(a: &DMatrix<f64>, ctx: &WeightedNormContext) -> Result<Spectrum> {
    let s = symmetrized(a, ctx)?;
    let n = s.nrows();
    if n == 0 {
        return Ok(Spectrum {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
            ctx: ctx.clone(),
        });
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum {
        values,
        vectors,
        ctx: ctx.clone(),
    })
}

impl Spectrum {
    /// f(A)X computed in the eigenbasis.
    pub fn apply_function(&self, f: impl Fn(f64) -> f64, x: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.ctx.to_euclidean(x);
        let mut c = self.vectors.transpose() * y;
        for (i, mut row) in c.row_iter_mut().enumerate() {
            row *= f(self.values[i]);
        }
        self.ctx.from_euclidean(&(&self.vectors * c))
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

pub fn lambda_max(a: &DMatrix<f64>, ctx: &WeightedNormContext) -> Result<f64> {
    Ok(spectrum(a, ctx)?.max())
}

/// Smallest non-zero eigenvalue of Δ_high over its non-singleton components.
pub fn lambda_1_nonzero(
    delta_high: &DMatrix<f64>,
    components: &[Vec<usize>],
    mu: &DVector<f64>,
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for comp in components.iter().filter(|c| c.len() > 1) {
        let m = comp.len();
        let sub = DMatrix::from_fn(m, m, |i, j| delta_high[(comp[i], comp[j])]);
        let ctx = WeightedNormContext::new(DVector::from_fn(m, |i, _| mu[comp[i]]));
        let sp = spectrum(&sub, &ctx)?;
        let cut = ZERO_EIGENVALUE_REL * sp.max();
        if let Some(l) = sp.values.iter().copied().find(|&v| v > cut) {
            best = Some(best.map_or(l, |b: f64| b.min(l)));
        }
    }
    best.ok_or(Error::NoHighScale)
}

/// 2 · max_i Σ_j W_ij / μ_i, an upper bound on the largest Laplacian eigenvalue.
pub fn gershgorin_bound(w: &DMatrix<f64>, mu: &DVector<f64>) -> f64 {
    w.row_iter()
        .enumerate()
        .map(|(i, r)| 2.0 * r.sum() / mu[i])
        .fold(0.0, f64::max)
}

/// Cholesky factorization of M^{1/2}(Δ − z)M^{-1/2} for some z < 0.
#[derive(Clone, Debug)]
pub struct ResolventFactorization {
    z: f64,
    ctx: WeightedNormContext,
    chol: Cholesky<f64, Dyn>,
}

impl ResolventFactorization {
    pub fn new(delta: &DMatrix<f64>, ctx: &WeightedNormContext, z: f64) -> Result<Self> {
        if !(z < 0.0) {
            return Err(Error::NonNegativeZ(z));
        }
        let mut s = symmetrized(delta, ctx)?;
        for i in 0..s.nrows() {
            s[(i, i)] -= z;
        }
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
        Ok(Self {
            z,
            ctx: ctx.clone(),
            chol,
        })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn dim(&self) -> usize {
        self.ctx.dim()
    }

    pub fn context(&self) -> &WeightedNormContext {
        &self.ctx
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.nrows(),
            });
        }
        Ok(())
    }

    /// R_z(Δ)X = M^{-1/2}(S − z)^{-1}M^{1/2}X.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut y = self.ctx.to_euclidean(x);
        self.chol.solve_mut(&mut y);
        Ok(self.ctx.from_euclidean(&y))
    }

    /// R_z(Δ)ᵀX = M^{1/2}(S − z)^{-1}M^{-1/2}X.
    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut y = self.ctx.from_euclidean(x);
        self.chol.solve_mut(&mut y);
        Ok(self.ctx.to_euclidean(&y))
    }

    pub fn apply_power(&self, k: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut y = x.clone();
        for _ in 0..k {
            y = self.apply(&y)?;
        }
        Ok(y)
    }

    /// The dense matrix R_z(Δ)^k.
    pub fn dense_power(&self, k: usize) -> DMatrix<f64> {
        let n = self.dim();
        self.apply_power(k, &DMatrix::identity(n, n))
            .expect("identity has matching dimension")
    }
}

fn check_z(z: f64) -> Result<()> {
    if z < 0.0 {
        Ok(())
    } else {
        Err(Error::NonNegativeZ(z))
    }
}

/// R_z(Δ)^k − J↑R_z(Δ̲)^kJ↓ as a dense matrix.
pub fn resolvent_difference(c: &Coarsening, z: f64, k: usize) -> Result<DMatrix<f64>> {
    check_z(z)?;
    let fine = ResolventFactorization::new(&c.base().laplacian(), &c.fine_context(), z)?;
    let coarse = ResolventFactorization::new(&c.coarse_laplacian(), &c.coarse_context(), z)?;
    let lifted = c.up_matrix() * coarse.dense_power(k) * c.down_matrix();
    Ok(fine.dense_power(k) - lifted)
}

/// ‖R_z(Δ)^k − J↑R_z(Δ̲)^kJ↓‖ in the node-weighted operator norm.
pub fn resolvent_gap(c: &Coarsening, z: f64, k: usize) -> Result<f64> {
    let diff = resolvent_difference(c, z, k)?;
    let ctx = c.fine_context();
    weighted_operator_norm(&diff, &ctx, &ctx)
}

/// ‖(R_z(Δ)^k − J↑R_z(Δ̲)^kJ↓)X‖ for a fixed signal.
pub fn resolvent_gap_applied(c: &Coarsening, z: f64, k: usize, x: &DMatrix<f64>) -> Result<f64> {
    check_z(z)?;
    let fine = ResolventFactorization::new(&c.base().laplacian(), &c.fine_context(), z)?;
    let coarse = ResolventFactorization::new(&c.coarse_laplacian(), &c.coarse_context(), z)?;
    let lifted = c.lift_up(&coarse.apply_power(k, &c.project_down(x)?)?)?;
    c.fine_context().norm(&(fine.apply_power(k, x)? - lifted))
}

fn dense_resolvent(delta: &DMatrix<f64>, ctx: &WeightedNormContext, z: f64) -> Result<DMatrix<f64>> {
    Ok(ResolventFactorization::new(delta, ctx, z)?.dense_power(1))
}

fn lu_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.lu()
        .solve(b)
        .ok_or_else(|| Error::Factorization("singular matrix".into()))
}

/// ‖R_z(Δ) − [Id + R_z(Δ_high)Δ_reg]⁻¹R_z(Δ_high)‖.
pub fn second_resolvent_identity_check(d: &ScaleDecomposition, z: f64) -> Result<f64> {
    check_z(z)?;
    let ctx = d.base().norm_context();
    let n = ctx.dim();
    let lhs = dense_resolvent(&d.base().laplacian(), &ctx, z)?;
    let r_high = dense_resolvent(d.delta_high(), &ctx, z)?;
    let bracket = DMatrix::identity(n, n) + &r_high * d.delta_reg();
    let rhs = lu_solve(bracket, &r_high)?;
    weighted_operator_norm(&(lhs - rhs), &ctx, &ctx)
}

/// ‖J↑R_z(Δ̲)J↓ − [P₀Δ_reg − z]⁻¹P₀‖.
pub fn coarse_resolvent_identity_check(c: &Coarsening, z: f64) -> Result<f64> {
    check_z(z)?;
    let ctx = c.fine_context();
    let n = ctx.dim();
    let coarse = dense_resolvent(&c.coarse_laplacian(), &c.coarse_context(), z)?;
    let lhs = c.up_matrix() * coarse * c.down_matrix();
    let p0 = c.zero_projection();
    let a = &p0 * c.decomposition().delta_reg() - DMatrix::identity(n, n) * z;
    let rhs = lu_solve(a, &p0)?;
    weighted_operator_norm(&(lhs - rhs), &ctx, &ctx)
}

/// ‖Δ̲ − J↓Δ_reg J↑‖ measured entry-wise.
pub fn coarse_laplacian_identity_check(c: &Coarsening) -> f64 {
    let projected = c.down_matrix() * c.decomposition().delta_reg() * c.up_matrix();
    (c.coarse_laplacian() - projected).amax()
}

/// ‖P₀ − eigenprojection onto ker Δ_high‖ measured entry-wise.
pub fn zero_projection_check(c: &Coarsening) -> Result<f64> {
    let ctx = c.fine_context();
    let sp = spectrum(c.decomposition().delta_high(), &ctx)?;
    let cut = ZERO_EIGENVALUE_REL * sp.max().max(1.0);
    let kernel: Vec<usize> = (0..sp.values.len()).filter(|&i| sp.values[i].abs() <= cut).collect();
    let v = sp.vectors.select_columns(&kernel);
    // M^{-1/2} V Vᵀ M^{1/2}
    let left = ctx.from_euclidean(&v);
    let right = ctx.to_euclidean(&v);
    let back = left * right.transpose();
    Ok((back - c.zero_projection()).amax())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    pub max_eigen_diff: f64,
    pub operator_diff: f64,
    /// ‖A − B‖ − max_k |λ_k(A) − λ_k(B)|; non-negative when the inequality holds.
    pub slack: f64,
}

pub fn eigenvalue_lipschitz_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ctx: &WeightedNormContext,
) -> Result<LipschitzReport> {
    let la = spectrum(a, ctx)?.values;
    let lb = spectrum(b, ctx)?.values;
    let max_eigen_diff = la
        .iter()
        .zip(&lb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let operator_diff = weighted_operator_norm(&(a - b), ctx, ctx)?;
    Ok(LipschitzReport {
        max_eigen_diff,
        operator_diff,
        slack: operator_diff - max_eigen_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use crate::multiscale::{coarsen, decompose};
    use approx::assert_abs_diff_eq;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> WeightedGraph {
        let mut w = DMatrix::zeros(n, n);
        for &(u, v, x) in edges {
            w[(u, v)] = x;
            w[(v, u)] = x;
        }
        WeightedGraph::unweighted_nodes(w).unwrap()
    }

    fn clique(n: usize, w: f64) -> WeightedGraph {
        let mut m = DMatrix::from_element(n, n, w);
        m.fill_diagonal(0.0);
        WeightedGraph::unweighted_nodes(m).unwrap()
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn spectrum_examples() {
        let g = graph(2, &[(0, 1, 1.0)]);
        let sp = spectrum(&g.laplacian(), &g.norm_context()).unwrap();
        assert_abs_diff_eq!(sp.values[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sp.values[1], 2.0, epsilon = 1e-14);

        let sp = spectrum(&DMatrix::zeros(3, 3), &WeightedNormContext::unit(3)).unwrap();
        assert_eq!(sp.values, vec![0.0; 3]);

        let g = clique(4, 1.0);
        let sp = spectrum(&g.laplacian(), &g.norm_context()).unwrap();
        for (got, want) in sp.values.iter().zip([0.0, 4.0, 4.0, 4.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_self_adjoint_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            spectrum(&a, &WeightedNormContext::unit(2)),
            Err(Error::NotSelfAdjoint(_))
        ));
    }

    #[test]
    fn lambda_1_examples() {
        let s = 3.5;
        let d = decompose(&graph(2, &[(0, 1, s)]), 1.0).unwrap();
        assert_abs_diff_eq!(d.lambda_1_high().unwrap(), 2.0 * s, epsilon = 1e-12);

        let d = decompose(&graph(4, &[(0, 1, s), (2, 3, 3.0 * s)]), 1.0).unwrap();
        assert_abs_diff_eq!(d.lambda_1_high().unwrap(), 2.0 * s, epsilon = 1e-12);

        let g = clique(5, 7.0);
        let d = decompose(&g, 1.0).unwrap();
        assert_abs_diff_eq!(d.lambda_1_high().unwrap(), 35.0, epsilon = 1e-10);

        let d = decompose(&graph(3, &[(0, 1, 0.5)]), 1.0).unwrap();
        assert!(matches!(
            lambda_1_nonzero(d.delta_high(), d.high_components(), d.base().mu()),
            Err(Error::NoHighScale)
        ));
    }

    #[test]
    fn gershgorin_examples() {
        let g = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(gershgorin_bound(g.weights(), g.mu()), 4.0);
        assert_abs_diff_eq!(lambda_max(&g.laplacian(), &g.norm_context()).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(gershgorin_bound(&DMatrix::zeros(2, 2), &DVector::from_element(2, 1.0)), 0.0);
        let g = graph(2, &[(0, 1, 2.5)]);
        assert_eq!(gershgorin_bound(g.weights(), g.mu()), 5.0);
        assert_abs_diff_eq!(lambda_max(&g.laplacian(), &g.norm_context()).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn resolvent_examples() {
        let ctx = WeightedNormContext::unit(2);
        let f = ResolventFactorization::new(&DMatrix::zeros(2, 2), &ctx, -1.0).unwrap();
        let x = col(&[0.3, -2.0]);
        assert_abs_diff_eq!(f.apply(&x).unwrap(), x, epsilon = 1e-15);

        let g = graph(2, &[(0, 1, 1.0)]);
        let f = ResolventFactorization::new(&g.laplacian(), &ctx, -1.0).unwrap();
        assert_abs_diff_eq!(f.apply(&col(&[1.0, 0.0])).unwrap(), col(&[2.0 / 3.0, 1.0 / 3.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(
            f.apply_power(2, &col(&[1.0, 0.0])).unwrap(),
            col(&[5.0 / 9.0, 4.0 / 9.0]),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(f.apply(&col(&[1.0, 1.0])).unwrap(), col(&[1.0, 1.0]), epsilon = 1e-14);

        let f = ResolventFactorization::new(&DMatrix::zeros(2, 2), &ctx, -2.0).unwrap();
        assert_abs_diff_eq!(f.apply_power(3, &x).unwrap(), x / 8.0, epsilon = 1e-15);
    }

    #[test]
    fn non_negative_z_is_an_error() {
        let ctx = WeightedNormContext::unit(2);
        for z in [0.0, 0.5, f64::NAN] {
            assert!(matches!(
                ResolventFactorization::new(&DMatrix::zeros(2, 2), &ctx, z),
                Err(Error::NonNegativeZ(_))
            ));
        }
    }

    #[test]
    fn resolvent_norm_is_inverse_distance() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.5, 2.0, 0.0, 1.0, 0.5, 1.0, 0.0]);
        let g = WeightedGraph::new(DVector::from_row_slice(&[0.5, 2.0, 3.0]), w).unwrap();
        let ctx = g.norm_context();
        for z in [-0.3, -1.0, -4.0] {
            let f = ResolventFactorization::new(&g.laplacian(), &ctx, z).unwrap();
            let r = f.dense_power(1);
            assert_abs_diff_eq!(weighted_operator_norm(&r, &ctx, &ctx).unwrap(), 1.0 / z.abs(), epsilon = 1e-10);
            let r2 = f.dense_power(2);
            assert_abs_diff_eq!(weighted_operator_norm(&r2, &ctx, &ctx).unwrap(), 1.0 / (z * z), epsilon = 1e-10);
            let t = f.apply_transpose(&DMatrix::identity(3, 3)).unwrap();
            assert_abs_diff_eq!(t, r.transpose(), epsilon = 1e-12);
            let mut shifted = g.laplacian();
            for i in 0..3 {
                shifted[(i, i)] -= z;
            }
            assert_abs_diff_eq!(shifted * r, DMatrix::identity(3, 3), epsilon = 1e-10);
        }
    }

    #[test]
    fn single_edge_collapse_gap() {
        for s in [10.0, 100.0] {
            let c = coarsen(&decompose(&graph(2, &[(0, 1, s)]), 1.0).unwrap()).unwrap();
            let got = resolvent_gap_applied(&c, -1.0, 1, &col(&[1.0, 0.0])).unwrap();
            let want = 1.0 / (2f64.sqrt() * (2.0 * s + 1.0));
            assert!((got - want).abs() <= 1e-9 * want);
        }
        let c = coarsen(&decompose(&graph(2, &[(0, 1, 10.0)]), 1.0).unwrap()).unwrap();
        let got = resolvent_gap_applied(&c, -1.0, 1, &col(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(got, 0.033672, epsilon = 1e-6);
    }

    #[test]
    fn pure_high_graph_gap_vanishes() {
        let g = clique(3, 1e8);
        let c = coarsen(&decompose(&g, 1.0).unwrap()).unwrap();
        assert!(resolvent_gap(&c, -1.0, 1).unwrap() < 1e-6);
    }

    #[test]
    fn identities_on_two_cliques() {
        let g = graph(4, &[(0, 1, 50.0), (2, 3, 50.0), (1, 2, 1.0), (0, 3, 0.5)]);
        let d = decompose(&g, 5.0).unwrap();
        let c = coarsen(&d).unwrap();
        assert!(second_resolvent_identity_check(&d, -1.0).unwrap() < 1e-10);
        assert!(coarse_resolvent_identity_check(&c, -1.0).unwrap() < 1e-10);
        assert!(coarse_laplacian_identity_check(&c) < 1e-12);
        assert!(zero_projection_check(&c).unwrap() < 1e-10);
        let g1 = resolvent_gap(&c, -1.0, 1).unwrap();
        let g2 = resolvent_gap(&c, -1.0, 2).unwrap();
        assert!(g2 <= 2.0 * g1 * (1.0 + 1e-9));
    }

    #[test]
    fn second_identity_without_regular_part() {
        let d = decompose(&graph(3, &[(0, 1, 9.0), (1, 2, 9.0)]), 1.0).unwrap();
        assert!(second_resolvent_identity_check(&d, -1.0).unwrap() < 1e-14);
    }

    #[test]
    fn lipschitz_examples() {
        let ctx = WeightedNormContext::unit(2);
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 2.0]));
        let b = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 3.0]));
        let r = eigenvalue_lipschitz_check(&a, &b, &ctx).unwrap();
        assert_abs_diff_eq!(r.max_eigen_diff, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.slack, 0.0, epsilon = 1e-14);
        let r = eigenvalue_lipschitz_check(&a, &a, &ctx).unwrap();
        assert_eq!(r.max_eigen_diff, 0.0);
    }

    #[test]
    fn eigenbasis_function_matches_resolvent() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.5, 2.0, 0.0, 1.0, 0.5, 1.0, 0.0]);
        let g = WeightedGraph::new(DVector::from_row_slice(&[0.5, 2.0, 3.0]), w).unwrap();
        let ctx = g.norm_context();
        let sp = spectrum(&g.laplacian(), &ctx).unwrap();
        let f = ResolventFactorization::new(&g.laplacian(), &ctx, -0.7).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, 0.25]);
        assert_abs_diff_eq!(
            sp.apply_function(|l| 1.0 / (l + 0.7), &x),
            f.apply(&x).unwrap(),
            epsilon = 1e-12
        );
    }
}
