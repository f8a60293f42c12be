//! Filters that are polynomials in the resolvent,
//! f(λ) = Σ_{k=a}^{K} θ_k (λ − z)^{-k}.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ResolventFactorization;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResolventFilterSpec {
    pub z: f64,
    pub a: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    /// θ_a, …, θ_K.
    pub theta: Vec<f64>,
}

impl ResolventFilterSpec {
    pub fn new(z: f64, a: usize, k_max: usize, theta: Vec<f64>) -> Result<Self> {
        let spec = Self { z, a, k_max, theta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z < 0.0) {
            return Err(Error::NonNegativeZ(self.z));
        }
        if self.a > 1 {
            return Err(Error::InvalidFilter(format!("a must be 0 or 1, got {}", self.a)));
        }
        if self.k_max < self.a {
            return Err(Error::InvalidFilter(format!(
                "K = {} is below a = {}",
                self.k_max, self.a
            )));
        }
        if self.theta.len() != self.k_max - self.a + 1 {
            return Err(Error::InvalidFilter(format!(
                "expected {} coefficients, got {}",
                self.k_max - self.a + 1,
                self.theta.len()
            )));
        }
        Ok(())
    }

    pub fn theta_k(&self, k: usize) -> f64 {
        self.theta[k - self.a]
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let u = 1.0 / (lambda - self.z);
        let mut acc = 0.0;
        for k in (self.a..=self.k_max).rev() {
            acc = acc * u + self.theta_k(k);
        }
        if self.a == 1 {
            acc *= u;
        }
        acc
    }

    /// f(Δ)X by Horner accumulation in the resolvent.
    pub fn apply(&self, f: &ResolventFactorization, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.z() != self.z {
            return Err(Error::ZMismatch {
                spec: self.z,
                factorization: f.z(),
            });
        }
        let mut y = x * self.theta_k(self.k_max);
        for k in (self.a..self.k_max).rev() {
            y = f.apply(&y)? + x * self.theta_k(k);
        }
        if self.a == 1 {
            y = f.apply(&y)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterFit {
    pub spec: ResolventFilterSpec,
    pub sup_error: f64,
}

/// Least-squares fit of `values` sampled at `grid` in the basis
/// {(λ − z)^{-k}}_{k=a..K}, solved by QR.
pub fn fit_filter_to_function(
    grid: &[f64],
    values: &[f64],
    z: f64,
    a: usize,
    k_max: usize,
) -> Result<FilterFit> {
    ResolventFilterSpec::new(z, a, k_max, vec![0.0; k_max.saturating_sub(a) + 1])?;
    if grid.len() != values.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            got: values.len(),
        });
    }
    if grid.iter().chain(values).any(|v| !v.is_finite()) || grid.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidFilter("grid must be finite and non-negative".into()));
    }
    let p = k_max - a + 1;
    let mut distinct = grid.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < p {
        return Err(Error::RankDeficient);
    }
    let m = grid.len();
    let basis = DMatrix::from_fn(m, p, |i, j| (grid[i] - z).powi(-((a + j) as i32)));
    let qr = basis.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-14 * rmax) {
        return Err(Error::RankDeficient);
    }
    let y = DVector::from_column_slice(values);
    let qty = qr.q().transpose() * &y;
    let theta = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    let spec = ResolventFilterSpec::new(z, a, k_max, theta.iter().copied().collect())?;
    let sup_error = grid
        .iter()
        .zip(values)
        .map(|(&l, &v)| (spec.eval(l) - v).abs())
        .fold(0.0, f64::max);
    Ok(FilterFit { spec, sup_error })
}

/// `count` uniform points on [lo, hi].
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedNormContext;
    use crate::spectral::spectrum;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_examples() {
        let s = ResolventFilterSpec::new(-2.0, 1, 1, vec![1.0]).unwrap();
        assert_eq!(s.eval(0.0), 0.5);
        let s = ResolventFilterSpec::new(-1.0, 0, 0, vec![4.25]).unwrap();
        for l in [0.0, 1.0, 1e6] {
            assert_eq!(s.eval(l), 4.25);
        }
        let s = ResolventFilterSpec::new(-1.0, 1, 2, vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.eval(1.0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn invalid_specs() {
        assert!(ResolventFilterSpec::new(1.0, 1, 1, vec![1.0]).is_err());
        assert!(ResolventFilterSpec::new(-1.0, 2, 3, vec![1.0, 1.0]).is_err());
        assert!(ResolventFilterSpec::new(-1.0, 1, 0, vec![]).is_err());
        assert!(ResolventFilterSpec::new(-1.0, 0, 2, vec![1.0]).is_err());
    }

    #[test]
    fn operator_application() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.5, 2.0, 0.0, 1.0, 0.5, 1.0, 0.0]);
        let g = crate::graph::WeightedGraph::new(DVector::from_row_slice(&[0.5, 2.0, 3.0]), w).unwrap();
        let ctx = g.norm_context();
        let f = ResolventFactorization::new(&g.laplacian(), &ctx, -0.5).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, 0.25]);

        let c = ResolventFilterSpec::new(-0.5, 0, 0, vec![3.0]).unwrap();
        assert_abs_diff_eq!(c.apply(&f, &x).unwrap(), &x * 3.0, epsilon = 1e-15);

        let s = ResolventFilterSpec::new(-0.5, 0, 3, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let ones = DMatrix::from_element(3, 1, 1.0);
        assert_abs_diff_eq!(s.apply(&f, &ones).unwrap(), ones * s.eval(0.0), epsilon = 1e-12);

        let sp = spectrum(&g.laplacian(), &ctx).unwrap();
        assert_abs_diff_eq!(s.apply(&f, &x).unwrap(), sp.apply_function(|l| s.eval(l), &x), epsilon = 1e-10);

        let other = ResolventFilterSpec::new(-1.0, 1, 1, vec![1.0]).unwrap();
        assert!(matches!(other.apply(&f, &x), Err(Error::ZMismatch { .. })));
        let _ = WeightedNormContext::unit(1);
    }

    #[test]
    fn exact_representations() {
        let grid = uniform_grid(0.0, 10.0, 200);
        let h: Vec<f64> = grid.iter().map(|l| 1.0 / (l + 2.0)).collect();
        let fit = fit_filter_to_function(&grid, &h, -2.0, 1, 1).unwrap();
        assert_abs_diff_eq!(fit.spec.theta[0], 1.0, epsilon = 1e-12);
        assert!(fit.sup_error <= 1e-12);

        let c = vec![3.0; grid.len()];
        let fit = fit_filter_to_function(&grid, &c, -1.0, 0, 0).unwrap();
        assert_abs_diff_eq!(fit.spec.theta[0], 3.0, epsilon = 1e-14);
        assert!(fit.sup_error <= 1e-14);
    }

    #[test]
    fn duplicate_grid_is_rank_deficient() {
        let grid = vec![1.0; 10];
        let vals = vec![0.5; 10];
        assert!(matches!(
            fit_filter_to_function(&grid, &vals, -1.0, 1, 3),
            Err(Error::RankDeficient)
        ));
    }
}
