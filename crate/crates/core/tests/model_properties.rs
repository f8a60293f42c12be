mod common;

use common::{random_coarsening, random_graph, random_matrix, random_model, random_two_scale, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use resolvnet::baselines::{limit_gap, limit_operator, ShiftOperatorKind};
use resolvnet::filters::{fit_filter_to_function, uniform_grid, ResolventFilterSpec};
use resolvnet::graph::weighted_operator_norm;
use resolvnet::model::{layer_forward, Mode};
use resolvnet::spectral::{spectrum, ResolventFactorization};
use resolvnet::stability::{coarse_power_lemma, input_stability_check, laplacian_perturbation_check};
use resolvnet::{decompose, WeightedGraph};

fn random_spec(r: &mut rand_chacha::ChaCha8Rng, a: usize) -> ResolventFilterSpec {
    let k = a + r.random_range(0..=4);
    let theta = (a..=k).map(|_| r.random_range(-2.0..2.0)).collect();
    ResolventFilterSpec::new(-r.random_range(0.2..3.0), a, k, theta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resolvent_norm_is_inverse_abs_z(seed in any::<u64>(), n in 1usize..=12, z in -5.0f64..-0.05) {
        let g = random_graph(&mut rng(seed), n);
        let ctx = g.norm_context();
        let r = ResolventFactorization::new(&g.laplacian(), &ctx, z).unwrap().dense_power(1);
        let norm = weighted_operator_norm(&r, &ctx, &ctx).unwrap();
        prop_assert!((norm * z.abs() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn coarse_powers_obey_the_power_lemma(seed in any::<u64>(), n in 2usize..=12, k in 1usize..=5, z in -3.0f64..-0.2) {
        let c = random_coarsening(&mut rng(seed), n);
        prop_assert!(coarse_power_lemma(&c, z, k).unwrap().pass);
    }

    #[test]
    fn filter_matches_spectral_calculus(seed in any::<u64>(), n in 1usize..=10, a in 0usize..=1) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n);
        let spec = random_spec(&mut r, a);
        let ctx = g.norm_context();
        let lap = g.laplacian();
        let x = random_matrix(&mut r, n, 3);
        let f = ResolventFactorization::new(&lap, &ctx, spec.z).unwrap();
        let direct = spec.apply(&f, &x).unwrap();
        let oracle = spectrum(&lap, &ctx).unwrap().apply_function(|l| spec.eval(l), &x);
        prop_assert!((direct - oracle).amax() <= 1e-9);
    }

    #[test]
    fn least_squares_residual_shrinks_with_order(seed in any::<u64>(), z in -2.0f64..-0.2, a in 0usize..=1) {
        let mut r = rng(seed);
        let w = r.random_range(0.5..4.0);
        let grid = uniform_grid(0.0, 10.0, 200);
        let values: Vec<f64> = grid.iter().map(|&l| (-w * l).exp() + 0.1 * (l * w).sin()).collect();
        let mut prev = f64::INFINITY;
        for k in a.max(1)..=6 {
            let fit = fit_filter_to_function(&grid, &values, z, a, k).unwrap();
            let res: f64 = grid.iter().zip(&values).map(|(&l, &v)| (fit.spec.eval(l) - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= prev * (1.0 + 1e-9) + 1e-12, "K = {}: {} > {}", k, res, prev);
            prev = res;
        }
    }

    #[test]
    fn type_one_filters_decay_like_the_resolvent(seed in any::<u64>(), lambda in 0.0f64..1e6) {
        let spec = random_spec(&mut rng(seed), 1);
        let c: f64 = (1..=spec.k_max).map(|k| spec.theta_k(k).abs() / spec.z.abs().powi(k as i32 - 1)).sum();
        prop_assert!(spec.eval(lambda).abs() <= c / (lambda - spec.z) * (1.0 + 1e-12));
    }

    #[test]
    fn bias_only_network_ignores_the_graph(seed in any::<u64>(), n in 2usize..=10, a in 0usize..=1) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n);
        let h = random_graph(&mut r, n);
        let mut m = random_model(&mut r, 2, 2, a, Mode::NodeClassification, None);
        for l in &mut m.layers {
            for w in &mut l.weights {
                w.fill(0.0);
            }
        }
        let ctx = g.norm_context();
        let x = random_matrix(&mut r, n, 2);
        let rep = laplacian_perturbation_check(&m, &ctx, &g.laplacian(), &laplacian_like(&h, &ctx), &x).unwrap();
        prop_assert_eq!(rep.lhs, Some(0.0));
    }

    #[test]
    fn features_are_lipschitz_in_the_input(seed in any::<u64>(), n in 1usize..=10, a in 0usize..=1) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n);
        let layers = r.random_range(1..=3);
        let m = random_model(&mut r, 3, layers, a, Mode::NodeClassification, None);
        let x = random_matrix(&mut r, n, 3);
        let y = &x + random_matrix(&mut r, n, 3) * r.random_range(1e-3..1.0);
        prop_assert!(input_stability_check(&m, &g, &x, &y).unwrap().pass);
    }

    #[test]
    fn features_are_stable_under_laplacian_perturbation(seed in any::<u64>(), n in 2usize..=10, a in 0usize..=1) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n);
        let noise = random_graph(&mut r, n);
        let eps = r.random_range(1e-3..1.0);
        let perturbed = WeightedGraph::new(g.mu().clone(), g.weights() + noise.weights() * eps).unwrap();
        let layers = r.random_range(1..=3);
        let m = random_model(&mut r, 2, layers, a, Mode::NodeClassification, None);
        let x = random_matrix(&mut r, n, 2);
        let ctx = g.norm_context();
        prop_assert!(laplacian_perturbation_check(&m, &ctx, &g.laplacian(), &perturbed.laplacian(), &x).unwrap().pass);
    }

    #[test]
    fn layers_commute_with_node_relabelling(seed in any::<u64>(), n in 1usize..=10, a in 0usize..=1) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let p = DMatrix::from_fn(n, n, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let pg = WeightedGraph::new(&p * g.mu(), &p * g.weights() * p.transpose()).unwrap();
        let m = random_model(&mut r, 3, 1, a, Mode::NodeClassification, None);
        let layer = &m.layers[0];
        let x = random_matrix(&mut r, n, 3);
        let f = ResolventFactorization::new(&g.laplacian(), &g.norm_context(), layer.z).unwrap();
        let pf = ResolventFactorization::new(&pg.laplacian(), &pg.norm_context(), layer.z).unwrap();
        let lhs = layer_forward(layer, &pf, &(&p * &x)).unwrap();
        let rhs = &p * layer_forward(layer, &f, &x).unwrap();
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn baseline_gaps_shrink_with_scale(seed in any::<u64>(), n in 3usize..=10, s1 in 20.0f64..100.0, f in 10.0f64..100.0) {
        let mut r = rng(seed);
        let (g, tau) = random_two_scale(&mut r, n, s1, true);
        let d = decompose(&g, tau).unwrap();
        prop_assume!(d.has_high_part() && no_isolated_regular(&d));
        let d2 = d.with_high_scaled(f).unwrap();
        for kind in [ShiftOperatorKind::GcnRenormalized, ShiftOperatorKind::SymmetricNormalizedLaplacian] {
            let (g1, g2) = (limit_gap(kind, &d).unwrap(), limit_gap(kind, &d2).unwrap());
            // A graph whose regular edges avoid the high part sits on its limit.
            prop_assert!(g2 < g1 || g1 <= 1e-12, "{:?}: {} !< {}", kind, g2, g1);
        }
    }

    #[test]
    fn gcn_limit_support_and_symmetry(seed in any::<u64>(), n in 2usize..=10) {
        let (g, tau) = random_two_scale(&mut rng(seed), n, 50.0, true);
        let d = decompose(&g, tau).unwrap();
        prop_assume!(d.has_high_part());
        let l = limit_operator(ShiftOperatorKind::GcnRenormalized, &d).unwrap();
        prop_assert!((&l - l.transpose()).amax() <= 1e-14);
        let excl = d.excl_reg_weights();
        let attached = d.high_attached();
        for i in 0..n {
            for j in 0..n {
                let expected = d.w_high()[(i, j)] > 0.0 || excl[(i, j)] > 0.0 || (i == j && !attached[i]);
                prop_assert_eq!(l[(i, j)] != 0.0, expected, "entry ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn spectral_limit_has_unit_norm(seed in any::<u64>(), n in 2usize..=10) {
        let (g, tau) = random_two_scale(&mut rng(seed), n, 50.0, true);
        let d = decompose(&g, tau).unwrap();
        prop_assume!(d.has_high_part());
        let l = limit_operator(ShiftOperatorKind::SpectrallyNormalizedLaplacian, &d).unwrap();
        prop_assert!((l.svd(false, false).singular_values.max() - 1.0).abs() <= 1e-10);
    }
}

fn laplacian_like(h: &WeightedGraph, ctx: &resolvnet::WeightedNormContext) -> DMatrix<f64> {
    resolvnet::graph::laplacian_of(h.weights(), ctx.mu())
}

fn no_isolated_regular(d: &resolvnet::ScaleDecomposition) -> bool {
    let attached = d.high_attached();
    let deg: DVector<f64> = DVector::from_fn(attached.len(), |i, _| d.w_reg().row(i).sum());
    (0..attached.len()).all(|i| attached[i] || deg[i] > 0.0)
}
