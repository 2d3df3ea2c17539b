use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;
use rma_core::analysis::morozov_range;
use rma_core::pde::{Mesh, Side};
use rma_core::sketch::{failure_probability, required_n, required_n_union};
use rma_core::{GaussianPrior, SketchDistribution, SketchMatrix};

fn any_distribution() -> impl Strategy<Value = SketchDistribution> {
    prop_oneof![
        Just(SketchDistribution::gaussian()),
        Just(SketchDistribution::rademacher()),
        Just(SketchDistribution::achlioptas()),
        Just(SketchDistribution::uniform()),
        (1.0f64..200.0).prop_map(|s| SketchDistribution::sparse_sign(s).unwrap()),
    ]
}

fn vector(len: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0f64..10.0, len).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sketch_is_a_pure_function_of_its_inputs(
        dist in any_distribution(), n in 1usize..40, big_n in 1usize..80, seed in any::<u64>()
    ) {
        let a = SketchMatrix::build(dist, n, big_n, seed).unwrap();
        let b = SketchMatrix::build(dist, n, big_n, seed).unwrap();
        prop_assert_eq!(a.to_dense(), b.to_dense());
        prop_assert_eq!((a.nrows(), a.ncols()), (n, big_n));
    }

    #[test]
    fn apply_is_scale_equivariant(
        dist in any_distribution(), seed in any::<u64>(), v in vector(60), alpha in -100.0f64..100.0
    ) {
        let s = SketchMatrix::build(dist, 15, 60, seed).unwrap();
        let lhs = s.apply(&(&v * alpha)).unwrap();
        let rhs = s.apply(&v).unwrap() * alpha;
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn sparse_and_dense_products_agree(
        s in 3.0f64..150.0, seed in any::<u64>(), v in vector(200), y in vector(20)
    ) {
        let sketch = SketchMatrix::build(SketchDistribution::sparse_sign(s).unwrap(), 20, 200, seed).unwrap();
        prop_assert!(sketch.is_sparse());
        let dense = sketch.to_dense();
        prop_assert!((sketch.apply(&v).unwrap() - &dense * &v).amax() <= 1e-12);
        prop_assert!((sketch.apply_transpose(&y).unwrap() - dense.transpose() * &y).amax() <= 1e-12);
    }

    #[test]
    fn sparse_entries_take_three_values(s in 1.0f64..50.0, seed in any::<u64>()) {
        let dist = SketchDistribution::sparse_sign(s).unwrap();
        let sketch = SketchMatrix::build(dist, 10, 40, seed).unwrap();
        let scale = (s / 10.0).sqrt();
        for &x in sketch.to_dense().iter() {
            prop_assert!(x == 0.0 || (x.abs() - scale).abs() <= 1e-15 * scale);
        }
    }

    #[test]
    fn morozov_range_is_ordered_and_brackets_tau_prime(tau in 1e-6f64..1e3, eps in 1e-6f64..0.999) {
        let (lo, hi) = morozov_range(tau, eps).unwrap();
        prop_assert!(lo < tau && tau < hi);
        prop_assert!((lo * (1.0 + eps) - tau).abs() <= 1e-12 * tau);
        prop_assert!((hi * (1.0 - eps) - tau).abs() <= 1e-12 * tau);
    }

    #[test]
    fn required_n_meets_its_failure_rate(eps in 0.05f64..1.0, beta in 0.01f64..20.0) {
        let c = 0.125;
        let n = required_n(eps, beta, c).unwrap();
        prop_assert!(failure_probability(n, eps, c) <= (-beta).exp() * (1.0 + 1e-12));
        if n > 1 {
            prop_assert!(failure_probability(n - 1, eps, c) > (-beta).exp());
        }
    }

    #[test]
    fn required_n_union_is_monotone(eps in 0.05f64..1.0, alpha in 0.0f64..5.0, m in 2.0f64..1e6) {
        let c = 0.125;
        let a = required_n_union(eps, alpha, m, c).unwrap();
        prop_assert!(required_n_union(eps, alpha, 2.0 * m, c).unwrap() >= a);
        prop_assert!(required_n_union(eps, alpha + 0.5, m, c).unwrap() >= a);
        prop_assert!(required_n_union(eps * 0.9, alpha, m, c).unwrap() >= a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prior_cost_depends_only_on_the_offset(shift in vector(25), offset in vector(25)) {
        let mesh = Arc::new(Mesh::unit_square(4, 4, Side::Bottom).unwrap());
        let centered = GaussianPrior::with_zero_mean(mesh.clone(), 0.1, 1.0).unwrap();
        let moved = GaussianPrior::new(mesh, 0.1, 1.0, shift.clone()).unwrap();
        let a = centered.cost(&offset).unwrap();
        let b = moved.cost(&(&shift + &offset)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        let g = moved.gradient(&(&shift + &offset)).unwrap();
        prop_assert!((g - centered.gradient(&offset).unwrap()).norm() <= 1e-9 * (1.0 + a.sqrt()));
    }
}
