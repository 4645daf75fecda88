use nonlin_core::mesh::Domain;
use nonlin_core::operators::{
    random_psd, random_symmetric, sample_domain, Extremum, MatrixField, Nonlinearity, SymMat,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn catalog() -> Vec<Nonlinearity> {
    let sq = Domain::unit_box(2);
    vec![
        Nonlinearity::laplacian(2),
        Nonlinearity::linear(MatrixField::named("one_plus_x1", 2).unwrap(), 1.0, 2.0, &sq).unwrap(),
        Nonlinearity::pucci(2, 0.5, 2.0, Extremum::Max).unwrap(),
        Nonlinearity::pucci(2, 0.5, 2.0, Extremum::Min).unwrap(),
        Nonlinearity::isaacs_demo(&sq).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psd_increments_never_decrease_f(seed in any::<u64>(), rank_one in any::<bool>()) {
        let sq = Domain::unit_box(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_domain(&sq, &mut rng);
        let a = random_symmetric(2, 3.0, &mut rng);
        let p = random_psd(2, &mut rng, rank_one);
        for op in catalog() {
            let lo = op.eval(&a, &x);
            let hi = op.eval(&a.plus(&p), &x);
            prop_assert!(hi >= lo - 1e-12 * (1.0 + lo.abs()));
            prop_assert!(hi - lo >= op.lambda() * p.trace() - 1e-9);
            prop_assert!(hi - lo <= op.big_lambda() * p.trace() + 1e-9);
        }
    }

    #[test]
    fn perturbations_bracket_and_grow_with_eps(seed in any::<u64>(), e1 in 0.02f64..0.2, e2 in 0.02f64..0.2) {
        let sq = Domain::unit_box(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_domain(&sq, &mut rng);
        let m = random_symmetric(2, 2.0, &mut rng);
        let (small, large) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        // a common sub-lattice keeps the smaller sample set inside the larger one
        let res = 0.01;
        for op in catalog() {
            let f = op.eval(&m, &x);
            let lo_s = op.perturb_inf(&sq, small, res).unwrap().eval(&m, &x);
            let lo_l = op.perturb_inf(&sq, large, res).unwrap().eval(&m, &x);
            let hi_s = op.perturb_sup(&sq, small, res).unwrap().eval(&m, &x);
            let hi_l = op.perturb_sup(&sq, large, res).unwrap().eval(&m, &x);
            prop_assert!(lo_s <= f && f <= hi_s);
            prop_assert!(lo_l <= lo_s && hi_s <= hi_l);
        }
    }

    #[test]
    fn lipschitz_in_x(seed in any::<u64>()) {
        let sq = Domain::unit_box(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_domain(&sq, &mut rng);
        let y = sample_domain(&sq, &mut rng);
        let m = random_symmetric(2, 5.0, &mut rng);
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        for op in catalog() {
            let gap = (op.eval(&m, &x) - op.eval(&m, &y)).abs();
            prop_assert!(gap <= op.kappa() * d * (m.spectral_norm() + 1.0) + 1e-12);
        }
    }

    #[test]
    fn spectral_norm_is_a_norm(seed in any::<u64>(), t in -4.0f64..4.0, n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(n, 1.0, &mut rng);
        let b = random_symmetric(n, 1.0, &mut rng);
        let na = a.spectral_norm();
        prop_assert!(na >= 0.0);
        prop_assert!((a.scaled(t).spectral_norm() - t.abs() * na).abs() <= 1e-12 * (1.0 + na));
        prop_assert!(a.plus(&b).spectral_norm() <= na + b.spectral_norm() + 1e-12);
        prop_assert_eq!(SymMat::zeros(n).spectral_norm(), 0.0);
    }
}
