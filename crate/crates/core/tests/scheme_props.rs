use std::sync::Arc;

use nonlin_core::mesh::{Domain, Mesh, MeshFunction};
use nonlin_core::operators::{Extremum, MatrixField, Nonlinearity, Rhs, ScalarField};
use nonlin_core::scheme::{consistency_check, monotonicity_check, DiscreteOperator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn operators(h: f64) -> Vec<DiscreteOperator> {
    let sq = Domain::unit_box(2);
    let mesh = Arc::new(Mesh::build(sq.clone(), h, 2).unwrap());
    let f = Rhs::from(ScalarField::named("x1", 2).unwrap());
    let ops = vec![
        Nonlinearity::laplacian(2),
        Nonlinearity::linear(MatrixField::named("one_plus_x1", 2).unwrap(), 1.0, 2.0, &sq).unwrap(),
        Nonlinearity::pucci(2, 0.5, 2.0, Extremum::Max).unwrap(),
        Nonlinearity::isaacs_demo(&sq).unwrap(),
    ];
    ops.iter().map(|op| DiscreteOperator::assemble(op, &f, mesh.clone()).unwrap()).collect()
}

fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // dyadic values keep sums and shifts exact
    (0..n).map(|_| rng.gen_range(-1024i32..1024) as f64 / 1024.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constants_do_not_change_f_h(seed in any::<u64>(), c in -8i32..8) {
        for op in operators(0.125) {
            let u = random_values(op.mesh().len(), seed);
            let shifted: Vec<f64> = u.iter().map(|v| v + c as f64 * 0.25).collect();
            for r in 0..op.mesh().interior_points().len() {
                let a = op.eval_rank(&u, r);
                let b = op.eval_rank(&shifted, r);
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn linear_scheme_is_homogeneous(seed in any::<u64>(), t in -3.0f64..3.0) {
        let sq = Domain::unit_box(2);
        let mesh = Arc::new(Mesh::build(sq.clone(), 0.125, 1).unwrap());
        let op = Nonlinearity::linear(MatrixField::named("one_plus_x1", 2).unwrap(), 1.0, 2.0, &sq).unwrap();
        let f = ScalarField::named("x1", 2).unwrap();
        let d = DiscreteOperator::assemble(&op, &Rhs::from(f.clone()), mesh.clone()).unwrap();
        let u = random_values(mesh.len(), seed);
        let tu: Vec<f64> = u.iter().map(|v| t * v).collect();
        for (r, &i) in mesh.interior_points().iter().enumerate() {
            let fx = f.eval(mesh.point(i));
            let lhs = d.eval_rank(&tu, r) + fx;
            let rhs = t * (d.eval_rank(&u, r) + fx);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn every_assembled_operator_is_monotone(seed in any::<u64>()) {
        for op in operators(0.125) {
            let r = monotonicity_check(&op, 200, seed).unwrap();
            prop_assert_eq!(r.violations, 0);
        }
    }
}

#[test]
fn catalog_is_consistent_with_measured_k() {
    for op in operators(1.0 / 16.0) {
        let k = op.consistency_constant();
        for name in ["half_norm_sq", "cubic_x1", "sin_pi_product", "exp_sum"] {
            let phi = ScalarField::named(name, 2).unwrap();
            let r = consistency_check(&op, &phi, k).unwrap();
            assert!(r.passed, "{name}: {r:?}");
        }
    }
}

#[test]
fn sampled_polynomials_are_reproduced() {
    let ops = operators(1.0 / 16.0);
    let mesh = ops[0].mesh().clone();
    let phi = ScalarField::named("cubic_x1", 2).unwrap();
    let u = MeshFunction::from_fn(mesh.clone(), |x| phi.eval(x));
    // δ² of x³ along e₁ is 6x exactly; the Laplacian leaf gives 6x − x
    for (r, &i) in mesh.interior_points().iter().enumerate() {
        let x = mesh.point(i)[0];
        assert!((ops[0].eval_rank(u.values(), r) - 5.0 * x).abs() < 1e-9);
    }
}
