use std::sync::Arc;

use nonlin_core::mesh::{Domain, Mesh, MeshFunction};
use nonlin_core::operators::{Nonlinearity, Rhs, ScalarField};
use nonlin_core::scheme::DiscreteOperator;
use nonlin_core::solver::{
    discrete_comparison_test, solve_dirichlet, solve_with_boundary, LinearSolver, SolveMethod, SolverOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn isaacs(h: f64) -> DiscreteOperator {
    let sq = Domain::unit_box(2);
    let mesh = Arc::new(Mesh::build(sq.clone(), h, 2).unwrap());
    let op = Nonlinearity::isaacs_demo(&sq).unwrap();
    DiscreteOperator::assemble(&op, &Rhs::from(ScalarField::named("x1", 2).unwrap()), mesh).unwrap()
}

fn random_fn(mesh: &Arc<Mesh>, rng: &mut ChaCha8Rng, scale: f64) -> MeshFunction {
    let v = (0..mesh.len()).map(|_| rng.gen_range(-scale..scale)).collect();
    MeshFunction::new(mesh.clone(), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn boundary_exact_and_residual_fresh(seed in any::<u64>()) {
        let op = isaacs(1.0 / 12.0);
        let mesh = op.mesh().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_fn(&mesh, &mut rng, 1.0);
        let (v, rep) = solve_with_boundary(&op, &g, None, &SolverOptions::default()).unwrap();
        for &i in mesh.boundary_points() {
            prop_assert_eq!(v.get(i).to_bits(), g.get(i).to_bits());
        }
        prop_assert_eq!(rep.residual.to_bits(), op.sup_residual(v.values()).to_bits());
        prop_assert!(rep.converged);
    }

    #[test]
    fn solution_is_unique_and_monotone_in_data(seed in any::<u64>()) {
        let op = isaacs(1.0 / 12.0);
        let mesh = op.mesh().clone();
        let opts = SolverOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g1 = random_fn(&mesh, &mut rng, 1.0);
        let bump = random_fn(&mesh, &mut rng, 0.3);
        let g2 = MeshFunction::new(mesh.clone(), g1.values().iter().zip(bump.values()).map(|(a, b)| a + b.abs()).collect()).unwrap();
        let (v1, _) = solve_with_boundary(&op, &g1, None, &opts).unwrap();
        let init = random_fn(&mesh, &mut rng, 10.0);
        let (v1b, _) = solve_with_boundary(&op, &g1, Some(&init), &opts).unwrap();
        prop_assert!(v1.sup_distance(&v1b) <= 10.0 * opts.tol);
        let (v2, _) = solve_with_boundary(&op, &g2, None, &opts).unwrap();
        let out = discrete_comparison_test(&op, &v1, &v2, opts.tol, opts.tol).unwrap();
        prop_assert!(out.boundary_ordered && out.interior_ordered);
    }
}

#[test]
fn all_solver_paths_agree() {
    let op = isaacs(1.0 / 10.0);
    let g = ScalarField::named("exp_sum", 2).unwrap();
    let base = SolverOptions::default();
    let (v, _) = solve_dirichlet(&op, &g, &base).unwrap();
    let gs = SolverOptions { linear_solver: LinearSolver::GaussSeidel, ..base };
    let (w, rep) = solve_dirichlet(&op, &g, &gs).unwrap();
    assert!(rep.converged);
    assert!(v.sup_distance(&w) < 1e-9);
    let relax = SolverOptions { method: SolveMethod::Relax, tol: 1e-8, max_iter: 200_000, ..base };
    let (r, rep) = solve_dirichlet(&op, &g, &relax).unwrap();
    assert!(rep.converged, "{rep:?}");
    assert!(v.sup_distance(&r) < 1e-6);
}
