use std::sync::Arc;

use nonlin_core::error::Error;
use nonlin_core::mesh::{Domain, Mesh, MeshFunction};
use nonlin_core::operators::{random_symmetric, ScalarField, SymMat};
use nonlin_core::solver::holder_norm;
use nonlin_core::viscosity::{
    abp_check, check_sliding, concave_envelope, delta_solution_check, doubling_gap, sliding_paraboloid, touch,
    DeltaCheckConfig, DeltaSide, Side, TouchOutcome,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(h: f64) -> Arc<Mesh> {
    Arc::new(Mesh::build(Domain::unit_box(2), h, 1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emitted_certificates_verify(seed in any::<u64>(), above in any::<bool>()) {
        let m = square(1.0 / 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = rng.gen_range(0.1..2.0);
        let v = MeshFunction::new(
            m.clone(),
            (0..m.len()).map(|i| amp * (4.0 * m.point(i)[0]).sin() * m.point(i)[1] + rng.gen_range(-0.05..0.05)).collect(),
        )
        .unwrap();
        let b = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let mm = random_symmetric(2, 20.0, &mut rng);
        let x = m.eroded_points(0.25)[rng.gen_range(0..m.eroded_points(0.25).len())];
        let side = if above { Side::Above } else { Side::Below };
        if let TouchOutcome::Touched(c) = touch(&v, &b, &mm, x, 0.2, side, 0.2) {
            prop_assert!(c.verify(&v));
            prop_assert_eq!(c.paraboloid.eval(&c.touch_point), v.get(c.touch_index));
            match side {
                Side::Above => prop_assert!(c.residual_min >= -1e-12),
                Side::Below => prop_assert!(c.residual_max <= 1e-12),
            }
            prop_assert!(m.distance(c.touch_index) >= 0.2);
        }
    }

    #[test]
    fn envelope_is_concave_and_above(seed in any::<u64>(), two_d in any::<bool>()) {
        let m = if two_d {
            square(1.0 / 8.0)
        } else {
            Arc::new(Mesh::build(Domain::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 40.0, 1).unwrap())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = MeshFunction::new(m.clone(), (0..m.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let env = concave_envelope(&u).unwrap();
        let dirs: Vec<Vec<i64>> = if two_d { vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, -1]] } else { vec![vec![1]] };
        for i in 0..m.len() {
            prop_assert!(env.envelope.get(i) >= u.get(i));
            for k in &dirs {
                if let (Some(p), Some(q)) = (m.shifted(i, k, 1), m.shifted(i, k, -1)) {
                    let d2 = env.envelope.get(p) + env.envelope.get(q) - 2.0 * env.envelope.get(i);
                    prop_assert!(d2 <= 1e-10, "second difference {} at {:?}", d2, m.point(i));
                }
            }
        }
        prop_assert!(!env.contact.is_empty());
    }
}

#[test]
fn classical_solution_is_a_delta_solution() {
    let h = 1.0 / 32.0;
    let m = square(h);
    let u = ScalarField::sin_pi_product(2);
    let v = MeshFunction::from_fn(m.clone(), |x| u.eval(x));
    let g = |mm: &SymMat, x: &[f64]| mm.trace() - u.hessian(x).trace();
    for side in [DeltaSide::Super, DeltaSide::Sub] {
        let mut cfg = DeltaCheckConfig::new(h, 4000, side);
        cfg.slack = h;
        cfg.seed = 17;
        let r = delta_solution_check(&v, &g, &cfg).unwrap();
        assert!(r.accepted > 100, "{r:?}");
        assert_eq!(r.violations, 0, "{r:?}");
    }
}

#[test]
fn delta_check_is_deterministic_and_flags_dips() {
    let h = 1.0 / 32.0;
    let m = square(h);
    let v = MeshFunction::from_fn(m.clone(), |x| -0.5 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)));
    let g = |mm: &SymMat, _: &[f64]| mm.trace() + 2.0;
    let cfg = DeltaCheckConfig::new(2.0 * h, 3000, DeltaSide::Both);
    let a = delta_solution_check(&v, &g, &cfg).unwrap();
    let b = delta_solution_check(&v, &g, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.violations, 0);
    // a narrow dip is touched from below by steep convex paraboloids
    let mut dip = v.clone();
    let c = m.nearest_point(&[0.5, 0.5]);
    dip.values_mut()[c] -= 0.5;
    let mut cfg = DeltaCheckConfig::new(2.0 * h, 3000, DeltaSide::Super);
    cfg.m_max = Some(400.0);
    let r = delta_solution_check(&dip, &g, &cfg).unwrap();
    assert!(r.violations > 0, "{r:?}");
}

#[test]
fn abp_bound_on_bumps() {
    for (dom, h) in [(Domain::unit_box(2), 1.0 / 16.0), (Domain::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 64.0)] {
        let m = Arc::new(Mesh::build(dom, h, 1).unwrap());
        let u = MeshFunction::from_fn(m.clone(), |x| {
            let r2: f64 = x.iter().map(|t| (t - 0.4).powi(2)).sum();
            (0.05 - r2).max(0.0) - 0.01
        });
        let r = abp_check(&u, 10.0).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.mass > 0.0);
    }
}

#[test]
fn sliding_on_holder_kink() {
    let m = square(1.0 / 32.0);
    let eta = 0.5;
    let w = MeshFunction::from_fn(m.clone(), |x| {
        let r = ((x[0] - 0.45).powi(2) + (x[1] - 0.55).powi(2)).sqrt();
        (0.3 - r).max(0.0).powf(eta) - 0.05
    });
    let holder = holder_norm(&w, eta, 2_000_000, 0).unwrap();
    assert!(holder.exact);
    for frac in [0.1, 0.5, 1.0] {
        let s = sliding_paraboloid(&w, frac * w.max(), None).unwrap();
        let c = check_sliding(&w, &s, holder.value, eta);
        assert!(c.holds(1e-9), "{c:?}");
    }
}

#[test]
fn doubling_uses_measured_lipschitz_and_caps_size() {
    let m = Arc::new(Mesh::build(Domain::unit_box(2), 0.1, 1).unwrap());
    let v = MeshFunction::from_fn(m.clone(), |x| x[0] * x[1]);
    let w = MeshFunction::from_fn(m.clone(), |x| x[0] * x[1] + 0.01 * (3.0 * x[0]).sin() * x[1] * (1.0 - x[1]) * x[0] * (1.0 - x[0]));
    let r = doubling_gap(&v, &w, 50.0, None).unwrap();
    assert!(r.holds(1e-12), "{r:?}");
    let big = Arc::new(Mesh::build(Domain::unit_box(2), 0.005, 1).unwrap());
    let z = MeshFunction::zeros(big);
    assert!(matches!(doubling_gap(&z, &z, 1.0, None), Err(Error::MeshTooLarge { .. })));
}
