use std::path::PathBuf;
use std::sync::Arc;

use nonlin_core::error::Error;
use nonlin_core::harness::{
    fit_rate, run_barrier, run_delta, run_delta_on, run_freeze, run_perturb, run_rates, validate_scheme,
    ProblemConfig, RowStatus,
};
use nonlin_core::mesh::{Domain, Mesh};
use nonlin_core::scheme::DiscreteOperator;
use proptest::prelude::*;

fn config(name: &str) -> ProblemConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ProblemConfig::from_path(&path).unwrap()
}

fn inline(text: &str) -> ProblemConfig {
    ProblemConfig::from_json(text).unwrap()
}

const SQUARE: &str = r#"{"kind": "box", "lo": [0, 0], "hi": [1, 1]}"#;

proptest! {
    #[test]
    fn fit_matches_two_point_ratio(p in 0.2f64..4.0, c in 0.01f64..100.0, n in 3usize..7) {
        let pts: Vec<(f64, f64)> = (0..n).map(|k| {
            let h = 0.5f64.powi(k as i32 + 1);
            (h, c * h.powf(p))
        }).collect();
        let fit = fit_rate(&pts).unwrap();
        let two_point = (pts[0].1 / pts[n - 1].1).ln() / (pts[0].0 / pts[n - 1].0).ln();
        let resid = (1.0 - fit.r_squared).abs().sqrt();
        prop_assert!((fit.slope - two_point).abs() <= 1e-9 + resid);
    }
}

#[test]
fn rates_are_deterministic() {
    let mut cfg = config("isaacs.json");
    cfg.h_list = vec![0.125, 0.0625, 0.03125];
    let a = run_rates(&cfg, &cfg.h_list).unwrap();
    let b = run_rates(&cfg, &cfg.h_list).unwrap();
    let strip = |csv: String| -> Vec<String> {
        csv.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 2).map(|(_, s)| s).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(strip(a.to_csv()), strip(b.to_csv()));
    assert_eq!(a.slope.map(f64::to_bits), b.slope.map(f64::to_bits));
}

#[test]
fn affine_solution_has_no_error_and_no_slope() {
    let cfg = inline(&format!(
        r#"{{"domain": {SQUARE}, "operator": {{"kind": "catalog", "id": "isaacs_demo"}}, "f": "manufactured",
            "exact": {{"kind": "affine", "value": 0.5, "gradient": [1.0, -2.0]}}}}"#
    ));
    let r = run_rates(&cfg, &[0.125, 0.0625, 0.03125]).unwrap();
    assert!(r.rows.iter().all(|row| row.error <= 1e-9), "{r:?}");
    assert!(r.slope.is_none());
    assert!(r.passed());
}

#[test]
fn rates_reject_bad_lists() {
    let cfg = config("laplace.json");
    assert!(matches!(run_rates(&cfg, &[0.1, 0.2, 0.05]), Err(Error::Config(_))));
    assert!(matches!(run_rates(&cfg, &[0.1, 0.05]), Err(Error::Config(_))));
    let no_exact = config("perturb.json");
    assert!(run_rates(&no_exact, &[0.25, 0.125, 0.0625]).is_err());
}

#[test]
fn tiny_theta_reproduces_the_discretization_error() {
    let mut cfg = config("laplace.json");
    cfg.h = 1.0 / 16.0;
    cfg.delta_samples = 0;
    let d = run_delta(&cfg, &[1e-12]).unwrap();
    let r = run_rates(&cfg, &[0.25, 0.125, 0.0625]).unwrap();
    let at = r.rows.iter().find(|row| row.param == 0.0625).unwrap().error;
    assert!((d.rows[0].error - at).abs() < 1e-12);
}

#[test]
fn corrupted_solution_fails_verification_and_is_excluded() {
    let mut cfg = config("laplace.json");
    cfg.delta_samples = 3000;
    let p = cfg.resolve().unwrap();
    let s = p.solve(cfg.h).unwrap();
    let mut spiked = s.u.clone();
    let c = spiked.mesh().nearest_point(&[0.5, 0.5]);
    spiked.values_mut()[c] -= 0.5;
    let thetas = [0.0016, 0.0009, 0.0004];
    let r = run_delta_on(&cfg, &p, &s.op, &spiked, &thetas).unwrap();
    assert!(r.rows.iter().any(|row| row.status == RowStatus::Failed), "{r:?}");
    assert!(!r.passed());
    let clean = run_delta_on(&cfg, &p, &s.op, &s.u, &thetas).unwrap();
    assert!(clean.rows.iter().all(|row| row.status != RowStatus::Failed), "{clean:?}");
    assert!(clean.passed());
}

#[test]
fn freezing_an_x_independent_problem_changes_nothing() {
    let cfg = inline(&format!(
        r#"{{"domain": {SQUARE}, "operator": {{"kind": "laplacian"}}, "f": "one", "g": "half_norm_sq",
            "stencil_width": 1, "h": 0.03125}}"#
    ));
    let r = run_freeze(&cfg, &[0.5, 0.5], &[0.3, 0.2, 0.1]).unwrap();
    assert!(r.rows.iter().all(|row| row.error <= 2.0 * cfg.solver.tol), "{r:?}");
    assert!(run_freeze(&cfg, &[0.2, 0.5], &[0.3, 0.2, 0.1]).is_err());
}

#[test]
fn halving_r_reduces_the_frozen_error_fourfold() {
    let cfg = config("linear_vc.json");
    let r = run_freeze(&cfg, &[0.5, 0.5], &[0.2, 0.1, 0.05]).unwrap();
    for w in r.rows.windows(2) {
        assert!(w[1].error >= 4.0 * w[0].error, "{r:?}");
    }
}

#[test]
fn perturbing_an_x_independent_problem_changes_nothing() {
    let cfg = inline(&format!(
        r#"{{"domain": {SQUARE}, "operator": {{"kind": "pucci", "lambda": 0.5, "big_lambda": 2.0, "sign": "min"}},
            "f": "one", "g": "zero", "h": 0.0625}}"#
    ));
    let r = run_perturb(&cfg, &[0.2, 0.1, 0.05]).unwrap();
    assert!(r.rows.iter().all(|row| row.error <= 2.0 * cfg.solver.tol), "{r:?}");
    assert!(r.passed());
}

#[test]
fn barrier_examples() {
    let cfg = config("laplace.json");
    let tiny = run_barrier(&cfg, &[1e-12]).unwrap();
    assert!(tiny.rows[0].error <= 2.0 * cfg.solver.tol);
    let one = run_barrier(&cfg, &[1.0]).unwrap();
    assert!(one.passed());
    assert!(one.rows[0].error <= 1.0);
    assert!(one.rows[0].error > 0.0);
}

#[test]
fn non_monotone_schemes_fail_revalidation() {
    let mesh = Arc::new(Mesh::build(Domain::unit_box(2), 0.125, 1).unwrap());
    let rhs = vec![0.0; mesh.interior_points().len()];
    let op = DiscreteOperator::from_direction_weights(mesh, &[1.0, -0.5], &rhs).unwrap();
    assert!(validate_scheme(&op, 0).is_err());
}

#[test]
fn config_diagnostics() {
    let unknown = format!(r#"{{"domain": {SQUARE}, "operator": {{"kind": "laplacian"}}, "f": "one", "colour": 1}}"#);
    let Err(Error::Config(msg)) = ProblemConfig::from_json(&unknown) else { panic!() };
    assert!(msg.contains("colour"), "{msg}");
    let bad_id = format!(r#"{{"domain": {SQUARE}, "operator": {{"kind": "catalog", "id": "nope"}}, "f": "one"}}"#);
    let Err(Error::Config(msg)) = ProblemConfig::from_json(&bad_id) else { panic!() };
    assert!(msg.contains("operator"), "{msg}");
}
