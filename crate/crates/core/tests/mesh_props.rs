use nonlin_core::mesh::{Domain, Mesh};
use proptest::prelude::*;

fn domain_strategy() -> impl Strategy<Value = Domain> {
    prop_oneof![
        (1usize..=3, 0.5f64..2.0).prop_map(|(n, s)| Domain::Box { lo: vec![-0.3; n], hi: vec![s; n] }),
        (1usize..=3, 0.4f64..1.5).prop_map(|(n, r)| Domain::ball(vec![0.1; n], r)),
    ]
}

fn lattice_offsets(n: usize, width: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut k = vec![-width; n];
    loop {
        let r2: i64 = k.iter().map(|v| v * v).sum();
        if r2 > 0 && r2 <= width * width {
            out.push(k.clone());
        }
        let mut a = 0;
        loop {
            if a == n {
                return out;
            }
            k[a] += 1;
            if k[a] <= width {
                break;
            }
            k[a] = -width;
            a += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interior_and_boundary_partition_the_mesh(d in domain_strategy(), steps in 6u32..14, width in 1usize..=2) {
        let h = 1.0 / steps as f64;
        if let Ok(m) = Mesh::build(d.clone(), h, width) {
            let mut seen = vec![0u8; m.len()];
            for &i in m.interior_points() { seen[i] += 1; }
            for &i in m.boundary_points() { seen[i] += 1; }
            prop_assert!(seen.iter().all(|&c| c == 1));
            for i in 0..m.len() {
                prop_assert_eq!(m.is_interior(i), m.distance(i) > width as f64 * h);
            }
        }
    }

    #[test]
    fn stencil_neighbors_of_interior_points_exist(d in domain_strategy(), steps in 6u32..12, width in 1usize..=2) {
        let h = 1.0 / steps as f64;
        if let Ok(m) = Mesh::build(d.clone(), h, width) {
            let offsets = lattice_offsets(m.dim(), width as i64);
            for &i in m.interior_points() {
                for k in &offsets {
                    prop_assert!(m.shifted(i, k, 1).is_some(), "missing neighbor {:?} of {:?}", k, m.point(i));
                }
            }
        }
    }

    #[test]
    fn erosion_is_monotone(d in domain_strategy(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let m = Mesh::build_lattice(d, 0.1, 1).unwrap();
        let (big, small) = if a >= b { (a, b) } else { (b, a) };
        let inner = m.eroded_points(big);
        let outer = m.eroded_points(small);
        prop_assert!(inner.iter().all(|i| outer.contains(i)));
    }
}

#[test]
fn strict_interior_examples() {
    let line = |h: f64| Mesh::build(Domain::Box { lo: vec![0.0], hi: vec![1.0] }, h, 1).unwrap();
    let m = line(0.25);
    assert_eq!(m.len(), 5);
    let interior: Vec<f64> = m.interior_points().iter().map(|&i| m.point(i)[0]).collect();
    assert_eq!(interior, vec![0.5]);
    let m = line(0.2);
    let interior: Vec<f64> = m.interior_points().iter().map(|&i| m.point(i)[0]).collect();
    assert_eq!(interior.len(), 2);
    assert!((interior[0] - 0.4).abs() < 1e-12 && (interior[1] - 0.6).abs() < 1e-12);
}

#[test]
fn wide_stencil_on_tiny_domain_is_degenerate() {
    let r = Mesh::build(Domain::unit_box(2), 0.25, 2);
    assert!(r.is_err());
}
