//! Rayon paths against a one-thread pool. Build with `--no-default-features`
//! to bench the plain-iterator fallback instead.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nonlin_core::regularize::inf_convolve;
use nonlin_core::scheme::DiscreteOperator;
use nonlin_core::solver::{solve_dirichlet, SolverOptions};
use nonlin_core::{Domain, Mesh, MeshFunction, Nonlinearity, Rhs, ScalarField};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let all = rayon::current_num_threads();
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap()),
    ]
}

fn setup(h: f64) -> (Nonlinearity, Rhs, Arc<Mesh>) {
    let domain = Domain::unit_box(2);
    let op = Nonlinearity::isaacs_demo(&domain).unwrap();
    let rhs = Rhs::manufactured(&op, &ScalarField::sin_pi_product(2));
    let mesh = Arc::new(Mesh::build(domain, h, 2).unwrap());
    (op, rhs, mesh)
}

fn assembly(c: &mut Criterion) {
    let (op, rhs, mesh) = setup(1.0 / 64.0);
    let mut g = c.benchmark_group("assemble");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| DiscreteOperator::assemble(&op, &rhs, mesh.clone()).unwrap()))
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let (op, rhs, mesh) = setup(1.0 / 32.0);
    let d = DiscreteOperator::assemble(&op, &rhs, mesh).unwrap();
    let gdata = ScalarField::sin_pi_product(2);
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| solve_dirichlet(&d, &gdata, &opts).unwrap()))
        });
    }
    g.finish();
}

fn convolution(c: &mut Criterion) {
    let mesh = Arc::new(Mesh::build(Domain::unit_box(2), 1.0 / 48.0, 2).unwrap());
    let v = MeshFunction::from_fn(mesh, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + (x[0] - x[1]).abs());
    let mut g = c.benchmark_group("inf_convolve");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| inf_convolve(&v, 0.01).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, assembly, solve, convolution);
criterion_main!(benches);
