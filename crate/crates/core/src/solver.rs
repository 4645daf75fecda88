//! Solvers for the discrete Dirichlet problem `F_h[v] = 0` on interior points,
//! `v = g` on boundary points, plus comparison and Hölder diagnostics.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::{dist, dist2, MeshFunction};
use crate::operators::{Nonlinearity, Rhs, ScalarField};
use crate::par;
use crate::scheme::DiscreteOperator;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    /// Howard policy iteration, nested over the extremum levels.
    #[default]
    Policy,
    /// Damped explicit iteration `v ← v + τ F_h[v]`.
    Relax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Unpivoted banded LU of the frozen-control M-matrix.
    #[default]
    Banded,
    /// Gauss–Seidel sweeps to `1e-12` relative residual.
    GaussSeidel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: SolveMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub linear_solver: LinearSolver,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { method: SolveMethod::Policy, tol: 1e-10, max_iter: 200, linear_solver: LinearSolver::Banded }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolveMethod,
    /// Outer policy improvements, or relaxation sweeps.
    pub iterations: usize,
    pub linear_solves: usize,
    /// `max |F_h[v]|` over interior points, evaluated after the solve.
    pub residual: f64,
    pub elapsed_s: f64,
    pub converged: bool,
}

/// Solves with boundary data `g` and the nearest-boundary-value initial guess.
pub fn solve_dirichlet(op: &DiscreteOperator, g: &ScalarField, opts: &SolverOptions) -> Result<(MeshFunction, SolveReport)> {
    let bdry = MeshFunction::from_fn(op.mesh().clone(), |x| g.eval(x));
    solve_with_boundary(op, &bdry, None, opts)
}

/// Like [`solve_dirichlet`] but starting from `init` on interior points.
pub fn solve_dirichlet_from(
    op: &DiscreteOperator,
    g: &ScalarField,
    init: &MeshFunction,
    opts: &SolverOptions,
) -> Result<(MeshFunction, SolveReport)> {
    let bdry = MeshFunction::from_fn(op.mesh().clone(), |x| g.eval(x));
    solve_with_boundary(op, &bdry, Some(init), opts)
}

/// Solves using the boundary-point entries of `boundary` as Dirichlet data.
/// Interior entries of `init` (if given) seed the iteration.
pub fn solve_with_boundary(
    op: &DiscreteOperator,
    boundary: &MeshFunction,
    init: Option<&MeshFunction>,
    opts: &SolverOptions,
) -> Result<(MeshFunction, SolveReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let mesh = op.mesh().clone();
    if boundary.values().len() != mesh.len() {
        return Err(Error::InvalidArgument("boundary data lives on a different mesh".into()));
    }
    if mesh.boundary_points().iter().any(|&i| !boundary.get(i).is_finite()) {
        return Err(Error::InvalidArgument("boundary values must be finite".into()));
    }
    let start = Instant::now();
    let mut u = match init {
        Some(v) => {
            if v.values().len() != mesh.len() {
                return Err(Error::InvalidArgument("initial guess lives on a different mesh".into()));
            }
            let mut u = v.values().to_vec();
            for &i in mesh.boundary_points() {
                u[i] = boundary.get(i);
            }
            u
        }
        None => nearest_boundary_extension(boundary),
    };
    let (iterations, linear_solves) = match opts.method {
        SolveMethod::Policy => {
            let mut state = Howard::new(op, opts);
            state.run(&mut u)?;
            (state.outer_iterations, state.linear_solves)
        }
        SolveMethod::Relax => (relax(op, &mut u, opts), 0),
    };
    let residual = op.sup_residual(&u);
    let report = SolveReport {
        method: opts.method,
        iterations,
        linear_solves,
        residual,
        elapsed_s: start.elapsed().as_secs_f64(),
        converged: residual <= opts.tol,
    };
    Ok((MeshFunction::new(mesh, u)?, report))
}

/// Boundary values copied to each interior point from its nearest boundary point.
pub fn nearest_boundary_extension(boundary: &MeshFunction) -> Vec<f64> {
    let mesh = boundary.mesh().clone();
    let bp = mesh.boundary_points();
    par::map_range(mesh.len(), |i| {
        if !mesh.is_interior(i) {
            return boundary.get(i);
        }
        let x = mesh.point(i);
        let mut best = (f64::INFINITY, 0);
        for &b in bp {
            let d = dist2(x, mesh.point(b));
            if d < best.0 {
                best = (d, b);
            }
        }
        boundary.get(best.1)
    })
}

fn relax(op: &DiscreteOperator, u: &mut [f64], opts: &SolverOptions) -> usize {
    let interior = op.mesh().interior_points();
    let nint = interior.len();
    let inv = op.inv_step2();
    let mut diag_max: f64 = 0.0;
    for r in 0..nint {
        for l in op.leaves(r) {
            let s: f64 = op.leaf_weights(l).iter().zip(inv).map(|(w, s)| w * s).sum();
            diag_max = diag_max.max(2.0 * s);
        }
    }
    let tau = 0.9 / diag_max.max(f64::MIN_POSITIVE);
    for it in 0..opts.max_iter {
        let res = op.residual(u);
        if res.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.tol {
            return it;
        }
        for (r, f) in res.iter().enumerate() {
            u[interior[r]] += tau * f;
        }
    }
    opts.max_iter
}

/// Nested policy iteration. `path[r·L + l]` is the option chosen at level `l`
/// for interior rank `r`; only the branch on the current path matters.
struct Howard<'a> {
    op: &'a DiscreteOperator,
    opts: &'a SolverOptions,
    levels: usize,
    path: Vec<u32>,
    outer_iterations: usize,
    linear_solves: usize,
    band: Option<(usize, usize)>,
}

impl<'a> Howard<'a> {
    fn new(op: &'a DiscreteOperator, opts: &'a SolverOptions) -> Self {
        let levels = op.level_kinds().len();
        let nint = op.mesh().interior_points().len();
        Self { op, opts, levels, path: vec![0; nint * levels], outer_iterations: 0, linear_solves: 0, band: None }
    }

    fn run(&mut self, u: &mut [f64]) -> Result<()> {
        // start from the policy that is optimal for the initial guess
        let op = self.op;
        let levels = self.levels;
        let fresh = par::map_range(op.mesh().interior_points().len(), |r| {
            let mut d = Vec::new();
            op.second_differences(u, r, &mut d);
            let mut p = vec![0u32; levels];
            best_subtree(op, r, &d, 0, op.leaves(r).start, &mut p);
            p
        });
        self.path = fresh.concat();
        self.solve_level(0, u)?;
        // guard against premature stops caused by the strict-improvement rule
        for _ in 0..3 {
            if op.sup_residual(u) <= self.opts.tol || !self.improve(0, u, 0.0) {
                break;
            }
            self.solve_level(0, u)?;
        }
        Ok(())
    }

    fn solve_level(&mut self, level: usize, u: &mut [f64]) -> Result<()> {
        if level == self.levels {
            self.linear_solves += 1;
            return self.solve_frozen(u);
        }
        for it in 0..self.opts.max_iter {
            self.solve_level(level + 1, u)?;
            if level == 0 {
                self.outer_iterations = it + 1;
            }
            if !self.improve(level, u, 1e-12) {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Policy improvement at `level` keeping outer choices fixed. Returns
    /// whether any choice changed.
    fn improve(&mut self, level: usize, u: &[f64], rel_tol: f64) -> bool {
        let op = self.op;
        let levels = self.levels;
        let path = &self.path;
        let updates = par::map_range(op.mesh().interior_points().len(), |r| {
            let p = &path[r * levels..(r + 1) * levels];
            let sizes = op.level_sizes(r);
            let strides = strides(&sizes);
            let mut start = op.leaves(r).start;
            for m in 0..level {
                start += p[m] as usize * strides[m];
            }
            let mut d = Vec::new();
            op.second_differences(u, r, &mut d);
            let kind = op.level_kinds()[level];
            let cur = p[level] as usize;
            let mut scratch = vec![0u32; levels];
            let v_cur = best_subtree(op, r, &d, level + 1, start + cur * strides[level], &mut scratch);
            let mut best = (v_cur, cur, None::<Vec<u32>>);
            for j in 0..sizes[level] {
                if j == cur {
                    continue;
                }
                let v = best_subtree(op, r, &d, level + 1, start + j * strides[level], &mut scratch);
                if kind.improves(v, best.0, rel_tol * (1.0 + v_cur.abs())) {
                    best = (v, j, Some(scratch.clone()));
                }
            }
            best.2.map(|inner| {
                let mut np = p.to_vec();
                np[level] = best.1 as u32;
                np[level + 1..].copy_from_slice(&inner[level + 1..]);
                np
            })
        });
        let mut changed = false;
        for (r, up) in updates.into_iter().enumerate() {
            if let Some(np) = up {
                self.path[r * levels..(r + 1) * levels].copy_from_slice(&np);
                changed = true;
            }
        }
        changed
    }

    fn leaf_of(&self, r: usize) -> usize {
        let sizes = self.op.level_sizes(r);
        let strides = strides(&sizes);
        let p = &self.path[r * self.levels..(r + 1) * self.levels];
        self.op.leaves(r).start + p.iter().zip(&strides).map(|(&c, s)| c as usize * s).sum::<usize>()
    }

    fn solve_frozen(&mut self, u: &mut [f64]) -> Result<()> {
        match self.opts.linear_solver {
            LinearSolver::Banded => self.solve_banded(u),
            LinearSolver::GaussSeidel => self.solve_gauss_seidel(u),
        }
    }

    fn bandwidth(&mut self) -> (usize, usize) {
        if let Some(b) = self.band {
            return b;
        }
        let mesh = self.op.mesh();
        let (mut lo, mut hi) = (0, 0);
        for r in 0..mesh.interior_points().len() {
            for &(p, m) in self.op.neighbors(r) {
                for q in [p, m] {
                    if let Some(c) = mesh.interior_rank(q as usize) {
                        if c < r {
                            lo = lo.max(r - c);
                        } else {
                            hi = hi.max(c - r);
                        }
                    }
                }
            }
        }
        self.band = Some((lo, hi));
        (lo, hi)
    }

    /// Row `r` of the frozen system `M v = b`, `M` with positive diagonal.
    fn row(&self, r: usize, u: &[f64], mut visit: impl FnMut(usize, f64)) -> (f64, f64) {
        let op = self.op;
        let mesh = op.mesh();
        let l = self.leaf_of(r);
        let mut diag = 0.0;
        let mut rhs = op.leaf_constant(l);
        for ((&w, &s), &(p, m)) in op.leaf_weights(l).iter().zip(op.inv_step2()).zip(op.neighbors(r)) {
            if w == 0.0 {
                continue;
            }
            let c = w * s;
            diag += 2.0 * c;
            for q in [p as usize, m as usize] {
                match mesh.interior_rank(q) {
                    Some(col) => visit(col, -c),
                    None => rhs += c * u[q],
                }
            }
        }
        (diag, rhs)
    }

    fn solve_banded(&mut self, u: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.bandwidth();
        let interior = self.op.mesh().interior_points();
        let n = interior.len();
        let mut a = BandMatrix::zeros(n, lo, hi);
        let mut b = vec![0.0; n];
        for r in 0..n {
            let (diag, rhs) = self.row(r, u, |c, v| a.add(r, c, v));
            if diag <= 0.0 {
                return Err(Error::Singular(r));
            }
            a.add(r, r, diag);
            b[r] = rhs;
        }
        a.factorize().map_err(Error::Singular)?;
        a.solve_factored(&mut b);
        for (r, v) in b.into_iter().enumerate() {
            u[interior[r]] = v;
        }
        Ok(())
    }

    fn solve_gauss_seidel(&mut self, u: &mut [f64]) -> Result<()> {
        let interior = self.op.mesh().interior_points().to_vec();
        let n = interior.len();
        let mut rows: Vec<(f64, f64, Vec<(usize, f64)>)> = Vec::with_capacity(n);
        for r in 0..n {
            let mut off = Vec::new();
            let (diag, rhs) = self.row(r, u, |c, v| off.push((c, v)));
            if diag <= 0.0 {
                return Err(Error::Singular(r));
            }
            rows.push((diag, rhs, off));
        }
        let bnorm = rows.iter().fold(0.0f64, |m, r| m.max(r.1.abs())).max(1.0);
        let mut v: Vec<f64> = interior.iter().map(|&i| u[i]).collect();
        let max_sweeps = 200 * n + 1000;
        for _ in 0..max_sweeps {
            for r in 0..n {
                let (diag, rhs, off) = &rows[r];
                let s: f64 = off.iter().map(|&(c, a)| a * v[c]).sum();
                v[r] = (rhs - s) / diag;
            }
            let res = rows
                .iter()
                .enumerate()
                .map(|(r, (diag, rhs, off))| (diag * v[r] + off.iter().map(|&(c, a)| a * v[c]).sum::<f64>() - rhs).abs())
                .fold(0.0f64, f64::max);
            // rows of the frozen system are the scheme residuals, so also stop
            // no earlier than the outer tolerance allows
            if res <= (1e-12 * bnorm).min(0.1 * self.opts.tol) {
                break;
            }
        }
        for (r, &i) in interior.iter().enumerate() {
            u[i] = v[r];
        }
        Ok(())
    }
}

fn strides(sizes: &[usize]) -> Vec<usize> {
    let mut s = vec![1; sizes.len()];
    for l in (0..sizes.len().saturating_sub(1)).rev() {
        s[l] = s[l + 1] * sizes[l + 1];
    }
    s
}

/// Optimal value of the subtree rooted at `level` whose first leaf is `start`,
/// writing the optimal choices for levels `level..` into `path`.
fn best_subtree(op: &DiscreteOperator, r: usize, deltas: &[f64], level: usize, start: usize, path: &mut [u32]) -> f64 {
    let kinds = op.level_kinds();
    if level == kinds.len() {
        return op.leaf_value(start, deltas);
    }
    let sizes = op.level_sizes(r);
    let stride: usize = sizes[level + 1..].iter().product();
    let kind = kinds[level];
    let mut best = kind.identity();
    let mut best_path: Vec<u32> = path.to_vec();
    for j in 0..sizes[level] {
        let v = best_subtree(op, r, deltas, level + 1, start + j * stride, path);
        if j == 0 || kind.improves(v, best, 0.0) {
            best = v;
            path[level] = j as u32;
            best_path[level..].copy_from_slice(&path[level..]);
        }
    }
    path[level..].copy_from_slice(&best_path[level..]);
    best
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Result of [`discrete_comparison_test`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub boundary_ordered: bool,
    pub interior_ordered: bool,
    /// `max (v1 − v2)` over all points.
    pub max_excess: f64,
}

impl ComparisonOutcome {
    /// The comparison implication `v1 ≤ v2 on ∂ ⇒ v1 ≤ v2 everywhere`.
    pub fn holds(&self) -> bool {
        !self.boundary_ordered || self.interior_ordered
    }
}

/// Checks the comparison principle on two solutions of `F_h[v] = 0`. Both
/// must have residual at most `residual_tol`; ordering uses slack `tol`.
pub fn discrete_comparison_test(
    op: &DiscreteOperator,
    v1: &MeshFunction,
    v2: &MeshFunction,
    residual_tol: f64,
    tol: f64,
) -> Result<ComparisonOutcome> {
    for (name, v) in [("v1", v1), ("v2", v2)] {
        let res = op.sup_residual(v.values());
        if res > residual_tol {
            return Err(Error::InvalidArgument(format!(
                "{name} is not a discrete solution: residual {res:.3e} > {residual_tol:.3e}"
            )));
        }
    }
    let mesh = op.mesh();
    let excess = |i: usize| v1.get(i) - v2.get(i);
    let boundary_ordered = mesh.boundary_points().iter().all(|&i| excess(i) <= tol);
    let interior_ordered = mesh.interior_points().iter().all(|&i| excess(i) <= tol);
    let max_excess = (0..mesh.len()).map(excess).fold(f64::NEG_INFINITY, f64::max);
    Ok(ComparisonOutcome { boundary_ordered, interior_ordered, max_excess })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderNorm {
    pub value: f64,
    /// False when the value comes from a random subsample of pairs.
    pub exact: bool,
    pub pairs: usize,
}

/// `sup |u(x) − u(y)| / |x − y|^η` over mesh point pairs; exhaustive when the
/// pair count is at most `cap`, else over `cap` seeded random pairs.
pub fn holder_norm(u: &MeshFunction, eta: f64, cap: usize, seed: u64) -> Result<HolderNorm> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("Hölder exponent must lie in (0, 1], got {eta}")));
    }
    let mesh = u.mesh();
    let m = mesh.len();
    let total = m.saturating_mul(m.saturating_sub(1)) / 2;
    let ratio = |i: usize, j: usize| (u.get(i) - u.get(j)).abs() / dist(mesh.point(i), mesh.point(j)).powf(eta);
    if total <= cap {
        let value = par::max_range(m, |i| (i + 1..m).map(|j| ratio(i, j)).fold(0.0, f64::max)).max(0.0);
        return Ok(HolderNorm { value, exact: true, pairs: total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut value: f64 = 0.0;
    for _ in 0..cap {
        let i = rng.gen_range(0..m);
        let mut j = rng.gen_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        value = value.max(ratio(i, j));
    }
    Ok(HolderNorm { value, exact: false, pairs: cap })
}

/// `f = F(D²u, x)` and `g = u` so that `u` solves the continuum problem.
pub fn manufactured_problem(u_exact: &ScalarField, op: &Nonlinearity) -> (Rhs, ScalarField) {
    (Rhs::manufactured(op, u_exact), u_exact.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Domain, Mesh};
    use std::sync::Arc;

    fn laplace_on(h: f64) -> (Arc<Mesh>, DiscreteOperator) {
        let m = Arc::new(Mesh::build(Domain::unit_box(2), h, 1).unwrap());
        let op = DiscreteOperator::assemble(&Nonlinearity::laplacian(2), &Rhs::from(ScalarField::constant(0.0)), m.clone()).unwrap();
        (m, op)
    }

    #[test]
    fn affine_data_is_reproduced() {
        let (m, op) = laplace_on(0.125);
        let g = ScalarField::Affine { value: 0.0, gradient: vec![1.0, 2.0] };
        for linear_solver in [LinearSolver::Banded, LinearSolver::GaussSeidel] {
            let opts = SolverOptions { linear_solver, ..Default::default() };
            let (v, rep) = solve_dirichlet(&op, &g, &opts).unwrap();
            assert!(rep.converged, "{rep:?}");
            for i in 0..m.len() {
                let x = m.point(i);
                assert!((v.get(i) - (x[0] + 2.0 * x[1])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_point_line() {
        let m = Arc::new(Mesh::build(Domain::Box { lo: vec![0.0], hi: vec![1.0] }, 0.25, 1).unwrap());
        assert_eq!(m.interior_points().len(), 1);
        let op = DiscreteOperator::assemble(&Nonlinearity::laplacian(1), &Rhs::from(ScalarField::constant(0.0)), m.clone()).unwrap();
        let g = ScalarField::Affine { value: 1.0, gradient: vec![-1.0] };
        let (v, _) = solve_dirichlet(&op, &g, &SolverOptions::default()).unwrap();
        // only x = 0.5 has d > N·h; its neighbors carry g(0.25) = 0.75, g(0.75) = 0.25
        let mid = m.index_of(&[2]).unwrap();
        assert!((v.get(mid) - 0.5).abs() < 1e-14);
        assert!((v.get(mid) - 0.5 * (v.get(mid - 1) + v.get(mid + 1))).abs() < 1e-14);
    }

    #[test]
    fn holder_examples() {
        let m = Arc::new(Mesh::build(Domain::Box { lo: vec![0.0], hi: vec![1.0] }, 0.125, 1).unwrap());
        let c = MeshFunction::from_fn(m.clone(), |_| 3.0);
        assert_eq!(holder_norm(&c, 1.0, 1 << 20, 0).unwrap().value, 0.0);
        let lin = MeshFunction::from_fn(m.clone(), |x| x[0]);
        assert!((holder_norm(&lin, 1.0, 1 << 20, 0).unwrap().value - 1.0).abs() < 1e-12);
        let root = MeshFunction::from_fn(m.clone(), |x| x[0].sqrt());
        let hn = holder_norm(&root, 0.5, 1 << 20, 0).unwrap();
        assert!(hn.exact && (hn.value - 1.0).abs() < 1e-12);
        assert!(!holder_norm(&root, 0.5, 10, 0).unwrap().exact);
        assert!(holder_norm(&root, 1.5, 10, 0).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[3, 2, 4]), vec![8, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }
}
