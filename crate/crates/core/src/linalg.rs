//! Small dense kernels used by the scheme and solver: a tableau simplex, the
//! Lawson–Hanson active-set NNLS, and an unpivoted banded LU for M-matrices.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

/// Minimizes `cᵀx` subject to `A x = b`, `x ≥ 0` with a two-phase tableau
/// simplex. `a` is row-major with `rows` rows.
///
/// Dantzig pricing is used first; after a pivot budget is exhausted the method
/// switches to Bland's rule, which cannot cycle.
pub fn simplex_min(a: &[f64], rows: usize, b: &[f64], c: &[f64], tol: f64) -> LpOutcome {
    let cols = c.len();
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    let width = cols + rows + 1;
    let rhs = width - 1;
    let mut t = vec![0.0; rows * width];
    for r in 0..rows {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            t[r * width + j] = sign * a[r * cols + j];
        }
        t[r * width + cols + r] = 1.0;
        t[r * width + rhs] = sign * b[r];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    let mut active_row = vec![true; rows];

    // Phase 1: minimize the sum of artificials.
    let mut cost1 = vec![0.0; cols + rows];
    for v in cost1.iter_mut().skip(cols) {
        *v = 1.0;
    }
    if run_simplex(&mut t, rows, width, &mut basis, &active_row, &cost1, cols + rows, tol).is_err() {
        return LpOutcome::Unbounded;
    }
    let infeas: f64 = (0..rows)
        .filter(|&r| basis[r] >= cols)
        .map(|r| t[r * width + rhs])
        .sum();
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if infeas > tol * scale * 10.0 {
        return LpOutcome::Infeasible;
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    for r in 0..rows {
        if basis[r] < cols {
            continue;
        }
        let mut pivoted = false;
        for j in 0..cols {
            if t[r * width + j].abs() > tol {
                pivot(&mut t, rows, width, r, j);
                basis[r] = j;
                pivoted = true;
                break;
            }
        }
        if !pivoted {
            active_row[r] = false;
        }
    }

    // Phase 2 over the structural columns only.
    let mut cost2 = vec![0.0; cols + rows];
    cost2[..cols].copy_from_slice(c);
    if run_simplex(&mut t, rows, width, &mut basis, &active_row, &cost2, cols, tol).is_err() {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; cols];
    for r in 0..rows {
        if active_row[r] && basis[r] < cols {
            x[basis[r]] = t[r * width + rhs].max(0.0);
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    LpOutcome::Optimal { x, objective }
}

#[allow(clippy::too_many_arguments)]
fn run_simplex(
    t: &mut [f64],
    rows: usize,
    width: usize,
    basis: &mut [usize],
    active_row: &[bool],
    cost: &[f64],
    enter_limit: usize,
    tol: f64,
) -> Result<(), ()> {
    let rhs = width - 1;
    let dantzig_budget = 50 * (rows + enter_limit) + 100;
    let hard_cap = 200 * (rows + enter_limit) + 1000;
    let mut reduced = vec![0.0; enter_limit];
    for iter in 0..hard_cap {
        // reduced cost d_j = c_j - c_Bᵀ column_j
        for (j, d) in reduced.iter_mut().enumerate() {
            let mut s = cost[j];
            for r in 0..rows {
                if active_row[r] {
                    s -= cost[basis[r]] * t[r * width + j];
                }
            }
            *d = s;
        }
        let entering = if iter < dantzig_budget {
            let mut best = None;
            let mut best_val = -tol;
            for (j, &d) in reduced.iter().enumerate() {
                if d < best_val && !basis.contains(&j) {
                    best_val = d;
                    best = Some(j);
                }
            }
            best
        } else {
            reduced
                .iter()
                .enumerate()
                .find(|&(j, &d)| d < -tol && !basis.contains(&j))
                .map(|(j, _)| j)
        };
        let Some(j) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            if !active_row[r] {
                continue;
            }
            let coef = t[r * width + j];
            if coef > tol {
                let ratio = t[r * width + rhs] / coef;
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-15
                            || (ratio <= lratio + 1e-15 && basis[r] < basis[lr])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let Some((r, _)) = leave else {
            return Err(());
        };
        pivot(t, rows, width, r, j);
        basis[r] = j;
    }
    Ok(())
}

fn pivot(t: &mut [f64], rows: usize, width: usize, r: usize, j: usize) {
    let p = t[r * width + j];
    for k in 0..width {
        t[r * width + k] /= p;
    }
    for i in 0..rows {
        if i == r {
            continue;
        }
        let f = t[i * width + j];
        if f != 0.0 {
            for k in 0..width {
                t[i * width + k] -= f * t[r * width + k];
            }
        }
    }
}

/// Nonnegative least squares `min ‖A x − b‖₂, x ≥ 0` by the Lawson–Hanson
/// active-set method. Returns the solution and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> (DVector<f64>, f64) {
    let k = a.ncols();
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let max_outer = 3 * k + 10;
    for _ in 0..max_outer {
        let resid = b - a * &x;
        let w = a.transpose() * &resid;
        let mut best = None;
        let mut best_w = tol;
        for j in 0..k {
            if !passive[j] && w[j] > best_w {
                best_w = w[j];
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        passive[j] = true;
        let mut inner = 0;
        loop {
            inner += 1;
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let s_p = restricted_lstsq(a, b, &idx);
            if idx.iter().zip(s_p.iter()).all(|(_, &s)| s > tol) || inner > 3 * k + 10 {
                x.fill(0.0);
                for (&i, &s) in idx.iter().zip(s_p.iter()) {
                    x[i] = s.max(0.0);
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&i, &s) in idx.iter().zip(s_p.iter()) {
                if s <= tol {
                    let denom = x[i] - s;
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    } else {
                        alpha = alpha.min(0.0);
                    }
                }
            }
            let mut s_full = DVector::zeros(k);
            for (&i, &s) in idx.iter().zip(s_p.iter()) {
                s_full[i] = s;
            }
            x = &x + (s_full - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    let r = (b - a * &x).norm();
    (x, r)
}

fn restricted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> Vec<f64> {
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
    let svd = sub.svd(true, true);
    match svd.solve(b, 1e-14) {
        Ok(s) => s.iter().copied().collect(),
        Err(_) => vec![0.0; idx.len()],
    }
}

/// Square banded matrix with `lower` sub- and `upper` super-diagonals, stored
/// row by row. Factorized in place without pivoting, which is stable for
/// nonsingular M-matrices.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, data: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper);
        i * (self.lower + self.upper + 1) + (j + self.lower - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.lower < i || j > i + self.upper {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// In-place LU; returns the first row whose pivot vanished.
    pub fn factorize(&mut self) -> Result<(), usize> {
        let n = self.n;
        for k in 0..n {
            let p = self.data[self.slot(k, k)];
            if p.abs() < 1e-300 {
                return Err(k);
            }
            let i_end = (k + self.lower + 1).min(n);
            let j_end = (k + self.upper + 1).min(n);
            for i in k + 1..i_end {
                let sik = self.slot(i, k);
                let l = self.data[sik] / p;
                if l == 0.0 {
                    continue;
                }
                self.data[sik] = l;
                for j in k + 1..j_end {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * self.data[skj];
                }
            }
        }
        Ok(())
    }

    /// Solves with a matrix already passed through [`BandMatrix::factorize`].
    pub fn solve_factored(&self, rhs: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let j0 = i.saturating_sub(self.lower);
            let mut s = rhs[i];
            for j in j0..i {
                s -= self.data[self.slot(i, j)] * rhs[j];
            }
            rhs[i] = s;
        }
        for i in (0..n).rev() {
            let j_end = (i + self.upper + 1).min(n);
            let mut s = rhs[i];
            for j in i + 1..j_end {
                s -= self.data[self.slot(i, j)] * rhs[j];
            }
            rhs[i] = s / self.data[self.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_solves_small_lp() {
        // min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let a = [1.0, 2.0, 1.0, 0.0, 3.0, 1.0, 0.0, 1.0];
        let out = simplex_min(&a, 2, &[4.0, 6.0], &[-1.0, -1.0, 0.0, 0.0], 1e-12);
        match out {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 1.6).abs() < 1e-12);
                assert!((x[1] - 1.2).abs() < 1e-12);
                assert!((objective + 2.8).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simplex_detects_infeasible() {
        // x + y = -1 with x, y >= 0
        let out = simplex_min(&[1.0, 1.0], 1, &[-1.0], &[0.0, 0.0], 1e-12);
        assert_eq!(out, LpOutcome::Infeasible);
    }

    #[test]
    fn simplex_handles_redundant_rows() {
        let a = [1.0, 1.0, 2.0, 2.0];
        let out = simplex_min(&a, 2, &[1.0, 2.0], &[1.0, 2.0], 1e-12);
        match out {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
                assert!((objective - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (x, r) = nnls(&a, &b, 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10);
        assert!(r < 1e-10);
    }

    #[test]
    fn nnls_clamps_negative_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let (x, r) = nnls(&a, &b, 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1] == 0.0);
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn band_lu_solves_tridiagonal() {
        let n = 6;
        let mut m = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                (0..n).map(|j| m.get(i, j) * x_true[j]).sum::<f64>()
            })
            .collect();
        m.factorize().unwrap();
        m.solve_factored(&mut b);
        for i in 0..n {
            assert!((b[i] - x_true[i]).abs() < 1e-12);
        }
    }
}
