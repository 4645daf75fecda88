//! Monotone finite-difference operators `F_h` built from a [`Nonlinearity`]:
//! the stencil `Y_N`, directional second differences, nonnegative
//! decomposition of coefficient matrices and the (F_h1)/(F_h2) validators.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nnls, simplex_min, LpOutcome};
use crate::mesh::{Mesh, MeshFunction};
use crate::operators::{perturbation_samples, Extremum, Nonlinearity, OperatorKind, Rhs, ScalarField, SymMat};
use crate::par;

/// Residual below which a decomposition counts as exact.
pub const DECOMPOSITION_TOL: f64 = 1e-10;

/// Largest width tried when suggesting a wider stencil.
const MAX_SUGGESTED_WIDTH: usize = 8;

// ---------------------------------------------------------------------------
// Stencil

/// Lattice directions `k ∈ Zⁿ` with `0 < |k| ≤ N`, primitive (gcd 1) and
/// stored once per `±` pair (first nonzero component positive). The physical
/// step is `y = h·k`. Ordered by `|k|²`, then descending lexicographically,
/// so the axes come first as `e₁, e₂, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    width: usize,
    dim: usize,
    dirs: Vec<Vec<i64>>,
    norms2: Vec<f64>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Stencil {
    pub fn new(dim: usize, width: usize) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::InvalidArgument("stencil needs dim ≥ 1 and N ≥ 1".into()));
        }
        let w = width as i64;
        let mut dirs = Vec::new();
        let mut k = vec![-w; dim];
        loop {
            let r2: i64 = k.iter().map(|v| v * v).sum();
            let first = k.iter().find(|&&v| v != 0).copied();
            if r2 > 0 && r2 <= w * w && first.is_some_and(|v| v > 0) && k.iter().fold(0, |g, &v| gcd(g, v)) == 1 {
                dirs.push(k.clone());
            }
            let mut axis = dim;
            let mut done = true;
            while axis > 0 {
                axis -= 1;
                if k[axis] < w {
                    k[axis] += 1;
                    for s in k.iter_mut().skip(axis + 1) {
                        *s = -w;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
        dirs.sort_by(|a, b| {
            let na: i64 = a.iter().map(|v| v * v).sum();
            let nb: i64 = b.iter().map(|v| v * v).sum();
            na.cmp(&nb).then_with(|| b.cmp(a))
        });
        let norms2 = dirs.iter().map(|k| k.iter().map(|v| (v * v) as f64).sum()).collect();
        Ok(Self { width, dim, dirs, norms2 })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[Vec<i64>] {
        &self.dirs
    }

    pub fn direction(&self, d: usize) -> &[i64] {
        &self.dirs[d]
    }

    /// `|k|²` of direction `d` in lattice units.
    pub fn norm2(&self, d: usize) -> f64 {
        self.norms2[d]
    }

    /// Index of `k` or `−k`.
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        let neg: Vec<i64> = k.iter().map(|v| -v).collect();
        self.dirs.iter().position(|d| d == k || *d == neg)
    }

    /// `k̂ k̂ᵀ` for direction `d`.
    pub fn projector(&self, d: usize) -> SymMat {
        let k = &self.dirs[d];
        SymMat::from_fn(self.dim, |i, j| (k[i] * k[j]) as f64 / self.norms2[d])
    }
}

/// `δ_y²u(x) = (u(x−y) − 2u(x) + u(x+y))/|y|²` with `y = h·k`.
pub fn delta_y2(u: &MeshFunction, i: usize, k: &[i64]) -> Result<f64> {
    let mesh = u.mesh();
    let (Some(p), Some(m)) = (mesh.shifted(i, k, 1), mesh.shifted(i, k, -1)) else {
        return Err(Error::InvalidArgument(format!(
            "stencil {k:?} leaves the mesh at {:?}",
            mesh.point(i)
        )));
    };
    let r2: f64 = k.iter().map(|v| (v * v) as f64).sum::<f64>() * mesh.h() * mesh.h();
    Ok((u.get(m) - 2.0 * u.get(i) + u.get(p)) / r2)
}

// ---------------------------------------------------------------------------
// Decomposition

/// Nonnegative weights `ω` with `Σ_d ω_d k̂_d k̂_dᵀ ≈ a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalWeights {
    pub weights: Vec<f64>,
    /// Frobenius norm of `a − Σ ω_d k̂_d k̂_dᵀ`.
    pub residual: f64,
}

impl DirectionalWeights {
    pub fn is_exact(&self) -> bool {
        self.residual <= DECOMPOSITION_TOL
    }

    /// `Σ_d ω_d k̂_d k̂_dᵀ`
    pub fn reconstruct(&self, stencil: &Stencil) -> SymMat {
        let mut m = SymMat::zeros(stencil.dim());
        for (d, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                m.add_scaled(&stencil.projector(d), w);
            }
        }
        m
    }
}

/// Decomposes `a` over the stencil's rank-one directions.
///
/// NNLS gives the Frobenius-best nonnegative fit. When that fit is exact the
/// weights are re-solved as the exact decomposition of least reach
/// `Σ ω_d |k_d|²`, which makes the result unique in the common cases.
pub fn decompose_matrix(a: &SymMat, stencil: &Stencil) -> DirectionalWeights {
    let n = stencil.dim();
    let nd = stencil.len();
    assert_eq!(a.dim(), n, "matrix and stencil dimensions differ");

    let diagonal = (0..n).all(|i| (i + 1..n).all(|j| a.get(i, j) == 0.0));
    if diagonal && (0..n).all(|i| a.get(i, i) >= 0.0) {
        let mut weights = vec![0.0; nd];
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = 1;
            weights[stencil.index_of(&e).expect("axes are in every stencil")] = a.get(i, i);
        }
        return DirectionalWeights { weights, residual: 0.0 };
    }

    let rows = n * (n + 1) / 2;
    let mut m = DMatrix::zeros(rows, nd);
    let mut b = DVector::zeros(rows);
    let mut plain = vec![0.0; rows * nd];
    let mut plain_b = vec![0.0; rows];
    let mut r = 0;
    for i in 0..n {
        for j in i..n {
            let s = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
            for d in 0..nd {
                let k = stencil.direction(d);
                let v = (k[i] * k[j]) as f64 / stencil.norm2(d);
                m[(r, d)] = s * v;
                plain[r * nd + d] = v;
            }
            b[r] = s * a.get(i, j);
            plain_b[r] = a.get(i, j);
            r += 1;
        }
    }
    let (x, residual) = nnls(&m, &b, 1e-14);
    let scale = 1.0 + a.frobenius_norm();
    if residual > DECOMPOSITION_TOL * scale {
        return DirectionalWeights { weights: x.iter().map(|v| v.max(0.0)).collect(), residual };
    }
    let cost: Vec<f64> = (0..nd).map(|d| stencil.norm2(d)).collect();
    if let LpOutcome::Optimal { x: lp, .. } = simplex_min(&plain, rows, &plain_b, &cost, 1e-12) {
        let cand = DirectionalWeights { weights: lp.iter().map(|v| v.max(0.0)).collect(), residual: 0.0 };
        let res = cand.reconstruct(stencil).minus(a).frobenius_norm();
        if res <= DECOMPOSITION_TOL * scale {
            return DirectionalWeights { residual: res, ..cand };
        }
    }
    DirectionalWeights { weights: x.iter().map(|v| v.max(0.0)).collect(), residual }
}

/// Smallest width `N' > N` whose stencil decomposes `a` exactly.
pub fn suggest_width(a: &SymMat, from: usize) -> usize {
    for w in from + 1..=MAX_SUGGESTED_WIDTH {
        if let Ok(s) = Stencil::new(a.dim(), w) {
            if decompose_matrix(a, &s).residual <= DECOMPOSITION_TOL * (1.0 + a.frobenius_norm()) {
                return w;
            }
        }
    }
    MAX_SUGGESTED_WIDTH + 1
}

// ---------------------------------------------------------------------------
// Assembled operator

/// Orthonormal frames available in the stencil, as direction-index lists.
fn pucci_frames(stencil: &Stencil) -> Vec<Vec<usize>> {
    let n = stencil.dim();
    let axes: Vec<usize> = (0..n)
        .map(|i| {
            let mut e = vec![0; n];
            e[i] = 1;
            stencil.index_of(&e).expect("axes are in every stencil")
        })
        .collect();
    let mut frames = vec![axes];
    if n == 2 {
        if let (Some(a), Some(b)) = (stencil.index_of(&[1, 1]), stencil.index_of(&[1, -1])) {
            frames.push(vec![a, b]);
        }
    }
    frames
}

/// Leaf of the control tree before deduplication.
enum LeafSpec {
    Matrix(SymMat),
    Weights(Vec<f64>),
}

/// Nesting of the extrema: `(kind, Some(size))` for a fixed level, `None` for
/// the per-point sample level of a perturbed operator.
fn structure(op: &Nonlinearity, stencil: &Stencil) -> Vec<(Extremum, Option<usize>)> {
    match op.kind() {
        OperatorKind::Linear { .. } => vec![(Extremum::Max, Some(1))],
        OperatorKind::Pucci { sign } => {
            vec![(*sign, Some(pucci_frames(stencil).len() << stencil.dim()))]
        }
        OperatorKind::Isaacs { coeff, .. } => {
            vec![(Extremum::Max, Some(coeff.len())), (Extremum::Min, Some(coeff[0].len()))]
        }
        OperatorKind::Perturbed { inner, kind, .. } => {
            let mut s = structure(inner, stencil);
            if !inner.is_x_independent() {
                s.insert(0, (*kind, None));
            }
            s
        }
    }
}

fn base_leaves(op: &Nonlinearity, stencil: &Stencil, y: &[f64], shift: f64, out: &mut Vec<(LeafSpec, f64)>) {
    match op.kind() {
        OperatorKind::Linear { coeff } => out.push((LeafSpec::Matrix(coeff.eval(y)), -shift)),
        OperatorKind::Pucci { sign } => {
            let (lo, hi) = (op.lambda(), op.big_lambda());
            let n = stencil.dim();
            // M⁺ picks Λ on positive curvature, M⁻ picks λ; both enumerate all choices
            let _ = sign;
            for frame in pucci_frames(stencil) {
                for mask in 0..(1usize << n) {
                    let mut w = vec![0.0; stencil.len()];
                    for (bit, &d) in frame.iter().enumerate() {
                        w[d] = if mask >> bit & 1 == 1 { hi } else { lo };
                    }
                    out.push((LeafSpec::Weights(w), -shift));
                }
            }
        }
        OperatorKind::Isaacs { coeff, running } => {
            for (row_a, row_f) in coeff.iter().zip(running) {
                for (a, f) in row_a.iter().zip(row_f) {
                    out.push((LeafSpec::Matrix(a.eval(y)), f.eval(y) - shift));
                }
            }
        }
        OperatorKind::Perturbed { .. } => unreachable!("perturbations are expanded by the caller"),
    }
}

fn point_leaves(op: &Nonlinearity, stencil: &Stencil, x: &[f64], rhs_x: f64) -> (usize, Vec<(LeafSpec, f64)>) {
    let mut out = Vec::new();
    match op.kind() {
        OperatorKind::Perturbed { inner, domain, eps, resolution, .. } => {
            if inner.is_x_independent() {
                base_leaves(inner, stencil, x, rhs_x, &mut out);
                (1, out)
            } else {
                let samples = perturbation_samples(domain, x, *eps, *resolution);
                for y in &samples {
                    base_leaves(inner, stencil, y, rhs_x, &mut out);
                }
                (samples.len(), out)
            }
        }
        _ => {
            base_leaves(op, stencil, x, rhs_x, &mut out);
            (1, out)
        }
    }
}

/// The assembled monotone operator
/// `F_h[u](x) = ext_1 ext_2 … { Σ_d ω_d δ²_{h k_d} u(x) + c }` at every interior
/// mesh point, where `c = f^{αβ}(y) − f(x)`.
///
/// Leaves are stored flat per interior point; weight vectors are shared
/// through a deduplicated table.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    mesh: Arc<Mesh>,
    stencil: Stencil,
    kinds: Vec<Extremum>,
    inner_sizes: Vec<usize>,
    outer_sizes: Vec<u32>,
    leaf_start: Vec<usize>,
    leaf_weight: Vec<u32>,
    leaf_const: Vec<f64>,
    weight_table: Vec<f64>,
    neighbors: Vec<(u32, u32)>,
    inv_step2: Vec<f64>,
    source: Option<(Nonlinearity, Rhs)>,
    consistency_k: f64,
}

const ASSEMBLY_CHUNK: usize = 2048;

impl DiscreteOperator {
    /// Assembles `F_h` for `F(D²u, x) = f(x)` on `mesh`, with stencil width
    /// `mesh.width()`.
    pub fn assemble(op: &Nonlinearity, rhs: &Rhs, mesh: Arc<Mesh>) -> Result<Self> {
        if op.dim() != mesh.dim() {
            return Err(Error::InvalidArgument("operator and mesh dimensions differ".into()));
        }
        let stencil = Stencil::new(mesh.dim(), mesh.width())?;
        let nd = stencil.len();
        let levels = structure(op, &stencil);
        let kinds: Vec<Extremum> = levels.iter().map(|l| l.0).collect();
        let variable_outer = levels[0].1.is_none();
        let inner_sizes: Vec<usize> = levels
            .iter()
            .skip(1)
            .map(|l| l.1.expect("only the outer level varies"))
            .collect();

        let interior = mesh.interior_points().to_vec();
        let mut outer_sizes = Vec::with_capacity(interior.len());
        let mut leaf_start = vec![0usize];
        let mut leaf_weight: Vec<u32> = Vec::new();
        let mut leaf_const = Vec::new();
        let mut weight_table: Vec<f64> = Vec::new();
        let mut cache: HashMap<(bool, Vec<u64>), u32> = HashMap::new();

        for chunk in interior.chunks(ASSEMBLY_CHUNK) {
            let specs = par::map_slice(chunk, |&i| {
                let x = mesh.point(i);
                point_leaves(op, &stencil, x, rhs.eval(x))
            });
            // distinct matrices not yet decomposed, in first-seen order
            let mut fresh: Vec<(Vec<u64>, SymMat, usize)> = Vec::new();
            let mut fresh_keys: HashMap<Vec<u64>, usize> = HashMap::new();
            for (c, (_, leaves)) in specs.iter().enumerate() {
                for (leaf, _) in leaves {
                    if let LeafSpec::Matrix(a) = leaf {
                        let key = a.key();
                        if !cache.contains_key(&(true, key.clone())) && !fresh_keys.contains_key(&key) {
                            fresh_keys.insert(key.clone(), fresh.len());
                            fresh.push((key, a.clone(), chunk[c]));
                        }
                    }
                }
            }
            let decomposed = par::map_slice(&fresh, |(_, a, _)| decompose_matrix(a, &stencil));
            for ((key, a, at), dw) in fresh.into_iter().zip(decomposed) {
                if dw.residual > DECOMPOSITION_TOL * (1.0 + a.frobenius_norm()) {
                    return Err(Error::Undecomposable {
                        point: mesh.point(at).to_vec(),
                        residual: dw.residual,
                        suggested_width: suggest_width(&a, stencil.width()),
                    });
                }
                let id = (weight_table.len() / nd) as u32;
                weight_table.extend_from_slice(&dw.weights);
                cache.insert((true, key), id);
            }
            for (outer, leaves) in specs {
                if !variable_outer {
                    debug_assert_eq!(outer, 1);
                }
                outer_sizes.push(if variable_outer { outer as u32 } else { levels[0].1.unwrap() as u32 });
                for (leaf, c) in leaves {
                    let id = match leaf {
                        LeafSpec::Matrix(a) => cache[&(true, a.key())],
                        LeafSpec::Weights(w) => {
                            let key = (false, w.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
                            *cache.entry(key).or_insert_with(|| {
                                let id = (weight_table.len() / nd) as u32;
                                weight_table.extend_from_slice(&w);
                                id
                            })
                        }
                    };
                    leaf_weight.push(id);
                    leaf_const.push(c);
                }
                leaf_start.push(leaf_weight.len());
            }
        }

        let mut me = Self::from_parts(mesh, stencil, kinds, inner_sizes, outer_sizes, leaf_start, leaf_weight, leaf_const, weight_table)?;
        me.source = Some((op.clone(), rhs.clone()));
        Ok(me)
    }

    /// Linear operator `Σ_d w_d δ²_d u − f(x)` from raw per-direction weights.
    /// Weights are not sign-checked, so this can build non-monotone operators
    /// for testing the validators.
    pub fn from_direction_weights(mesh: Arc<Mesh>, weights: &[f64], rhs: &[f64]) -> Result<Self> {
        let stencil = Stencil::new(mesh.dim(), mesh.width())?;
        if weights.len() != stencil.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} direction weights, got {}",
                stencil.len(),
                weights.len()
            )));
        }
        let nint = mesh.interior_points().len();
        if rhs.len() != nint {
            return Err(Error::InvalidArgument("one right-hand side value per interior point".into()));
        }
        Self::from_parts(
            mesh,
            stencil,
            vec![Extremum::Max],
            vec![],
            vec![1; nint],
            (0..=nint).collect(),
            vec![0; nint],
            rhs.iter().map(|f| -f).collect(),
            weights.to_vec(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        mesh: Arc<Mesh>,
        stencil: Stencil,
        kinds: Vec<Extremum>,
        inner_sizes: Vec<usize>,
        outer_sizes: Vec<u32>,
        leaf_start: Vec<usize>,
        leaf_weight: Vec<u32>,
        leaf_const: Vec<f64>,
        weight_table: Vec<f64>,
    ) -> Result<Self> {
        let nd = stencil.len();
        let h = mesh.h();
        let mut neighbors = Vec::with_capacity(mesh.interior_points().len() * nd);
        for &i in mesh.interior_points() {
            for k in stencil.directions() {
                match (mesh.shifted(i, k, 1), mesh.shifted(i, k, -1)) {
                    (Some(p), Some(m)) => neighbors.push((p as u32, m as u32)),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "stencil {k:?} leaves the mesh at interior point {:?}",
                            mesh.point(i)
                        )))
                    }
                }
            }
        }
        let inv_step2 = (0..nd).map(|d| 1.0 / (h * h * stencil.norm2(d))).collect();
        let reach: Vec<f64> = (0..nd).map(|d| stencil.norm2(d).sqrt()).collect();
        let consistency_k = weight_table
            .chunks(nd.max(1))
            .map(|w| w.iter().zip(&reach).map(|(w, r)| w.abs() * r).sum::<f64>() / 3.0)
            .fold(0.0, f64::max);
        Ok(Self {
            mesh,
            stencil,
            kinds,
            inner_sizes,
            outer_sizes,
            leaf_start,
            leaf_weight,
            leaf_const,
            weight_table,
            neighbors,
            inv_step2,
            source: None,
            consistency_k,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    /// The continuum problem this operator was assembled from, if any.
    pub fn source(&self) -> Option<(&Nonlinearity, &Rhs)> {
        self.source.as_ref().map(|(f, r)| (f, r))
    }

    /// Extremum kinds from the outermost level inward.
    pub fn level_kinds(&self) -> &[Extremum] {
        &self.kinds
    }

    /// Level sizes at interior rank `r`, outermost first.
    pub fn level_sizes(&self, r: usize) -> Vec<usize> {
        let mut s = vec![self.outer_sizes[r] as usize];
        s.extend_from_slice(&self.inner_sizes);
        s
    }

    /// Leaf index range of interior rank `r`.
    pub fn leaves(&self, r: usize) -> std::ops::Range<usize> {
        self.leaf_start[r]..self.leaf_start[r + 1]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_weight.len()
    }

    /// Direction weights of leaf `l`.
    pub fn leaf_weights(&self, l: usize) -> &[f64] {
        let nd = self.stencil.len();
        let id = self.leaf_weight[l] as usize;
        &self.weight_table[id * nd..(id + 1) * nd]
    }

    pub fn leaf_constant(&self, l: usize) -> f64 {
        self.leaf_const[l]
    }

    /// `(x + h k_d, x − h k_d)` mesh indices for interior rank `r`.
    pub fn neighbors(&self, r: usize) -> &[(u32, u32)] {
        let nd = self.stencil.len();
        &self.neighbors[r * nd..(r + 1) * nd]
    }

    /// `1/|h k_d|²`
    pub fn inv_step2(&self) -> &[f64] {
        &self.inv_step2
    }

    /// `K` with `|F_h[φ] − (F(D²φ) − f)| ≤ K(1 + ‖D³φ‖)h` for exact leaves:
    /// `max_leaf Σ_d ω_d |k_d| / 3`.
    pub fn consistency_constant(&self) -> f64 {
        self.consistency_k
    }

    /// Second differences `δ²_d u(x)` at interior rank `r`.
    pub fn second_differences(&self, u: &[f64], r: usize, out: &mut Vec<f64>) {
        let c = u[self.mesh.interior_points()[r]];
        out.clear();
        out.extend(
            self.neighbors(r)
                .iter()
                .zip(&self.inv_step2)
                .map(|(&(p, m), s)| (u[p as usize] + u[m as usize] - 2.0 * c) * s),
        );
    }

    /// `Σ_d ω_d δ_d + c` for leaf `l`.
    pub fn leaf_value(&self, l: usize, deltas: &[f64]) -> f64 {
        self.leaf_weights(l).iter().zip(deltas).map(|(w, d)| w * d).sum::<f64>() + self.leaf_const[l]
    }

    /// Reduces leaf values through the nested extrema.
    fn reduce(&self, r: usize, values: &mut [f64]) -> f64 {
        let sizes = self.level_sizes(r);
        let mut len = values.len();
        for lvl in (0..sizes.len()).rev() {
            let size = sizes[lvl];
            let kind = self.kinds[lvl];
            let groups = len / size;
            for g in 0..groups {
                let mut acc = kind.identity();
                for j in 0..size {
                    acc = kind.pick(acc, values[g * size + j]);
                }
                values[g] = acc;
            }
            len = groups;
        }
        values[0]
    }

    /// `F_h[u](x)` at interior rank `r` given the second differences there.
    pub fn eval_from_deltas(&self, r: usize, deltas: &[f64]) -> f64 {
        let mut vals: Vec<f64> = self.leaves(r).map(|l| self.leaf_value(l, deltas)).collect();
        self.reduce(r, &mut vals)
    }

    /// `F_h[u](x)` at interior rank `r`.
    pub fn eval_rank(&self, u: &[f64], r: usize) -> f64 {
        let mut d = Vec::with_capacity(self.stencil.len());
        self.second_differences(u, r, &mut d);
        self.eval_from_deltas(r, &d)
    }

    /// `F_h[u](x)` at mesh point `i`; `None` for boundary points.
    pub fn eval_at(&self, u: &MeshFunction, i: usize) -> Option<f64> {
        self.mesh.interior_rank(i).map(|r| self.eval_rank(u.values(), r))
    }

    /// `F_h` evaluated from explicit stencil values: the center value `z` and
    /// the neighbor values `q = (u(x + h k_d), u(x − h k_d))`.
    pub fn eval_local(&self, r: usize, z: f64, q: &[(f64, f64)]) -> f64 {
        let d: Vec<f64> = q
            .iter()
            .zip(&self.inv_step2)
            .map(|(&(p, m), s)| (p + m - 2.0 * z) * s)
            .collect();
        self.eval_from_deltas(r, &d)
    }

    /// `F_h[u]` at every interior point, in interior-rank order.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        par::map_range(self.mesh.interior_points().len(), |r| self.eval_rank(u, r))
    }

    /// `max_x |F_h[u](x)|`
    pub fn sup_residual(&self, u: &[f64]) -> f64 {
        par::max_range(self.mesh.interior_points().len(), |r| self.eval_rank(u, r).abs()).max(0.0)
    }
}

// ---------------------------------------------------------------------------
// Validators

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest amount by which an inequality failed (≤ 0 when none did).
    pub worst: f64,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Random trials of
/// `F_h(q+η, z, x) ≥ F_h(q, z, x) ≥ F_h(q+η, z+τ, x)` with `η ≥ 0` on the
/// neighbors and `τ ≥ max η`, slack `1e-10`.
pub fn monotonicity_check(op: &DiscreteOperator, trials: usize, seed: u64) -> Result<MonotonicityReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be ≥ 1".into()));
    }
    let nint = op.mesh().interior_points().len();
    let nd = op.stencil().len();
    let outcomes = par::map_range(trials, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::stream_seed(seed, t as u64));
        let r = rng.gen_range(0..nint);
        let z = rng.gen_range(-1.0..1.0);
        let q: Vec<(f64, f64)> = (0..nd).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let eta: Vec<(f64, f64)> = (0..nd).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect();
        let max_eta = eta.iter().fold(0.0f64, |m, e| m.max(e.0).max(e.1));
        let tau = max_eta + rng.gen_range(0.0..1.0);
        let q_eta: Vec<(f64, f64)> = q.iter().zip(&eta).map(|(a, e)| (a.0 + e.0, a.1 + e.1)).collect();
        let base = op.eval_local(r, z, &q);
        let raised = op.eval_local(r, z, &q_eta);
        let shifted = op.eval_local(r, z + tau, &q_eta);
        let scale = 1e-10 * (1.0 + base.abs());
        (base - raised).max(shifted - base) - scale
    });
    let violations = outcomes.iter().filter(|&&e| e > 0.0).count();
    let worst = outcomes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MonotonicityReport { trials, violations, worst })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `max_x |F_h[φ](x) − (F(D²φ(x), x) − f(x))|`
    pub max_discrepancy: f64,
    pub worst_point: Vec<f64>,
    /// `K(1 + ‖D³φ‖_∞)h`
    pub bound: f64,
    pub passed: bool,
}

/// Compares `F_h[φ]` with `F(D²φ, x) − f(x)` on the interior.
pub fn consistency_check(op: &DiscreteOperator, phi: &ScalarField, k: f64) -> Result<ConsistencyReport> {
    let (f, rhs) = op
        .source()
        .ok_or_else(|| Error::InvalidArgument("operator has no continuum source to compare with".into()))?;
    let mesh = op.mesh().clone();
    let u = MeshFunction::from_fn(mesh.clone(), |x| phi.eval(x));
    let interior = mesh.interior_points();
    let errs = par::map_range(interior.len(), |r| {
        let x = mesh.point(interior[r]);
        let exact = f.eval(&phi.hessian(x), x) - rhs.eval(x);
        (op.eval_rank(u.values(), r) - exact).abs()
    });
    let (worst, max) = errs
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(wi, wv), (i, &v)| if v > wv { (i, v) } else { (wi, wv) });
    let bound = k * (1.0 + phi.third_derivative_bound(mesh.domain())) * mesh.h();
    Ok(ConsistencyReport {
        max_discrepancy: max,
        worst_point: mesh.point(interior[worst]).to_vec(),
        bound,
        passed: max <= bound + 1e-10,
    })
}
