//! Bounded domains and the discretization lattice `U ∩ hZⁿ`.
//!
//! A mesh point `x` is *interior* when `d(x, ∂U) > N·h` for stencil width `N`;
//! every other mesh point is a boundary point. With that split every stencil
//! offset `y` with `|y| ≤ N·h` keeps an interior point inside the mesh.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_MESH_POINTS: usize = 50_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// Axis-aligned box `Π [lo_i, hi_i]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn unit_box(dim: usize) -> Self {
        Domain::Box { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Domain::Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
        }
    }

    /// Checks that the domain is bounded with nonempty interior.
    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidArgument(format!(
                        "box bounds must have equal positive length, got {} and {}",
                        lo.len(),
                        hi.len()
                    )));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::InvalidArgument("box needs lo < hi on every axis".into()));
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidArgument("ball needs a center and radius > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt(),
            Domain::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Barycenter of the domain.
    pub fn center(&self) -> Vec<f64> {
        match self {
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Domain::Ball { center, .. } => center.clone(),
        }
    }

    /// Axis-aligned bounding box as `(lo, hi)`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Membership in the closed domain, with absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(xi, (l, h))| *xi >= l - tol && *xi <= h + tol),
            Domain::Ball { center, radius } => dist(x, center) <= radius + tol,
        }
    }

    /// Signed distance to `∂U`, positive inside. No membership check.
    pub(crate) fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (l, h))| (xi - l).min(h - xi))
                .fold(f64::INFINITY, f64::min),
            Domain::Ball { center, radius } => radius - dist(x, center),
        }
    }

    /// Euclidean distance from a point of the closed domain to `∂U`.
    pub fn distance_to_boundary(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim()
            )));
        }
        let d = self.signed_distance(x);
        let scale = 1e-12 * (1.0 + self.diameter());
        if d < -scale {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(d.max(0.0))
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// The lattice `U ∩ hZⁿ` in lexicographic order of its integer coordinates.
#[derive(Clone, Debug)]
pub struct Mesh {
    domain: Domain,
    h: f64,
    width: usize,
    dim: usize,
    lattice: Vec<i64>,
    coords: Vec<f64>,
    dist: Vec<f64>,
    interior: Vec<bool>,
    interior_points: Vec<usize>,
    boundary_points: Vec<usize>,
    interior_rank: Vec<usize>,
    grid_lo: Vec<i64>,
    grid_shape: Vec<usize>,
    dense: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl Mesh {
    /// Builds the mesh of spacing `h` for stencil width `width` (the `N` of `Y_N`).
    pub fn build(domain: Domain, h: f64, width: usize) -> Result<Mesh> {
        let mesh = Self::build_lattice(domain, h, width)?;
        if mesh.interior_points.is_empty() {
            return Err(Error::DegenerateMesh(format!(
                "no point has d(x, ∂U) > N·h = {}; refine h or reduce N",
                width as f64 * h
            )));
        }
        Ok(mesh)
    }

    /// Like [`Mesh::build`] but accepts meshes without interior points, which
    /// is enough for convolutions and other pointwise diagnostics.
    pub fn build_lattice(domain: Domain, h: f64, width: usize) -> Result<Mesh> {
        domain.validate()?;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("mesh spacing must be positive, got {h}")));
        }
        if width == 0 {
            return Err(Error::InvalidArgument("stencil width must be at least 1".into()));
        }
        let dim = domain.dim();
        let (lo, hi) = domain.bounds();
        let grid_lo: Vec<i64> = lo.iter().map(|l| (l / h - 1e-9).ceil() as i64).collect();
        let grid_hi: Vec<i64> = hi.iter().map(|u| (u / h + 1e-9).floor() as i64).collect();
        let mut grid_shape = Vec::with_capacity(dim);
        let mut total: usize = 1;
        for (a, b) in grid_lo.iter().zip(&grid_hi) {
            let n = (b - a + 1).max(0) as usize;
            grid_shape.push(n);
            total = total.saturating_mul(n);
        }
        if total == 0 {
            return Err(Error::DegenerateMesh("no lattice points inside the domain".into()));
        }
        if total > MAX_MESH_POINTS {
            return Err(Error::InvalidArgument(format!(
                "mesh would have {total} lattice candidates (cap {MAX_MESH_POINTS})"
            )));
        }

        let inclusion_tol = 1e-12 * h;
        let interior_threshold = width as f64 * h;
        let interior_slack = 1e-9 * h;

        let mut lattice = Vec::new();
        let mut coords = Vec::new();
        let mut dists = Vec::new();
        let mut interior = Vec::new();
        let mut dense = vec![ABSENT; total];
        let mut k = grid_lo.clone();
        let mut x = vec![0.0; dim];
        for (lin, slot) in dense.iter_mut().enumerate() {
            // decode linear index, last axis fastest
            let mut rem = lin;
            for axis in (0..dim).rev() {
                k[axis] = grid_lo[axis] + (rem % grid_shape[axis]) as i64;
                rem /= grid_shape[axis];
            }
            for axis in 0..dim {
                x[axis] = k[axis] as f64 * h;
            }
            if !domain.contains(&x, inclusion_tol) {
                continue;
            }
            let d = domain.signed_distance(&x).max(0.0);
            *slot = (coords.len() / dim) as u32;
            lattice.extend_from_slice(&k);
            coords.extend_from_slice(&x);
            dists.push(d);
            interior.push(d > interior_threshold + interior_slack);
        }
        let n_points = dists.len();
        let interior_points: Vec<usize> = (0..n_points).filter(|&i| interior[i]).collect();
        let boundary_points: Vec<usize> = (0..n_points).filter(|&i| !interior[i]).collect();
        let mut interior_rank = vec![usize::MAX; n_points];
        for (r, &p) in interior_points.iter().enumerate() {
            interior_rank[p] = r;
        }
        Ok(Mesh {
            domain,
            h,
            width,
            dim,
            lattice,
            coords,
            dist: dists,
            interior,
            interior_points,
            boundary_points,
            interior_rank,
            grid_lo,
            grid_shape,
            dense,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Stencil width `N`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lattice(&self, i: usize) -> &[i64] {
        &self.lattice[i * self.dim..(i + 1) * self.dim]
    }

    /// Distance of mesh point `i` to `∂U`.
    pub fn distance(&self, i: usize) -> f64 {
        self.dist[i]
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.interior[i]
    }

    pub fn interior_points(&self) -> &[usize] {
        &self.interior_points
    }

    pub fn boundary_points(&self) -> &[usize] {
        &self.boundary_points
    }

    /// Position of mesh point `i` among the interior points, if interior.
    pub fn interior_rank(&self, i: usize) -> Option<usize> {
        let r = self.interior_rank[i];
        (r != usize::MAX).then_some(r)
    }

    /// Mesh index of the lattice point with integer coordinates `k`.
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        let mut lin = 0usize;
        for axis in 0..self.dim {
            let off = k[axis] - self.grid_lo[axis];
            if off < 0 || off as usize >= self.grid_shape[axis] {
                return None;
            }
            lin = lin * self.grid_shape[axis] + off as usize;
        }
        let s = self.dense[lin];
        (s != ABSENT).then_some(s as usize)
    }

    /// Mesh index of `point(i) + offset` (offset in lattice units).
    pub fn shifted(&self, i: usize, offset: &[i64], sign: i64) -> Option<usize> {
        let base = self.lattice(i);
        let mut lin = 0usize;
        for axis in 0..self.dim {
            let off = base[axis] + sign * offset[axis] - self.grid_lo[axis];
            if off < 0 || off as usize >= self.grid_shape[axis] {
                return None;
            }
            lin = lin * self.grid_shape[axis] + off as usize;
        }
        let s = self.dense[lin];
        (s != ABSENT).then_some(s as usize)
    }

    /// Mesh points with `d(x, ∂U) > margin`, in mesh order.
    pub fn eroded_points(&self, margin: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.dist[i] > margin).collect()
    }

    /// Mesh points in the closed ball `|y − x| ≤ r`, in lexicographic order.
    pub fn points_within(&self, x: &[f64], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(x, r, |i| out.push(i));
        out
    }

    /// Visits mesh points in the closed ball `|y − x| ≤ r` in lexicographic order.
    pub fn for_each_within(&self, x: &[f64], r: f64, mut visit: impl FnMut(usize)) {
        let dim = self.dim;
        let r2 = r * r * (1.0 + 1e-12) + 1e-300;
        let lo: Vec<i64> = (0..dim)
            .map(|a| (((x[a] - r) / self.h - 1e-9).ceil() as i64).max(self.grid_lo[a]))
            .collect();
        let hi: Vec<i64> = (0..dim)
            .map(|a| {
                let v = ((x[a] + r) / self.h + 1e-9).floor() as i64;
                v.min(self.grid_lo[a] + self.grid_shape[a] as i64 - 1)
            })
            .collect();
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return;
        }
        let mut k = lo.clone();
        loop {
            if let Some(i) = self.index_of(&k) {
                if dist2(self.point(i), x) <= r2 {
                    visit(i);
                }
            }
            // odometer increment, last axis fastest
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if k[axis] < hi[axis] {
                    k[axis] += 1;
                    for (a, slot) in k.iter_mut().enumerate().skip(axis + 1) {
                        *slot = lo[a];
                    }
                    break;
                }
            }
        }
    }

    /// Mesh point closest to `x` (ties to the lexicographically first).
    pub fn nearest_point(&self, x: &[f64]) -> usize {
        let k: Vec<i64> = x.iter().map(|v| (v / self.h).round() as i64).collect();
        if let Some(i) = self.index_of(&k) {
            return i;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d = dist2(self.point(i), x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub(crate) fn grid_shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub(crate) fn dense_slot(&self, lin: usize) -> Option<usize> {
        let s = self.dense[lin];
        (s != ABSENT).then_some(s as usize)
    }
}

/// One real value per mesh point.
#[derive(Clone, Debug)]
pub struct MeshFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl MeshFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::InvalidArgument(format!(
                "mesh function needs {} values, got {}",
                mesh.len(),
                values.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.len();
        Self { mesh, values: vec![0.0; n] }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..mesh.len()).map(|i| f(mesh.point(i))).collect();
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `sup |u|` over the mesh.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup |u − w|` over the mesh.
    pub fn sup_distance(&self, other: &MeshFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}
