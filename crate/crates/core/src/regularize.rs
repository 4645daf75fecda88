//! Sup- and inf-convolutions of mesh functions,
//! `v^{θ,+}(x) = max_y { v(y) − |x−y|²/(2θ) }` and
//! `v^{θ,−}(x) = min_y { v(y) + |x−y|²/(2θ) }` over mesh points `y`,
//! with their semiconvexity, magic-point and closeness checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{dist, dist2, Mesh, MeshFunction};
use crate::par;
use crate::scheme::Stencil;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvolutionKind {
    Sup,
    Inf,
}

impl ConvolutionKind {
    /// `+1` for sup, `−1` for inf.
    fn sign(self) -> f64 {
        match self {
            ConvolutionKind::Sup => 1.0,
            ConvolutionKind::Inf => -1.0,
        }
    }
}

/// Values and witnesses of a convolution at a set of evaluation points.
#[derive(Clone, Debug)]
pub struct ConvolvedFunction {
    pub kind: ConvolutionKind,
    pub theta: f64,
    pub source: MeshFunction,
    /// `None` when evaluated at every mesh point, in mesh order.
    pub points: Option<Vec<Vec<f64>>>,
    pub values: Vec<f64>,
    /// Mesh index of the maximizer (minimizer); ties go to the
    /// lexicographically smallest point.
    pub witness: Vec<usize>,
}

impl ConvolvedFunction {
    pub fn on_mesh(&self) -> bool {
        self.points.is_none()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        match &self.points {
            Some(p) => &p[j],
            None => self.source.mesh().point(j),
        }
    }

    /// The convolution as a mesh function; only for on-mesh evaluation.
    pub fn to_mesh_function(&self) -> Result<MeshFunction> {
        if !self.on_mesh() {
            return Err(Error::InvalidArgument("convolution was not evaluated on the mesh".into()));
        }
        MeshFunction::new(self.source.mesh().clone(), self.values.clone())
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("θ must be positive, got {theta}")));
    }
    Ok(())
}

/// `s·v(y) − |x−y|²/(2θ)` with `s = ±1`; maximized for both kinds, so the inf
/// kind is `−max(−v − …)`. Both code paths use exactly this arithmetic.
#[inline]
fn candidate(s: f64, vy: f64, x: &[f64], y: &[f64], two_theta: f64) -> f64 {
    s * vy - dist2(x, y) / two_theta
}

fn brute_at(v: &MeshFunction, s: f64, x: &[f64], two_theta: f64) -> (f64, usize) {
    let mesh = v.mesh();
    let mut best = (f64::NEG_INFINITY, 0);
    for y in 0..mesh.len() {
        let c = candidate(s, v.get(y), x, mesh.point(y), two_theta);
        if c > best.0 {
            best = (c, y);
        }
    }
    best
}

/// Exhaustive evaluation at every mesh point. Serves as the oracle for the fast path.
pub fn convolve_brute(v: &MeshFunction, theta: f64, kind: ConvolutionKind) -> Result<ConvolvedFunction> {
    check_theta(theta)?;
    let s = kind.sign();
    let mesh = v.mesh().clone();
    let res = par::map_range(mesh.len(), |i| brute_at(v, s, mesh.point(i), 2.0 * theta));
    Ok(finish(v, theta, kind, None, res))
}

/// Exhaustive evaluation at arbitrary points of the closed domain.
pub fn convolve_at(v: &MeshFunction, theta: f64, kind: ConvolutionKind, points: &[Vec<f64>]) -> Result<ConvolvedFunction> {
    check_theta(theta)?;
    let mesh = v.mesh();
    let tol = 1e-9 * (1.0 + mesh.domain().diameter());
    for p in points {
        if p.len() != mesh.dim() || !mesh.domain().contains(p, tol) {
            return Err(Error::OutsideDomain { point: p.clone() });
        }
    }
    let s = kind.sign();
    let res = par::map_slice(points, |x| brute_at(v, s, x, 2.0 * theta));
    Ok(finish(v, theta, kind, Some(points.to_vec()), res))
}

pub fn sup_convolve(v: &MeshFunction, theta: f64) -> Result<ConvolvedFunction> {
    convolve(v, theta, ConvolutionKind::Sup)
}

pub fn inf_convolve(v: &MeshFunction, theta: f64) -> Result<ConvolvedFunction> {
    convolve(v, theta, ConvolutionKind::Inf)
}

/// Evaluation at every mesh point. A separable lower-envelope transform gives
/// an approximate value, which bounds the radius of an exact lexicographic
/// scan; the result is bit-for-bit the brute-force one.
pub fn convolve(v: &MeshFunction, theta: f64, kind: ConvolutionKind) -> Result<ConvolvedFunction> {
    check_theta(theta)?;
    let s = kind.sign();
    let mesh = v.mesh().clone();
    let approx = envelope_transform(&mesh, v.values(), s, theta);
    let vmax = v.values().iter().fold(f64::NEG_INFINITY, |m, &t| m.max(s * t));
    let two_theta = 2.0 * theta;
    let res = par::map_range(mesh.len(), |i| {
        let x = mesh.point(i);
        let own = s * v.get(i);
        let lower = own.max(approx[i] - 1e-9 * (1.0 + approx[i].abs() + vmax.abs()));
        let r2 = (vmax - lower).max(0.0) * two_theta;
        let r = (r2 * (1.0 + 1e-9)).sqrt() + 1e-12 * mesh.h();
        let mut best = (f64::NEG_INFINITY, 0);
        mesh.for_each_within(x, r, |y| {
            let c = candidate(s, v.get(y), x, mesh.point(y), two_theta);
            if c > best.0 {
                best = (c, y);
            }
        });
        best
    });
    Ok(finish(v, theta, kind, None, res))
}

fn finish(
    v: &MeshFunction,
    theta: f64,
    kind: ConvolutionKind,
    points: Option<Vec<Vec<f64>>>,
    res: Vec<(f64, usize)>,
) -> ConvolvedFunction {
    let s = kind.sign();
    let (values, witness) = res.into_iter().map(|(c, w)| (s * c, w)).unzip();
    ConvolvedFunction { kind, theta, source: v.clone(), points, values, witness }
}

/// `max_y { s·v(y) − |x−y|²/(2θ) }` at every mesh point by per-axis lower
/// envelopes of parabolas on the bounding lattice (absent points are skipped).
fn envelope_transform(mesh: &Mesh, values: &[f64], s: f64, theta: f64) -> Vec<f64> {
    let shape = mesh.grid_shape().to_vec();
    let total: usize = shape.iter().product();
    // minimize f(y) + |x−y|²/(2θ) with f = −s·v
    let mut f = vec![f64::INFINITY; total];
    for (lin, slot) in f.iter_mut().enumerate() {
        if let Some(i) = mesh.dense_slot(lin) {
            *slot = -s * values[i];
        }
    }
    let c = mesh.h() * mesh.h() / (2.0 * theta);
    let dim = shape.len();
    for axis in 0..dim {
        let n = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let lines = total / n;
        let mut buf = vec![0.0; n];
        let mut out = vec![0.0; n];
        for line in 0..lines {
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * n * stride + inner;
            for j in 0..n {
                buf[j] = f[base + j * stride];
            }
            lower_envelope(&buf, c, &mut out);
            for j in 0..n {
                f[base + j * stride] = out[j];
            }
        }
    }
    let mut approx = vec![0.0; mesh.len()];
    for (lin, &val) in f.iter().enumerate() {
        if let Some(i) = mesh.dense_slot(lin) {
            approx[i] = -val;
        }
    }
    approx
}

/// `out[q] = min_p { f[p] + c (q−p)² }`, skipping infinite `f[p]`.
fn lower_envelope(f: &[f64], c: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let key = |p: usize| f[p] + c * (p * p) as f64;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (key(q) - key(p)) / (2.0 * c * (q as f64 - p as f64));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = f[p] + c * d * d;
    }
}

// ---------------------------------------------------------------------------
// Checks

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemiconvexityReport {
    pub checked: usize,
    pub violations: usize,
    /// Most negative `δ²c + 1/θ` (sup) or `1/θ − δ²c` (inf).
    pub worst_margin: f64,
}

/// `δ²_y c(x) ≥ −1/θ − 1e-9` for all interior `x` and stencil directions
/// (sup kind); `δ²_y c(x) ≤ 1/θ + 1e-9` for the inf kind.
pub fn semiconvexity_check(c: &ConvolvedFunction) -> Result<SemiconvexityReport> {
    let u = c.to_mesh_function()?;
    let mesh = u.mesh().clone();
    let stencil = Stencil::new(mesh.dim(), mesh.width())?;
    let s = c.kind.sign();
    let h2 = mesh.h() * mesh.h();
    let margins = par::map_slice(mesh.interior_points(), |&i| {
        let mut worst = f64::INFINITY;
        for (d, k) in stencil.directions().iter().enumerate() {
            let (Some(p), Some(m)) = (mesh.shifted(i, k, 1), mesh.shifted(i, k, -1)) else { continue };
            let d2 = (u.get(p) + u.get(m) - 2.0 * u.get(i)) / (h2 * stencil.norm2(d));
            worst = worst.min(s * d2 + 1.0 / c.theta);
        }
        worst
    });
    Ok(SemiconvexityReport {
        checked: margins.len() * stencil.len(),
        violations: margins.iter().filter(|&&m| m < -1e-9).count(),
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagicPointReport {
    pub max_gap: f64,
    /// `4‖v‖^{1/2} θ^{1/2} + √n h`
    pub bound: f64,
    pub violations: usize,
    /// `2θ·Lip + √n h`, when a Lipschitz constant was supplied.
    pub lipschitz_bound: Option<f64>,
    pub lipschitz_violations: usize,
}

/// Distance from each evaluation point to its witness against the bounds.
pub fn magic_point_gap(c: &ConvolvedFunction, lip: Option<f64>) -> MagicPointReport {
    let mesh = c.source.mesh();
    let slack = (mesh.dim() as f64).sqrt() * mesh.h();
    let bound = 4.0 * c.source.sup_norm().sqrt() * c.theta.sqrt() + slack;
    let lipschitz_bound = lip.map(|l| 2.0 * c.theta * l + slack);
    let gaps: Vec<f64> = (0..c.len()).map(|j| dist(c.point(j), mesh.point(c.witness[j]))).collect();
    let tol = 1e-12 * (1.0 + bound);
    MagicPointReport {
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        bound,
        violations: gaps.iter().filter(|&&g| g > bound + tol).count(),
        lipschitz_bound,
        lipschitz_violations: lipschitz_bound.map_or(0, |b| gaps.iter().filter(|&&g| g > b + tol).count()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    /// Extremes of `±(c − v)` over the mesh (sign chosen so both should be ≥ 0).
    pub min_diff: f64,
    pub max_diff: f64,
    /// `max(2·Lip·θ, Lip²θ/2) + Lip·√n·h`
    pub bound: f64,
    pub violations: usize,
}

/// `0 ≤ c − v ≤ bound` at every mesh point (mirrored for the inf kind).
pub fn closeness_check(c: &ConvolvedFunction, lip: f64) -> Result<ClosenessReport> {
    if !c.on_mesh() {
        return Err(Error::InvalidArgument("closeness is checked at mesh points".into()));
    }
    let mesh = c.source.mesh();
    let s = c.kind.sign();
    let bound = (2.0 * lip * c.theta).max(0.5 * lip * lip * c.theta) + lip * (mesh.dim() as f64).sqrt() * mesh.h();
    let diffs: Vec<f64> = (0..mesh.len()).map(|i| s * (c.values[i] - c.source.get(i))).collect();
    let tol = 1e-12 * (1.0 + c.source.sup_norm());
    Ok(ClosenessReport {
        min_diff: diffs.iter().copied().fold(f64::INFINITY, f64::min),
        max_diff: diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bound,
        violations: diffs.iter().filter(|&&d| d < -tol || d > bound + tol).count(),
    })
}
