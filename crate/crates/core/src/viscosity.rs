//! Paraboloid machinery on mesh functions: touching certificates, the
//! statistical δ-sub/supersolution check, the sliding-paraboloid construction,
//! discrete concave envelopes with their Monge–Ampère mass, and the
//! doubling-variables diagnostic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{simplex_min, LpOutcome};
use crate::mesh::{dist, dist2, MeshFunction};
use crate::operators::{random_symmetric, SymMat};
use crate::par;

/// `P(x) = c + b·(x−x₀) + ½(x−x₀)ᵀM(x−x₀)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paraboloid {
    pub x0: Vec<f64>,
    pub c: f64,
    pub b: Vec<f64>,
    pub m: SymMat,
}

impl Paraboloid {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        self.c + self.b.iter().zip(&d).map(|(b, d)| b * d).sum::<f64>() + 0.5 * self.m.quad(&d)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        self.m.mul_vec(&d).iter().zip(&self.b).map(|(a, b)| a + b).collect()
    }

    /// The same polynomial written around a new base point.
    pub fn recentered(&self, x1: &[f64]) -> Paraboloid {
        Paraboloid { x0: x1.to_vec(), c: self.eval(x1), b: self.gradient(x1), m: self.m.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `P ≥ v` near the touch point (subsolution test).
    Above,
    /// `P ≤ v` near the touch point (supersolution test).
    Below,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Above => 1.0,
            Side::Below => -1.0,
        }
    }
}

/// A paraboloid touching `v` at a mesh point over the closed ball `B_δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchCertificate {
    /// Written around the touch point, with `c = v(x')`.
    pub paraboloid: Paraboloid,
    pub touch_index: usize,
    pub touch_point: Vec<f64>,
    pub side: Side,
    pub delta: f64,
    /// `min` and `max` of `P − v` over mesh points of `B_δ(x')`.
    pub residual_min: f64,
    pub residual_max: f64,
    pub rounds: usize,
}

impl TouchCertificate {
    /// Re-checks the certificate against raw mesh values.
    pub fn verify(&self, v: &MeshFunction) -> bool {
        let mesh = v.mesh();
        let at = (self.paraboloid.eval(&self.touch_point) - v.get(self.touch_index)).abs() <= 1e-12;
        let tol = 1e-12 * (1.0 + v.sup_norm());
        let mut ok = true;
        mesh.for_each_within(&self.touch_point, self.delta, |j| {
            let d = self.side.sign() * (self.paraboloid.eval(mesh.point(j)) - v.get(j));
            ok &= d >= -tol;
        });
        at && ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TouchOutcome {
    Touched(TouchCertificate),
    /// The touch point's ball leaves the admissible region.
    LeftDomain,
    /// Re-centering did not reach a fixed point.
    NoFixedPoint,
}

const TOUCH_ROUNDS: usize = 5;

/// Shifts the shape `b·(y−x) + ½(y−x)ᵀM(y−x)` vertically until it touches `v`
/// from `side` over `B_δ`, re-centering the ball at the touch point until it is
/// a fixed point. Touch points must satisfy `d(x', ∂U) ≥ margin`; use
/// `margin ≥ δ` so that `B_δ(x') ⊆ U`.
pub fn touch(v: &MeshFunction, b: &[f64], m: &SymMat, x: usize, delta: f64, side: Side, margin: f64) -> TouchOutcome {
    let mesh = v.mesh();
    let base = mesh.point(x).to_vec();
    let shape = Paraboloid { x0: base, c: 0.0, b: b.to_vec(), m: m.clone() };
    let s = side.sign();
    // above: maximize v − Q; below: minimize v − Q, i.e. maximize s·(v − Q)
    let score = |j: usize| s * (v.get(j) - shape.eval(mesh.point(j)));
    let mut center = x;
    for round in 1..=TOUCH_ROUNDS {
        if mesh.distance(center) < margin {
            return TouchOutcome::LeftDomain;
        }
        let mut best = (score(center), center);
        mesh.for_each_within(mesh.point(center), delta, |j| {
            let sc = score(j);
            if sc > best.0 {
                best = (sc, j);
            }
        });
        if best.1 == center {
            let xp = mesh.point(center).to_vec();
            let mut p = shape.recentered(&xp);
            p.c = v.get(center);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            mesh.for_each_within(&xp, delta, |j| {
                let d = p.eval(mesh.point(j)) - v.get(j);
                lo = lo.min(d);
                hi = hi.max(d);
            });
            return TouchOutcome::Touched(TouchCertificate {
                paraboloid: p,
                touch_index: center,
                touch_point: xp,
                side,
                delta,
                residual_min: lo,
                residual_max: hi,
                rounds: round,
            });
        }
        center = best.1;
    }
    TouchOutcome::NoFixedPoint
}

// ---------------------------------------------------------------------------
// δ-solution check

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaSide {
    /// Above-touches, expecting `G(D²P, x') ≥ −slack`.
    Sub,
    /// Below-touches, expecting `G(D²P, x') ≤ slack`.
    Super,
    /// Alternates between the two.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaCheckConfig {
    pub delta: f64,
    pub samples: usize,
    /// Cap on `‖M‖`; defaults to `10/δ`.
    pub m_max: Option<f64>,
    /// Cap on `|b|`; defaults to `10·` the largest discrete slope of `v`.
    pub grad_cap: Option<f64>,
    pub slack: f64,
    pub seed: u64,
    /// Required `d(x, ∂U)` for base and touch points; defaults to `δ`.
    pub margin: Option<f64>,
    pub side: DeltaSide,
}

impl DeltaCheckConfig {
    pub fn new(delta: f64, samples: usize, side: DeltaSide) -> Self {
        Self { delta, samples, m_max: None, grad_cap: None, slack: 0.0, seed: 0, margin: None, side }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaCaps {
    pub delta: f64,
    pub m_max: f64,
    pub grad_cap: f64,
    pub margin: f64,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub accepted: usize,
    pub accepted_sub: usize,
    pub accepted_super: usize,
    pub rejected: usize,
    pub violations: usize,
    /// Smallest `slack − G` (super) or `G + slack` (sub); negative on violation.
    pub worst_margin: f64,
    pub seed: u64,
    pub caps: DeltaCaps,
    /// True when no sample was accepted.
    pub inconclusive: bool,
}

impl DeltaReport {
    pub fn passed(&self) -> bool {
        !self.inconclusive && self.violations == 0
    }
}

/// Central-difference gradient at mesh point `i` (one-sided where needed).
fn discrete_slope(v: &MeshFunction, i: usize) -> Vec<f64> {
    let mesh = v.mesh();
    let n = mesh.dim();
    (0..n)
        .map(|a| {
            let mut e = vec![0i64; n];
            e[a] = 1;
            match (mesh.shifted(i, &e, 1), mesh.shifted(i, &e, -1)) {
                (Some(p), Some(m)) => (v.get(p) - v.get(m)) / (2.0 * mesh.h()),
                (Some(p), None) => (v.get(p) - v.get(i)) / mesh.h(),
                (None, Some(m)) => (v.get(i) - v.get(m)) / mesh.h(),
                (None, None) => 0.0,
            }
        })
        .collect()
}

/// Statistical δ-solution test of `v` for `G(D²P, x') ≥ 0` / `≤ 0` (sub/super)
/// against randomly shaped paraboloids touching at ball centers.
pub fn delta_solution_check(
    v: &MeshFunction,
    g: &(dyn Fn(&SymMat, &[f64]) -> f64 + Sync),
    cfg: &DeltaCheckConfig,
) -> Result<DeltaReport> {
    if cfg.samples == 0 {
        return Err(Error::InvalidArgument("samples must be ≥ 1".into()));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::InvalidArgument("δ must be positive".into()));
    }
    let m_max = cfg.m_max.unwrap_or(10.0 / cfg.delta);
    if !(m_max > 0.0) {
        return Err(Error::InvalidArgument("M_max must be positive".into()));
    }
    let mesh = v.mesh().clone();
    let margin = cfg.margin.unwrap_or(cfg.delta).max(cfg.delta);
    let base_points = mesh.eroded_points(margin);
    let grad_cap = cfg.grad_cap.unwrap_or_else(|| {
        let lip = (0..mesh.len())
            .map(|i| discrete_slope(v, i).iter().map(|s| s * s).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        10.0 * lip.max(1.0)
    });
    let caps = DeltaCaps { delta: cfg.delta, m_max, grad_cap, margin, slack: cfg.slack };
    if base_points.is_empty() {
        return Ok(DeltaReport {
            accepted: 0,
            accepted_sub: 0,
            accepted_super: 0,
            rejected: cfg.samples,
            violations: 0,
            worst_margin: f64::INFINITY,
            seed: cfg.seed,
            caps,
            inconclusive: true,
        });
    }
    let n = mesh.dim();
    // per-sample outcome: None = rejected, Some((side, margin))
    let outcomes = par::map_range(cfg.samples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::stream_seed(cfg.seed, k as u64));
        let side = match cfg.side {
            DeltaSide::Sub => Side::Above,
            DeltaSide::Super => Side::Below,
            DeltaSide::Both => {
                if k % 2 == 0 {
                    Side::Below
                } else {
                    Side::Above
                }
            }
        };
        let x = base_points[rng.gen_range(0..base_points.len())];
        let raw = random_symmetric(n, 1.0, &mut rng);
        let norm = raw.spectral_norm();
        let m = if norm > 0.0 { raw.scaled(rng.gen_range(0.0..=1.0) * m_max / norm) } else { raw };
        let mut b = discrete_slope(v, x);
        for bi in b.iter_mut() {
            *bi += rng.gen_range(-0.5..=0.5) * cfg.delta * m_max;
        }
        let bn = b.iter().map(|t| t * t).sum::<f64>().sqrt();
        if bn > grad_cap {
            b.iter_mut().for_each(|t| *t *= grad_cap / bn);
        }
        match touch(v, &b, &m, x, cfg.delta, side, margin) {
            TouchOutcome::Touched(cert) => {
                let val = g(&cert.paraboloid.m, &cert.touch_point);
                let margin = match side {
                    Side::Below => cfg.slack - val,
                    Side::Above => val + cfg.slack,
                };
                Some((side, margin))
            }
            _ => None,
        }
    });
    let mut report = DeltaReport {
        accepted: 0,
        accepted_sub: 0,
        accepted_super: 0,
        rejected: 0,
        violations: 0,
        worst_margin: f64::INFINITY,
        seed: cfg.seed,
        caps,
        inconclusive: false,
    };
    for o in outcomes {
        match o {
            None => report.rejected += 1,
            Some((side, margin)) => {
                report.accepted += 1;
                match side {
                    Side::Above => report.accepted_sub += 1,
                    Side::Below => report.accepted_super += 1,
                }
                if margin < 0.0 {
                    report.violations += 1;
                }
                report.worst_margin = report.worst_margin.min(margin);
            }
        }
    }
    report.inconclusive = report.accepted == 0;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Sliding paraboloid

/// Result of sliding the concave paraboloid `−m/(2R²)|x−y|²` under `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingParaboloid {
    pub x0_index: usize,
    pub x0: Vec<f64>,
    pub y: Vec<f64>,
    pub m: f64,
    /// `R = diam U`
    pub radius: f64,
    /// `l(x0) = w(x0)`
    pub value: f64,
    /// `Dl = −(m/R²)(x0 − y)`
    pub slope: Vec<f64>,
}

impl SlidingParaboloid {
    /// `l(x) = w(x0) − (m/R²)⟨x − x0, x0 − y⟩`
    pub fn affine(&self, x: &[f64]) -> f64 {
        self.value + self.slope.iter().zip(x.iter().zip(&self.x0)).map(|(s, (a, b))| s * (a - b)).sum::<f64>()
    }

    /// `m/(2R²)`
    pub fn opening(&self) -> f64 {
        self.m / (2.0 * self.radius * self.radius)
    }
}

/// Finds `x0 = argmin_x { −m/(2R²)|x−y|² − w(x) }` over the mesh and the
/// affine `l` with `w ≤ l − m/(2R²)|x−x0|²`. `y` defaults to the domain center.
pub fn sliding_paraboloid(w: &MeshFunction, m: f64, y: Option<&[f64]>) -> Result<SlidingParaboloid> {
    let mesh = w.mesh();
    let sup = w.max();
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("m must be positive, got {m}")));
    }
    if m > sup {
        return Err(Error::InvalidArgument(format!("m = {m} exceeds sup w = {sup}")));
    }
    if let Some(&i) = mesh.boundary_points().iter().find(|&&i| w.get(i) > 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "w must be ≤ 0 on the boundary; w({:?}) = {}",
            mesh.point(i),
            w.get(i)
        )));
    }
    let y = y.map(|p| p.to_vec()).unwrap_or_else(|| mesh.domain().center());
    if !mesh.domain().contains(&y, 1e-12) {
        return Err(Error::OutsideDomain { point: y });
    }
    let radius = mesh.domain().diameter();
    let k = m / (2.0 * radius * radius);
    let mut best = (f64::INFINITY, 0);
    for i in 0..mesh.len() {
        let phi = -k * dist2(mesh.point(i), &y) - w.get(i);
        if phi < best.0 {
            best = (phi, i);
        }
    }
    let x0 = mesh.point(best.1).to_vec();
    let slope = x0.iter().zip(&y).map(|(a, b)| -(m / (radius * radius)) * (a - b)).collect();
    Ok(SlidingParaboloid { x0_index: best.1, x0, y, m, radius, value: w.get(best.1), slope })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingCheck {
    /// `max_x { w(x) − l(x) + m/(2R²)|x−x0|² }`; should be ≤ 1e-12.
    pub max_excess: f64,
    /// `w(x0) − m/2`; should be ≥ 0.
    pub value_margin: f64,
    /// `(m / (2⌈w⌉_η))^{1/η}`
    pub distance_bound: f64,
    /// Distance from `x0` to the nearest mesh point where `w ≤ 0`.
    pub discrete_distance: f64,
    /// `d(x0, ∂U)`
    pub boundary_distance: f64,
}

impl SlidingCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_excess <= tol && self.value_margin >= -tol && self.discrete_distance >= self.distance_bound - tol
    }
}

/// Evaluates the postconditions given the measured Hölder seminorm of `w`.
pub fn check_sliding(w: &MeshFunction, s: &SlidingParaboloid, holder: f64, eta: f64) -> SlidingCheck {
    let mesh = w.mesh();
    let k = s.opening();
    let max_excess = (0..mesh.len())
        .map(|i| w.get(i) - s.affine(mesh.point(i)) + k * dist2(mesh.point(i), &s.x0))
        .fold(f64::NEG_INFINITY, f64::max);
    let discrete_distance = (0..mesh.len())
        .filter(|&i| w.get(i) <= 0.0)
        .map(|i| dist(mesh.point(i), &s.x0))
        .fold(f64::INFINITY, f64::min);
    SlidingCheck {
        max_excess,
        value_margin: s.value - 0.5 * s.m,
        distance_bound: (s.m / (2.0 * holder)).powf(1.0 / eta),
        discrete_distance,
        boundary_distance: mesh.distance(s.x0_index),
    }
}

// ---------------------------------------------------------------------------
// Concave envelope

/// Largest mesh handled by [`concave_envelope`].
pub const ENVELOPE_CAP: usize = 10_000;

#[derive(Clone, Debug)]
pub struct ConcaveEnvelope {
    pub envelope: MeshFunction,
    /// Mesh indices where the envelope equals `u` within `1e-10`.
    pub contact: Vec<usize>,
}

/// Least concave majorant of the lifted mesh points `(x, u(x))`, evaluated at
/// every mesh point. One dimension uses an upper hull; two dimensions solve
/// `max Σλᵢuᵢ` over convex weights reproducing `x`.
pub fn concave_envelope(u: &MeshFunction) -> Result<ConcaveEnvelope> {
    let mesh = u.mesh().clone();
    let n = mesh.dim();
    if n > 2 {
        return Err(Error::Unsupported(format!("concave envelopes are implemented for n ≤ 2, got n = {n}")));
    }
    if mesh.len() > ENVELOPE_CAP {
        return Err(Error::MeshTooLarge { points: mesh.len(), cap: ENVELOPE_CAP });
    }
    let values = if n == 1 {
        envelope_1d(u)
    } else {
        let m = mesh.len();
        let mut a = vec![0.0; 3 * m];
        for j in 0..m {
            let p = mesh.point(j);
            a[j] = 1.0;
            a[m + j] = p[0];
            a[2 * m + j] = p[1];
        }
        let c: Vec<f64> = u.values().iter().map(|v| -v).collect();
        par::map_range(m, |i| {
            let p = mesh.point(i);
            match simplex_min(&a, 3, &[1.0, p[0], p[1]], &c, 1e-12) {
                LpOutcome::Optimal { objective, .. } => (-objective).max(u.get(i)),
                _ => u.get(i),
            }
        })
    };
    let contact = (0..mesh.len()).filter(|&i| values[i] - u.get(i) <= 1e-10).collect();
    Ok(ConcaveEnvelope { envelope: MeshFunction::new(mesh, values)?, contact })
}

fn envelope_1d(u: &MeshFunction) -> Vec<f64> {
    let mesh = u.mesh();
    let pts: Vec<(f64, f64)> = (0..mesh.len()).map(|i| (mesh.point(i)[0], u.get(i))).collect();
    // monotone chain, upper hull, points already sorted by x
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut k = 0;
    pts.iter()
        .map(|&(x, y)| {
            while k + 1 < hull.len() && hull[k + 1].0 < x {
                k += 1;
            }
            let v = if k + 1 < hull.len() {
                let (a, b) = (hull[k], hull[k + 1]);
                if x <= a.0 {
                    a.1
                } else {
                    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
                }
            } else {
                hull[k].1
            };
            v.max(y)
        })
        .collect()
}

/// Supergradient set `{p : u(x_j) ≤ u(x_i) + p·(x_j − x_i) ∀j}` measure at
/// point `i`; `None` when it is unbounded (clipped at `bound`).
fn supergradient_measure(u: &MeshFunction, i: usize, bound: f64) -> Option<f64> {
    let mesh = u.mesh();
    let xi = mesh.point(i);
    let ui = u.get(i);
    match mesh.dim() {
        1 => {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for j in 0..mesh.len() {
                let dx = mesh.point(j)[0] - xi[0];
                let du = u.get(j) - ui;
                if dx > 0.0 {
                    lo = lo.max(du / dx);
                } else if dx < 0.0 {
                    hi = hi.min(du / dx);
                }
            }
            (lo.is_finite() && hi.is_finite()).then(|| (hi - lo).max(0.0))
        }
        _ => {
            let mut poly = vec![[-bound, -bound], [bound, -bound], [bound, bound], [-bound, bound]];
            for j in 0..mesh.len() {
                if j == i {
                    continue;
                }
                let xj = mesh.point(j);
                let d = [xj[0] - xi[0], xj[1] - xi[1]];
                // keep p·d ≥ u_j − u_i
                poly = clip(&poly, d, u.get(j) - ui);
                if poly.is_empty() {
                    return Some(0.0);
                }
            }
            let touches = poly.iter().any(|p| p[0].abs() >= bound * (1.0 - 1e-9) || p[1].abs() >= bound * (1.0 - 1e-9));
            if touches {
                return None;
            }
            let mut area = 0.0;
            for k in 0..poly.len() {
                let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                area += a[0] * b[1] - a[1] * b[0];
            }
            Some(0.5 * area.abs())
        }
    }
}

/// Sutherland–Hodgman clip of a convex polygon to `{p : p·d ≥ c}`.
fn clip(poly: &[[f64; 2]], d: [f64; 2], c: f64) -> Vec<[f64; 2]> {
    let f = |p: &[f64; 2]| p[0] * d[0] + p[1] * d[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        let (fa, fb) = (f(&a), f(&b));
        if fa >= 0.0 {
            out.push(a);
        }
        if (fa >= 0.0) != (fb >= 0.0) {
            let t = fa / (fa - fb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbpReport {
    pub sup_u: f64,
    /// Measure of the supergradient image of the interior contact points.
    pub mass: f64,
    /// Contact points whose supergradient set was unbounded and skipped.
    pub unbounded: usize,
    /// `diam U · (mass/ω_n)^{1/n}`
    pub bound: f64,
    /// `sup u ≤ factor · bound`
    pub passed: bool,
}

/// Unit-ball volume `ω_n` for `n ≤ 3`.
fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 4.0 / 3.0 * std::f64::consts::PI,
    }
}

/// Monge–Ampère mass of the concave envelope over interior contact points.
pub fn monge_ampere_mass(u: &MeshFunction, env: &ConcaveEnvelope) -> (f64, usize) {
    let mesh = u.mesh();
    let range = u.max() - u.values().iter().copied().fold(f64::INFINITY, f64::min);
    let bound = 8.0 * (range + 1.0) / mesh.h();
    let interior: Vec<usize> = env.contact.iter().copied().filter(|&i| mesh.is_interior(i)).collect();
    let parts = par::map_slice(&interior, |&i| supergradient_measure(u, i, bound));
    let mass = parts.iter().flatten().sum();
    (mass, parts.iter().filter(|p| p.is_none()).count())
}

/// Discrete ABP check `sup u ≤ factor · diam U · (mass/ω_n)^{1/n}` for `u ≤ 0`
/// on boundary points.
pub fn abp_check(u: &MeshFunction, factor: f64) -> Result<AbpReport> {
    let mesh = u.mesh();
    if mesh.boundary_points().iter().any(|&i| u.get(i) > 1e-12) {
        return Err(Error::InvalidArgument("ABP check needs u ≤ 0 on boundary points".into()));
    }
    let env = concave_envelope(u)?;
    let (mass, unbounded) = monge_ampere_mass(u, &env);
    let n = mesh.dim();
    let bound = mesh.domain().diameter() * (mass / unit_ball_volume(n)).powf(1.0 / n as f64);
    let sup_u = u.max().max(0.0);
    Ok(AbpReport { sup_u, mass, unbounded, bound, passed: sup_u <= factor * bound + 1e-12 })
}

// ---------------------------------------------------------------------------
// Doubling variables

/// Largest mesh accepted by the exhaustive pair scan.
pub const DOUBLING_CAP: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub x_a: Vec<f64>,
    pub y_a: Vec<f64>,
    /// `max v(x) − w(y) − (a/2)|x−y|²`
    pub value: f64,
    pub separation: f64,
    /// `2·min(Lip v, Lip w)/a`
    pub separation_bound: f64,
    /// The maximum restricted to pairs with a boundary coordinate.
    pub boundary_sup: f64,
    /// `2(Lip_v² + Lip_w²)/a`
    pub boundary_bound: f64,
}

impl DoublingReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.separation <= self.separation_bound + tol && self.boundary_sup <= self.boundary_bound + tol
    }
}

/// Exhaustive maximization of `v(x) − w(y) − (a/2)|x−y|²`. Lipschitz
/// constants default to the discrete ones measured on the mesh.
pub fn doubling_gap(v: &MeshFunction, w: &MeshFunction, a: f64, lips: Option<(f64, f64)>) -> Result<DoublingReport> {
    let mesh = v.mesh().clone();
    if !std::sync::Arc::ptr_eq(&mesh, w.mesh()) && mesh.len() != w.mesh().len() {
        return Err(Error::InvalidArgument("v and w must live on the same mesh".into()));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("a must be positive, got {a}")));
    }
    let m = mesh.len();
    if m > DOUBLING_CAP {
        return Err(Error::MeshTooLarge { points: m, cap: DOUBLING_CAP });
    }
    let rows = par::map_range(m, |i| {
        let xi = mesh.point(i);
        let mut best = (f64::NEG_INFINITY, 0);
        let mut bdry = f64::NEG_INFINITY;
        let bi = !mesh.is_interior(i);
        for j in 0..m {
            let val = v.get(i) - w.get(j) - 0.5 * a * dist2(xi, mesh.point(j));
            if val > best.0 {
                best = (val, j);
            }
            if bi || !mesh.is_interior(j) {
                bdry = bdry.max(val);
            }
        }
        (best, bdry)
    });
    let mut top = (f64::NEG_INFINITY, 0, 0);
    let mut boundary_sup = f64::NEG_INFINITY;
    for (i, ((val, j), b)) in rows.into_iter().enumerate() {
        if val > top.0 {
            top = (val, i, j);
        }
        boundary_sup = boundary_sup.max(b);
    }
    let (lv, lw) = lips.unwrap_or_else(|| (discrete_lipschitz(v), discrete_lipschitz(w)));
    let (x_a, y_a) = (mesh.point(top.1).to_vec(), mesh.point(top.2).to_vec());
    Ok(DoublingReport {
        separation: dist(&x_a, &y_a),
        x_a,
        y_a,
        value: top.0,
        separation_bound: 2.0 * lv.min(lw) / a,
        boundary_sup,
        boundary_bound: 2.0 * (lv * lv + lw * lw) / a,
    })
}

/// `max |u(x) − u(y)|/|x − y|` over all mesh pairs.
pub fn discrete_lipschitz(u: &MeshFunction) -> f64 {
    let mesh = u.mesh();
    let m = mesh.len();
    par::max_range(m, |i| {
        (i + 1..m)
            .map(|j| (u.get(i) - u.get(j)).abs() / dist(mesh.point(i), mesh.point(j)))
            .fold(0.0, f64::max)
    })
    .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Domain, Mesh};
    use std::sync::Arc;

    fn square(h: f64) -> Arc<Mesh> {
        Arc::new(Mesh::build(Domain::unit_box(2), h, 1).unwrap())
    }

    #[test]
    fn touch_examples() {
        let m = square(0.125);
        let zero = MeshFunction::zeros(m.clone());
        let x = m.index_of(&[4, 4]).unwrap();
        let TouchOutcome::Touched(c) = touch(&zero, &[0.0, 0.0], &SymMat::identity(2), x, 0.25, Side::Above, 0.25) else {
            panic!()
        };
        assert_eq!(c.touch_index, x);
        assert_eq!(c.residual_min, 0.0);
        assert!(c.verify(&zero));
        let TouchOutcome::Touched(c) = touch(&zero, &[0.0, 0.0], &SymMat::scalar(2, -1.0), x, 0.25, Side::Below, 0.25) else {
            panic!()
        };
        assert_eq!(c.touch_index, x);
        assert!(c.verify(&zero));

        let v = MeshFunction::from_fn(m.clone(), |p| (p[0] - 0.5).abs());
        let off = m.index_of(&[5, 4]).unwrap();
        let TouchOutcome::Touched(c) = touch(&v, &[0.0, 0.0], &SymMat::zeros(2), off, 0.25, Side::Below, 0.25) else {
            panic!()
        };
        assert!((c.touch_point[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.paraboloid.c, 0.0);
    }

    #[test]
    fn envelope_examples() {
        let line = Arc::new(Mesh::build(Domain::Box { lo: vec![0.0], hi: vec![1.0] }, 0.125, 1).unwrap());
        let dip = MeshFunction::from_fn(line.clone(), |x| if (x[0] - 0.5).abs() < 1e-12 { -1.0 } else { 0.0 });
        let env = concave_envelope(&dip).unwrap();
        assert!(env.envelope.values().iter().all(|&v| v == 0.0));
        assert_eq!(env.contact.len(), line.len() - 1);

        let m = square(0.25);
        let conc = MeshFunction::from_fn(m.clone(), |x| -(x[0] * x[0] + x[1] * x[1]));
        let env = concave_envelope(&conc).unwrap();
        assert_eq!(env.contact.len(), m.len());

        let cube = Arc::new(Mesh::build(Domain::unit_box(3), 0.25, 1).unwrap());
        assert!(matches!(concave_envelope(&MeshFunction::zeros(cube)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn clip_keeps_half_plane() {
        let sq = vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        let half = clip(&sq, [1.0, 0.0], 0.0);
        let area: f64 = (0..half.len())
            .map(|k| {
                let (a, b) = (half[k], half[(k + 1) % half.len()]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
            * 0.5;
        assert!((area.abs() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn doubling_examples() {
        let m = Arc::new(Mesh::build(Domain::unit_box(2), 0.1, 1).unwrap());
        let v = MeshFunction::from_fn(m.clone(), |x| x[0]);
        let r = doubling_gap(&v, &v, 100.0, Some((1.0, 1.0))).unwrap();
        assert_eq!(r.x_a, r.y_a);
        assert!(r.value >= 0.0);
        assert!(r.holds(1e-12));
    }

    #[test]
    fn sliding_rejects_bad_m() {
        let m = square(0.125);
        let w = MeshFunction::from_fn(m.clone(), |x| 0.25 - (x[0] - 0.5).powi(2) - (x[1] - 0.5).powi(2));
        assert!(sliding_paraboloid(&w, 1.0, None).is_err());
        let neg = MeshFunction::from_fn(m.clone(), |_| -1.0);
        assert!(sliding_paraboloid(&neg, 0.1, None).is_err());
    }
}
