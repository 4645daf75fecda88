//! Continuum data of the Dirichlet problem: symmetric matrices, closed-form
//! scalar and coefficient fields, the nonlinearities `F(X, x)` and their
//! inf/sup perturbations over small balls.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Domain;

/// Default ratio between the sampling resolution of `F_ε` and `ε`.
pub const DEFAULT_RESOLUTION_FRACTION: f64 = 1.0 / 8.0;

// ---------------------------------------------------------------------------
// Symmetric matrices

/// Real symmetric `n×n` matrix, stored as its upper triangle so symmetry holds
/// by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMat {
    n: usize,
    upper: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for SymMat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMat::from_rows(&rows)
    }
}

impl From<SymMat> for Vec<Vec<f64>> {
    fn from(m: SymMat) -> Self {
        (0..m.n).map(|i| (0..m.n).map(|j| m.get(i, j)).collect()).collect()
    }
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, upper: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    pub fn scalar(n: usize, c: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, c);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from full rows; the input must be exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("matrix rows must form a square".into()));
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i},{j}): {} vs {}",
                        rows[i][j], rows[j][i]
                    )));
                }
                m.set(i, j, rows[i][j]);
            }
        }
        Ok(m)
    }

    /// Fills from `f(i, j)` evaluated on `i ≤ j`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// `v vᵀ`
    pub fn outer(v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.slot(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.upper[s] = v;
    }

    pub fn add_scaled(&mut self, other: &SymMat, t: f64) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += t * b;
        }
    }

    pub fn plus(&self, other: &SymMat) -> SymMat {
        let mut m = self.clone();
        m.add_scaled(other, 1.0);
        m
    }

    pub fn minus(&self, other: &SymMat) -> SymMat {
        let mut m = self.clone();
        m.add_scaled(other, -1.0);
        m
    }

    pub fn scaled(&self, t: f64) -> SymMat {
        SymMat { n: self.n, upper: self.upper.iter().map(|v| v * t).collect() }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `tr(A B) = Σ_ij a_ij b_ij`.
    pub fn frobenius_dot(&self, other: &SymMat) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += self.get(i, i) * other.get(i, i);
            for j in i + 1..self.n {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_dot(self).sqrt()
    }

    /// `vᵀ A v`
    pub fn quad(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += self.get(i, i) * v[i] * v[i];
            for j in i + 1..self.n {
                s += 2.0 * self.get(i, j) * v[i] * v[j];
            }
        }
        s
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.n {
            0 => vec![],
            1 => vec![self.upper[0]],
            2 => {
                let (a, b, c) = (self.get(0, 0), self.get(0, 1), self.get(1, 1));
                let m = 0.5 * (a + c);
                let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                vec![m - r, m + r]
            }
            _ => {
                let mut e: Vec<f64> =
                    SymmetricEigen::new(self.to_dmatrix()).eigenvalues.iter().copied().collect();
                e.sort_by(f64::total_cmp);
                e
            }
        }
    }

    /// `‖X‖ = sup_{|v|=1} |Xv|`, the largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Raw bit pattern, used as a cache key.
    pub fn key(&self) -> Vec<u64> {
        self.upper.iter().map(|v| v.to_bits()).collect()
    }
}

// ---------------------------------------------------------------------------
// Scalar fields

/// Closed-form scalar field with exact gradient and Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant { value: f64 },
    /// `value + gradient·x`
    Affine { value: f64, gradient: Vec<f64> },
    /// `value + gradient·x + ½ xᵀ hessian x`
    Quadratic { value: f64, gradient: Vec<f64>, hessian: SymMat },
    /// `coef · Π x_i^{p_i}`
    Monomial { coef: f64, powers: Vec<u32> },
    /// `amplitude · Π sin(freq_i x_i + phase_i)`
    SinProduct {
        amplitude: f64,
        freq: Vec<f64>,
        #[serde(default)]
        phase: Vec<f64>,
    },
    /// `amplitude · exp(rate·x)`
    Exp { amplitude: f64, rate: Vec<f64> },
    Sum { terms: Vec<ScalarField> },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    /// `x_axis` (zero-based axis).
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut gradient = vec![0.0; dim];
        gradient[axis] = 1.0;
        ScalarField::Affine { value: 0.0, gradient }
    }

    /// `½|x|²`
    pub fn half_norm_sq(dim: usize) -> Self {
        ScalarField::Quadratic { value: 0.0, gradient: vec![0.0; dim], hessian: SymMat::identity(dim) }
    }

    /// `Π sin(π x_i)`
    pub fn sin_pi_product(dim: usize) -> Self {
        ScalarField::SinProduct {
            amplitude: 1.0,
            freq: vec![std::f64::consts::PI; dim],
            phase: vec![0.0; dim],
        }
    }

    /// Catalog lookup by name.
    pub fn named(name: &str, dim: usize) -> Result<Self> {
        Ok(match name {
            "zero" => Self::constant(0.0),
            "one" => Self::constant(1.0),
            "x1" => Self::coordinate(dim, 0),
            "x2" if dim >= 2 => Self::coordinate(dim, 1),
            "half_norm_sq" => Self::half_norm_sq(dim),
            "sin_pi_product" => Self::sin_pi_product(dim),
            "cubic_x1" => {
                let mut powers = vec![0; dim];
                powers[0] = 3;
                ScalarField::Monomial { coef: 1.0, powers }
            }
            "exp_sum" => ScalarField::Exp { amplitude: 1.0, rate: vec![1.0; dim] },
            other => return Err(Error::Config(format!("unknown scalar field catalog id '{other}'"))),
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::Affine { value, gradient } => value + dot(gradient, x),
            ScalarField::Quadratic { value, gradient, hessian } => {
                value + dot(gradient, x) + 0.5 * hessian.quad(x)
            }
            ScalarField::Monomial { coef, powers } => coef * monomial(powers, x),
            ScalarField::SinProduct { amplitude, freq, phase } => {
                amplitude * (0..x.len()).map(|i| (freq[i] * x[i] + ph(phase, i)).sin()).product::<f64>()
            }
            ScalarField::Exp { amplitude, rate } => amplitude * dot(rate, x).exp(),
            ScalarField::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        match self {
            ScalarField::Constant { .. } => vec![0.0; n],
            ScalarField::Affine { gradient, .. } => gradient.clone(),
            ScalarField::Quadratic { gradient, hessian, .. } => {
                let hx = hessian.mul_vec(x);
                gradient.iter().zip(hx).map(|(b, v)| b + v).collect()
            }
            ScalarField::Monomial { coef, powers } => (0..n)
                .map(|i| {
                    let (c, p) = differentiate(*coef, powers, &[i]);
                    c * monomial(&p, x)
                })
                .collect(),
            ScalarField::SinProduct { amplitude, freq, phase } => {
                let s: Vec<f64> = (0..n).map(|i| (freq[i] * x[i] + ph(phase, i)).sin()).collect();
                let c: Vec<f64> = (0..n).map(|i| (freq[i] * x[i] + ph(phase, i)).cos()).collect();
                (0..n)
                    .map(|i| {
                        amplitude
                            * freq[i]
                            * c[i]
                            * (0..n).filter(|&k| k != i).map(|k| s[k]).product::<f64>()
                    })
                    .collect()
            }
            ScalarField::Exp { amplitude, rate } => {
                let v = amplitude * dot(rate, x).exp();
                rate.iter().map(|k| k * v).collect()
            }
            ScalarField::Sum { terms } => {
                let mut g = vec![0.0; n];
                for t in terms {
                    for (a, b) in g.iter_mut().zip(t.gradient(x)) {
                        *a += b;
                    }
                }
                g
            }
        }
    }

    pub fn hessian(&self, x: &[f64]) -> SymMat {
        let n = x.len();
        match self {
            ScalarField::Constant { .. } | ScalarField::Affine { .. } => SymMat::zeros(n),
            ScalarField::Quadratic { hessian, .. } => hessian.clone(),
            ScalarField::Monomial { coef, powers } => SymMat::from_fn(n, |i, j| {
                let (c, p) = differentiate(*coef, powers, &[i, j]);
                c * monomial(&p, x)
            }),
            ScalarField::SinProduct { amplitude, freq, phase } => {
                let s: Vec<f64> = (0..n).map(|i| (freq[i] * x[i] + ph(phase, i)).sin()).collect();
                let c: Vec<f64> = (0..n).map(|i| (freq[i] * x[i] + ph(phase, i)).cos()).collect();
                SymMat::from_fn(n, |i, j| {
                    if i == j {
                        -amplitude * freq[i] * freq[i] * s.iter().product::<f64>()
                    } else {
                        amplitude
                            * freq[i]
                            * freq[j]
                            * c[i]
                            * c[j]
                            * (0..n).filter(|&k| k != i && k != j).map(|k| s[k]).product::<f64>()
                    }
                })
            }
            ScalarField::Exp { amplitude, rate } => {
                let v = amplitude * dot(rate, x).exp();
                SymMat::from_fn(n, |i, j| rate[i] * rate[j] * v)
            }
            ScalarField::Sum { terms } => {
                let mut h = SymMat::zeros(n);
                for t in terms {
                    h.add_scaled(&t.hessian(x), 1.0);
                }
                h
            }
        }
    }

    /// Upper bound for `sup_U |∇φ|`.
    pub fn lipschitz(&self, domain: &Domain) -> f64 {
        let (lo, hi) = domain.bounds();
        let reach: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l.abs().max(h.abs())).collect();
        match self {
            ScalarField::Constant { .. } => 0.0,
            ScalarField::Affine { gradient, .. } => norm(gradient),
            ScalarField::Quadratic { gradient, hessian, .. } => {
                norm(gradient) + hessian.spectral_norm() * norm(&reach)
            }
            ScalarField::Monomial { coef, powers } => (0..powers.len())
                .map(|i| {
                    let (c, p) = differentiate(*coef, powers, &[i]);
                    let b = c.abs() * monomial_bound(&p, &reach);
                    b * b
                })
                .sum::<f64>()
                .sqrt(),
            ScalarField::SinProduct { amplitude, freq, .. } => amplitude.abs() * norm(freq),
            ScalarField::Exp { amplitude, rate } => {
                amplitude.abs() * norm(rate) * sup_linear(rate, domain).exp()
            }
            ScalarField::Sum { terms } => terms.iter().map(|t| t.lipschitz(domain)).sum(),
        }
    }

    /// Upper bound for `sup_U ‖D³φ‖` (operator norm of the third derivative).
    pub fn third_derivative_bound(&self, domain: &Domain) -> f64 {
        let (lo, hi) = domain.bounds();
        let reach: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l.abs().max(h.abs())).collect();
        match self {
            ScalarField::Constant { .. } | ScalarField::Affine { .. } | ScalarField::Quadratic { .. } => 0.0,
            ScalarField::Monomial { coef, powers } => {
                let n = powers.len();
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let (c, p) = differentiate(*coef, powers, &[i, j, k]);
                            let b = c.abs() * monomial_bound(&p, &reach);
                            s += b * b;
                        }
                    }
                }
                s.sqrt()
            }
            ScalarField::SinProduct { amplitude, freq, .. } => amplitude.abs() * norm(freq).powi(3),
            ScalarField::Exp { amplitude, rate } => {
                amplitude.abs() * norm(rate).powi(3) * sup_linear(rate, domain).exp()
            }
            ScalarField::Sum { terms } => terms.iter().map(|t| t.third_derivative_bound(domain)).sum(),
        }
    }

    /// True when the field does not depend on `x`.
    pub fn is_constant(&self) -> bool {
        match self {
            ScalarField::Constant { .. } => true,
            ScalarField::Affine { gradient, .. } => gradient.iter().all(|g| *g == 0.0),
            ScalarField::Sum { terms } => terms.iter().all(|t| t.is_constant()),
            _ => false,
        }
    }
}

fn ph(phase: &[f64], i: usize) -> f64 {
    phase.get(i).copied().unwrap_or(0.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn monomial(powers: &[u32], x: &[f64]) -> f64 {
    powers.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product()
}

fn monomial_bound(powers: &[u32], reach: &[f64]) -> f64 {
    powers.iter().zip(reach).map(|(&p, &r)| r.powi(p as i32)).product()
}

/// Differentiates `coef·x^p` once along each listed axis.
fn differentiate(coef: f64, powers: &[u32], axes: &[usize]) -> (f64, Vec<u32>) {
    let mut c = coef;
    let mut p = powers.to_vec();
    for &a in axes {
        if p[a] == 0 {
            return (0.0, p);
        }
        c *= p[a] as f64;
        p[a] -= 1;
    }
    (c, p)
}

/// `sup_{x ∈ U} k·x`
fn sup_linear(k: &[f64], domain: &Domain) -> f64 {
    match domain {
        Domain::Box { lo, hi } => k.iter().zip(lo.iter().zip(hi)).map(|(k, (l, h))| (k * l).max(k * h)).sum(),
        Domain::Ball { center, radius } => dot(k, center) + norm(k) * radius,
    }
}

// ---------------------------------------------------------------------------
// Coefficient fields

/// A term `field(x) · matrix` of a [`MatrixField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixTerm {
    pub field: ScalarField,
    pub matrix: SymMat,
}

/// Coefficient field `a(x) = base + Σ_k φ_k(x) A_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixField {
    pub base: SymMat,
    #[serde(default)]
    pub terms: Vec<MatrixTerm>,
}

impl MatrixField {
    pub fn constant(m: SymMat) -> Self {
        Self { base: m, terms: vec![] }
    }

    /// `(1 + slope·x_axis)·I`
    pub fn scaled_identity_ramp(dim: usize, axis: usize, slope: f64) -> Self {
        Self {
            base: SymMat::identity(dim),
            terms: vec![MatrixTerm {
                field: ScalarField::Affine {
                    value: 0.0,
                    gradient: (0..dim).map(|i| if i == axis { slope } else { 0.0 }).collect(),
                },
                matrix: SymMat::identity(dim),
            }],
        }
    }

    pub fn named(name: &str, dim: usize) -> Result<Self> {
        Ok(match name {
            "identity" => Self::constant(SymMat::identity(dim)),
            "one_plus_x1" => Self::scaled_identity_ramp(dim, 0, 1.0),
            other => return Err(Error::Config(format!("unknown coefficient catalog id '{other}'"))),
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn eval(&self, x: &[f64]) -> SymMat {
        let mut a = self.base.clone();
        for t in &self.terms {
            a.add_scaled(&t.matrix, t.field.eval(x));
        }
        a
    }

    /// Lipschitz constant of `x ↦ a(x)` in the spectral norm.
    pub fn lipschitz(&self, domain: &Domain) -> f64 {
        self.terms.iter().map(|t| t.field.lipschitz(domain) * t.matrix.spectral_norm()).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.field.is_constant())
    }
}

// ---------------------------------------------------------------------------
// Nonlinearities

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Max,
    Min,
}

impl Extremum {
    pub fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Extremum::Max => a.max(b),
            Extremum::Min => a.min(b),
        }
    }

    /// True when `candidate` is strictly better than `incumbent` by more than `tol`.
    pub fn improves(self, candidate: f64, incumbent: f64, tol: f64) -> bool {
        match self {
            Extremum::Max => candidate > incumbent + tol,
            Extremum::Min => candidate < incumbent - tol,
        }
    }

    pub fn identity(self) -> f64 {
        match self {
            Extremum::Max => f64::NEG_INFINITY,
            Extremum::Min => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    /// `tr(a(x) X)`
    Linear { coeff: MatrixField },
    /// Pucci extremal operator; `Max` is `M⁺`, `Min` is `M⁻`.
    Pucci { sign: Extremum },
    /// `sup_α inf_β { tr(a^{αβ}(x) X) + f^{αβ}(x) }`
    Isaacs { coeff: Vec<Vec<MatrixField>>, running: Vec<Vec<ScalarField>> },
    /// `inf` (or `sup`) of the inner operator over `B_ε(x) ∩ U`.
    Perturbed { inner: Box<Nonlinearity>, domain: Domain, eps: f64, resolution: f64, kind: Extremum },
}

/// A uniformly elliptic nonlinearity `F(X, x)`.
///
/// `lambda`/`big_lambda` bound the response to positive semidefinite
/// increments in trace form, `λ·tr Y ≤ F(X+Y, x) − F(X, x) ≤ Λ·tr Y`; in the
/// spectral norm this gives `λ‖Y‖ ≤ ΔF ≤ nΛ‖Y‖`. `kappa` is the constant of
/// `|F(X,x) − F(X,y)| ≤ κ|x−y|(‖X‖+1)`, computed from the catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    kind: OperatorKind,
    dim: usize,
    lambda: f64,
    big_lambda: f64,
    kappa: f64,
}

fn check_constants(lambda: f64, big_lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ellipticity constants need 0 < λ ≤ Λ, got λ={lambda}, Λ={big_lambda}"
        )));
    }
    Ok(())
}

impl Nonlinearity {
    pub fn laplacian(dim: usize) -> Self {
        Self {
            kind: OperatorKind::Linear { coeff: MatrixField::constant(SymMat::identity(dim)) },
            dim,
            lambda: 1.0,
            big_lambda: 1.0,
            kappa: 0.0,
        }
    }

    /// Linear operator `tr(a(x)X)` with declared eigenvalue bounds `[λ, Λ]`.
    pub fn linear(coeff: MatrixField, lambda: f64, big_lambda: f64, domain: &Domain) -> Result<Self> {
        check_constants(lambda, big_lambda)?;
        let dim = coeff.dim();
        if dim != domain.dim() {
            return Err(Error::InvalidArgument("coefficient and domain dimensions differ".into()));
        }
        let kappa = dim as f64 * coeff.lipschitz(domain);
        Ok(Self { kind: OperatorKind::Linear { coeff }, dim, lambda, big_lambda, kappa })
    }

    pub fn pucci(dim: usize, lambda: f64, big_lambda: f64, sign: Extremum) -> Result<Self> {
        check_constants(lambda, big_lambda)?;
        Ok(Self { kind: OperatorKind::Pucci { sign }, dim, lambda, big_lambda, kappa: 0.0 })
    }

    /// Finite-control Isaacs operator; `coeff[α][β]` and `running[α][β]`.
    pub fn isaacs(
        coeff: Vec<Vec<MatrixField>>,
        running: Vec<Vec<ScalarField>>,
        lambda: f64,
        big_lambda: f64,
        domain: &Domain,
    ) -> Result<Self> {
        check_constants(lambda, big_lambda)?;
        if coeff.is_empty() || coeff.iter().any(|row| row.is_empty() || row.len() != coeff[0].len()) {
            return Err(Error::InvalidArgument("Isaacs control sets must be nonempty and rectangular".into()));
        }
        if running.len() != coeff.len() || running.iter().zip(&coeff).any(|(r, c)| r.len() != c.len()) {
            return Err(Error::InvalidArgument("running terms must match the coefficient grid".into()));
        }
        let dim = domain.dim();
        if coeff.iter().flatten().any(|a| a.dim() != dim) {
            return Err(Error::InvalidArgument("coefficient and domain dimensions differ".into()));
        }
        let mut kappa: f64 = 0.0;
        for (row_a, row_f) in coeff.iter().zip(&running) {
            for (a, f) in row_a.iter().zip(row_f) {
                kappa = kappa.max(dim as f64 * a.lipschitz(domain)).max(f.lipschitz(domain));
            }
        }
        Ok(Self { kind: OperatorKind::Isaacs { coeff, running }, dim, lambda, big_lambda, kappa })
    }

    /// Two-by-two control Isaacs operator on a 2D domain with x-Lipschitz
    /// coefficients, eigenvalues in `[1, 2.5]` on the unit square, and zero
    /// running terms.
    pub fn isaacs_demo(domain: &Domain) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::Unsupported("isaacs_demo is two-dimensional".into()));
        }
        let id = SymMat::identity(2);
        let ramp = |axis: usize, slope: f64, m: SymMat| MatrixTerm {
            field: ScalarField::Affine {
                value: 0.0,
                gradient: (0..2).map(|i| if i == axis { slope } else { 0.0 }).collect(),
            },
            matrix: m,
        };
        let a11 = MatrixField { base: id.clone(), terms: vec![ramp(0, 0.5, id.clone())] };
        let a12 = MatrixField {
            base: SymMat::from_rows(&[vec![1.5, 0.5], vec![0.5, 1.5]])?,
            terms: vec![ramp(1, 0.5, id.clone())],
        };
        let a21 = MatrixField {
            base: SymMat::diag(&[2.0, 1.0]),
            terms: vec![ramp(1, -0.5, SymMat::diag(&[1.0, 0.0])), ramp(0, 0.5, SymMat::diag(&[0.0, 1.0]))],
        };
        let a22 = MatrixField {
            base: SymMat::from_rows(&[vec![1.25, -0.25], vec![-0.25, 1.25]])?,
            terms: vec![ramp(0, 0.25, id)],
        };
        let zero = ScalarField::constant(0.0);
        Self::isaacs(
            vec![vec![a11, a12], vec![a21, a22]],
            vec![vec![zero.clone(), zero.clone()], vec![zero.clone(), zero]],
            1.0,
            2.5,
            domain,
        )
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Constants of the spectral-norm form `λ‖Y‖ ≤ ΔF ≤ Λ'‖Y‖`.
    pub fn spectral_constants(&self) -> (f64, f64) {
        (self.lambda, self.dim as f64 * self.big_lambda)
    }

    /// True when the operator is known to satisfy `F(0, x) = 0` for all `x`.
    pub fn normalized(&self) -> bool {
        match &self.kind {
            OperatorKind::Linear { .. } | OperatorKind::Pucci { .. } => true,
            OperatorKind::Isaacs { running, .. } => running
                .iter()
                .flatten()
                .all(|f| matches!(f, ScalarField::Constant { value } if *value == 0.0)),
            OperatorKind::Perturbed { inner, .. } => inner.normalized(),
        }
    }

    /// True when `F(X, x)` does not depend on `x`.
    pub fn is_x_independent(&self) -> bool {
        match &self.kind {
            OperatorKind::Linear { coeff } => coeff.is_constant(),
            OperatorKind::Pucci { .. } => true,
            OperatorKind::Isaacs { coeff, running } => {
                coeff.iter().flatten().all(|a| a.is_constant())
                    && running.iter().flatten().all(|f| f.is_constant())
            }
            OperatorKind::Perturbed { inner, .. } => inner.is_x_independent(),
        }
    }

    pub fn eval(&self, x_mat: &SymMat, x: &[f64]) -> f64 {
        match &self.kind {
            OperatorKind::Linear { coeff } => coeff.eval(x).frobenius_dot(x_mat),
            OperatorKind::Pucci { sign } => pucci_value(x_mat, self.lambda, self.big_lambda, *sign),
            OperatorKind::Isaacs { coeff, running } => coeff
                .iter()
                .zip(running)
                .map(|(row_a, row_f)| {
                    row_a
                        .iter()
                        .zip(row_f)
                        .map(|(a, f)| a.eval(x).frobenius_dot(x_mat) + f.eval(x))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max),
            OperatorKind::Perturbed { inner, domain, eps, resolution, kind } => {
                perturbation_samples(domain, x, *eps, *resolution)
                    .iter()
                    .map(|y| inner.eval(x_mat, y))
                    .fold(kind.identity(), |acc, v| kind.pick(acc, v))
            }
        }
    }

    /// `F(0, x)`
    pub fn value_at_zero(&self, x: &[f64]) -> f64 {
        self.eval(&SymMat::zeros(self.dim), x)
    }

    /// `F_ε(X, x) = inf_{y ∈ B_ε(x) ∩ U} F(X, y)` sampled on a sub-lattice of
    /// spacing `resolution` centered at `x`.
    pub fn perturb_inf(&self, domain: &Domain, eps: f64, resolution: f64) -> Result<Self> {
        self.perturbed(domain, eps, resolution, Extremum::Min)
    }

    /// `F^ε(X, x) = sup_{y ∈ B_ε(x) ∩ U} F(X, y)`, sampled like [`Self::perturb_inf`].
    pub fn perturb_sup(&self, domain: &Domain, eps: f64, resolution: f64) -> Result<Self> {
        self.perturbed(domain, eps, resolution, Extremum::Max)
    }

    /// The constant-coefficient operator `X ↦ F(X, x0)`.
    pub fn frozen_at(&self, x0: &[f64]) -> Result<Self> {
        let freeze = |a: &MatrixField| MatrixField::constant(a.eval(x0));
        let kind = match &self.kind {
            OperatorKind::Linear { coeff } => OperatorKind::Linear { coeff: freeze(coeff) },
            OperatorKind::Pucci { sign } => OperatorKind::Pucci { sign: *sign },
            OperatorKind::Isaacs { coeff, running } => OperatorKind::Isaacs {
                coeff: coeff.iter().map(|row| row.iter().map(freeze).collect()).collect(),
                running: running
                    .iter()
                    .map(|row| row.iter().map(|f| ScalarField::constant(f.eval(x0))).collect())
                    .collect(),
            },
            OperatorKind::Perturbed { .. } => {
                return Err(Error::Unsupported("freezing a perturbed operator".into()));
            }
        };
        Ok(Self { kind, kappa: 0.0, ..self.clone() })
    }

    fn perturbed(&self, domain: &Domain, eps: f64, resolution: f64, kind: Extremum) -> Result<Self> {
        check_perturbation(eps, resolution)?;
        if matches!(self.kind, OperatorKind::Perturbed { .. }) {
            return Err(Error::Unsupported("nested perturbations".into()));
        }
        Ok(Self {
            kind: OperatorKind::Perturbed {
                inner: Box::new(self.clone()),
                domain: domain.clone(),
                eps,
                resolution,
                kind,
            },
            dim: self.dim,
            lambda: self.lambda,
            big_lambda: self.big_lambda,
            kappa: self.kappa,
        })
    }
}

fn check_perturbation(eps: f64, resolution: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("perturbation radius must be ≥ 0, got {eps}")));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument(format!("resolution must be > 0, got {resolution}")));
    }
    Ok(())
}

/// Pucci extremal operator from the eigenvalues of `X`.
pub fn pucci_value(x_mat: &SymMat, lambda: f64, big_lambda: f64, sign: Extremum) -> f64 {
    let (pos_w, neg_w) = match sign {
        Extremum::Max => (big_lambda, lambda),
        Extremum::Min => (lambda, big_lambda),
    };
    x_mat
        .eigenvalues()
        .iter()
        .map(|&e| if e > 0.0 { pos_w * e } else { neg_w * e })
        .sum()
}

/// Points `x + resolution·k`, `k ∈ Zⁿ`, with `|resolution·k| ≤ eps` that lie in
/// the closed domain, in lexicographic order of `k`. Always contains `x`.
pub fn perturbation_samples(domain: &Domain, x: &[f64], eps: f64, resolution: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = (eps / resolution + 1e-9).floor() as i64;
    let reach2 = (eps / resolution).powi(2) * (1.0 + 1e-12) + 1e-12;
    let mut out = Vec::new();
    let mut k = vec![-m; n];
    let tol = 1e-12 * (1.0 + domain.diameter());
    loop {
        let r2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
        if r2 <= reach2 {
            let y: Vec<f64> = x.iter().zip(&k).map(|(xi, &ki)| xi + resolution * ki as f64).collect();
            if k.iter().all(|&v| v == 0) || domain.contains(&y, tol) {
                out.push(y);
            }
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if k[axis] < m {
                k[axis] += 1;
                for slot in k.iter_mut().skip(axis + 1) {
                    *slot = -m;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides

/// Right-hand side `f(x)` of the equation, possibly derived from other data.
#[derive(Clone, Debug, PartialEq)]
pub enum Rhs {
    Field(ScalarField),
    /// `f(x) = F(D²u(x), x)` for an exact solution `u`.
    Manufactured { op: Box<Nonlinearity>, exact: ScalarField },
    /// `inner(x) + shift`
    Shifted { inner: Box<Rhs>, shift: f64 },
    /// `f_ε` / `f^ε`: extremum of `inner` over `B_ε(x) ∩ U`.
    Perturbed { inner: Box<Rhs>, domain: Domain, eps: f64, resolution: f64, kind: Extremum },
}

impl From<ScalarField> for Rhs {
    fn from(f: ScalarField) -> Self {
        Rhs::Field(f)
    }
}

impl Rhs {
    pub fn manufactured(op: &Nonlinearity, exact: &ScalarField) -> Self {
        Rhs::Manufactured { op: Box::new(op.clone()), exact: exact.clone() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Rhs::Field(f) => f.eval(x),
            Rhs::Manufactured { op, exact } => op.eval(&exact.hessian(x), x),
            Rhs::Shifted { inner, shift } => inner.eval(x) + shift,
            Rhs::Perturbed { inner, domain, eps, resolution, kind } => {
                perturbation_samples(domain, x, *eps, *resolution)
                    .iter()
                    .map(|y| inner.eval(y))
                    .fold(kind.identity(), |acc, v| kind.pick(acc, v))
            }
        }
    }

    pub fn shifted(&self, shift: f64) -> Self {
        Rhs::Shifted { inner: Box::new(self.clone()), shift }
    }

    /// `f_ε(x) = inf_{y ∈ B_ε(x) ∩ U} f(y)`
    pub fn field_inf(&self, domain: &Domain, eps: f64, resolution: f64) -> Result<Self> {
        check_perturbation(eps, resolution)?;
        Ok(Rhs::Perturbed { inner: Box::new(self.clone()), domain: domain.clone(), eps, resolution, kind: Extremum::Min })
    }

    /// `f^ε(x) = sup_{y ∈ B_ε(x) ∩ U} f(y)`
    pub fn field_sup(&self, domain: &Domain, eps: f64, resolution: f64) -> Result<Self> {
        check_perturbation(eps, resolution)?;
        Ok(Rhs::Perturbed { inner: Box::new(self.clone()), domain: domain.clone(), eps, resolution, kind: Extremum::Max })
    }

    /// True when `f` is constant in `x`.
    pub fn is_constant(&self) -> bool {
        match self {
            Rhs::Field(f) => f.is_constant(),
            Rhs::Manufactured { .. } => false,
            Rhs::Shifted { inner, .. } | Rhs::Perturbed { inner, .. } => inner.is_constant(),
        }
    }
}

// ---------------------------------------------------------------------------
// Ellipticity check

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub trials: usize,
    /// Samples where `λ·tr Y ≤ F(X+Y,x) − F(X,x) ≤ Λ·tr Y` failed by more than the slack.
    pub violations: usize,
    /// Sampled points where a coefficient matrix had an eigenvalue outside `[λ, Λ]`.
    pub coefficient_violations: usize,
    pub worst_excess: f64,
}

impl EllipticityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.coefficient_violations == 0
    }
}

/// Uniform sample from the domain.
pub fn sample_domain(domain: &Domain, rng: &mut impl Rng) -> Vec<f64> {
    match domain {
        Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect(),
        Domain::Ball { center, radius } => loop {
            let v: Vec<f64> = center.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
            if v.iter().map(|t| t * t).sum::<f64>() <= 1.0 {
                return center.iter().zip(v).map(|(c, t)| c + radius * t).collect();
            }
        },
    }
}

/// Random symmetric matrix with entries uniform in `[-scale, scale]`.
pub fn random_symmetric(n: usize, scale: f64, rng: &mut impl Rng) -> SymMat {
    let mut m = SymMat::zeros(n);
    for i in 0..n {
        for j in i..n {
            m.set(i, j, rng.gen_range(-scale..=scale));
        }
    }
    m
}

/// Random positive semidefinite matrix: alternately rank one `t vvᵀ` and Gram `GᵀG`.
pub fn random_psd(n: usize, rng: &mut impl Rng, rank_one: bool) -> SymMat {
    if rank_one {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        SymMat::outer(&v).scaled(rng.gen_range(0.1..=2.0))
    } else {
        let g: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        SymMat::from_fn(n, |i, j| (0..n).map(|k| g[k * n + i] * g[k * n + j]).sum())
    }
}

/// Samples `(X, x, Y ≥ 0)` and checks the trace-form ellipticity bounds, plus
/// the declared eigenvalue bounds of every coefficient matrix at `x`.
pub fn check_ellipticity(op: &Nonlinearity, domain: &Domain, trials: usize, seed: u64) -> EllipticityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.dim();
    let mut report = EllipticityReport { trials, ..Default::default() };
    for t in 0..trials {
        let x = sample_domain(domain, &mut rng);
        let xm = random_symmetric(n, 3.0, &mut rng);
        let y = random_psd(n, &mut rng, t % 2 == 0);
        let f0 = op.eval(&xm, &x);
        let f1 = op.eval(&xm.plus(&y), &x);
        let inc = f1 - f0;
        let tr = y.trace();
        let slack = 1e-9 * (1.0 + f0.abs() + f1.abs());
        let excess = (op.lambda * tr - inc).max(inc - op.big_lambda * tr);
        if excess > slack {
            report.violations += 1;
        }
        report.worst_excess = report.worst_excess.max(excess);
        if coefficient_out_of_bounds(op, &x) {
            report.coefficient_violations += 1;
        }
    }
    report
}

fn coefficient_out_of_bounds(op: &Nonlinearity, x: &[f64]) -> bool {
    let bad = |a: &MatrixField| {
        let e = a.eval(x).eigenvalues();
        e.first().is_some_and(|&v| v < op.lambda - 1e-9) || e.last().is_some_and(|&v| v > op.big_lambda + 1e-9)
    };
    match &op.kind {
        OperatorKind::Linear { coeff } => bad(coeff),
        OperatorKind::Isaacs { coeff, .. } => coeff.iter().flatten().any(bad),
        OperatorKind::Pucci { .. } => false,
        OperatorKind::Perturbed { inner, .. } => coefficient_out_of_bounds(inner, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Domain {
        Domain::unit_box(2)
    }

    #[test]
    fn symmetric_storage_and_serde() {
        let m = SymMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(m.get(1, 0), 1.0);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "[[2.0,1.0],[1.0,2.0]]");
        let back: SymMat = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<SymMat>("[[1.0,2.0],[0.0,1.0]]").is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        assert_eq!(SymMat::diag(&[3.0, -5.0]).spectral_norm(), 5.0);
        assert_eq!(SymMat::zeros(3).spectral_norm(), 0.0);
        let m = SymMat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((m.spectral_norm() - 3.0).abs() < 1e-14);
        let m3 = SymMat::diag(&[1.0, -7.0, 2.0]);
        assert!((m3.spectral_norm() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn eval_examples() {
        let p = Nonlinearity::pucci(2, 1.0, 2.0, Extremum::Min).unwrap();
        assert_eq!(p.eval(&SymMat::zeros(2), &[0.5, 0.5]), 0.0);
        let lap = Nonlinearity::laplacian(2);
        assert_eq!(lap.eval(&SymMat::diag(&[2.0, -3.0]), &[0.1, 0.2]), -1.0);
        let single = Nonlinearity::isaacs(
            vec![vec![MatrixField::constant(SymMat::identity(2))]],
            vec![vec![ScalarField::constant(0.0)]],
            1.0,
            1.0,
            &square(),
        )
        .unwrap();
        assert_eq!(single.eval(&SymMat::identity(2), &[0.3, 0.3]), 2.0);
    }

    #[test]
    fn pucci_extremal_values() {
        let x = SymMat::diag(&[1.0, -2.0]);
        let max = Nonlinearity::pucci(2, 1.0, 3.0, Extremum::Max).unwrap();
        let min = Nonlinearity::pucci(2, 1.0, 3.0, Extremum::Min).unwrap();
        assert!((max.eval(&x, &[0.0, 0.0]) - (3.0 - 2.0)).abs() < 1e-14);
        assert!((min.eval(&x, &[0.0, 0.0]) - (1.0 - 6.0)).abs() < 1e-14);
    }

    #[test]
    fn ellipticity_examples() {
        let pucci = Nonlinearity::pucci(2, 1.0, 2.0, Extremum::Max).unwrap();
        assert!(check_ellipticity(&pucci, &square(), 1000, 1).passed());
        let isaacs = Nonlinearity::isaacs(
            vec![
                vec![MatrixField::constant(SymMat::identity(2)), MatrixField::constant(SymMat::diag(&[1.0, 2.0]))],
                vec![MatrixField::scaled_identity_ramp(2, 0, 1.0), MatrixField::constant(SymMat::scalar(2, 2.0))],
            ],
            vec![vec![ScalarField::constant(0.0); 2]; 2],
            1.0,
            2.0,
            &square(),
        )
        .unwrap();
        assert!(check_ellipticity(&isaacs, &square(), 1000, 2).passed());
        let bad = Nonlinearity::linear(MatrixField::constant(SymMat::diag(&[1.0, 3.0])), 1.0, 2.0, &square()).unwrap();
        let r = check_ellipticity(&bad, &square(), 1000, 3);
        assert!(r.violations > 0 && r.coefficient_violations > 0);
        // the rank-one direction e₂e₂ᵀ gives an increment of 3 > Λ·tr(Y) = 2
        let inc = bad.eval(&SymMat::outer(&[0.0, 1.0]), &[0.5, 0.5]) - bad.eval(&SymMat::zeros(2), &[0.5, 0.5]);
        assert_eq!(inc, 3.0);
    }

    #[test]
    fn kappa_from_catalog() {
        let op = Nonlinearity::linear(MatrixField::named("one_plus_x1", 2).unwrap(), 1.0, 2.0, &square()).unwrap();
        assert!((op.kappa() - 2.0).abs() < 1e-14);
        assert_eq!(Nonlinearity::laplacian(2).kappa(), 0.0);
    }

    #[test]
    fn perturbation_examples() {
        let lap = Nonlinearity::laplacian(2);
        let x = SymMat::from_rows(&[vec![1.0, 0.3], vec![0.3, -2.0]]).unwrap();
        let pert = lap.perturb_inf(&square(), 0.2, 0.025).unwrap();
        assert_eq!(pert.eval(&x, &[0.5, 0.5]), lap.eval(&x, &[0.5, 0.5]));

        let line = Domain::Box { lo: vec![0.0], hi: vec![1.0] };
        let f = Rhs::from(ScalarField::coordinate(1, 0));
        let fsup = f.field_sup(&line, 0.1, 0.1 * DEFAULT_RESOLUTION_FRACTION).unwrap();
        assert!((fsup.eval(&[0.5]) - 0.6).abs() < 1e-12);
        let finf = f.field_inf(&line, 0.1, 0.0125).unwrap();
        assert!((finf.eval(&[0.05]) - 0.0).abs() < 1e-12);

        let ramp = Nonlinearity::isaacs(
            vec![vec![MatrixField::named("one_plus_x1", 2).unwrap()]],
            vec![vec![ScalarField::constant(0.0)]],
            1.0,
            2.0,
            &square(),
        )
        .unwrap();
        let eps = 0.25;
        let pert = ramp.perturb_inf(&square(), eps, eps * DEFAULT_RESOLUTION_FRACTION).unwrap();
        // brute force over the same sub-lattice
        let samples = perturbation_samples(&square(), &[0.5, 0.5], eps, eps / 8.0);
        let brute = samples
            .iter()
            .map(|y| ramp.eval(&SymMat::identity(2), y))
            .fold(f64::INFINITY, f64::min);
        assert!((brute - 2.5).abs() < 1e-12);
        assert!((pert.eval(&SymMat::identity(2), &[0.5, 0.5]) - 2.5).abs() < 1e-12);
        assert!(lap.perturb_inf(&square(), -0.1, 0.1).is_err());
    }

    #[test]
    fn samples_include_center_and_respect_domain() {
        let s = perturbation_samples(&square(), &[0.0, 0.0], 0.1, 0.05);
        assert!(s.iter().any(|y| y == &vec![0.0, 0.0]));
        assert!(s.iter().all(|y| y[0] >= 0.0 && y[1] >= 0.0));
        assert_eq!(perturbation_samples(&square(), &[0.4, 0.4], 0.0, 0.1).len(), 1);
    }

    #[test]
    fn field_derivatives_match_finite_differences() {
        let fields = [
            ScalarField::sin_pi_product(2),
            ScalarField::named("cubic_x1", 2).unwrap(),
            ScalarField::named("exp_sum", 2).unwrap(),
            ScalarField::Monomial { coef: 2.0, powers: vec![2, 1] },
            ScalarField::Sum { terms: vec![ScalarField::half_norm_sq(2), ScalarField::coordinate(2, 1)] },
        ];
        let x = [0.31, 0.57];
        let e = 1e-5;
        for f in &fields {
            let g = f.gradient(&x);
            let h = f.hessian(&x);
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += e;
                xm[i] -= e;
                let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * e);
                assert!((fd - g[i]).abs() < 1e-7, "{f:?} grad {i}");
                let gp = f.gradient(&xp);
                let gm = f.gradient(&xm);
                for j in 0..2 {
                    let fdh = (gp[j] - gm[j]) / (2.0 * e);
                    assert!((fdh - h.get(i, j)).abs() < 1e-6, "{f:?} hess {i}{j}");
                }
            }
        }
    }

    #[test]
    fn manufactured_rhs_values() {
        let lap = Nonlinearity::laplacian(2);
        let f = Rhs::manufactured(&lap, &ScalarField::half_norm_sq(2));
        assert!((f.eval(&[0.3, 0.9]) - 2.0).abs() < 1e-14);
        let s = ScalarField::sin_pi_product(2);
        let f = Rhs::manufactured(&lap, &s);
        let x = [0.2, 0.7];
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((f.eval(&x) + 2.0 * pi2 * s.eval(&x)).abs() < 1e-12);
        let pucci = Nonlinearity::pucci(2, 1.0, 2.0, Extremum::Max).unwrap();
        let f = Rhs::manufactured(&pucci, &ScalarField::half_norm_sq(2));
        assert!((f.eval(&x) - 4.0).abs() < 1e-14);
    }
}
