//! Experiment drivers behind the `nonlin` CLI: problem configs, convergence
//! studies in h, δ, r and ε, the barrier sandwich, and scheme validation.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Domain, Mesh, MeshFunction};
use crate::operators::{
    check_ellipticity, EllipticityReport, Extremum, MatrixField, Nonlinearity, Rhs, ScalarField,
    DEFAULT_RESOLUTION_FRACTION,
};
use crate::regularize::{convolve, ConvolutionKind};
use crate::scheme::{consistency_check, monotonicity_check, ConsistencyReport, DiscreteOperator, MonotonicityReport};
use crate::solver::{solve_dirichlet, solve_with_boundary, SolveReport, SolverOptions};
use crate::viscosity::{delta_solution_check, DeltaCheckConfig, DeltaReport, DeltaSide};

/// Pointwise tolerance of the one-sided and sandwich inequalities.
pub const ORDER_TOL: f64 = 1e-8;
/// Random trials of the monotonicity re-validation done before every solve.
pub const VALIDATION_TRIALS: usize = 256;
/// Errors at most this multiple of the solver tolerance count as zero in fits.
pub const ZERO_ERROR_FACTOR: f64 = 10.0;
/// Fits with `R²` below this are flagged unreliable.
pub const RELIABLE_R2: f64 = 0.95;

// ---------------------------------------------------------------------------
// Config

/// A catalog id or an explicit scalar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Named(String),
    Field(ScalarField),
}

impl FieldSpec {
    fn resolve(&self, dim: usize) -> Result<ScalarField> {
        match self {
            FieldSpec::Named(name) => ScalarField::named(name, dim),
            FieldSpec::Field(f) => Ok(f.clone()),
        }
    }

    fn is_manufactured(&self) -> bool {
        matches!(self, FieldSpec::Named(n) if n == "manufactured")
    }
}

/// A catalog id or an explicit coefficient field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Field(MatrixField),
}

impl MatrixSpec {
    fn resolve(&self, dim: usize) -> Result<MatrixField> {
        match self {
            MatrixSpec::Named(name) => MatrixField::named(name, dim),
            MatrixSpec::Field(m) => Ok(m.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Laplacian,
    /// Built-in operator by id: `laplacian` or `isaacs_demo`.
    Catalog { id: String },
    Linear { coeff: MatrixSpec, lambda: f64, big_lambda: f64 },
    Pucci { lambda: f64, big_lambda: f64, sign: Extremum },
    Isaacs {
        coeff: Vec<Vec<MatrixSpec>>,
        #[serde(default)]
        running: Option<Vec<Vec<FieldSpec>>>,
        lambda: f64,
        big_lambda: f64,
    },
}

impl OperatorSpec {
    fn resolve(&self, domain: &Domain) -> Result<Nonlinearity> {
        let dim = domain.dim();
        match self {
            OperatorSpec::Laplacian => Ok(Nonlinearity::laplacian(dim)),
            OperatorSpec::Catalog { id } => match id.as_str() {
                "laplacian" => Ok(Nonlinearity::laplacian(dim)),
                "isaacs_demo" => Nonlinearity::isaacs_demo(domain),
                other => Err(Error::Config(format!("unknown operator catalog id '{other}'"))),
            },
            OperatorSpec::Linear { coeff, lambda, big_lambda } => {
                Nonlinearity::linear(coeff.resolve(dim)?, *lambda, *big_lambda, domain)
            }
            OperatorSpec::Pucci { lambda, big_lambda, sign } => Nonlinearity::pucci(dim, *lambda, *big_lambda, *sign),
            OperatorSpec::Isaacs { coeff, running, lambda, big_lambda } => {
                let coeff: Vec<Vec<MatrixField>> = coeff
                    .iter()
                    .map(|row| row.iter().map(|m| m.resolve(dim)).collect::<Result<_>>())
                    .collect::<Result<_>>()?;
                let running = match running {
                    Some(r) => r
                        .iter()
                        .map(|row| row.iter().map(|f| f.resolve(dim)).collect::<Result<_>>())
                        .collect::<Result<_>>()?,
                    None => coeff.iter().map(|row| vec![ScalarField::constant(0.0); row.len()]).collect(),
                };
                Nonlinearity::isaacs(coeff, running, *lambda, *big_lambda, domain)
            }
        }
    }
}

fn default_width() -> usize {
    2
}

fn default_h() -> f64 {
    1.0 / 32.0
}

fn default_delta_samples() -> usize {
    4000
}

fn default_check_trials() -> usize {
    10_000
}

fn default_resolution_fraction() -> f64 {
    DEFAULT_RESOLUTION_FRACTION
}

fn default_theta_exponent() -> f64 {
    2.0
}

/// JSON problem description shared by every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub domain: Domain,
    pub operator: OperatorSpec,
    /// Right-hand side; `"manufactured"` derives it from `exact`.
    pub f: FieldSpec,
    /// Boundary data; defaults to `exact` when present, else zero.
    #[serde(default)]
    pub g: Option<FieldSpec>,
    #[serde(default)]
    pub exact: Option<FieldSpec>,
    #[serde(default = "default_width")]
    pub stencil_width: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
    /// Mesh spacing for single-mesh experiments.
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub h_list: Vec<f64>,
    #[serde(default)]
    pub theta_list: Vec<f64>,
    /// `θ = δ^p`; the δ column reports `θ^{1/p}`.
    #[serde(default = "default_theta_exponent")]
    pub theta_exponent: f64,
    #[serde(default)]
    pub r_list: Vec<f64>,
    /// Freeze center; defaults to the domain center.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// Perturbation sub-lattice spacing as a fraction of ε.
    #[serde(default = "default_resolution_fraction")]
    pub resolution_fraction: f64,
    #[serde(default)]
    pub c_list: Vec<f64>,
    /// Paraboloid samples per δ-solution check; zero skips verification.
    #[serde(default = "default_delta_samples")]
    pub delta_samples: usize,
    #[serde(default = "default_check_trials")]
    pub check_trials: usize,
    /// Run the rows of a study concurrently.
    #[serde(default)]
    pub parallel_rows: bool,
}

impl ProblemConfig {
    /// Parses and validates; errors carry serde's line/column diagnostics.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate().map_err(|e| Error::Config(format!("domain: {e}")))?;
        if self.f.is_manufactured() && self.exact.is_none() {
            return Err(Error::Config("field 'f': \"manufactured\" requires an 'exact' solution".into()));
        }
        if self.stencil_width == 0 {
            return Err(Error::Config("field 'stencil_width' must be at least 1".into()));
        }
        if !(self.h > 0.0) {
            return Err(Error::Config("field 'h' must be positive".into()));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("field 'solver.tol' must be positive".into()));
        }
        if !(self.resolution_fraction > 0.0) {
            return Err(Error::Config("field 'resolution_fraction' must be positive".into()));
        }
        if !(self.theta_exponent > 0.0) {
            return Err(Error::Config("field 'theta_exponent' must be positive".into()));
        }
        self.resolve().map(|_| ())
    }

    /// Builds the continuum problem.
    pub fn resolve(&self) -> Result<Problem> {
        let domain = self.domain.clone();
        let dim = domain.dim();
        let op = self.operator.resolve(&domain).map_err(as_config("operator"))?;
        let exact = self.exact.as_ref().map(|e| e.resolve(dim)).transpose().map_err(as_config("exact"))?;
        let rhs = if self.f.is_manufactured() {
            let exact = exact.as_ref().ok_or_else(|| Error::Config("manufactured f needs 'exact'".into()))?;
            Rhs::manufactured(&op, exact)
        } else {
            Rhs::Field(self.f.resolve(dim).map_err(as_config("f"))?)
        };
        let g = match (&self.g, &exact) {
            (Some(g), _) => g.resolve(dim).map_err(as_config("g"))?,
            (None, Some(e)) => e.clone(),
            (None, None) => ScalarField::constant(0.0),
        };
        Ok(Problem {
            domain,
            op,
            rhs,
            g,
            exact,
            width: self.stencil_width,
            solver: self.solver,
            seed: self.seed,
        })
    }
}

fn as_config(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(msg) => Error::Config(format!("field '{field}': {msg}")),
        other => Error::Config(format!("field '{field}': {other}")),
    }
}

/// A resolved problem `F(D²u, x) = f` in `U`, `u = g` on `∂U`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub domain: Domain,
    pub op: Nonlinearity,
    pub rhs: Rhs,
    pub g: ScalarField,
    pub exact: Option<ScalarField>,
    pub width: usize,
    pub solver: SolverOptions,
    pub seed: u64,
}

/// One assembled and solved instance.
#[derive(Clone, Debug)]
pub struct Solved {
    pub op: DiscreteOperator,
    pub u: MeshFunction,
    pub report: SolveReport,
}

impl Problem {
    pub fn mesh(&self, h: f64) -> Result<Arc<Mesh>> {
        Ok(Arc::new(Mesh::build(self.domain.clone(), h, self.width)?))
    }

    /// Assembles and runs the monotonicity/consistency re-validation.
    pub fn assemble(&self, op: &Nonlinearity, rhs: &Rhs, mesh: Arc<Mesh>) -> Result<DiscreteOperator> {
        let d = DiscreteOperator::assemble(op, rhs, mesh)?;
        validate_scheme(&d, self.seed)?;
        Ok(d)
    }

    /// Solves `op = rhs` with boundary data `g` on spacing `h`.
    pub fn solve_with(&self, op: &Nonlinearity, rhs: &Rhs, h: f64) -> Result<Solved> {
        let d = self.assemble(op, rhs, self.mesh(h)?)?;
        let (u, report) = solve_dirichlet(&d, &self.g, &self.solver)?;
        Ok(Solved { op: d, u, report })
    }

    pub fn solve(&self, h: f64) -> Result<Solved> {
        self.solve_with(&self.op, &self.rhs, h)
    }

    fn exact(&self) -> Result<&ScalarField> {
        self.exact
            .as_ref()
            .ok_or_else(|| Error::Config("this experiment needs an 'exact' solution".into()))
    }

    /// `max |u_exact − v|` over the mesh.
    pub fn error_against_exact(&self, v: &MeshFunction) -> Result<f64> {
        let exact = self.exact()?;
        let mesh = v.mesh();
        Ok((0..mesh.len()).map(|i| (exact.eval(mesh.point(i)) - v.get(i)).abs()).fold(0.0, f64::max))
    }

    fn zero_floor(&self) -> f64 {
        ZERO_ERROR_FACTOR * self.solver.tol
    }
}

/// Quick (F_h1)/(F_h2) re-validation done before every experiment solve.
pub fn validate_scheme(op: &DiscreteOperator, seed: u64) -> Result<()> {
    let mono = monotonicity_check(op, VALIDATION_TRIALS, seed)?;
    if !mono.passed() {
        return Err(Error::InvalidArgument(format!(
            "scheme is not monotone: {} of {} trials violated, worst {:.3e}",
            mono.violations, mono.trials, mono.worst
        )));
    }
    let phi = ScalarField::half_norm_sq(op.mesh().dim());
    let cons = consistency_check(op, &phi, op.consistency_constant())?;
    if !cons.passed {
        return Err(Error::InvalidArgument(format!(
            "scheme is not consistent: discrepancy {:.3e} at {:?} exceeds {:.3e}",
            cons.max_discrepancy, cons.worst_point, cons.bound
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    /// δ-solution verification accepted samples without violations.
    Passed,
    /// Verification found violations; the row is left out of the fit.
    Failed,
    /// Verification accepted no samples.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub param: f64,
    pub error: f64,
    pub runtime_s: f64,
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(log p, log e)`; needs at least 3 points.
pub fn fit_rate(points: &[(f64, f64)]) -> Option<RateFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(p, e)| *p > 0.0 && *e > 0.0)
        .map(|(p, e)| (p.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(RateFit { slope, intercept, r_squared })
}

/// Rows of a study plus the fitted log-log slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub experiment: String,
    /// Name of the parameter column.
    pub parameter: String,
    /// Sorted by increasing parameter.
    pub rows: Vec<RateRow>,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    /// False when no slope is defined or `R² < 0.95`.
    pub reliable: bool,
    /// Errors at or below this are treated as zero and not fitted.
    pub zero_floor: f64,
    pub assertions: Vec<Assertion>,
    pub seed: u64,
}

impl RateReport {
    pub fn new(experiment: &str, parameter: &str, mut rows: Vec<RateRow>, zero_floor: f64, seed: u64) -> Self {
        rows.sort_by(|a, b| a.param.total_cmp(&b.param));
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.status != RowStatus::Failed && r.error > zero_floor)
            .map(|r| (r.param, r.error))
            .collect();
        let fit = fit_rate(&pts);
        Self {
            experiment: experiment.into(),
            parameter: parameter.into(),
            rows,
            slope: fit.map(|f| f.slope),
            r_squared: fit.map(|f| f.r_squared),
            reliable: fit.is_some_and(|f| f.r_squared >= RELIABLE_R2),
            zero_floor,
            assertions: Vec::new(),
            seed,
        }
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Errors in the order of decreasing parameter.
    pub fn errors_by_decreasing_param(&self) -> Vec<f64> {
        self.rows.iter().rev().map(|r| r.error).collect()
    }

    /// CSV with header `<param>,error,runtime_s` (plus `status` for δ studies).
    pub fn to_csv(&self) -> String {
        let with_status = self.rows.iter().any(|r| r.status != RowStatus::Ok);
        let mut out = format!("{},error,runtime_s", self.parameter);
        if with_status {
            out.push_str(",status");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.param, r.error, r.runtime_s);
            if with_status {
                let s = match r.status {
                    RowStatus::Ok => "ok",
                    RowStatus::Passed => "passed",
                    RowStatus::Failed => "failed",
                    RowStatus::Inconclusive => "inconclusive",
                };
                let _ = write!(out, ",{s}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_list(name: &str, list: &[f64], min_len: usize) -> Result<()> {
    if list.len() < min_len {
        return Err(Error::Config(format!("'{name}' needs at least {min_len} entries, got {}", list.len())));
    }
    if list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("'{name}' entries must be positive")));
    }
    if list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(format!("'{name}' must be strictly decreasing")));
    }
    Ok(())
}

/// Runs the rows of a study, concurrently when `parallel` is set.
fn run_rows<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        crate::par::map_range(n, f)
    } else {
        (0..n).map(f).collect()
    }
}

// ---------------------------------------------------------------------------
// Experiments

/// Grid refinement study of `max |u_exact − v_h|` over `h_list`.
pub fn run_rates(cfg: &ProblemConfig, h_list: &[f64]) -> Result<RateReport> {
    check_list("h_list", h_list, 3)?;
    let p = cfg.resolve()?;
    p.exact()?;
    let results = run_rows(h_list.len(), cfg.parallel_rows, |k| -> Result<(RateRow, bool)> {
        let h = h_list[k];
        let start = Instant::now();
        let s = p.solve(h)?;
        let error = p.error_against_exact(&s.u)?;
        let row = RateRow { param: h, error, runtime_s: start.elapsed().as_secs_f64(), status: RowStatus::Ok };
        Ok((row, s.report.converged))
    });
    let mut rows = Vec::new();
    let mut failed_at = None;
    for (k, r) in results.into_iter().enumerate() {
        let (row, converged) = r?;
        rows.push(row);
        if !converged {
            failed_at = Some(h_list[k]);
            break;
        }
    }
    let mut report = RateReport::new("rates", "h", rows, p.zero_floor(), cfg.seed);
    report.assertions.push(Assertion::new(
        "solver converged",
        failed_at.is_none(),
        match failed_at {
            Some(h) => format!("solver did not reach tol {:.1e} at h = {h}; later rows skipped", cfg.solver.tol),
            None => "all rows converged".into(),
        },
    ));
    Ok(report)
}

/// δ-solutions `v_h^{θ,∓}` from a fixed discrete solution, verified and
/// compared with the exact solution.
pub fn run_delta(cfg: &ProblemConfig, theta_list: &[f64]) -> Result<RateReport> {
    check_list("theta_list", theta_list, 1)?;
    let p = cfg.resolve()?;
    p.exact()?;
    let s = p.solve(cfg.h)?;
    let mut report = run_delta_on(cfg, &p, &s.op, &s.u, theta_list)?;
    report.assertions.insert(
        0,
        Assertion::new("solver converged", s.report.converged, format!("residual {:.3e}", s.report.residual)),
    );
    Ok(report)
}

/// Per-θ outcome of the δ experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRowDetail {
    pub theta: f64,
    pub delta: f64,
    pub nu: f64,
    pub margin: f64,
    pub inf_check: Option<DeltaReport>,
    pub sup_check: Option<DeltaReport>,
}

/// Like [`run_delta`] with a caller-supplied discrete solution `v_h`.
pub fn run_delta_on(
    cfg: &ProblemConfig,
    p: &Problem,
    op: &DiscreteOperator,
    v_h: &MeshFunction,
    theta_list: &[f64],
) -> Result<RateReport> {
    Ok(delta_study(cfg, p, op, v_h, theta_list)?.0)
}

/// [`run_delta_on`] plus the per-row verification details.
pub fn delta_study(
    cfg: &ProblemConfig,
    p: &Problem,
    op: &DiscreteOperator,
    v_h: &MeshFunction,
    theta_list: &[f64],
) -> Result<(RateReport, Vec<DeltaRowDetail>)> {
    let mesh = v_h.mesh().clone();
    let h = mesh.h();
    let test_delta = mesh.width() as f64 * h;
    let results = run_rows(theta_list.len(), cfg.parallel_rows, |k| -> Result<(RateRow, DeltaRowDetail)> {
        let theta = theta_list[k];
        let start = Instant::now();
        let lower = convolve(v_h, theta, ConvolutionKind::Inf)?.to_mesh_function()?;
        let error = p.error_against_exact(&lower)?;
        let mut detail = DeltaRowDetail {
            theta,
            delta: theta.powf(1.0 / cfg.theta_exponent),
            nu: 0.0,
            margin: 0.0,
            inf_check: None,
            sup_check: None,
        };
        let mut status = RowStatus::Ok;
        if cfg.delta_samples > 0 {
            let (inf_r, sup_r, nu) = verify_delta_pair(p, op, v_h, theta, cfg.delta_samples, cfg.seed ^ k as u64)?;
            detail.nu = nu;
            detail.margin = nu + test_delta;
            status = if inf_r.violations > 0 || sup_r.violations > 0 {
                RowStatus::Failed
            } else if inf_r.inconclusive || sup_r.inconclusive {
                RowStatus::Inconclusive
            } else {
                RowStatus::Passed
            };
            detail.inf_check = Some(inf_r);
            detail.sup_check = Some(sup_r);
        }
        let row = RateRow { param: detail.delta, error, runtime_s: start.elapsed().as_secs_f64(), status };
        Ok((row, detail))
    });
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for r in results {
        let (row, d) = r?;
        rows.push(row);
        details.push(d);
    }
    let failed = rows.iter().filter(|r| r.status == RowStatus::Failed).count();
    let mut report = RateReport::new("delta", "delta", rows, p.zero_floor(), cfg.seed);
    report.assertions.push(Assertion::new(
        "delta-solutions verified",
        failed == 0,
        format!("{failed} row(s) failed verification and were excluded from the fit"),
    ));
    Ok((report, details))
}

/// Checks `v_h^{θ,−}` as a δ-supersolution of `F_ν − f^ν − Kh ≤ 0` and
/// `v_h^{θ,+}` as a δ-subsolution of `F^ν − f_ν + Kh ≥ 0`, with `δ = Nh`,
/// `ν = 4θ^{1/2}‖v_h‖^{1/2} + √n·h` and touch points kept `ν + δ` inside.
/// Returns both reports and `ν`.
pub fn verify_delta_pair(
    p: &Problem,
    op: &DiscreteOperator,
    v_h: &MeshFunction,
    theta: f64,
    samples: usize,
    seed: u64,
) -> Result<(DeltaReport, DeltaReport, f64)> {
    let mesh = v_h.mesh().clone();
    let h = mesh.h();
    let n = mesh.dim() as f64;
    let delta = mesh.width() as f64 * h;
    let nu = 4.0 * (theta * v_h.sup_norm()).sqrt() + n.sqrt() * h;
    let kh = op.consistency_constant() * h;
    let domain = &p.domain;
    let (f_lo, f_hi) = if p.op.is_x_independent() {
        (p.op.clone(), p.op.clone())
    } else {
        (p.op.perturb_inf(domain, nu, h)?, p.op.perturb_sup(domain, nu, h)?)
    };
    let (rhs_lo, rhs_hi) = if p.rhs.is_constant() {
        (p.rhs.clone(), p.rhs.clone())
    } else {
        (p.rhs.field_inf(domain, nu, h)?, p.rhs.field_sup(domain, nu, h)?)
    };
    let lower = convolve(v_h, theta, ConvolutionKind::Inf)?.to_mesh_function()?;
    let upper = convolve(v_h, theta, ConvolutionKind::Sup)?.to_mesh_function()?;
    let mut cfg = DeltaCheckConfig::new(delta, samples, DeltaSide::Super);
    cfg.margin = Some(nu + delta);
    cfg.seed = seed;
    let g_super = |x: &crate::operators::SymMat, pt: &[f64]| f_lo.eval(x, pt) - rhs_hi.eval(pt) - kh;
    let inf_r = delta_solution_check(&lower, &g_super, &cfg)?;
    cfg.side = DeltaSide::Sub;
    cfg.seed = seed.wrapping_add(1);
    let g_sub = |x: &crate::operators::SymMat, pt: &[f64]| f_hi.eval(x, pt) - rhs_lo.eval(pt) + kh;
    let sup_r = delta_solution_check(&upper, &g_sub, &cfg)?;
    Ok((inf_r, sup_r, nu))
}

/// Frozen-coefficient study: the discrete solution on the full mesh against
/// the solution of `F(D²ũ, x0) = f(x0)` on `B_r(x0)` with boundary data `u`.
pub fn run_freeze(cfg: &ProblemConfig, x0: &[f64], r_list: &[f64]) -> Result<RateReport> {
    check_list("r_list", r_list, 3)?;
    let p = cfg.resolve()?;
    if x0.len() != p.domain.dim() {
        return Err(Error::Config("'x0' has the wrong dimension".into()));
    }
    let room = p.domain.distance_to_boundary(x0)?;
    if r_list[0] > room + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "B_{}({x0:?}) leaves the domain (distance to boundary {room})",
            r_list[0]
        )));
    }
    let full = p.solve(cfg.h)?;
    let frozen_op = p.op.frozen_at(x0)?;
    let frozen_rhs = Rhs::Field(ScalarField::constant(p.rhs.eval(x0)));
    let results = run_rows(r_list.len(), cfg.parallel_rows, |k| -> Result<(RateRow, bool)> {
        let r = r_list[k];
        let start = Instant::now();
        let ball = Arc::new(Mesh::build(Domain::ball(x0.to_vec(), r), cfg.h, cfg.stencil_width)?);
        let fmesh = full.u.mesh();
        let values = (0..ball.len())
            .map(|i| {
                fmesh
                    .index_of(ball.lattice(i))
                    .map(|j| full.u.get(j))
                    .ok_or_else(|| Error::OutsideDomain { point: ball.point(i).to_vec() })
            })
            .collect::<Result<Vec<f64>>>()?;
        let data = MeshFunction::new(ball.clone(), values)?;
        let d = p.assemble(&frozen_op, &frozen_rhs, ball)?;
        let (ut, rep) = solve_with_boundary(&d, &data, None, &p.solver)?;
        let error = ut.sup_distance(&data);
        Ok((RateRow { param: r, error, runtime_s: start.elapsed().as_secs_f64(), status: RowStatus::Ok }, rep.converged))
    });
    let mut rows = Vec::new();
    let mut converged = full.report.converged;
    for r in results {
        let (row, c) = r?;
        converged &= c;
        rows.push(row);
    }
    let mut report = RateReport::new("freeze", "r", rows, p.zero_floor(), cfg.seed);
    report.assertions.push(Assertion::new("solver converged", converged, "full and frozen solves"));
    Ok(report)
}

/// Perturbation study: `F(D²u) = f` against `F_ε(D²u_ε) = f^ε` on one mesh,
/// with the one-sided check `u_ε ≤ u`.
pub fn run_perturb(cfg: &ProblemConfig, eps_list: &[f64]) -> Result<RateReport> {
    check_list("eps_list", eps_list, 3)?;
    let p = cfg.resolve()?;
    let base = p.solve(cfg.h)?;
    let results = run_rows(eps_list.len(), cfg.parallel_rows, |k| -> Result<(RateRow, f64, bool)> {
        let eps = eps_list[k];
        let res = eps * cfg.resolution_fraction;
        let start = Instant::now();
        let op = p.op.perturb_inf(&p.domain, eps, res)?;
        let rhs = p.rhs.field_sup(&p.domain, eps, res)?;
        let s = p.solve_with(&op, &rhs, cfg.h)?;
        let error = s.u.sup_distance(&base.u);
        let excess = (0..s.u.values().len()).map(|i| s.u.get(i) - base.u.get(i)).fold(f64::NEG_INFINITY, f64::max);
        let row = RateRow { param: eps, error, runtime_s: start.elapsed().as_secs_f64(), status: RowStatus::Ok };
        Ok((row, excess, s.report.converged))
    });
    let mut rows = Vec::new();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut converged = base.report.converged;
    for r in results {
        let (row, excess, c) = r?;
        worst = worst.max(excess);
        converged &= c;
        rows.push(row);
    }
    let mut report = RateReport::new("perturb", "eps", rows, p.zero_floor(), cfg.seed);
    report.assertions.push(Assertion::new("solver converged", converged, "base and perturbed solves"));
    report.assertions.push(Assertion::new(
        "u_eps <= u",
        worst <= ORDER_TOL,
        format!("max (u_eps - u) = {worst:.3e}, tolerance {ORDER_TOL:.0e}"),
    ));
    Ok(report)
}

/// Barrier sandwich `ū ≤ u ≤ ū + c·diam(U)²/(2λ)` where `ū` solves `F = f + c`.
/// Rows record `max (u − ū)` per `c`.
pub fn run_barrier(cfg: &ProblemConfig, c_list: &[f64]) -> Result<RateReport> {
    if c_list.is_empty() || c_list.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::Config("'c_list' needs positive entries".into()));
    }
    let p = cfg.resolve()?;
    let base = p.solve(cfg.h)?;
    let diam = p.domain.diameter();
    let lambda = p.op.lambda();
    let results = run_rows(c_list.len(), cfg.parallel_rows, |k| -> Result<(RateRow, f64, f64, bool)> {
        let c = c_list[k];
        let start = Instant::now();
        let s = p.solve_with(&p.op, &p.rhs.shifted(c), cfg.h)?;
        let diffs: Vec<f64> = (0..s.u.values().len()).map(|i| base.u.get(i) - s.u.get(i)).collect();
        let gap = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let below = diffs.iter().copied().fold(f64::INFINITY, f64::min);
        let allowed = c * diam * diam / (2.0 * lambda);
        let row = RateRow { param: c, error: gap, runtime_s: start.elapsed().as_secs_f64(), status: RowStatus::Ok };
        Ok((row, below, gap - allowed, s.report.converged))
    });
    let mut rows = Vec::new();
    let (mut lower_worst, mut upper_worst) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut converged = base.report.converged;
    for r in results {
        let (row, below, over, c) = r?;
        lower_worst = lower_worst.min(below);
        upper_worst = upper_worst.max(over);
        converged &= c;
        rows.push(row);
    }
    let mut report = RateReport::new("barrier", "c", rows, p.zero_floor(), cfg.seed);
    report.assertions.push(Assertion::new("solver converged", converged, "base and shifted solves"));
    report.assertions.push(Assertion::new(
        "u_bar <= u",
        lower_worst >= -ORDER_TOL,
        format!("min (u - u_bar) = {lower_worst:.3e}"),
    ));
    report.assertions.push(Assertion::new(
        "u <= u_bar + c diam^2/(2 lambda)",
        upper_worst <= ORDER_TOL,
        format!("max excess over the barrier bound = {upper_worst:.3e}"),
    ));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Single solve and validation

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub h: f64,
    pub points: usize,
    pub interior_points: usize,
    pub report: SolveReport,
    /// `max |u_exact − v_h|` when an exact solution is configured.
    pub error: Option<f64>,
    pub assertions: Vec<Assertion>,
}

/// Solves at `cfg.h`; returns the solution and a summary.
pub fn run_solve(cfg: &ProblemConfig) -> Result<(MeshFunction, SolveSummary)> {
    let p = cfg.resolve()?;
    let s = p.solve(cfg.h)?;
    let error = p.exact.as_ref().map(|_| p.error_against_exact(&s.u)).transpose()?;
    let mesh = s.u.mesh();
    let summary = SolveSummary {
        h: cfg.h,
        points: mesh.len(),
        interior_points: mesh.interior_points().len(),
        assertions: vec![Assertion::new(
            "solver converged",
            s.report.converged,
            format!("residual {:.3e} after {} iterations", s.report.residual, s.report.iterations),
        )],
        report: s.report,
        error,
    };
    Ok((s.u, summary))
}

/// CSV of a mesh function: coordinates `x1..xn`, then `u`, then `exact` and
/// `error` when given.
pub fn solution_csv(u: &MeshFunction, exact: Option<&ScalarField>) -> String {
    let mesh = u.mesh();
    let mut out = String::new();
    for a in 0..mesh.dim() {
        let _ = write!(out, "x{},", a + 1);
    }
    out.push('u');
    if exact.is_some() {
        out.push_str(",exact,error");
    }
    out.push('\n');
    for i in 0..mesh.len() {
        for c in mesh.point(i) {
            let _ = write!(out, "{c},");
        }
        let _ = write!(out, "{}", u.get(i));
        if let Some(e) = exact {
            let ev = e.eval(mesh.point(i));
            let _ = write!(out, ",{ev},{}", (ev - u.get(i)).abs());
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedConsistency {
    pub function: String,
    pub report: ConsistencyReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub h: f64,
    pub consistency_constant: f64,
    pub monotonicity: MonotonicityReport,
    pub consistency: Vec<NamedConsistency>,
    pub ellipticity: EllipticityReport,
    pub assertions: Vec<Assertion>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// Largest `F_h` discrepancy tolerated on quadratics and cubics.
pub const POLYNOMIAL_EXACTNESS_TOL: f64 = 1e-10;

/// Full validation: monotonicity over `check_trials` seeded trials,
/// consistency on a quadratic, a cubic and the exact solution, and the
/// continuum ellipticity check.
pub fn run_check(cfg: &ProblemConfig) -> Result<CheckReport> {
    let p = cfg.resolve()?;
    let mesh = p.mesh(cfg.h)?;
    let op = DiscreteOperator::assemble(&p.op, &p.rhs, mesh)?;
    let k = op.consistency_constant();
    let monotonicity = monotonicity_check(&op, cfg.check_trials, cfg.seed)?;
    let dim = p.domain.dim();
    let mut tests = vec![
        ("half_norm_sq".to_string(), ScalarField::half_norm_sq(dim), true),
        ("cubic_x1".to_string(), ScalarField::named("cubic_x1", dim)?, true),
    ];
    if let Some(e) = &p.exact {
        tests.push(("exact".to_string(), e.clone(), false));
    }
    let mut assertions = vec![Assertion::new(
        "monotone",
        monotonicity.passed(),
        format!("{} violations in {} trials", monotonicity.violations, monotonicity.trials),
    )];
    let mut consistency = Vec::new();
    for (name, phi, polynomial) in tests {
        let report = consistency_check(&op, &phi, k)?;
        assertions.push(Assertion::new(
            format!("consistent on {name}"),
            report.passed,
            format!("discrepancy {:.3e} vs bound {:.3e}", report.max_discrepancy, report.bound),
        ));
        if polynomial {
            assertions.push(Assertion::new(
                format!("exact on {name}"),
                report.max_discrepancy <= POLYNOMIAL_EXACTNESS_TOL,
                format!("discrepancy {:.3e}", report.max_discrepancy),
            ));
        }
        consistency.push(NamedConsistency { function: name, report });
    }
    let ellipticity = check_ellipticity(&p.op, &p.domain, 1000, cfg.seed);
    assertions.push(Assertion::new(
        "uniformly elliptic",
        ellipticity.passed(),
        format!("{} violations in {} trials", ellipticity.violations, ellipticity.trials),
    ));
    Ok(CheckReport { h: cfg.h, consistency_constant: k, monotonicity, consistency, ellipticity, assertions })
}
