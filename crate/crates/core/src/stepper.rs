//! Time marching of `delta U^m + L_h U^m + f(x, t_m, U^m) = 0`, `U^0 = u_0`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::caputo::{CaputoRows, DiscreteCaputoMatrix, Flavor};
use crate::error::{invalid, Error, Result};
use crate::mesh::TemporalMesh;
use crate::numeric::{check_alpha, CompensatedSum};
use crate::par::{for_each_chunk_mut, Exec};
use crate::spatial::{EllipticOperator1D, SpatialGrid1D};

/// Reaction term `f(x, t, s)` with a global Lipschitz constant in `s`.
pub trait Nonlinearity: Send + Sync {
    fn value(&self, x: f64, t: f64, s: f64) -> f64;

    /// `df/ds`, if available; enables Newton iterations.
    fn derivative(&self, _x: f64, _t: f64, _s: f64) -> Option<f64> {
        None
    }

    fn lipschitz(&self) -> f64;

    fn name(&self) -> String;

    /// True when `f` vanishes identically, so each step is a single linear solve.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl Nonlinearity for Zero {
    fn value(&self, _x: f64, _t: f64, _s: f64) -> f64 {
        0.0
    }
    fn derivative(&self, _x: f64, _t: f64, _s: f64) -> Option<f64> {
        Some(0.0)
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn name(&self) -> String {
        "zero".into()
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `f = c s`.
#[derive(Debug, Clone, Copy)]
pub struct Linear(pub f64);

impl Nonlinearity for Linear {
    fn value(&self, _x: f64, _t: f64, s: f64) -> f64 {
        self.0 * s
    }
    fn derivative(&self, _x: f64, _t: f64, _s: f64) -> Option<f64> {
        Some(self.0)
    }
    fn lipschitz(&self) -> f64 {
        self.0.abs()
    }
    fn name(&self) -> String {
        format!("linear({})", self.0)
    }
}

/// `f = lambda sin(s)`.
#[derive(Debug, Clone, Copy)]
pub struct Sine(pub f64);

impl Nonlinearity for Sine {
    fn value(&self, _x: f64, _t: f64, s: f64) -> f64 {
        self.0 * s.sin()
    }
    fn derivative(&self, _x: f64, _t: f64, s: f64) -> Option<f64> {
        Some(self.0 * s.cos())
    }
    fn lipschitz(&self) -> f64 {
        self.0.abs()
    }
    fn name(&self) -> String {
        format!("sine({})", self.0)
    }
}

/// Evaluates `inner` at `s` clamped to `[lo, hi]`.
///
/// For reactions such as `s^3 - s` that are only locally Lipschitz; the
/// caller declares the range and the Lipschitz constant on it.
pub struct Clipped<F> {
    pub inner: F,
    pub lo: f64,
    pub hi: f64,
    pub lipschitz: f64,
}

impl<F: Nonlinearity> Nonlinearity for Clipped<F> {
    fn value(&self, x: f64, t: f64, s: f64) -> f64 {
        self.inner.value(x, t, s.clamp(self.lo, self.hi))
    }
    fn derivative(&self, x: f64, t: f64, s: f64) -> Option<f64> {
        if s < self.lo || s > self.hi {
            Some(0.0)
        } else {
            self.inner.derivative(x, t, s)
        }
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn name(&self) -> String {
        format!("clipped[{}, {}]({})", self.lo, self.hi, self.inner.name())
    }
}

/// Closure-backed nonlinearity.
pub struct FnNonlinearity<F> {
    pub f: F,
    pub lipschitz: f64,
    pub label: String,
}

impl<F: Fn(f64, f64, f64) -> f64 + Send + Sync> Nonlinearity for FnNonlinearity<F> {
    fn value(&self, x: f64, t: f64, s: f64) -> f64 {
        (self.f)(x, t, s)
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Data of `D_t^alpha u - (a u')' + f(x, t, u) = 0` on `(0, X) x (0, T]`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub alpha: f64,
    pub t_final: f64,
    pub length: f64,
    pub diffusion: ScalarFn,
    /// `Some(a)` when `a(x)` is the constant `a`.
    pub constant_diffusion: Option<f64>,
    pub nonlinearity: Arc<dyn Nonlinearity>,
    pub initial: ScalarFn,
    pub flavor: Flavor,
    pub name: String,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("t_final", &self.t_final)
            .field("length", &self.length)
            .field("constant_diffusion", &self.constant_diffusion)
            .field("nonlinearity", &self.nonlinearity.name())
            .field("flavor", &self.flavor)
            .finish()
    }
}

impl ProblemSpec {
    /// `a = 1`, `f = 0`, `u_0 = sin(pi x / X)`.
    pub fn linear_sine(alpha: f64, t_final: f64, length: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(t_final > 0.0 && length > 0.0) {
            return invalid(format!("T = {t_final} and X = {length} must be positive"));
        }
        Ok(ProblemSpec {
            alpha,
            t_final,
            length,
            diffusion: Arc::new(|_| 1.0),
            constant_diffusion: Some(1.0),
            nonlinearity: Arc::new(Zero),
            initial: Arc::new(move |x| (PI * x / length).sin()),
            flavor: Flavor::L2,
            name: "linear-sine".into(),
        })
    }

    /// [`ProblemSpec::linear_sine`] with `f(x, t, s) = lambda sin(s)`.
    pub fn semilinear_sine(alpha: f64, t_final: f64, length: f64, lambda: f64) -> Result<Self> {
        let mut p = Self::linear_sine(alpha, t_final, length)?;
        p.nonlinearity = Arc::new(Sine(lambda));
        p.name = "semilinear-sine".into();
        Ok(p)
    }

    pub fn with_nonlinearity(mut self, f: impl Nonlinearity + 'static) -> Self {
        self.nonlinearity = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, a: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(a);
        self.constant_diffusion = None;
        self
    }

    pub fn with_initial(mut self, u0: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial = Arc::new(u0);
        self
    }

    pub fn with_flavor(mut self, flavor: Flavor) -> Self {
        self.flavor = flavor;
        self
    }

    /// Declared Lipschitz constant of `f`.
    pub fn lambda(&self) -> f64 {
        self.nonlinearity.lipschitz()
    }

    pub fn elliptic(&self, grid: SpatialGrid1D) -> Result<EllipticOperator1D> {
        match self.constant_diffusion {
            Some(a) => EllipticOperator1D::constant(grid, a),
            None => {
                let a = Arc::clone(&self.diffusion);
                EllipticOperator1D::assemble(grid, move |x| a(x))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedPoint,
    /// Newton with a switch to fixed-point iteration if the residual grows.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    Previous,
    Zero,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NonlinearSolveConfig {
    pub method: Method,
    /// Residual tolerance relative to the natural scale of the step equation.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_guess: InitialGuess,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for NonlinearSolveConfig {
    fn default() -> Self {
        NonlinearSolveConfig {
            method: Method::FixedPoint,
            tolerance: 1e-12,
            max_iterations: 50,
            initial_guess: InitialGuess::Previous,
            exec: Exec::default(),
        }
    }
}

impl NonlinearSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 10.0 * f64::EPSILON) {
            return invalid(format!("tolerance {} must exceed 10 machine epsilon", self.tolerance));
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be positive");
        }
        Ok(())
    }
}

/// Everything a single step needs besides the unknown.
pub struct StepContext<'a> {
    pub m: usize,
    pub t: f64,
    pub diag: f64,
    pub elliptic: &'a EllipticOperator1D,
    pub nonlinearity: &'a dyn Nonlinearity,
    pub nodes: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Final residual relative to the natural scale.
    pub residual: f64,
}

/// Residual `a_mm u + L_h u + f(u) - rhs` and the magnitude of its terms.
fn residual(ctx: &StepContext<'_>, rhs: &[f64], u: &[f64], lu: &mut [f64], abs: &mut [f64]) -> (f64, f64) {
    let grid = ctx.elliptic.grid();
    ctx.elliptic.apply_into(u, lu);
    ctx.elliptic.apply_abs_into(u, abs);
    let (mut r2, mut s2) = (0.0, 0.0);
    for i in 0..u.len() {
        let f = ctx.nonlinearity.value(ctx.nodes[i], ctx.t, u[i]);
        let r = ctx.diag * u[i] + lu[i] + f - rhs[i];
        let s = ctx.diag * u[i].abs() + abs[i] + f.abs() + rhs[i].abs();
        r2 += r * r;
        s2 += s * s;
    }
    let h = grid.h();
    ((h * r2).sqrt(), (h * s2).sqrt())
}

/// Solves `a_mm U + L_h U + f(t_m, U) = rhs` for one time level, starting from `guess`.
pub fn step(ctx: &StepContext<'_>, rhs: &[f64], guess: Vec<f64>, cfg: &NonlinearSolveConfig) -> Result<StepResult> {
    let n = rhs.len();
    let mut u = guess;
    let mut lu = vec![0.0; n];
    let mut abs = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut history = Vec::new();
    let mut method = if ctx.nonlinearity.derivative(ctx.nodes[0], ctx.t, 0.0).is_some() {
        cfg.method
    } else {
        Method::FixedPoint
    };
    if ctx.nonlinearity.is_zero() {
        work.copy_from_slice(rhs);
        ctx.elliptic.solve_shifted_in_place(ctx.diag, &mut work);
        let (r, s) = residual(ctx, rhs, &work, &mut lu, &mut abs);
        return Ok(StepResult { u: work, iterations: 1, residual: r / s.max(f64::MIN_POSITIVE) });
    }
    let mut last = f64::INFINITY;
    let grid = ctx.elliptic.grid();
    for it in 1..=cfg.max_iterations {
        let previous = u.clone();
        match method {
            Method::FixedPoint => {
                for i in 0..n {
                    work[i] = rhs[i] - ctx.nonlinearity.value(ctx.nodes[i], ctx.t, u[i]);
                }
                ctx.elliptic.solve_shifted_in_place(ctx.diag, &mut work);
                std::mem::swap(&mut u, &mut work);
            }
            Method::Newton => {
                let mut shift = vec![0.0; n];
                ctx.elliptic.apply_into(&u, &mut lu);
                for i in 0..n {
                    let x = ctx.nodes[i];
                    let d = ctx.nonlinearity.derivative(x, ctx.t, u[i]).unwrap_or(0.0);
                    shift[i] = ctx.diag + d;
                    work[i] = -(ctx.diag * u[i] + lu[i] + ctx.nonlinearity.value(x, ctx.t, u[i]) - rhs[i]);
                }
                if shift.iter().any(|&d| !(d > 0.0)) {
                    method = Method::FixedPoint;
                    continue;
                }
                ctx.elliptic.solve_diag_shifted_in_place(&shift, &mut work);
                for i in 0..n {
                    u[i] += work[i];
                }
            }
        }
        let (r, s) = residual(ctx, rhs, &u, &mut lu, &mut abs);
        let rel = r / s.max(f64::MIN_POSITIVE);
        history.push(rel);
        // the increment bounds the iterate error through the contraction factor;
        // the residual alone would tolerate errors amplified by |L_h| / a_mm
        let increment: Vec<f64> = u.iter().zip(&previous).map(|(a, b)| a - b).collect();
        let delta = grid.norm(&increment);
        if (delta <= cfg.tolerance * grid.norm(&u) && rel <= cfg.tolerance) || r == 0.0 {
            return Ok(StepResult { u, iterations: it, residual: rel });
        }
        if method == Method::Newton && rel > last {
            method = Method::FixedPoint;
        }
        last = rel;
    }
    Err(Error::NonConvergence { step: ctx.m, residuals: history })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionTrajectory {
    pub mesh: TemporalMesh,
    #[serde(skip)]
    pub grid: SpatialGrid1D,
    /// `U^0..U^M` on the interior nodes.
    pub values: Vec<Vec<f64>>,
    /// Inner iterations per step; index 0 is 0.
    pub iterations: Vec<usize>,
    /// Final relative residual per step; index 0 is 0.
    pub residuals: Vec<f64>,
    pub tolerance: f64,
    pub elapsed_seconds: f64,
}

/// Compact description of a trajectory for JSON reports.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub steps: usize,
    pub nodes: usize,
    pub t_final: f64,
    pub grading: Option<f64>,
    pub max_iterations: usize,
    pub mean_iterations: f64,
    pub max_residual: f64,
    pub final_norm: f64,
    pub elapsed_seconds: f64,
}

impl SolutionTrajectory {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn u(&self, m: usize) -> &[f64] {
        &self.values[m]
    }

    /// Discrete `L2` norms `||U^m||`.
    pub fn norms(&self) -> Vec<f64> {
        self.values.iter().map(|u| self.grid.norm(u)).collect()
    }

    pub fn summary(&self) -> TrajectorySummary {
        let steps = self.steps();
        let iters = &self.iterations[1..];
        TrajectorySummary {
            steps,
            nodes: self.grid.len(),
            t_final: self.mesh.t_final(),
            grading: self.mesh.grading(),
            max_iterations: iters.iter().copied().max().unwrap_or(0),
            mean_iterations: iters.iter().sum::<usize>() as f64 / steps.max(1) as f64,
            max_residual: self.residuals.iter().copied().fold(0.0, f64::max),
            final_norm: self.grid.norm(&self.values[steps]),
            elapsed_seconds: self.elapsed_seconds,
        }
    }

    /// CSV with columns `m,t_m,u(x_k)...,norm` for the chosen interior nodes (1-based).
    pub fn write_csv<W: Write>(&self, w: W, nodes: &[usize]) -> Result<()> {
        for &i in nodes {
            if i == 0 || i > self.grid.len() {
                return invalid(format!("node {i} outside 1..={}", self.grid.len()));
            }
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["m".to_string(), "t_m".to_string()];
        header.extend(nodes.iter().map(|&i| format!("u(x={})", self.grid.x(i))));
        header.push("norm".into());
        out.write_record(&header)?;
        for (m, u) in self.values.iter().enumerate() {
            let mut rec = vec![m.to_string(), self.mesh.t(m).to_string()];
            rec.extend(nodes.iter().map(|&i| u[i - 1].to_string()));
            rec.push(self.grid.norm(u).to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Node block handled by one task in the history convolution.
const NODE_CHUNK: usize = 256;

/// `out_i = sum_{j < m} a_{m,j} U^j_i`, compensated per node.
fn history_sum(row: &[f64], values: &[Vec<f64>], m: usize, out: &mut [f64], exec: Exec) {
    for_each_chunk_mut(exec, out, NODE_CHUNK, |offset, chunk| {
        let mut acc = vec![CompensatedSum::new(); chunk.len()];
        for (j, a) in row[..m].iter().enumerate() {
            let u = &values[j][offset..offset + chunk.len()];
            for (s, &v) in acc.iter_mut().zip(u) {
                s.add(a * v);
            }
        }
        for (o, s) in chunk.iter_mut().zip(&acc) {
            *o = s.value();
        }
    });
}

/// Solves the problem on `mesh` x `grid`, assembling the temporal operator.
pub fn solve(problem: &ProblemSpec, mesh: &TemporalMesh, grid: SpatialGrid1D, cfg: &NonlinearSolveConfig) -> Result<SolutionTrajectory> {
    let op = DiscreteCaputoMatrix::assemble_with(mesh, problem.alpha, problem.flavor, cfg.exec)?;
    solve_with_operator(problem, &op, grid, cfg)
}

/// As [`solve`] with a prebuilt (or streaming) temporal operator.
pub fn solve_with_operator(
    problem: &ProblemSpec,
    op: &impl CaputoRows,
    grid: SpatialGrid1D,
    cfg: &NonlinearSolveConfig,
) -> Result<SolutionTrajectory> {
    cfg.validate()?;
    let mesh = op.mesh();
    if op.alpha() != problem.alpha || op.flavor() != problem.flavor {
        return invalid("temporal operator does not match the problem's alpha and flavor");
    }
    if (mesh.t_final() - problem.t_final).abs() > 1e-12 * problem.t_final {
        return invalid(format!("mesh ends at {} but T = {}", mesh.t_final(), problem.t_final));
    }
    if (grid.length() - problem.length).abs() > 1e-12 * problem.length {
        return invalid(format!("grid length {} differs from X = {}", grid.length(), problem.length));
    }
    mesh.check_step_condition(problem.alpha, problem.lambda())?;
    let start = Instant::now();
    let elliptic = problem.elliptic(grid)?;
    let nodes = grid.nodes();
    let n = grid.len();
    let steps = mesh.steps();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(grid.sample(|x| (problem.initial)(x)));
    let mut iterations = vec![0];
    let mut residuals = vec![0.0];
    let mut rhs = vec![0.0; n];
    for m in 1..=steps {
        let row = op.row(m);
        history_sum(&row, &values, m, &mut rhs, cfg.exec);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let ctx = StepContext {
            m,
            t: mesh.t(m),
            diag: row[m],
            elliptic: &elliptic,
            nonlinearity: problem.nonlinearity.as_ref(),
            nodes: &nodes,
        };
        let guess = match cfg.initial_guess {
            InitialGuess::Previous => values[m - 1].clone(),
            InitialGuess::Zero => vec![0.0; n],
        };
        let res = step(&ctx, &rhs, guess, cfg)?;
        values.push(res.u);
        iterations.push(res.iterations);
        residuals.push(res.residual);
    }
    Ok(SolutionTrajectory {
        mesh: mesh.clone(),
        grid,
        values,
        iterations,
        residuals,
        tolerance: cfg.tolerance,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualCheck {
    /// Largest `||delta U^m + L_h U^m + f(t_m, U^m)||` over `m >= 1`.
    pub max_abs: f64,
    /// Same, each divided by the norm of the magnitudes of its terms.
    pub max_relative: f64,
}

/// Recomputes the discrete equation at every level from the stored trajectory.
pub fn residual_norm(
    traj: &SolutionTrajectory,
    op: &impl CaputoRows,
    elliptic: &EllipticOperator1D,
    f: &dyn Nonlinearity,
) -> ResidualCheck {
    let n = traj.grid.len();
    let nodes = traj.grid.nodes();
    let mut hist = vec![0.0; n];
    let mut hist_abs = vec![0.0; n];
    let mut check = ResidualCheck { max_abs: 0.0, max_relative: 0.0 };
    for m in 1..=traj.steps() {
        let row = op.row(m);
        history_sum(&row, &traj.values, m, &mut hist, Exec::default());
        for (i, h) in hist_abs.iter_mut().enumerate() {
            *h = (0..m).map(|j| (row[j] * traj.values[j][i]).abs()).sum();
        }
        let rhs: Vec<f64> = hist.iter().map(|v| -v).collect();
        let ctx = StepContext { m, t: traj.mesh.t(m), diag: row[m], elliptic, nonlinearity: f, nodes: &nodes };
        let mut lu = vec![0.0; n];
        let mut abs = vec![0.0; n];
        let (r, _) = residual(&ctx, &rhs, &traj.values[m], &mut lu, &mut abs);
        // scale from all terms, including each history product
        let u = &traj.values[m];
        let s2: f64 = (0..n)
            .map(|i| {
                let s = row[m] * u[i].abs() + abs[i] + f.value(nodes[i], ctx.t, u[i]).abs() + hist_abs[i];
                s * s
            })
            .sum();
        let s = (traj.grid.h() * s2).sqrt();
        check.max_abs = check.max_abs.max(r);
        check.max_relative = check.max_relative.max(r / s.max(f64::MIN_POSITIVE));
    }
    check
}
