//! Convergence studies against the pointwise-in-time error bound
//!
//! ```text
//! E^m = M^-r t_m^(alpha-1)                              1 <= r < 3 - alpha
//!       M^(alpha-3) t_m^(alpha-1) [1 + ln(t_m / t_1)]   r = 3 - alpha
//!       M^(alpha-3) t_m^(alpha-(3-alpha)/r)             r > 3 - alpha
//! ```
//!
//! plus order fitting and the energy diagnostic
//! `W^m = sqrt(||V^m||^2 + kappa*_m <L_h U^m, U^m>)`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::caputo::DiscreteCaputoMatrix;
use crate::error::{invalid, Error, Result};
use crate::mesh::TemporalMesh;
use crate::mittag_leffler::ml_neg;
use crate::monotone::{compute_representation, BarrierProfile, BetaSearch, MonotoneRepresentation};
use crate::numeric::check_alpha;
use crate::par::{map_range, Exec};
use crate::spatial::{sine_coefficients, EllipticOperator1D, SpatialGrid1D};
use crate::stepper::{solve_with_operator, NonlinearSolveConfig, ProblemSpec};

/// `|r - (3 - alpha)|` below this counts as the logarithmic case.
pub const REGIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `r < 3 - alpha`: order `r`.
    Below,
    /// `r = 3 - alpha`: order `3 - alpha` with a logarithmic factor.
    Critical,
    /// `r > 3 - alpha`: order `3 - alpha`.
    Above,
}

pub fn regime(alpha: f64, r: f64) -> Regime {
    let d = r - (3.0 - alpha);
    if d.abs() <= REGIME_TOL {
        Regime::Critical
    } else if d < 0.0 {
        Regime::Below
    } else {
        Regime::Above
    }
}

/// Order `min(r, 3 - alpha)` predicted at `t = T`.
pub fn expected_order(alpha: f64, r: f64) -> f64 {
    r.min(3.0 - alpha)
}

/// `gamma = min(alpha, (3 - alpha)/r - 1)`.
pub fn gamma_exponent(alpha: f64, r: f64) -> f64 {
    alpha.min((3.0 - alpha) / r - 1.0)
}

/// `E^m` for `M` steps at time `t_m` on a mesh with first node `t_1`.
pub fn theoretical_bound(alpha: f64, r: f64, steps: usize, t_m: f64, t_1: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(r >= 1.0) || steps == 0 {
        return invalid(format!("need r >= 1 and M >= 1, got r = {r}, M = {steps}"));
    }
    if !(t_1 > 0.0 && t_m >= t_1) {
        return invalid(format!("need 0 < t_1 <= t_m, got t_1 = {t_1}, t_m = {t_m}"));
    }
    let m = steps as f64;
    Ok(match regime(alpha, r) {
        Regime::Below => m.powf(-r) * t_m.powf(alpha - 1.0),
        Regime::Critical => m.powf(alpha - 3.0) * t_m.powf(alpha - 1.0) * (1.0 + (t_m / t_1).ln()),
        Regime::Above => m.powf(alpha - 3.0) * t_m.powf(alpha - (3.0 - alpha) / r),
    })
}

/// Least-squares slope of `ln err` against `ln M`, negated.
pub fn estimate_order(steps: &[usize], errors: &[f64]) -> Result<f64> {
    if steps.len() != errors.len() {
        return Err(Error::LengthMismatch { expected: steps.len(), actual: errors.len() });
    }
    if steps.len() < 3 {
        return invalid("order fitting needs at least three rungs");
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return invalid(format!("errors must be positive and finite, got {e}"));
    }
    let xs: Vec<f64> = steps.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return invalid("order fitting needs distinct step counts");
    }
    Ok(-sxy / sxx)
}

/// `W^m` for a sequence of grid functions `U^0..U^M`, using the `beta` and
/// `kappa*` of a sign-correct representation on the same mesh.
pub fn energy_diagnostic(
    values: &[Vec<f64>],
    rep: &MonotoneRepresentation,
    elliptic: &EllipticOperator1D,
) -> Result<Vec<f64>> {
    if values.len() != rep.steps() + 1 {
        return Err(Error::LengthMismatch { expected: rep.steps() + 1, actual: values.len() });
    }
    let grid = elliptic.grid();
    let mut w = vec![0.0; values.len()];
    w[0] = grid.norm(&values[0]);
    for m in 1..values.len() {
        let b = rep.betas[m];
        let v: Vec<f64> = values[m].iter().zip(&values[m - 1]).map(|(u, p)| (u - b * p) / (1.0 - b)).collect();
        let lu = elliptic.apply(&values[m]);
        let energy = grid.inner(&lu, &values[m]).max(0.0);
        let nv = grid.norm(&v);
        w[m] = (nv * nv + rep.kappa_star[m] * energy).sqrt();
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// `sum_k c_k E_alpha(-mu_k t^alpha) v_k`, exact in time for the
    /// spatially discrete linear constant-coefficient problem.
    Eigen,
    /// The same scheme on a mesh with `4 max(M)` steps and the same grading.
    Fine,
}

impl std::str::FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eigen" => Ok(ReferenceKind::Eigen),
            "fine" => Ok(ReferenceKind::Fine),
            other => invalid(format!("unknown reference '{other}', expected eigen or fine")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub grades: Vec<f64>,
    pub ladder: Vec<usize>,
    pub nodes: usize,
    pub reference: ReferenceKind,
    /// Fine-reference steps as a multiple of the largest rung.
    pub fine_factor: usize,
    pub solver: NonlinearSolveConfig,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            grades: vec![1.0],
            ladder: vec![32, 64, 128, 256],
            nodes: 2048,
            reference: ReferenceKind::Eigen,
            fine_factor: 4,
            solver: NonlinearSolveConfig::default(),
            exec: Exec::default(),
        }
    }
}

/// Errors of one `(r, M)` run.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub steps: usize,
    pub times: Vec<f64>,
    /// `e^m = ||u(t_m) - U^m||`, `m = 0..=M`.
    pub errors: Vec<f64>,
    /// `E^m`, index 0 unused.
    pub bounds: Vec<f64>,
    pub max_ratio: f64,
    pub max_iterations: usize,
    /// `max_m W^m / U^m(tau_1; gamma)` for the error sequence, when the
    /// representation exists on this mesh.
    pub energy_fit: Option<f64>,
    pub elapsed_seconds: f64,
}

impl CellReport {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("nonempty")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub alpha: f64,
    pub r: f64,
    pub regime: Regime,
    pub expected_order: f64,
    pub reference: String,
    pub cells: Vec<CellReport>,
    /// Rungs that failed, with the error message; the others still count.
    pub failures: Vec<(usize, String)>,
    /// Fitted order at `t = T` over the successful rungs.
    pub fitted_order: Option<f64>,
}

impl ErrorReport {
    pub fn cell(&self, steps: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.steps == steps)
    }
}

/// Reference values at the coarse nodes of an `M`-step mesh.
enum Reference {
    Eigen { modes: Vec<(f64, Vec<f64>)> },
    Fine { steps: usize, values: Vec<Vec<f64>> },
}

impl Reference {
    fn at(&self, alpha: f64, mesh: &TemporalMesh, m: usize) -> Result<Vec<f64>> {
        match self {
            Reference::Eigen { modes } => {
                let t = mesh.t(m);
                let n = modes.first().map_or(0, |(_, v)| v.len());
                let mut u = vec![0.0; n];
                for (mu, cv) in modes {
                    let e = if t == 0.0 { 1.0 } else { ml_neg(alpha, -mu * t.powf(alpha))? };
                    u.iter_mut().zip(cv).for_each(|(ui, c)| *ui += e * c);
                }
                Ok(u)
            }
            Reference::Fine { steps, values } => {
                let stride = steps / mesh.steps();
                Ok(values[m * stride].clone())
            }
        }
    }

    fn label(&self) -> String {
        match self {
            Reference::Eigen { modes } => format!("eigen ({} modes)", modes.len()),
            Reference::Fine { steps, .. } => format!("fine (M_ref = {steps})"),
        }
    }
}

fn eigen_reference(problem: &ProblemSpec, elliptic: &EllipticOperator1D) -> Result<Reference> {
    if !problem.nonlinearity.is_zero() || problem.constant_diffusion.is_none() {
        return invalid("eigen reference needs f = 0 and a constant diffusion coefficient");
    }
    let grid = elliptic.grid();
    let u0 = grid.sample(|x| (problem.initial)(x));
    let coeffs = sine_coefficients(&u0);
    let cmax = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let n = grid.len();
    let mut modes = Vec::new();
    for (i, &c) in coeffs.iter().enumerate() {
        if c.abs() <= 1e-13 * cmax {
            continue;
        }
        let k = i + 1;
        let v: Vec<f64> = (1..=n).map(|j| c * (k as f64 * std::f64::consts::PI * j as f64 / (n + 1) as f64).sin()).collect();
        modes.push((elliptic.sine_eigenvalue(k)?, v));
    }
    Ok(Reference::Eigen { modes })
}

fn run_cell(
    problem: &ProblemSpec,
    r: f64,
    steps: usize,
    grid: SpatialGrid1D,
    elliptic: &EllipticOperator1D,
    reference: &Reference,
    cfg: &StudyConfig,
) -> Result<CellReport> {
    let start = Instant::now();
    let alpha = problem.alpha;
    let mesh = TemporalMesh::graded(problem.t_final, steps, r)?;
    let op = DiscreteCaputoMatrix::assemble_with(&mesh, alpha, problem.flavor, cfg.exec)?;
    let traj = solve_with_operator(problem, &op, grid, &cfg.solver)?;
    let mut diffs = Vec::with_capacity(steps + 1);
    for m in 0..=steps {
        let exact = reference.at(alpha, &mesh, m)?;
        diffs.push(exact.iter().zip(traj.u(m)).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let errors: Vec<f64> = diffs.iter().map(|d| grid.norm(d)).collect();
    let t1 = mesh.t(1);
    let mut bounds = vec![0.0; steps + 1];
    let mut max_ratio = 0.0f64;
    for m in 1..=steps {
        bounds[m] = theoretical_bound(alpha, r, steps, mesh.t(m), t1)?;
        max_ratio = max_ratio.max(errors[m] / bounds[m]);
    }
    let energy_fit = compute_representation(&op, &BetaSearch::default()).representation().and_then(|rep| {
        let w = energy_diagnostic(&diffs, rep, elliptic).ok()?;
        let profile = BarrierProfile::for_mesh(&mesh, alpha, gamma_exponent(alpha, r), true);
        (1..=steps).map(|m| w[m] / profile.values[m]).reduce(f64::max)
    });
    Ok(CellReport {
        steps,
        times: mesh.points().to_vec(),
        errors,
        bounds,
        max_ratio,
        max_iterations: traj.iterations.iter().copied().max().unwrap_or(0),
        energy_fit,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every `(r, M)` cell; failing cells are recorded and skipped.
pub fn run_convergence_study(problem: &ProblemSpec, cfg: &StudyConfig) -> Result<Vec<ErrorReport>> {
    if cfg.ladder.is_empty() || cfg.grades.is_empty() {
        return invalid("study needs at least one grading exponent and one step count");
    }
    let grid = SpatialGrid1D::new(problem.length, cfg.nodes)?;
    let elliptic = problem.elliptic(grid)?;
    let max_steps = *cfg.ladder.iter().max().expect("nonempty");
    let references: Vec<Result<Reference>> = match cfg.reference {
        ReferenceKind::Eigen => {
            let r = eigen_reference(problem, &elliptic)?;
            let modes = match r {
                Reference::Eigen { modes } => modes,
                Reference::Fine { .. } => unreachable!(),
            };
            cfg.grades.iter().map(|_| Ok(Reference::Eigen { modes: modes.clone() })).collect()
        }
        ReferenceKind::Fine => {
            let steps = cfg.fine_factor.max(1) * max_steps;
            map_range(cfg.exec, 0, cfg.grades.len(), |i| {
                let mesh = TemporalMesh::graded(problem.t_final, steps, cfg.grades[i])?;
                let op = DiscreteCaputoMatrix::assemble_with(&mesh, problem.alpha, problem.flavor, cfg.exec)?;
                let traj = solve_with_operator(problem, &op, grid, &cfg.solver)?;
                Ok(Reference::Fine { steps, values: traj.values })
            })
        }
    };
    let ncells = cfg.grades.len() * cfg.ladder.len();
    let cells = map_range(cfg.exec, 0, ncells, |c| {
        let (ri, mi) = (c / cfg.ladder.len(), c % cfg.ladder.len());
        let steps = cfg.ladder[mi];
        let reference = references[ri].as_ref().map_err(|e| Error::InvalidInput(format!("reference failed: {e}")))?;
        if let Reference::Fine { steps: fine, .. } = reference {
            if fine % steps != 0 {
                return invalid(format!("M = {steps} does not divide M_ref = {fine}"));
            }
        }
        run_cell(problem, cfg.grades[ri], steps, grid, &elliptic, reference, cfg)
    });
    let mut reports = Vec::with_capacity(cfg.grades.len());
    let mut cells = cells.into_iter();
    for (ri, &r) in cfg.grades.iter().enumerate() {
        let mut report = ErrorReport {
            alpha: problem.alpha,
            r,
            regime: regime(problem.alpha, r),
            expected_order: expected_order(problem.alpha, r),
            reference: match &references[ri] {
                Ok(reference) => reference.label(),
                Err(e) => format!("failed: {e}"),
            },
            cells: Vec::new(),
            failures: Vec::new(),
            fitted_order: None,
        };
        for &steps in &cfg.ladder {
            match cells.next().expect("one result per cell") {
                Ok(cell) => report.cells.push(cell),
                Err(e) => {
                    log::warn!("cell alpha={} r={r} M={steps} failed: {e}", problem.alpha);
                    report.failures.push((steps, e.to_string()));
                }
            }
        }
        let ms: Vec<usize> = report.cells.iter().map(|c| c.steps).collect();
        let es: Vec<f64> = report.cells.iter().map(CellReport::final_error).collect();
        report.fitted_order = estimate_order(&ms, &es).ok();
        reports.push(report);
    }
    Ok(reports)
}

/// CSV with columns `alpha,r,M,m,t_m,err,bound,ratio`.
pub fn write_study_csv<W: Write>(reports: &[ErrorReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha", "r", "M", "m", "t_m", "err", "bound", "ratio"])?;
    for rep in reports {
        for cell in &rep.cells {
            for m in 1..=cell.steps {
                out.write_record([
                    rep.alpha.to_string(),
                    rep.r.to_string(),
                    cell.steps.to_string(),
                    m.to_string(),
                    cell.times[m].to_string(),
                    cell.errors[m].to_string(),
                    cell.bounds[m].to_string(),
                    (cell.errors[m] / cell.bounds[m]).to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caputo::assemble_l2;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_examples() {
        assert_relative_eq!(theoretical_bound(0.5, 1.0, 100, 1.0, 1e-2).unwrap(), 0.01, max_relative = 1e-14);
        let t1 = 10f64.powf(-2.5);
        assert_relative_eq!(
            theoretical_bound(0.5, 2.5, 10, t1, t1).unwrap(),
            10f64.powf(-2.5) * t1.powf(-0.5),
            max_relative = 1e-14
        );
        assert_relative_eq!(theoretical_bound(0.5, 5.0, 10, 1.0, 1e-5).unwrap(), 10f64.powf(-2.5), max_relative = 1e-14);
        assert!(theoretical_bound(0.5, 2.0, 10, 0.1, 0.2).is_err());
        assert!(theoretical_bound(0.5, 0.5, 10, 1.0, 0.1).is_err());
    }

    #[test]
    fn regime_boundary_tolerance() {
        assert_eq!(regime(0.5, 2.5 + 1e-10), Regime::Critical);
        assert_eq!(regime(0.5, 2.5 + 1e-6), Regime::Above);
        assert_eq!(regime(0.5, 2.4), Regime::Below);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_exponent(0.5, 1.0), 0.5);
        assert_eq!(gamma_exponent(0.5, 2.5), 0.0);
        assert_eq!(gamma_exponent(0.5, 5.0), -0.5);
    }

    #[test]
    fn order_of_exact_power_laws() {
        let ms = [32, 64, 128, 256];
        let e2: Vec<f64> = ms.iter().map(|&m| 3.0 * (m as f64).powi(-2)).collect();
        assert_relative_eq!(estimate_order(&ms, &e2).unwrap(), 2.0, epsilon = 1e-12);
        let e25: Vec<f64> = ms.iter().map(|&m| 0.7 * (m as f64).powf(-2.5)).collect();
        assert_relative_eq!(estimate_order(&ms, &e25).unwrap(), 2.5, epsilon = 1e-10);
    }

    #[test]
    fn order_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ms = [16, 32, 64, 128, 256, 512];
        for _ in 0..200 {
            let e: Vec<f64> = ms.iter().map(|&m| (m as f64).powf(-1.5) * (1.0 + rng.gen_range(-0.05..0.05))).collect();
            assert!((estimate_order(&ms, &e).unwrap() - 1.5).abs() < 0.1);
        }
    }

    #[test]
    fn order_rejects_bad_input() {
        assert!(estimate_order(&[1, 2], &[1.0, 0.5]).is_err());
        assert!(estimate_order(&[1, 2, 4], &[1.0, 0.0, 0.5]).is_err());
        assert!(estimate_order(&[1, 2, 4], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn energy_of_zero_and_lower_bound() {
        let mesh = TemporalMesh::graded(1.0, 16, 2.0).unwrap();
        let op = assemble_l2(&mesh, 0.5).unwrap();
        let rep = compute_representation(&op, &BetaSearch::default()).representation().cloned().unwrap();
        let grid = SpatialGrid1D::unit(15).unwrap();
        let elliptic = EllipticOperator1D::constant(grid, 1.0).unwrap();
        let zero = vec![vec![0.0; 15]; 17];
        assert!(energy_diagnostic(&zero, &rep, &elliptic).unwrap().iter().all(|&w| w == 0.0));
        let vals: Vec<Vec<f64>> = (0..=16).map(|m| grid.sample(|x| (m as f64 * x).cos() * x * (1.0 - x))).collect();
        let w = energy_diagnostic(&vals, &rep, &elliptic).unwrap();
        for m in 1..=16 {
            let b = rep.betas[m];
            let v: Vec<f64> = vals[m].iter().zip(&vals[m - 1]).map(|(u, p)| (u - b * p) / (1.0 - b)).collect();
            assert!(w[m] >= grid.norm(&v));
        }
        assert!(energy_diagnostic(&zero[..5], &rep, &elliptic).is_err());
    }

    #[test]
    fn small_eigen_study() {
        let alpha = 0.5;
        let problem = ProblemSpec::linear_sine(alpha, 1.0, 1.0).unwrap();
        let cfg = StudyConfig { grades: vec![1.0, 6.0], ladder: vec![16, 32, 64], nodes: 63, ..Default::default() };
        let reports = run_convergence_study(&problem, &cfg).unwrap();
        assert_eq!(reports.len(), 2);
        for rep in &reports {
            assert!(rep.failures.is_empty());
            let order = rep.fitted_order.unwrap();
            assert!(order > rep.expected_order - 0.3, "r {}: {order}", rep.r);
        }
        let mut buf = Vec::new();
        write_study_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,r,M,m,t_m,err,bound,ratio"));
        assert_eq!(text.lines().count(), 1 + 2 * (16 + 32 + 64));
    }

    #[test]
    fn initial_layer_keeps_global_order() {
        let alpha = 0.5;
        let problem = ProblemSpec::linear_sine(alpha, 1.0, 1.0).unwrap();
        let cfg = StudyConfig { grades: vec![6.0], ladder: vec![32, 64, 128], nodes: 63, ..Default::default() };
        let rep = &run_convergence_study(&problem, &cfg).unwrap()[0];
        let ms: Vec<usize> = rep.cells.iter().map(|c| c.steps).collect();
        let worst: Vec<f64> = rep.cells.iter().map(|c| c.errors.iter().copied().fold(0.0, f64::max)).collect();
        let order = estimate_order(&ms, &worst).unwrap();
        assert!(order >= 3.0 - alpha - 0.15, "{order}");
        // the ratio profile peaks away from the first step
        let cell = rep.cell(128).unwrap();
        let ratio = |m: usize| cell.errors[m] / cell.bounds[m];
        assert!(ratio(1) < cell.max_ratio);
    }

    #[test]
    fn fine_reference_study_and_cell_failures() {
        let problem = ProblemSpec::semilinear_sine(0.6, 1.0, 1.0, 1.0).unwrap();
        let cfg = StudyConfig {
            grades: vec![2.0],
            ladder: vec![8, 16, 24, 32],
            nodes: 31,
            reference: ReferenceKind::Fine,
            ..Default::default()
        };
        let reports = run_convergence_study(&problem, &cfg).unwrap();
        // 24 does not divide 128, so only that rung fails
        assert_eq!(reports[0].failures.len(), 1);
        assert_eq!(reports[0].failures[0].0, 24);
        assert_eq!(reports[0].cells.len(), 3);
        assert!(reports[0].fitted_order.unwrap() > 1.5);
        let eigen = StudyConfig { reference: ReferenceKind::Eigen, ..cfg };
        assert!(run_convergence_study(&problem, &eigen).is_err());
    }
}
