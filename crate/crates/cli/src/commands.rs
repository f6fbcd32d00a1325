use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use subdiff::caputo::{DiscreteCaputoMatrix, Flavor, MonomialSum};
use subdiff::harness::{regime, run_convergence_study, write_study_csv, ReferenceKind, Regime, StudyConfig};
use subdiff::monotone::{
    barrier_check as fit_barrier, comparison_trial, compute_representation, inverse_monotonicity_oracle,
    plus_lambda_probe, BetaSearch, TrialSettings,
};
use subdiff::spatial::SpatialGrid1D;
use subdiff::stepper::{residual_norm, solve_with_operator, Method, NonlinearSolveConfig, ProblemSpec};
use subdiff::{Exec, TemporalMesh};

use crate::config::ConfigFile;
use crate::report::{io_err, to_value, CliError, Summary};
use crate::{BarrierArgs, ConvergenceArgs, OperatorArgs, ProbeArgs, ProblemArgs, SolveArgs};

/// Band on the fitted order at `t = T` around `min(r, 3 - alpha)`.
const ORDER_BAND: f64 = 0.15;
const ORDER_BAND_CRITICAL: f64 = 0.25;
/// Largest relative spread of the barrier constant across step counts.
const BARRIER_SPREAD: f64 = 0.25;
/// `exactness` threshold for linear and quadratic data.
const EXACTNESS_TOL: f64 = 1e-10;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn parse_flavor(s: &str) -> Result<Flavor, CliError> {
    s.parse::<Flavor>().map_err(CliError::from)
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "fixed-point" | "fixed_point" | "picard" => Ok(Method::FixedPoint),
        "newton" => Ok(Method::Newton),
        other => Err(CliError::Input(format!("unknown method '{other}', expected fixed-point or newton"))),
    }
}

/// Problem file: flat `key = value` with keys `kind` (linear-sine or
/// semilinear-sine), `lambda`, `length`, `diffusion` (constant), and
/// `initial_modes` (comma-separated amplitudes of `sin(k pi x / X)`).
fn load_problem_file(path: &Path, alpha: f64, t_final: f64) -> Result<ProblemSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| io_err(path, format!("line {}: expected key = value", i + 1)))?;
        kv.insert(k.trim().to_ascii_lowercase().replace('-', "_"), v.trim().to_string());
    }
    let num = |key: &str, default: f64| -> Result<f64, CliError> {
        kv.get(key).map_or(Ok(default), |v| v.parse().map_err(|e| io_err(path, format!("{key} = '{v}': {e}"))))
    };
    for key in kv.keys() {
        if !["kind", "lambda", "length", "diffusion", "initial_modes"].contains(&key.as_str()) {
            return Err(io_err(path, format!("unknown problem key '{key}'")));
        }
    }
    let length = num("length", 1.0)?;
    let kind = kv.get("kind").map(String::as_str).unwrap_or("linear-sine");
    let mut p = match kind {
        "linear-sine" => ProblemSpec::linear_sine(alpha, t_final, length)?,
        "semilinear-sine" => ProblemSpec::semilinear_sine(alpha, t_final, length, num("lambda", 1.0)?)?,
        other => return Err(io_err(path, format!("unknown kind '{other}'"))),
    };
    let a = num("diffusion", 1.0)?;
    if a != 1.0 {
        p = p.with_diffusion(move |_| a);
        p.constant_diffusion = Some(a);
    }
    if let Some(modes) = kv.get("initial_modes") {
        let amps: Vec<f64> = modes
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| io_err(path, format!("initial_modes item '{s}': {e}"))))
            .collect::<Result<_, _>>()?;
        p = p.with_initial(move |x| amps.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * x / length).sin()).sum());
    }
    Ok(p)
}

struct Resolved {
    problem: ProblemSpec,
    nodes: usize,
    solver: NonlinearSolveConfig,
}

fn resolve_problem(cfg: &ConfigFile, a: ProblemArgs, exec: Exec, default_nodes: usize) -> Result<Resolved, CliError> {
    let alpha: f64 = cfg.require(a.alpha, "alpha")?;
    let t_final = cfg.pick_or(a.t_final, "t", 1.0)?;
    let name: String = cfg.pick_or(a.problem, "problem", "linear-sine".to_string())?;
    let lambda = cfg.pick(a.lambda, "lambda")?;
    let mut problem = match name.as_str() {
        "linear-sine" => ProblemSpec::linear_sine(alpha, t_final, 1.0)?,
        "semilinear-sine" => ProblemSpec::semilinear_sine(alpha, t_final, 1.0, lambda.unwrap_or(1.0))?,
        file => load_problem_file(Path::new(file), alpha, t_final)?,
    };
    if let Some(f) = cfg.pick::<String>(a.flavor, "flavor")? {
        problem = problem.with_flavor(parse_flavor(&f)?);
    }
    let mut solver = NonlinearSolveConfig { exec, ..Default::default() };
    if let Some(m) = cfg.pick::<String>(a.method, "method")? {
        solver.method = parse_method(&m)?;
    }
    solver.tolerance = cfg.pick_or(a.tol, "tol", solver.tolerance)?;
    solver.max_iterations = cfg.pick_or(a.max_iter, "max-iter", solver.max_iterations)?;
    solver.validate()?;
    let nodes = cfg.pick_or(a.nodes, "n", default_nodes)?;
    Ok(Resolved { problem, nodes, solver })
}

fn out_path(cfg: &ConfigFile, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    cfg.pick(flag, "out")
}

pub fn solve(cfg: &ConfigFile, a: SolveArgs, exec: Exec) -> Result<Summary, CliError> {
    let start = Instant::now();
    let res = resolve_problem(cfg, a.problem, exec, 255)?;
    let r = cfg.pick_or(a.r, "r", 1.0)?;
    let steps = cfg.require(a.steps, "m")?;
    let stride = cfg.pick_or(a.stride, "stride", 1usize)?.max(1);
    let out = out_path(cfg, a.out)?;
    let mesh = TemporalMesh::graded(res.problem.t_final, steps, r)?;
    let grid = SpatialGrid1D::new(res.problem.length, res.nodes)?;
    let op = DiscreteCaputoMatrix::assemble_with(&mesh, res.problem.alpha, res.problem.flavor, exec)?;
    let assembled = start.elapsed().as_secs_f64();
    let traj = solve_with_operator(&res.problem, &op, grid, &res.solver)?;
    let elliptic = res.problem.elliptic(grid)?;
    let check = residual_norm(&traj, &op, &elliptic, res.problem.nonlinearity.as_ref());
    if let Some(path) = &out {
        let nodes: Vec<usize> = (1..=grid.len()).step_by(stride).collect();
        traj.write_csv(create(path)?, &nodes)?;
    }
    let mut s = Summary::new("solve");
    s.passed = check.max_relative <= 10.0 * res.solver.tolerance;
    s.parameters = json!({
        "problem": format!("{:?}", res.problem), "alpha": res.problem.alpha, "r": r, "M": steps,
        "N": res.nodes, "T": res.problem.t_final, "solver": to_value(&res.solver),
    });
    s.timings = json!({ "assemble_seconds": assembled, "solve_seconds": traj.elapsed_seconds, "total_seconds": start.elapsed().as_secs_f64() });
    s.result = json!({ "summary": to_value(&traj.summary()), "residual_recheck": to_value(&check) });
    s.csv = out;
    Ok(s)
}

pub fn convergence(cfg: &ConfigFile, a: ConvergenceArgs, exec: Exec) -> Result<Summary, CliError> {
    let start = Instant::now();
    let res = resolve_problem(cfg, a.problem, exec, 2048)?;
    let grades = cfg.list(a.r, "r")?.unwrap_or_else(|| vec![1.0]);
    let ladder = cfg.list(a.steps, "m")?.unwrap_or_else(|| vec![32, 64, 128, 256]);
    if ladder.len() < 3 {
        return Err(CliError::Input("the M ladder needs at least three rungs".into()));
    }
    let reference = match cfg.pick::<String>(a.reference, "ref")? {
        Some(s) => s.parse::<ReferenceKind>()?,
        None if res.problem.nonlinearity.is_zero() && res.problem.constant_diffusion.is_some() => ReferenceKind::Eigen,
        None => ReferenceKind::Fine,
    };
    let out = out_path(cfg, a.out)?;
    let study = StudyConfig { grades, ladder, nodes: res.nodes, reference, solver: res.solver, exec, ..Default::default() };
    let reports = run_convergence_study(&res.problem, &study)?;
    if let Some(path) = &out {
        write_study_csv(&reports, create(path)?)?;
    }
    let mut passed = true;
    let mut rows = Vec::new();
    for rep in &reports {
        let band = if rep.regime == Regime::Critical { ORDER_BAND_CRITICAL } else { ORDER_BAND };
        let ok = rep.failures.is_empty() && rep.fitted_order.is_some_and(|p| (p - rep.expected_order).abs() <= band);
        passed &= ok;
        rows.push(json!({
            "r": rep.r, "regime": to_value(&regime(rep.alpha, rep.r)), "expected_order": rep.expected_order,
            "fitted_order": rep.fitted_order, "band": band, "passed": ok, "reference": rep.reference,
            "failures": rep.failures,
            "cells": rep.cells.iter().map(|c| json!({
                "M": c.steps, "final_error": c.final_error(), "max_ratio": c.max_ratio,
                "energy_fit": c.energy_fit, "max_iterations": c.max_iterations, "seconds": c.elapsed_seconds,
            })).collect::<Vec<_>>(),
        }));
    }
    let mut s = Summary::new("convergence");
    s.passed = passed;
    s.parameters = json!({ "problem": format!("{:?}", res.problem), "study": to_value(&study) });
    s.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    s.result = json!({ "reports": rows });
    s.csv = out;
    Ok(s)
}

pub fn operator_check(cfg: &ConfigFile, a: OperatorArgs, exec: Exec) -> Result<Summary, CliError> {
    let start = Instant::now();
    let alpha: f64 = cfg.require(a.alpha, "alpha")?;
    let flavor = parse_flavor(&cfg.pick_or(a.flavor, "flavor", "l2".to_string())?)?;
    let mesh_spec: String = cfg.pick_or(a.mesh, "mesh", "graded".to_string())?;
    let mesh = if mesh_spec == "graded" {
        let steps = cfg.require(a.steps, "m")?;
        TemporalMesh::graded(cfg.pick_or(a.t_final, "t", 1.0)?, steps, cfg.pick_or(a.r, "r", 1.0)?)?
    } else {
        TemporalMesh::load_csv(&mesh_spec)?
    };
    let op = DiscreteCaputoMatrix::assemble_with(&mesh, alpha, flavor, exec)?;
    let checks = op.validate();
    // Exact reproduction: linears for every row, quadratics from row 2 on (L2 only).
    let worst = |u: &MonomialSum, first: usize| -> Result<f64, CliError> {
        let samples: Vec<f64> = mesh.points().iter().map(|&t| u.eval(t)).collect();
        let mut w = 0.0f64;
        for m in first..=mesh.steps() {
            let exact = u.caputo(alpha, mesh.t(m))?;
            w = w.max(((op.apply_history(&samples[..=m], m)? - exact) / exact).abs());
        }
        Ok(w)
    };
    let lin = worst(&MonomialSum { constant: 0.0, terms: vec![(1.0, 1.0)] }, 1)?;
    let quad = if flavor == Flavor::L2 {
        Some(worst(&MonomialSum { constant: 0.0, terms: vec![(1.0, 1.0), (1.0, 2.0)] }, 2)?)
    } else {
        None
    };
    let out = out_path(cfg, a.out)?;
    if let Some(path) = &out {
        op.write_csv(create(path)?)?;
    }
    let mut s = Summary::new("operator-check");
    s.passed = checks.row_sums_ok
        && checks.diag_bound_ok
        && lin <= EXACTNESS_TOL
        && quad.is_none_or(|q| q <= EXACTNESS_TOL)
        && (flavor != Flavor::L1 || checks.z_pattern);
    s.parameters = json!({ "alpha": alpha, "flavor": flavor.to_string(), "mesh": mesh_spec, "M": mesh.steps(), "grading": mesh.grading() });
    s.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    s.result = json!({
        "checks": to_value(&checks), "linear_max_rel_error": lin, "quadratic_max_rel_error": quad,
        "exactness_tol": EXACTNESS_TOL, "guarded_intervals": op.guarded_intervals(),
    });
    s.csv = out;
    Ok(s)
}

pub fn monotonicity_probe(cfg: &ConfigFile, a: ProbeArgs, exec: Exec) -> Result<Summary, CliError> {
    let start = Instant::now();
    let alpha: f64 = cfg.require(a.alpha, "alpha")?;
    let steps = cfg.require(a.steps, "m")?;
    let r = cfg.pick_or(a.r, "r", 1.0)?;
    let lambda = cfg.pick_or(a.lambda, "lambda", 0.0)?;
    let plus = cfg.switch(a.plus_lambda, "plus-lambda")?;
    let settings = TrialSettings {
        trials: cfg.pick_or(a.trials, "trials", if plus { 10_000 } else { 1000 })?,
        seed: cfg.pick_or(a.seed, "seed", 0)?,
        exec,
        ..Default::default()
    };
    let mesh = TemporalMesh::graded(1.0, steps, r)?;
    let op = DiscreteCaputoMatrix::assemble_with(&mesh, alpha, Flavor::L2, exec)?;
    let out = out_path(cfg, a.out)?;
    let mut s = Summary::new("monotonicity-probe");
    s.seed = Some(settings.seed);
    s.parameters = json!({ "alpha": alpha, "r": r, "M": steps, "lambda": lambda, "plus_lambda": plus, "trials": settings.trials });
    if plus {
        let probe = plus_lambda_probe(&op, lambda, &settings)?;
        // Either outcome is a valid answer to the question being probed.
        s.result = json!({ "probe": to_value(&probe), "inverse_monotone": probe.counterexample.is_none() });
    } else {
        let outcome = compute_representation(&op, &BetaSearch::default());
        let inverse = inverse_monotonicity_oracle(&op, exec);
        let trials = comparison_trial(&op, lambda, &settings)?;
        if let (Some(path), Some(rep)) = (&out, outcome.representation()) {
            rep.write_betas_csv(create(path)?)?;
            s.csv = out.clone();
        }
        let rep_ok = outcome.representation().is_some_and(|rep| rep.sign_ok());
        s.passed = rep_ok && inverse.nonneg && trials.violations == 0;
        s.result = json!({
            "representation": outcome.representation().map(|rep| json!({
                "sign_ok": rep.sign_ok(), "max_row_sum": rep.max_row_sum, "betas": rep.betas,
            })),
            "representation_failure": outcome.failure().map(|f| json!({
                "row": f.row, "column": f.column, "relative_value": f.relative_value,
            })),
            "inverse": to_value(&inverse),
            "comparison": to_value(&trials),
        });
    }
    s.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    Ok(s)
}

pub fn barrier_check(cfg: &ConfigFile, a: BarrierArgs) -> Result<Summary, CliError> {
    let start = Instant::now();
    let alpha: f64 = cfg.require(a.alpha, "alpha")?;
    let gamma: f64 = cfg.require(a.gamma, "gamma")?;
    let sharp = cfg.switch(a.sharp_ell, "sharp-ell")?;
    let r = cfg.pick_or(a.r, "r", 2.0)?;
    let lambda = cfg.pick_or(a.lambda, "lambda", 0.0)?;
    let ladder = cfg.list(a.steps, "m")?.unwrap_or_else(|| vec![64, 128, 256]);
    if ladder.is_empty() {
        return Err(CliError::Input("need at least one step count".into()));
    }
    let out = out_path(cfg, a.out)?;
    let mut writer = out.as_deref().map(|p| create(p).map(csv::Writer::from_writer)).transpose()?;
    if let Some(w) = writer.as_mut() {
        w.write_record(["M", "j", "t_j", "U_j", "barrier_j", "ratio"]).map_err(subdiff::Error::from)?;
    }
    let mut fits = Vec::new();
    for &steps in &ladder {
        let op = DiscreteCaputoMatrix::assemble(&TemporalMesh::graded(1.0, steps, r)?, alpha, Flavor::L2)?;
        let rep = fit_barrier(&op, lambda, gamma, sharp)?;
        if let Some(w) = writer.as_mut() {
            for j in 1..=steps {
                let (u, b) = (rep.solution[j], rep.profile.values[j]);
                w.write_record([steps.to_string(), j.to_string(), op.mesh().t(j).to_string(), u.to_string(), b.to_string(), (u / b).to_string()])
                    .map_err(subdiff::Error::from)?;
            }
        }
        fits.push(json!({ "M": steps, "c_fit": rep.c_fit, "argmax": rep.argmax }));
    }
    if let Some(mut w) = writer {
        w.flush().map_err(subdiff::Error::from)?;
    }
    let values: Vec<f64> = fits.iter().map(|f| f["c_fit"].as_f64().unwrap_or(f64::NAN)).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = hi / lo - 1.0;
    let mut s = Summary::new("barrier-check");
    s.passed = spread < BARRIER_SPREAD;
    s.parameters = json!({ "alpha": alpha, "gamma": gamma, "sharp_ell": sharp, "r": r, "lambda": lambda, "M": ladder });
    s.timings = json!({ "total_seconds": start.elapsed().as_secs_f64() });
    s.result = json!({ "fits": fits, "spread": spread, "max_spread": BARRIER_SPREAD });
    s.csv = out;
    Ok(s)
}
