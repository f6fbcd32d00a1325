//! Inverse-monotone structure of the discrete Caputo operator.
//!
//! The L2 matrix is not a Z-matrix, but it factors as
//! `delta U^m = sum_j kappa_{m,j} V^j` with
//! `V^j = (U^j - beta_j U^{j-1}) / (1 - beta_j)`, `kappa_{m,m} > 0` and
//! `kappa_{m,j} <= 0` off the diagonal. Both factors are M-matrices, so the
//! operator has a nonnegative inverse. This module searches for such
//! `beta`, checks the inverse directly, and runs randomized
//! comparison-principle and barrier trials.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::caputo::DiscreteCaputoMatrix;
use crate::error::{invalid, Result};
use crate::mesh::{analyze_mesh, MeshAssumptionConfig, TemporalMesh};
use crate::numeric::CompensatedSum;
use crate::par::{map_range, Exec};

/// Relative tolerance for sign conditions, scaled by the row's largest entry.
pub const SIGN_TOL: f64 = 1e-12;

/// Settings of the sequential `beta` search.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BetaSearch {
    /// Upper end of the admissible interval `[0, beta_max]`.
    pub beta_max: f64,
    pub sign_tol: f64,
}

impl Default for BetaSearch {
    fn default() -> Self {
        BetaSearch { beta_max: 1.0 - 1e-6, sign_tol: SIGN_TOL }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotoneRepresentation {
    /// `beta_j` for `j = 0..=M`; `beta_0 = 0`.
    pub betas: Vec<f64>,
    /// Rows `m = 1..=M` of `kappa`, packed like the operator.
    kappa: Vec<f64>,
    /// `kappa*_m = 1 / (kappa_{m,m} (1 - beta_m))`, index 0 unused.
    pub kappa_star: Vec<f64>,
    /// Per-row sign flags, index 0 unused.
    pub row_sign_ok: Vec<bool>,
    /// Largest `|sum_j kappa_{m,j}|` relative to `max_j |a_{m,j}|`.
    pub max_row_sum: f64,
}

/// Where the sequential search got stuck.
#[derive(Clone, Debug, Serialize)]
pub struct SearchFailure {
    /// Row `m` whose constraints fail for every admissible `beta_m`.
    pub row: usize,
    /// First column `j < m` with `kappa_{m,j} > 0` at `beta_m = 0`.
    pub column: usize,
    /// That entry divided by the row scale.
    pub relative_value: f64,
    /// `beta_0..beta_{m-1}` determined so far.
    pub betas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum SearchOutcome {
    Found(MonotoneRepresentation),
    NotFound(SearchFailure),
}

impl SearchOutcome {
    pub fn representation(&self) -> Option<&MonotoneRepresentation> {
        match self {
            SearchOutcome::Found(r) => Some(r),
            SearchOutcome::NotFound(_) => None,
        }
    }

    pub fn failure(&self) -> Option<&SearchFailure> {
        match self {
            SearchOutcome::Found(_) => None,
            SearchOutcome::NotFound(f) => Some(f),
        }
    }
}

fn row_offset(m: usize) -> usize {
    (m - 1) * (m + 2) / 2
}

/// `S_k = a_{m,k} + beta_{k+1} S_{k+1}`, `S_m = a_{m,m}`, split as
/// `S_k = p_k + beta_m q_k` so the dependence on the free `beta_m` is explicit.
fn partial_sums(row: &[f64], betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = row.len() - 1;
    let mut p = vec![0.0; m + 1];
    let mut q = vec![0.0; m + 1];
    p[m] = row[m];
    if m >= 1 {
        p[m - 1] = row[m - 1];
        q[m - 1] = row[m];
    }
    for k in (0..m.saturating_sub(1)).rev() {
        p[k] = row[k] + betas[k + 1] * p[k + 1];
        q[k] = betas[k + 1] * q[k + 1];
    }
    (p, q)
}

/// `kappa_{m,k}` for a fully determined set of `beta_0..beta_m`.
fn kappa_row(row: &[f64], betas: &[f64]) -> Vec<f64> {
    let m = row.len() - 1;
    let mut out = vec![0.0; m + 1];
    let mut s = 0.0;
    for k in (0..=m).rev() {
        s = if k == m { row[m] } else { row[k] + betas[k + 1] * s };
        out[k] = (1.0 - betas[k]) * s;
    }
    out
}

fn row_scale(row: &[f64]) -> f64 {
    row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// First off-diagonal entry breaking the sign condition, as `(column, relative value)`.
fn first_sign_violation(kappa: &[f64], tol: f64) -> Option<(usize, f64)> {
    let m = kappa.len() - 1;
    let scale = row_scale(kappa);
    if !(kappa[m] > 0.0) {
        return Some((m, kappa[m] / scale.max(f64::MIN_POSITIVE)));
    }
    kappa[..m]
        .iter()
        .position(|&v| v > tol * scale)
        .map(|j| (j, kappa[j] / scale))
}

/// Greedy search: for `m = 1, 2, ...` take the largest `beta_m` keeping row `m`
/// of `kappa` sign-correct.
///
/// Every off-diagonal `kappa_{m,k}` is affine and nondecreasing in `beta_m`,
/// so the admissible set of row `m` is an interval `[0, u_m]`; it is empty
/// exactly when `beta_m = 0` already fails, which is the reported failure.
/// Taking `u_m` leaves the most room for later rows, where `beta_m` enters
/// as a damping factor.
pub fn compute_representation(op: &DiscreteCaputoMatrix, search: &BetaSearch) -> SearchOutcome {
    let steps = op.steps();
    let mut betas = vec![0.0; steps + 1];
    for m in 1..=steps {
        let row = op.row(m);
        let (p, q) = partial_sums(row, &betas);
        let at_zero: Vec<f64> = (0..=m).map(|k| (1.0 - betas[k]) * p[k]).collect();
        if let Some((column, relative_value)) = first_sign_violation(&at_zero, search.sign_tol) {
            return SearchOutcome::NotFound(SearchFailure {
                row: m,
                column,
                relative_value,
                betas: betas[..m].to_vec(),
            });
        }
        let mut upper = search.beta_max;
        for k in 0..m {
            if q[k] > 0.0 {
                upper = upper.min(-p[k] / q[k]);
            }
        }
        let mut beta = upper.clamp(0.0, search.beta_max);
        // the closed-form bound can sit a rounding error outside the tolerance
        let feasible = |b: f64| {
            let mut trial = betas[..m].to_vec();
            trial.push(b);
            first_sign_violation(&kappa_row(row, &trial), search.sign_tol).is_none()
        };
        if !feasible(beta) {
            let (mut lo, mut hi) = (0.0, beta);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            beta = lo;
        }
        betas[m] = beta;
    }
    SearchOutcome::Found(MonotoneRepresentation::from_betas(op, betas, search.sign_tol))
}

impl MonotoneRepresentation {
    /// Builds `kappa` from given `beta` and records which rows satisfy the sign conditions.
    pub fn from_betas(op: &DiscreteCaputoMatrix, betas: Vec<f64>, sign_tol: f64) -> Self {
        let steps = op.steps();
        assert_eq!(betas.len(), steps + 1, "one beta per mesh point");
        let rows = map_range(Exec::default(), 1, steps + 1, |m| kappa_row(op.row(m), &betas[..=m]));
        let mut kappa = Vec::with_capacity(row_offset(steps + 1));
        let mut kappa_star = vec![0.0; steps + 1];
        let mut row_sign_ok = vec![true; steps + 1];
        let mut max_row_sum = 0.0f64;
        for (i, row) in rows.into_iter().enumerate() {
            let m = i + 1;
            kappa_star[m] = 1.0 / (row[m] * (1.0 - betas[m]));
            row_sign_ok[m] = first_sign_violation(&row, sign_tol).is_none();
            let sum: CompensatedSum = row.iter().copied().collect();
            // rounding in kappa is inherited from the operator row, so measure against it
            max_row_sum = max_row_sum.max(sum.value().abs() / row_scale(op.row(m)));
            kappa.extend_from_slice(&row);
        }
        MonotoneRepresentation { betas, kappa, kappa_star, row_sign_ok, max_row_sum }
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    /// `kappa_{m,0..=m}`.
    pub fn kappa_row(&self, m: usize) -> &[f64] {
        assert!(m >= 1 && m <= self.steps(), "row {m} out of range");
        let off = row_offset(m);
        &self.kappa[off..off + m + 1]
    }

    /// All rows have `kappa_{m,m} > 0`, nonpositive off-diagonals and zero sums.
    pub fn sign_ok(&self) -> bool {
        self.row_sign_ok[1..].iter().all(|&ok| ok) && self.max_row_sum <= 1e-12
    }

    /// `V^j = (U^j - beta_j U^{j-1}) / (1 - beta_j)`, `V^0 = U^0`.
    pub fn transform(&self, history: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(history.len());
        v.push(history[0]);
        for j in 1..history.len() {
            v.push((history[j] - self.betas[j] * history[j - 1]) / (1.0 - self.betas[j]));
        }
        v
    }

    /// `sum_j kappa_{m,j} V^j`; equals the operator applied to the history.
    pub fn apply(&self, history: &[f64], m: usize) -> Result<f64> {
        if history.len() < m + 1 {
            return Err(crate::Error::LengthMismatch { expected: m + 1, actual: history.len() });
        }
        let v = self.transform(&history[..=m]);
        let sum: CompensatedSum = self.kappa_row(m).iter().zip(&v).map(|(k, x)| k * x).collect();
        Ok(sum.value())
    }

    /// CSV with columns `j,beta_j,kappa_star_j`.
    pub fn write_betas_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "beta_j", "kappa_star_j"])?;
        for j in 0..=self.steps() {
            let ks = if j == 0 { f64::NAN } else { self.kappa_star[j] };
            out.write_record([j.to_string(), self.betas[j].to_string(), ks.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// CSV with columns `m,j,kappa_mj`.
    pub fn write_kappa_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["m", "j", "kappa_mj"])?;
        for m in 1..=self.steps() {
            for (j, v) in self.kappa_row(m).iter().enumerate() {
                out.write_record([m.to_string(), j.to_string(), v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InverseReport {
    pub nonneg: bool,
    pub min_entry: f64,
    pub max_entry: f64,
    /// Position `(m, j)` of the smallest entry.
    pub argmin: (usize, usize),
}

/// Inverts the operator (with the identity row for `U^0`) column by column
/// and checks the sign of every entry.
pub fn inverse_monotonicity_oracle(op: &DiscreteCaputoMatrix, exec: Exec) -> InverseReport {
    inverse_with_shift(op, 0.0, exec)
}

/// Same as [`inverse_monotonicity_oracle`] for `delta + shift` on rows `m >= 1`.
pub fn inverse_with_shift(op: &DiscreteCaputoMatrix, shift: f64, exec: Exec) -> InverseReport {
    let steps = op.steps();
    let n = steps + 1;
    let columns = map_range(exec, 0, n, |c| {
        let mut x = vec![0.0; n];
        x[c] = if c == 0 { 1.0 } else { 1.0 / (op.diag(c) + shift) };
        let (mut lo, mut lo_at, mut hi) = (x[c], c, x[c]);
        for i in c + 1..n {
            let row = op.row(i);
            let s: f64 = row[c..i].iter().zip(&x[c..i]).map(|(a, v)| a * v).sum();
            let d = op.diag(i) + shift;
            assert!(d > 0.0, "singular diagonal at row {i}");
            x[i] = -s / d;
            if x[i] < lo {
                lo = x[i];
                lo_at = i;
            }
            hi = hi.max(x[i]);
        }
        (lo, (lo_at, c), hi)
    });
    let mut report = InverseReport { nonneg: true, min_entry: f64::INFINITY, max_entry: f64::NEG_INFINITY, argmin: (0, 0) };
    for (lo, at, hi) in columns {
        if lo < report.min_entry {
            report.min_entry = lo;
            report.argmin = at;
        }
        report.max_entry = report.max_entry.max(hi);
    }
    report.nonneg = report.min_entry >= -1e-12 * report.max_entry;
    report
}

/// Forward solve of `(delta + shift) U^m = g^m`, `m = 1..=M`, with `U^0 = 0`.
/// `g` has `M + 1` entries; `g[0]` is ignored.
pub fn solve_shifted_scalar(op: &DiscreteCaputoMatrix, shift: f64, g: &[f64]) -> Vec<f64> {
    let steps = op.steps();
    let mut u = vec![0.0; steps + 1];
    for m in 1..=steps {
        let row = op.row(m);
        let hist: f64 = row[..m].iter().zip(&u[..m]).map(|(a, v)| a * v).sum();
        u[m] = (g[m] - hist) / (row[m] + shift);
    }
    u
}

/// Settings shared by the randomized trials.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrialSettings {
    pub trials: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
    /// Used to decide whether a run is covered by the mesh assumption or exploratory.
    pub assumptions: MeshAssumptionConfig,
}

impl Default for TrialSettings {
    fn default() -> Self {
        TrialSettings { trials: 1000, seed: 0, exec: Exec::default(), assumptions: MeshAssumptionConfig::default() }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Value above which a computed `U^m` counts as positive.
pub const VIOLATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    /// Trials in which some `U^m` exceeded the tolerance.
    pub violations: usize,
    /// Largest `U^m` over all trials.
    pub worst: f64,
    /// True when the step condition or the mesh assumption does not hold.
    pub exploratory: bool,
}

/// Draws `g^m` uniformly from `[-1, 0]`, solves `(delta - lambda) U = g`
/// and counts trials where some `U^m > 0`.
pub fn comparison_trial(op: &DiscreteCaputoMatrix, lambda: f64, settings: &TrialSettings) -> Result<ComparisonReport> {
    if !(lambda >= 0.0) {
        return invalid(format!("lambda must be >= 0, got {lambda}"));
    }
    let diag = analyze_mesh(op.mesh(), &settings.assumptions, op.alpha(), lambda)?;
    let steps = op.steps();
    let worst = map_range(settings.exec, 0, settings.trials, |t| {
        let mut rng = trial_rng(settings.seed, t);
        let g: Vec<f64> = (0..=steps).map(|_| -rng.gen::<f64>()).collect();
        let u = solve_shifted_scalar(op, -lambda, &g);
        u[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(ComparisonReport {
        lambda,
        trials: settings.trials,
        seed: settings.seed,
        violations: worst.iter().filter(|&&w| w > VIOLATION_TOL).count(),
        worst: worst.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        exploratory: !(diag.lambda_cond_ok && diag.a2_star()),
    })
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    /// Every `g^m` uniform on `[-1, 0]`.
    Dense,
    /// About one in eight entries nonzero.
    Sparse,
    /// A single negative entry.
    Spike,
}

#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub kind: TrialKind,
    /// Right-hand side `g^0..g^M` (all `<= 0`).
    pub g: Vec<f64>,
    /// First index with `U^m > 0`.
    pub m: usize,
    pub value: f64,
}

impl Counterexample {
    /// Re-solves `(delta + lambda) U = g` and confirms the violation.
    pub fn replay(&self, op: &DiscreteCaputoMatrix, lambda: f64) -> bool {
        let u = solve_shifted_scalar(op, lambda, &self.g);
        self.g.iter().all(|&v| v <= 0.0) && u.get(self.m).is_some_and(|&v| v > VIOLATION_TOL)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PlusLambdaReport {
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub counterexample: Option<Counterexample>,
    /// Smallest entry of `(delta + lambda)^{-1}`; negative entries mean
    /// some `g <= 0` does produce a positive solution.
    pub min_inverse_entry: f64,
}

/// Randomized search for `g <= 0` with `(delta + lambda) U = g` and some `U^m > 0`.
pub fn plus_lambda_probe(op: &DiscreteCaputoMatrix, lambda: f64, settings: &TrialSettings) -> Result<PlusLambdaReport> {
    if !(lambda >= 0.0) {
        return invalid(format!("lambda must be >= 0, got {lambda}"));
    }
    let steps = op.steps();
    let found = map_range(settings.exec, 0, settings.trials, |t| {
        let mut rng = trial_rng(settings.seed, t);
        let kind = [TrialKind::Dense, TrialKind::Sparse, TrialKind::Spike][t % 3];
        let mut g = vec![0.0; steps + 1];
        match kind {
            TrialKind::Dense => g[1..].iter_mut().for_each(|v| *v = -rng.gen::<f64>()),
            TrialKind::Sparse => g[1..].iter_mut().for_each(|v| {
                if rng.gen_ratio(1, 8) {
                    *v = -rng.gen::<f64>();
                }
            }),
            TrialKind::Spike => g[rng.gen_range(1..=steps)] = -1.0,
        }
        let u = solve_shifted_scalar(op, lambda, &g);
        u.iter()
            .position(|&v| v > VIOLATION_TOL)
            .map(|m| Counterexample { trial: t, kind, value: u[m], g, m })
    });
    let inverse = inverse_with_shift(op, lambda, settings.exec);
    Ok(PlusLambdaReport {
        lambda,
        trials: settings.trials,
        seed: settings.seed,
        counterexample: found.into_iter().flatten().next(),
        min_inverse_entry: inverse.min_entry,
    })
}

/// `U^j(tau_1; gamma) = ell_gamma tau_1 t_j^(alpha-1) (tau_1/t_j)^min(0, gamma)`.
#[derive(Clone, Debug, Serialize)]
pub struct BarrierProfile {
    pub gamma: f64,
    pub tau1: f64,
    pub sharp_ell: bool,
    /// Values for `j = 0..=M`; entry 0 is unused and set to 0.
    pub values: Vec<f64>,
}

/// Exponents within this distance of zero take the logarithmic `ell`.
const GAMMA_ZERO_TOL: f64 = 1e-12;

impl BarrierProfile {
    pub fn new(op: &DiscreteCaputoMatrix, gamma: f64, sharp_ell: bool) -> Self {
        Self::for_mesh(op.mesh(), op.alpha(), gamma, sharp_ell)
    }

    pub fn for_mesh(mesh: &TemporalMesh, alpha: f64, gamma: f64, sharp_ell: bool) -> Self {
        let tau1 = mesh.tau(1);
        let t_final = mesh.t_final();
        let log_case = gamma.abs() <= GAMMA_ZERO_TOL;
        let mut values = vec![0.0; mesh.steps() + 1];
        for (j, v) in values.iter_mut().enumerate().skip(1) {
            let tj = mesh.t(j);
            let ell = match (log_case, sharp_ell) {
                (false, _) => 1.0,
                (true, false) => 1.0 + (t_final / tau1).ln(),
                (true, true) => 1.0 + (tj / tau1).ln(),
            };
            *v = ell * tau1 * tj.powf(alpha - 1.0) * (tau1 / tj).powf(gamma.min(0.0));
        }
        BarrierProfile { gamma, tau1, sharp_ell, values }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierReport {
    pub lambda: f64,
    pub c_fit: f64,
    /// Index where `U^j / profile^j` peaks.
    pub argmax: usize,
    pub profile: BarrierProfile,
    pub solution: Vec<f64>,
}

/// Solves `(delta - lambda) U^j = (tau_1/t_j)^(gamma+1)`, `U^0 = 0`, and
/// fits `C = max_j U^j / profile^j`.
pub fn barrier_check(op: &DiscreteCaputoMatrix, lambda: f64, gamma: f64, sharp_ell: bool) -> Result<BarrierReport> {
    if !(lambda >= 0.0) {
        return invalid(format!("lambda must be >= 0, got {lambda}"));
    }
    op.mesh().check_step_condition(op.alpha(), lambda)?;
    let mesh = op.mesh();
    let tau1 = mesh.tau(1);
    let mut g = vec![0.0; mesh.steps() + 1];
    for (j, v) in g.iter_mut().enumerate().skip(1) {
        *v = (tau1 / mesh.t(j)).powf(gamma + 1.0);
    }
    let solution = solve_shifted_scalar(op, -lambda, &g);
    let profile = BarrierProfile::new(op, gamma, sharp_ell);
    let (argmax, c_fit) = (1..=mesh.steps())
        .map(|j| (j, solution[j] / profile.values[j]))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(BarrierReport { lambda, c_fit, argmax, profile, solution })
}
