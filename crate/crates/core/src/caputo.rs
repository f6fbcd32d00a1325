//! Discrete Caputo operators on nonuniform meshes.
//!
//! Both operators are lower-triangular: `delta U^m = sum_{j<=m} a_{m,j} U^j`.
//! The L2 flavour differentiates the piecewise-quadratic interpolant of the
//! history (linear on the first interval when `m = 1`, and the quadratic
//! through `t_{m-2}, t_{m-1}, t_m` on the last interval otherwise); the L1
//! flavour uses the piecewise-linear interpolant everywhere. The kernel
//! integrals are evaluated in closed form.

use std::borrow::Cow;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::TemporalMesh;
use crate::numeric::{check_alpha, dot, gamma, CompensatedSum};
use crate::par::{self, Exec};

/// Below this value of `tau/(t_m - t_{k-1})` the interval moments are summed
/// from their binomial series instead of differencing nearby powers.
const SERIES_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    L2,
    L1,
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Flavor::L2),
            "l1" => Ok(Flavor::L1),
            other => invalid(format!("unknown operator flavor `{other}` (expected l2 or l1)")),
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::L2 => "l2",
            Flavor::L1 => "l1",
        })
    }
}

/// Moments of the kernel `(t_m - s)^{-alpha}` over `(a, b)`:
/// `I0 = int (t_m - s)^{-alpha} ds`, `I1 = int (t_m - s)^{-alpha} (s - a) ds`.
/// The flag reports whether the cancellation guard was used.
fn interval_moments(tm: f64, a: f64, b: f64, alpha: f64) -> (f64, f64, bool) {
    let far = tm - a;
    let near = (tm - b).max(0.0);
    let tau = b - a;
    let x = tau / far;
    if x <= SERIES_THRESHOLD {
        // (far - y)^{-alpha} = far^{-alpha} sum_n (alpha)_n / n! (y/far)^n
        let mut c = 1.0;
        let mut s0 = CompensatedSum::new();
        let mut s1 = CompensatedSum::new();
        for n in 0..200 {
            let nf = n as f64;
            s0.add(c / (nf + 1.0));
            s1.add(c / (nf + 2.0));
            c *= (alpha + nf) / (nf + 1.0) * x;
            if c < 1e-18 {
                break;
            }
        }
        let scale = far.powf(-alpha) * tau;
        (scale * s0.value(), scale * tau * s1.value(), true)
    } else {
        let p1 = 1.0 - alpha;
        let p2 = 2.0 - alpha;
        let i0 = (far.powf(p1) - near.powf(p1)) / p1;
        let i1 = far * i0 - (far.powf(p2) - near.powf(p2)) / p2;
        (i0, i1, false)
    }
}

/// Computes rows of the operator on demand, without storing the matrix.
#[derive(Debug, Clone)]
pub struct RowAssembler<'a> {
    mesh: &'a TemporalMesh,
    alpha: f64,
    flavor: Flavor,
    inv_gamma: f64,
}

impl<'a> RowAssembler<'a> {
    pub fn new(mesh: &'a TemporalMesh, alpha: f64, flavor: Flavor) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            mesh,
            alpha,
            flavor,
            inv_gamma: 1.0 / gamma(1.0 - alpha),
        })
    }

    /// Row `m` (length `m + 1`) and the number of guarded intervals.
    pub fn row_with_stats(&self, m: usize) -> (Vec<f64>, usize) {
        assert!(m >= 1 && m <= self.mesh.steps(), "row index {m} out of range");
        let t = self.mesh.points();
        let tm = t[m];
        let mut acc = vec![CompensatedSum::new(); m + 1];
        let mut guarded = 0;
        for k in 1..=m {
            let (a, b) = (t[k - 1], t[k]);
            let (i0, i1, g) = interval_moments(tm, a, b, self.alpha);
            guarded += g as usize;
            let linear = self.flavor == Flavor::L1 || m == 1;
            if linear {
                let w = i0 / (b - a);
                acc[k].add(w);
                acc[k - 1].add(-w);
                continue;
            }
            let nodes = if k < m {
                [k - 1, k, k + 1]
            } else {
                [k - 2, k - 1, k]
            };
            for i in 0..3 {
                let xi = t[nodes[i]];
                let o0 = t[nodes[(i + 1) % 3]];
                let o1 = t[nodes[(i + 2) % 3]];
                let den = (xi - o0) * (xi - o1);
                // derivative of the Lagrange basis: (2s - o0 - o1)/den = p + q (s - a)
                let p = ((a - o0) + (a - o1)) / den;
                let q = 2.0 / den;
                acc[nodes[i]].add(p * i0 + q * i1);
            }
        }
        let row = acc.iter().map(|s| s.value() * self.inv_gamma).collect();
        (row, guarded)
    }

    pub fn row(&self, m: usize) -> Vec<f64> {
        self.row_with_stats(m).0
    }
}

/// Row access shared by the stored matrix and the streaming assembler.
pub trait CaputoRows: Sync {
    fn alpha(&self) -> f64;
    fn flavor(&self) -> Flavor;
    fn mesh(&self) -> &TemporalMesh;
    fn row(&self, m: usize) -> Cow<'_, [f64]>;
}

impl CaputoRows for RowAssembler<'_> {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn flavor(&self) -> Flavor {
        self.flavor
    }
    fn mesh(&self) -> &TemporalMesh {
        self.mesh
    }
    fn row(&self, m: usize) -> Cow<'_, [f64]> {
        Cow::Owned(RowAssembler::row(self, m))
    }
}

/// Lower-triangular coefficient matrix of a discrete Caputo operator,
/// rows `m = 1..=M` packed contiguously (row `m` holds `a_{m,0..=m}`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCaputoMatrix {
    alpha: f64,
    flavor: Flavor,
    mesh: TemporalMesh,
    coeffs: Vec<f64>,
    guarded_intervals: usize,
}

#[inline]
fn row_offset(m: usize) -> usize {
    (m - 1) * (m + 2) / 2
}

impl DiscreteCaputoMatrix {
    pub fn assemble(mesh: &TemporalMesh, alpha: f64, flavor: Flavor) -> Result<Self> {
        Self::assemble_with(mesh, alpha, flavor, Exec::default())
    }

    pub fn assemble_with(
        mesh: &TemporalMesh,
        alpha: f64,
        flavor: Flavor,
        exec: Exec,
    ) -> Result<Self> {
        let asm = RowAssembler::new(mesh, alpha, flavor)?;
        let m_max = mesh.steps();
        let rows = par::map_range(exec, 1, m_max + 1, |m| asm.row_with_stats(m));
        let mut coeffs = Vec::with_capacity(row_offset(m_max + 1));
        let mut guarded_intervals = 0;
        for (row, g) in rows {
            coeffs.extend_from_slice(&row);
            guarded_intervals += g;
        }
        if guarded_intervals > 0 {
            log::debug!(
                "{flavor} assembly (alpha = {alpha}, M = {m_max}): {guarded_intervals} intervals used the cancellation guard"
            );
        }
        Ok(Self {
            alpha,
            flavor,
            mesh: mesh.clone(),
            coeffs,
            guarded_intervals,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn mesh(&self) -> &TemporalMesh {
        &self.mesh
    }

    pub fn steps(&self) -> usize {
        self.mesh.steps()
    }

    /// Intervals whose moments came from the series branch.
    pub fn guarded_intervals(&self) -> usize {
        self.guarded_intervals
    }

    /// `a_{m,0..=m}` for `1 <= m <= M`.
    #[inline]
    pub fn row(&self, m: usize) -> &[f64] {
        let o = row_offset(m);
        &self.coeffs[o..o + m + 1]
    }

    #[inline]
    pub fn get(&self, m: usize, j: usize) -> f64 {
        if m == 0 {
            return if j == 0 { 1.0 } else { 0.0 };
        }
        if j > m {
            0.0
        } else {
            self.row(m)[j]
        }
    }

    #[inline]
    pub fn diag(&self, m: usize) -> f64 {
        self.row(m)[m]
    }

    /// `delta U^m` for the history `U^0..U^m`.
    pub fn apply_history(&self, history: &[f64], m: usize) -> Result<f64> {
        if m == 0 || m > self.steps() {
            return invalid(format!("row index {m} outside 1..={}", self.steps()));
        }
        if history.len() != m + 1 {
            return Err(Error::LengthMismatch {
                expected: m + 1,
                actual: history.len(),
            });
        }
        Ok(dot(self.row(m), history))
    }

    /// Checks row sums, the diagonal lower bound and (for L1) the Z-pattern.
    pub fn validate(&self) -> OperatorChecks {
        let cap = 1.0 / gamma(2.0 - self.alpha);
        let mut checks = OperatorChecks {
            max_row_sum: 0.0,
            row_sums_ok: true,
            diag_bound_ok: true,
            min_diag_margin: f64::INFINITY,
            z_pattern: true,
        };
        for m in 1..=self.steps() {
            let row = self.row(m);
            let scale = row.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            let sum: f64 = row.iter().copied().collect::<CompensatedSum>().value();
            let rel = sum.abs() / scale;
            checks.max_row_sum = checks.max_row_sum.max(rel);
            checks.row_sums_ok &= rel <= 1e-12;
            let bound = cap * self.mesh.tau(m).powf(-self.alpha);
            let margin = row[m] / bound - 1.0;
            checks.min_diag_margin = checks.min_diag_margin.min(margin);
            checks.diag_bound_ok &= margin >= -1e-12;
            checks.z_pattern &= row[..m].iter().all(|&a| a <= 1e-14 * scale);
        }
        checks
    }

    /// Writes `m,j,a_mj` for every stored entry.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["m", "j", "a_mj"])?;
        for m in 1..=self.steps() {
            for (j, a) in self.row(m).iter().enumerate() {
                wtr.write_record([m.to_string(), j.to_string(), format!("{a:e}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

impl CaputoRows for DiscreteCaputoMatrix {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn flavor(&self) -> Flavor {
        self.flavor
    }
    fn mesh(&self) -> &TemporalMesh {
        &self.mesh
    }
    fn row(&self, m: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(DiscreteCaputoMatrix::row(self, m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorChecks {
    /// Largest `|sum_j a_{m,j}| / max_j |a_{m,j}|`.
    pub max_row_sum: f64,
    pub row_sums_ok: bool,
    pub diag_bound_ok: bool,
    /// Smallest `a_{m,m} Gamma(2-alpha) tau_m^alpha - 1`.
    pub min_diag_margin: f64,
    /// All off-diagonal entries non-positive.
    pub z_pattern: bool,
}

pub fn assemble_l2(mesh: &TemporalMesh, alpha: f64) -> Result<DiscreteCaputoMatrix> {
    DiscreteCaputoMatrix::assemble(mesh, alpha, Flavor::L2)
}

pub fn assemble_l1(mesh: &TemporalMesh, alpha: f64) -> Result<DiscreteCaputoMatrix> {
    DiscreteCaputoMatrix::assemble(mesh, alpha, Flavor::L1)
}

/// Caputo derivative of `t^sigma`: `Gamma(sigma+1)/Gamma(sigma+1-alpha) t^{sigma-alpha}`.
pub fn caputo_monomial(sigma: f64, alpha: f64, t: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(sigma > 0.0) {
        return invalid(format!(
            "monomial exponent sigma = {sigma} must be positive (constants have zero derivative)"
        ));
    }
    if !(t > 0.0) {
        return invalid(format!("evaluation time t = {t} must be positive"));
    }
    Ok(gamma(sigma + 1.0) / gamma(sigma + 1.0 - alpha) * t.powf(sigma - alpha))
}

/// `c_0 + sum_i c_i t^{sigma_i}` with all `sigma_i > 0`; its Caputo
/// derivative is known in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialSum {
    pub constant: f64,
    pub terms: Vec<(f64, f64)>,
}

impl MonomialSum {
    pub fn monomial(sigma: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(1.0, sigma)],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.constant + self.terms.iter().map(|&(c, s)| c * t.powf(s)).sum::<f64>()
    }

    pub fn caputo(&self, alpha: f64, t: f64) -> Result<f64> {
        let mut s = CompensatedSum::new();
        for &(c, sigma) in &self.terms {
            s.add(c * caputo_monomial(sigma, alpha, t)?);
        }
        Ok(s.value())
    }

    fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.constant != 0.0 {
            parts.push(format!("{}", self.constant));
        }
        for &(c, s) in &self.terms {
            parts.push(format!("{c}*t^{s}"));
        }
        if parts.is_empty() {
            "0".into()
        } else {
            parts.join(" + ")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationProfile {
    pub function: String,
    pub gamma: f64,
    /// `r^m` for `m = 1..=M` (index 0 holds `m = 1`).
    pub errors: Vec<f64>,
    /// `max_m |r^m| (t_m / tau_1)^{gamma+1}`.
    pub fitted_constant: f64,
}

impl TruncationProfile {
    pub fn max_abs(&self) -> f64 {
        self.errors.iter().fold(0.0, |a, &e| a.max(e.abs()))
    }
}

/// Truncation error `delta u(t_m) - D^alpha u(t_m)` of the operator on `u`.
pub fn truncation_profile(
    op: &DiscreteCaputoMatrix,
    u: &MonomialSum,
    gamma_exp: f64,
) -> Result<TruncationProfile> {
    let mesh = op.mesh();
    let samples: Vec<f64> = mesh.points().iter().map(|&t| u.eval(t)).collect();
    let tau1 = mesh.tau(1);
    let mut errors = Vec::with_capacity(op.steps());
    let mut fitted: f64 = 0.0;
    for m in 1..=op.steps() {
        let r = op.apply_history(&samples[..=m], m)? - u.caputo(op.alpha(), mesh.t(m))?;
        fitted = fitted.max(r.abs() * (mesh.t(m) / tau1).powf(gamma_exp + 1.0));
        errors.push(r);
    }
    Ok(TruncationProfile {
        function: u.label(),
        gamma: gamma_exp,
        errors,
        fitted_constant: fitted,
    })
}
