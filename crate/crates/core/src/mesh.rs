//! Temporal meshes and the mesh assumptions used by the stability theory.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{check_alpha, gamma};

/// Relative slack used when comparing neighbouring step ratios; graded meshes
/// with r = 1 produce ratios that differ from one only by rounding.
const RATIO_SLACK: f64 = 1e-12;

/// A temporal grid `0 = t_0 < t_1 < ... < t_M = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMesh {
    points: Vec<f64>,
    grading: Option<f64>,
}

impl TemporalMesh {
    /// Graded mesh `t_j = T (j/M)^r`.
    pub fn graded(t_final: f64, steps: usize, r: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return invalid(format!("final time T = {t_final} must be positive"));
        }
        if steps == 0 {
            return invalid("number of time steps M must be at least 1");
        }
        if !(r >= 1.0 && r.is_finite()) {
            return invalid(format!("grading exponent r = {r} must be >= 1"));
        }
        let m = steps as f64;
        let ln_m = m.ln();
        let mut points = Vec::with_capacity(steps + 1);
        points.push(0.0);
        for j in 1..steps {
            let t = if r == 1.0 {
                t_final * (j as f64 / m)
            } else {
                t_final * (r * ((j as f64).ln() - ln_m)).exp()
            };
            points.push(t);
        }
        points.push(t_final);
        Ok(Self {
            points,
            grading: Some(r),
        })
    }

    pub fn uniform(t_final: f64, steps: usize) -> Result<Self> {
        Self::graded(t_final, steps, 1.0)
    }

    /// Arbitrary mesh from its points; must start at zero and increase strictly.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return invalid("a mesh needs at least two points");
        }
        if points[0] != 0.0 {
            return invalid(format!("mesh must start at t_0 = 0, got {}", points[0]));
        }
        for (j, w) in points.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return invalid(format!(
                    "mesh points must increase strictly (t_{} = {}, t_{} = {})",
                    j,
                    w[0],
                    j + 1,
                    w[1]
                ));
            }
        }
        Ok(Self {
            points,
            grading: None,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        self.points[j]
    }

    /// Number of steps M.
    #[inline]
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    #[inline]
    pub fn t_final(&self) -> f64 {
        self.points[self.steps()]
    }

    /// Grading exponent when the mesh was built by [`TemporalMesh::graded`].
    pub fn grading(&self) -> Option<f64> {
        self.grading
    }

    /// Step `tau_j = t_j - t_{j-1}` for `1 <= j <= M`.
    #[inline]
    pub fn tau(&self, j: usize) -> f64 {
        self.points[j] - self.points[j - 1]
    }

    pub fn taus(&self) -> Vec<f64> {
        (1..=self.steps()).map(|j| self.tau(j)).collect()
    }

    /// Ratio `rho_j = tau_j / tau_{j-1}` for `2 <= j <= M`.
    #[inline]
    pub fn rho(&self, j: usize) -> f64 {
        self.tau(j) / self.tau(j - 1)
    }

    /// Largest admissible Lipschitz constant for the step condition
    /// `lambda * tau_j^alpha < 1/Gamma(2-alpha)` (the bound itself is excluded).
    pub fn lambda_cap(&self, alpha: f64) -> f64 {
        let tau_max = (1..=self.steps()).map(|j| self.tau(j)).fold(0.0, f64::max);
        1.0 / (gamma(2.0 - alpha) * tau_max.powf(alpha))
    }

    /// First step violating `lambda * tau_j^alpha < 1/Gamma(2-alpha)`, if any.
    pub fn check_step_condition(&self, alpha: f64, lambda: f64) -> Result<()> {
        if lambda <= 0.0 {
            return Ok(());
        }
        let cap = 1.0 / gamma(2.0 - alpha);
        for j in 1..=self.steps() {
            let value = lambda * self.tau(j).powf(alpha);
            if value >= cap {
                return Err(Error::StepCondition {
                    step: j,
                    value,
                    cap,
                });
            }
        }
        Ok(())
    }

    /// Writes `j,t_j,tau_j,rho_j`; undefined entries are left empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "t_j", "tau_j", "rho_j"])?;
        for j in 0..=self.steps() {
            let tau = if j >= 1 {
                format!("{:e}", self.tau(j))
            } else {
                String::new()
            };
            let rho = if j >= 2 {
                format!("{:e}", self.rho(j))
            } else {
                String::new()
            };
            wtr.write_record([j.to_string(), format!("{:e}", self.t(j)), tau, rho])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a mesh written by [`TemporalMesh::write_csv`]. Only `j` and `t_j`
    /// are used; the derived columns are recomputed.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::InvalidInput(format!("mesh CSV is missing column `{name}`")))
        };
        let (jc, tc) = (col("j")?, col("t_j")?);
        let mut points = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                rec.get(c)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("mesh CSV row {row}: {e}")))
            };
            let j = parse(jc)?;
            if j != row as f64 {
                return invalid(format!("mesh CSV row {row} has j = {j}"));
            }
            points.push(parse(tc)?);
        }
        Self::from_points(points)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Mesh-ratio bound used by the A2 check.
///
/// `sigma_star` is an external constant in (0, 1) with no closed form; the
/// ratio bound is `rho_star = 2/(1 - sigma_star) - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshAssumptionConfig {
    pub sigma_star: f64,
}

impl Default for MeshAssumptionConfig {
    /// `sigma_star = 1/2`, i.e. ratios up to 3.
    fn default() -> Self {
        Self { sigma_star: 0.5 }
    }
}

impl MeshAssumptionConfig {
    pub fn new(sigma_star: f64) -> Result<Self> {
        if !(sigma_star > 0.0 && sigma_star < 1.0) {
            return invalid(format!("sigma_star = {sigma_star} must lie in (0, 1)"));
        }
        Ok(Self { sigma_star })
    }

    /// Config whose ratio bound equals `rho_star` (> 1).
    pub fn with_rho_bound(rho_star: f64) -> Result<Self> {
        if !(rho_star > 1.0) {
            return invalid(format!("ratio bound {rho_star} must exceed 1"));
        }
        Self::new(1.0 - 2.0 / (rho_star + 1.0))
    }

    pub fn rho_star(&self) -> f64 {
        2.0 / (1.0 - self.sigma_star) - 1.0
    }
}

/// Min/max over j of the quantities whose boundedness expresses A3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A3Constants {
    /// `tau_1 * M^r / T`, present when the grading exponent is known.
    pub tau1_scaled: Option<f64>,
    /// Bracket of `tau_j * j / t_j`.
    pub step_ratio: (f64, f64),
    /// Bracket of `t_j / (tau_1 * j^r)`, present when the grading exponent is known.
    pub growth_ratio: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDiagnostics {
    pub taus: Vec<f64>,
    /// `rho_j` for `j = 2..=M`.
    pub rhos: Vec<f64>,
    pub rho_star: f64,
    /// Smallest K with `1 <= rho_{j+1} <= rho_j <= rho_star` for all `j >= K+1`;
    /// `None` when A2 fails for every `K < M`.
    pub a2_k: Option<usize>,
    pub a3: A3Constants,
    pub lambda: f64,
    pub lambda_cond_ok: bool,
}

impl MeshDiagnostics {
    /// A2 with K = 1.
    pub fn a2_star(&self) -> bool {
        self.a2_k == Some(1)
    }
}

pub fn analyze_mesh(
    mesh: &TemporalMesh,
    cfg: &MeshAssumptionConfig,
    alpha: f64,
    lambda: f64,
) -> Result<MeshDiagnostics> {
    check_alpha(alpha)?;
    if !(cfg.sigma_star > 0.0 && cfg.sigma_star < 1.0) {
        return invalid(format!("sigma_star = {} must lie in (0, 1)", cfg.sigma_star));
    }
    if !(lambda >= 0.0) {
        return invalid(format!("Lipschitz constant lambda = {lambda} must be >= 0"));
    }
    let m = mesh.steps();
    let taus = mesh.taus();
    let rhos: Vec<f64> = (2..=m).map(|j| mesh.rho(j)).collect();
    let rho_star = cfg.rho_star();

    // ok[j] says whether index j satisfies its share of A2.
    let rho_at = |j: usize| rhos[j - 2];
    let index_ok = |j: usize| {
        let r = rho_at(j);
        let upper = r <= rho_star * (1.0 + RATIO_SLACK);
        let lower = r >= 1.0 - RATIO_SLACK;
        let mono = j == m || rho_at(j + 1) <= r * (1.0 + RATIO_SLACK);
        upper && lower && mono
    };
    let mut k = m.max(1);
    while k > 1 && index_ok(k) {
        k -= 1;
    }
    let a2_k = if k < m || m == 1 { Some(k) } else { None };

    let t_final = mesh.t_final();
    let tau1 = mesh.tau(1);
    let mut step_ratio = (f64::INFINITY, f64::NEG_INFINITY);
    let mut growth = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 1..=m {
        let q = mesh.tau(j) * j as f64 / mesh.t(j);
        step_ratio = (step_ratio.0.min(q), step_ratio.1.max(q));
        if let Some(r) = mesh.grading() {
            let g = mesh.t(j) / (tau1 * (j as f64).powf(r));
            growth = (growth.0.min(g), growth.1.max(g));
        }
    }
    let a3 = A3Constants {
        tau1_scaled: mesh
            .grading()
            .map(|r| tau1 * (m as f64).powf(r) / t_final),
        step_ratio,
        growth_ratio: mesh.grading().map(|_| growth),
    };

    Ok(MeshDiagnostics {
        taus,
        rhos,
        rho_star,
        a2_k,
        a3,
        lambda,
        lambda_cond_ok: mesh.check_step_condition(alpha, lambda).is_ok(),
    })
}
