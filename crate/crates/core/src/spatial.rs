//! Second-order finite differences for `L u = -(a(x) u')'` on `(0, X)` with
//! homogeneous Dirichlet conditions.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::numeric::CompensatedSum;

/// Uniform grid with `N` interior nodes `x_i = i h`, `h = X/(N+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid1D {
    length: f64,
    interior: usize,
}

impl SpatialGrid1D {
    pub fn new(length: f64, interior: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return invalid(format!("domain length X = {length} must be positive"));
        }
        if interior == 0 {
            return invalid("need at least one interior node");
        }
        Ok(Self { length, interior })
    }

    pub fn unit(interior: usize) -> Result<Self> {
        Self::new(1.0, interior)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of interior nodes N.
    pub fn len(&self) -> usize {
        self.interior
    }

    pub fn is_empty(&self) -> bool {
        self.interior == 0
    }

    pub fn h(&self) -> f64 {
        self.length / (self.interior + 1) as f64
    }

    /// Interior node `x_i`, `i = 1..=N`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.interior).map(|i| self.x(i)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (1..=self.interior).map(|i| f(self.x(i))).collect()
    }

    /// Discrete `L2(0, X)` inner product `h sum_i u_i w_i`.
    pub fn inner(&self, u: &[f64], w: &[f64]) -> f64 {
        self.h() * crate::numeric::dot(u, w)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Writes `x,value` including the two boundary zeros.
    pub fn write_csv<W: Write>(&self, u: &[f64], w: W) -> Result<()> {
        if u.len() != self.interior {
            return Err(Error::LengthMismatch {
                expected: self.interior,
                actual: u.len(),
            });
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "value"])?;
        wtr.write_record(["0".to_string(), "0".to_string()])?;
        for (i, v) in u.iter().enumerate() {
            wtr.write_record([format!("{:e}", self.x(i + 1)), format!("{v:e}")])?;
        }
        wtr.write_record([format!("{:e}", self.length), "0".to_string()])?;
        wtr.flush()?;
        Ok(())
    }
}

/// Tridiagonal matrix of `L_h`, with `a` sampled at the cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticOperator1D {
    grid: SpatialGrid1D,
    /// `a(x_{i-1/2})` for `i = 1..=N+1`.
    a_mid: Vec<f64>,
    diag: Vec<f64>,
    /// `off[i]` couples nodes `i` and `i+1` (0-based), length `N - 1`.
    off: Vec<f64>,
    constant: Option<f64>,
}

impl EllipticOperator1D {
    pub fn assemble(grid: SpatialGrid1D, a: impl Fn(f64) -> f64) -> Result<Self> {
        let h = grid.h();
        let n = grid.len();
        let a_mid: Vec<f64> = (0..=n).map(|k| a((k as f64 + 0.5) * h)).collect();
        if let Some((k, v)) = a_mid.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return invalid(format!(
                "diffusion coefficient must be positive; a({}) = {v}",
                (k as f64 + 0.5) * h
            ));
        }
        let h2 = h * h;
        let diag = (0..n).map(|i| (a_mid[i] + a_mid[i + 1]) / h2).collect();
        let off = (1..n).map(|i| -a_mid[i] / h2).collect();
        let constant = a_mid
            .iter()
            .all(|&v| v == a_mid[0])
            .then_some(a_mid[0]);
        Ok(Self {
            grid,
            a_mid,
            diag,
            off,
            constant,
        })
    }

    /// `-u''` scaled by a constant diffusivity.
    pub fn constant(grid: SpatialGrid1D, a: f64) -> Result<Self> {
        Self::assemble(grid, |_| a)
    }

    pub fn grid(&self) -> &SpatialGrid1D {
        &self.grid
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off_diag(&self) -> &[f64] {
        &self.off
    }

    pub fn midpoint_coefficients(&self) -> &[f64] {
        &self.a_mid
    }

    /// Diffusivity when `a` is constant.
    pub fn constant_coefficient(&self) -> Option<f64> {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `out = L_h u`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        assert_eq!(u.len(), n);
        assert_eq!(out.len(), n);
        for i in 0..n {
            let mut v = self.diag[i] * u[i];
            if i > 0 {
                v += self.off[i - 1] * u[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * u[i + 1];
            }
            out[i] = v;
        }
    }

    /// `out = |L_h| |u|`, the size of the terms cancelling in `L_h u`.
    pub fn apply_abs_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        assert_eq!(u.len(), n);
        assert_eq!(out.len(), n);
        for i in 0..n {
            let mut v = self.diag[i] * u[i].abs();
            if i > 0 {
                v += self.off[i - 1].abs() * u[i - 1].abs();
            }
            if i + 1 < n {
                v += self.off[i].abs() * u[i + 1].abs();
            }
            out[i] = v;
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(u, &mut out);
        out
    }

    /// Solves `(c I + L_h) u = g` for `c > 0`.
    pub fn solve_shifted(&self, c: f64, g: &[f64]) -> Result<Vec<f64>> {
        if !(c > 0.0) {
            return invalid(format!("shift c = {c} must be positive"));
        }
        if g.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: g.len(),
            });
        }
        let mut u = g.to_vec();
        self.thomas(|i| c + self.diag[i], &mut u);
        Ok(u)
    }

    /// Solves `(diag(shift) + L_h) u = g` in place; `shift >= 0` keeps the
    /// matrix diagonally dominant.
    pub fn solve_diag_shifted_in_place(&self, shift: &[f64], rhs: &mut [f64]) {
        assert_eq!(shift.len(), self.len());
        self.thomas(|i| shift[i] + self.diag[i], rhs);
    }

    /// Solves `(c I + L_h) u = rhs` in place.
    pub fn solve_shifted_in_place(&self, c: f64, rhs: &mut [f64]) {
        self.thomas(|i| c + self.diag[i], rhs);
    }

    fn thomas(&self, d: impl Fn(usize) -> f64, x: &mut [f64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        let mut cp = vec![0.0; n];
        let mut denom = d(0);
        if n > 1 {
            cp[0] = self.off[0] / denom;
        }
        x[0] /= denom;
        for i in 1..n {
            let l = self.off[i - 1];
            denom = d(i) - l * cp[i - 1];
            if i + 1 < n {
                cp[i] = self.off[i] / denom;
            }
            x[i] = (x[i] - l * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
    }

    /// Eigenpairs `(mu_k, v_k)`, `k = 1..=N`, with
    /// `mu_k = a (4/h^2) sin^2(k pi h / (2X))` and `v_k(x_i) = sin(k pi x_i / X)`.
    pub fn discrete_sine_eigenpairs(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        let a = self.constant.ok_or_else(|| {
            Error::InvalidInput("discrete sine eigenpairs need a constant diffusion coefficient".into())
        })?;
        let g = self.grid;
        Ok((1..=g.len())
            .map(|k| {
                let v = g.sample(|x| (k as f64 * PI * x / g.length()).sin());
                (self.eigenvalue(a, k), v)
            })
            .collect())
    }

    /// `mu_k` alone (constant coefficient only).
    pub fn sine_eigenvalue(&self, k: usize) -> Result<f64> {
        let a = self.constant.ok_or_else(|| {
            Error::InvalidInput("discrete sine eigenvalues need a constant diffusion coefficient".into())
        })?;
        Ok(self.eigenvalue(a, k))
    }

    fn eigenvalue(&self, a: f64, k: usize) -> f64 {
        let h = self.grid.h();
        let s = (k as f64 * PI * h / (2.0 * self.grid.length())).sin();
        a * 4.0 / (h * h) * s * s
    }
}

/// Coefficients of `u` in the discrete sine basis:
/// `u_i = sum_k c_k sin(k pi i / (N+1))`.
pub fn sine_coefficients(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let np1 = (n + 1) as f64;
    (1..=n)
        .map(|k| {
            let s: CompensatedSum = u
                .iter()
                .enumerate()
                .map(|(i, &ui)| ui * (k as f64 * PI * (i + 1) as f64 / np1).sin())
                .collect();
            2.0 / np1 * s.value()
        })
        .collect()
}
