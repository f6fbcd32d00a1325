//! Small numerical helpers shared across modules.

use statrs::function::gamma as sgamma;

/// Gamma function on the positive real axis.
#[inline]
pub fn gamma(x: f64) -> f64 {
    sgamma::gamma(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    sgamma::ln_gamma(x)
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated dot product of two equally long slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x * y)
        .collect::<CompensatedSum>()
        .value()
}

pub(crate) fn check_alpha(alpha: f64) -> crate::Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        crate::error::invalid(format!("fractional order alpha = {alpha} must lie in (0, 1)"))
    }
}
