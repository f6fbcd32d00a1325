//! One-parameter Mittag-Leffler function `E_alpha(x)` on the negative real
//! axis.
//!
//! Three branches:
//!
//! * `|x| <= SERIES_SWITCH`: the Taylor series `sum x^n / Gamma(alpha n + 1)`
//!   summed in multiprecision. In double precision the alternating terms
//!   peak near `exp(|x|^(1/alpha))` and wipe out every digit long before
//!   `|x| = 5` when `alpha` is small, so the working precision is chosen from
//!   that estimated loss. When the loss exceeds `MAX_SERIES_LOSS_BITS` the
//!   integral branch is used instead.
//! * `SERIES_SWITCH < |x| <= ASYMPTOTIC_SWITCH`: adaptive Gauss-Kronrod
//!   quadrature of the spectral integral, whose integrand is positive.
//! * `|x| > ASYMPTOTIC_SWITCH`: the asymptotic expansion
//!   `-sum_{n>=1} x^(-n) / Gamma(1 - alpha n)` with optimal truncation.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

use astro_float::{BigFloat, Consts, RoundingMode, Sign};

use crate::error::{invalid, Result};
use crate::numeric::{gamma, ln_gamma};

/// Largest `|x|` handled by the series branch.
pub const SERIES_SWITCH: f64 = 5.0;

/// Cancellation budget of the series branch, in bits.
pub const MAX_SERIES_LOSS_BITS: f64 = 400.0;

/// Beyond this `|x|` the asymptotic expansion is used.
pub const ASYMPTOTIC_SWITCH: f64 = 1.0e4;

/// Bits of accuracy the series result carries beyond the cancellation loss.
const SERIES_TARGET_BITS: f64 = 72.0;

const RM: RoundingMode = RoundingMode::ToEven;

/// `E_alpha(x)` for `alpha` in (0, 1] and `x <= 0`.
pub fn ml_neg(alpha: f64, x: f64) -> Result<f64> {
    check_args(alpha, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if alpha == 1.0 {
        return Ok(x.exp());
    }
    let y = -x;
    if y <= SERIES_SWITCH && series_loss_bits(alpha, x) <= MAX_SERIES_LOSS_BITS {
        ml_series(alpha, x)
    } else if y <= ASYMPTOTIC_SWITCH {
        ml_integral(alpha, x)
    } else {
        ml_asymptotic(alpha, x)
    }
}

fn check_args(alpha: f64, x: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("Mittag-Leffler order must lie in (0, 1], got {alpha}"));
    }
    if !(x <= 0.0) {
        return invalid(format!("Mittag-Leffler argument must be <= 0, got {x}"));
    }
    Ok(())
}

/// Lower bound on `ln E_alpha(-y)`, from `E_alpha(-y) >= 1 / (1 + Gamma(1 - alpha) y)`.
fn ln_lower_bound(alpha: f64, y: f64) -> f64 {
    if alpha == 1.0 {
        -y
    } else {
        -(gamma(1.0 - alpha) * y).ln_1p()
    }
}

fn ln_term(alpha: f64, ln_y: f64, n: usize) -> f64 {
    n as f64 * ln_y - ln_gamma(alpha * n as f64 + 1.0)
}

/// Estimated number of bits lost to cancellation when summing the series at `x`.
pub fn series_loss_bits(alpha: f64, x: f64) -> f64 {
    let y = -x;
    if y <= 0.0 {
        return 0.0;
    }
    let (peak, _) = series_extent(alpha, y, 0.0);
    ((peak - ln_lower_bound(alpha, y)) / LN_2).max(0.0)
}

/// Returns the largest log-term and the number of terms needed so that the
/// tail drops `extra_bits` below the lower bound of the result.
fn series_extent(alpha: f64, y: f64, extra_bits: f64) -> (f64, usize) {
    let ln_y = y.ln();
    let floor = ln_lower_bound(alpha, y) - extra_bits * LN_2;
    let mut peak = 0.0f64;
    let mut prev = 0.0f64;
    let mut n = 1usize;
    loop {
        let lt = ln_term(alpha, ln_y, n);
        peak = peak.max(lt);
        if lt < prev && lt < floor {
            return (peak, n + 1);
        }
        prev = lt;
        n += 1;
    }
}

/// Taylor series of `E_alpha(x)` summed in multiprecision arithmetic.
///
/// Accurate for any `x <= 0`, but cost grows like `exp(|x|^(1/alpha))` bits.
pub fn ml_series(alpha: f64, x: f64) -> Result<f64> {
    check_args(alpha, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    let y = -x;
    let (peak, terms) = series_extent(alpha, y, SERIES_TARGET_BITS);
    let loss = ((peak - ln_lower_bound(alpha, y)) / LN_2).max(0.0);
    let prec = (loss + SERIES_TARGET_BITS + 32.0).ceil() as usize;
    let (edge_prec, edge_terms) = series_budget(alpha);
    let table = coefficient_table(alpha, prec.max(edge_prec), terms.max(edge_terms));
    let xb = BigFloat::from_f64(x, table.prec);
    let mut acc = BigFloat::new(table.prec);
    for c in table.coeffs[..terms].iter().rev() {
        acc = acc.mul(&xb, table.prec, RM).add(c, table.prec, RM);
    }
    to_f64(&acc)
}

/// Precision and term count covering every argument `ml_neg` sends to the
/// series for this order, so the table is built once.
fn series_budget(alpha: f64) -> (usize, usize) {
    let mut edge = SERIES_SWITCH;
    if series_loss_bits(alpha, -edge) > MAX_SERIES_LOSS_BITS {
        let (mut lo, mut hi) = (0.0, edge);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if series_loss_bits(alpha, -mid) > MAX_SERIES_LOSS_BITS {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        edge = lo;
    }
    if edge <= 0.0 {
        return (0, 0);
    }
    let (peak, terms) = series_extent(alpha, edge, SERIES_TARGET_BITS);
    let loss = ((peak - ln_lower_bound(alpha, edge)) / LN_2).max(0.0);
    ((loss + SERIES_TARGET_BITS + 32.0).ceil() as usize, terms)
}

fn to_f64(v: &BigFloat) -> Result<f64> {
    if v.is_zero() {
        return Ok(0.0);
    }
    let Some((mantissa, _, sign, exponent, _)) = v.as_raw_parts() else {
        return invalid("multiprecision Mittag-Leffler sum overflowed");
    };
    let top = *mantissa.last().expect("nonzero mantissa");
    let word_bits = 8 * std::mem::size_of_val(&top) as i32;
    let mag = top as f64 * 2f64.powi(exponent - word_bits);
    Ok(if sign == Sign::Neg { -mag } else { mag })
}

/// `1 / Gamma(alpha n + 1)` for `n = 0, 1, ...`, stored at precision `prec`.
struct CoefficientTable {
    prec: usize,
    coeffs: Vec<BigFloat>,
}

type TableCache = Mutex<HashMap<u64, Arc<CoefficientTable>>>;

fn coefficient_table(alpha: f64, prec: usize, terms: usize) -> Arc<CoefficientTable> {
    static CACHE: OnceLock<TableCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    let key = alpha.to_bits();
    if let Some(t) = guard.get(&key) {
        if t.prec >= prec && t.coeffs.len() >= terms {
            return Arc::clone(t);
        }
    }
    let (prec, mut coeffs) = match guard.get(&key) {
        Some(t) if t.prec >= prec => (t.prec, t.coeffs.clone()),
        _ => (prec.div_ceil(128) * 128, Vec::new()),
    };
    let spouge = Spouge::new(prec);
    let alpha_b = BigFloat::from_f64(alpha, spouge.wp);
    let mut cc = Consts::new().expect("astro-float constants");
    for n in coeffs.len()..terms {
        let z = alpha_b.mul(&BigFloat::from_f64(n as f64, 64), spouge.wp, RM);
        let mut c = spouge.recip_gamma_plus_one(&z, &mut cc);
        c.set_precision(prec, RM).expect("valid precision");
        coeffs.push(c);
    }
    let table = Arc::new(CoefficientTable { prec, coeffs });
    guard.insert(key, Arc::clone(&table));
    table
}

/// Spouge's approximation
/// `Gamma(z+1) = (z+a)^(z+1/2) e^-(z+a) [c_0 + sum_k c_k / (z+k)]`
/// with relative error below `(2 pi)^-(a+1/2)`.
struct Spouge {
    a: usize,
    wp: usize,
    coeffs: Vec<BigFloat>,
}

impl Spouge {
    fn new(bits: usize) -> Self {
        let a = (bits as f64 / (2.0 * PI).log2()).ceil() as usize + 2;
        // the c_k alternate in sign and reach roughly e^a in size
        let wp = bits + 3 * a + 64;
        let mut cc = Consts::new().expect("astro-float constants");
        let two_pi = cc.pi(wp, RM).mul(&BigFloat::from_f64(2.0, 64), wp, RM);
        let mut coeffs = vec![two_pi.sqrt(wp, RM)];
        let half = BigFloat::from_f64(0.5, 64);
        let mut fact = BigFloat::from_f64(1.0, wp);
        for k in 1..a {
            if k > 1 {
                fact = fact.mul(&BigFloat::from_f64((k - 1) as f64, 64), wp, RM);
            }
            let base = BigFloat::from_f64((a - k) as f64, 64);
            let power = BigFloat::from_f64(k as f64, 64).sub(&half, wp, RM);
            let mut c = base
                .pow(&power, wp, RM, &mut cc)
                .mul(&base.exp(wp, RM, &mut cc), wp, RM)
                .div(&fact, wp, RM);
            if k % 2 == 0 {
                c = c.neg();
            }
            coeffs.push(c);
        }
        Spouge { a, wp, coeffs }
    }

    fn recip_gamma_plus_one(&self, z: &BigFloat, cc: &mut Consts) -> BigFloat {
        let wp = self.wp;
        let mut sum = self.coeffs[0].clone();
        for (k, c) in self.coeffs.iter().enumerate().skip(1) {
            let d = z.add(&BigFloat::from_f64(k as f64, 64), wp, RM);
            sum = sum.add(&c.div(&d, wp, RM), wp, RM);
        }
        let za = z.add(&BigFloat::from_f64(self.a as f64, 64), wp, RM);
        let zh = z.add(&BigFloat::from_f64(0.5, 64), wp, RM);
        // exp((z + a) - (z + 1/2) ln(z + a)) / sum
        let expo = za.sub(&zh.mul(&za.ln(wp, RM, cc), wp, RM), wp, RM);
        expo.exp(wp, RM, cc).div(&sum, wp, RM)
    }
}

/// `E_alpha(x)` from the spectral representation
/// `E_alpha(-t^alpha) = sin(alpha pi)/(alpha pi) int_0^inf exp(-t y^(1/alpha)) / (y^2 + 2 y cos(alpha pi) + 1) dy`,
/// with the tail `y > 1` folded onto (0, 1] by `y -> 1/y`.
pub fn ml_integral(alpha: f64, x: f64) -> Result<f64> {
    check_args(alpha, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if alpha == 1.0 {
        return Ok(x.exp());
    }
    let t = (-x).powf(1.0 / alpha);
    let inv = 1.0 / alpha;
    let c = (alpha * PI).cos();
    let near = |y: f64| (-t * y.powf(inv)).exp() / (y * y + 2.0 * y * c + 1.0);
    let far = |s: f64| (-t / s.powf(inv)).exp() / (s * s + 2.0 * s * c + 1.0);
    // near decays on the scale y ~ 1/|x|, far switches on near s ~ |x|
    let total: f64 = geometric_breaks(-x)
        .windows(2)
        .map(|w| adaptive_gk(&near, w[0], w[1], 1e-15))
        .chain(geometric_breaks(1.0 / -x).windows(2).map(|w| adaptive_gk(&far, w[0], w[1], 1e-15)))
        .sum();
    Ok((alpha * PI).sin() / (alpha * PI) * total)
}

/// Breakpoints `0, 1/y, 2/y, 4/y, ..., 1` resolving a feature of width `1/y` at the origin.
fn geometric_breaks(y: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut p = 1.0 / y;
    while p < 1.0 {
        pts.push(p);
        p *= 2.0;
    }
    pts.push(1.0);
    pts
}

/// Asymptotic expansion `-sum_{n>=1} x^(-n) / Gamma(1 - alpha n)`, truncated
/// at its smallest term.
pub fn ml_asymptotic(alpha: f64, x: f64) -> Result<f64> {
    check_args(alpha, x)?;
    if x == 0.0 {
        return invalid("asymptotic expansion needs x < 0");
    }
    if alpha == 1.0 {
        return Ok(x.exp());
    }
    let mut sum = 0.0;
    let mut xpow = 1.0;
    let mut last = f64::INFINITY;
    for n in 1..200 {
        xpow /= x;
        let term = -xpow * recip_gamma(1.0 - alpha * n as f64);
        if term.abs() > last && term != 0.0 {
            break;
        }
        sum += term;
        if term != 0.0 {
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            last = term.abs();
        }
    }
    Ok(sum)
}

/// `1 / Gamma(z)`, zero at the poles.
fn recip_gamma(z: f64) -> f64 {
    if z <= 0.0 && z == z.round() {
        0.0
    } else {
        1.0 / gamma(z)
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut k = K_WEIGHTS[7] * fc;
    let mut g = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let s = f(mid - dx) + f(mid + dx);
        k += K_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G_WEIGHTS[i / 2] * s;
        }
    }
    (k * half, ((k - g) * half).abs())
}

/// Globally adaptive Gauss-Kronrod (7, 15) quadrature to relative tolerance `rel`.
fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    const MAX_INTERVALS: usize = 2000;
    let (v, e) = gk15(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= rel * total.abs() || err < f64::MIN_POSITIVE || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return total;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}
