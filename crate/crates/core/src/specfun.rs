//! Special functions used by the closed-form conditional means.
//!
//! Everything here is a pure function of its arguments. Out-of-domain inputs
//! produce [`Error::Domain`] rather than a NaN.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

fn check_finite(func: &'static str, name: &str, x: f64) -> Result<()> {
    if x.is_nan() {
        return Err(Error::domain(func, format!("{name} is NaN")));
    }
    Ok(())
}

/// Natural log of the gamma function for `a > 0`.
pub fn log_gamma(a: f64) -> Result<f64> {
    check_finite("log_gamma", "a", a)?;
    if a <= 0.0 || a.is_infinite() {
        return Err(Error::domain("log_gamma", format!("a = {a} must be positive and finite")));
    }
    Ok(libm::lgamma(a))
}

/// Log of the beta function B(a, b).
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    Ok(log_gamma(a)? + log_gamma(b)? - log_gamma(a + b)?)
}

fn check_gamma_args(func: &'static str, a: f64, t: f64) -> Result<()> {
    check_finite(func, "a", a)?;
    check_finite(func, "t", t)?;
    if a <= 0.0 || a.is_infinite() {
        return Err(Error::domain(func, format!("shape a = {a} must be positive")));
    }
    if t < 0.0 {
        return Err(Error::domain(func, format!("t = {t} must be non-negative")));
    }
    Ok(())
}

/// Lower regularized gamma P(a, t) by its power series; valid for t < a + 1.
fn gamma_p_series(a: f64, t: f64, ln_gamma_a: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= t / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - t + a * t.ln() - ln_gamma_a).exp()
}

/// Log of the upper regularized gamma Q(a, t) by Lentz's continued fraction;
/// valid for t >= a + 1.
fn ln_gamma_q_cf(a: f64, t: f64, ln_gamma_a: f64) -> f64 {
    let mut b = t + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    -t + a * t.ln() - ln_gamma_a + h.ln()
}

/// Upper regularized incomplete gamma Q(a, t) = Γ(a, t) / Γ(a).
///
/// This is also the survival function of a unit-scale gamma variable with
/// shape `a`. Series for `t < a + 1`, continued fraction otherwise.
pub fn upper_incomplete_gamma_regularized(a: f64, t: f64) -> Result<f64> {
    check_gamma_args("upper_incomplete_gamma_regularized", a, t)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let lga = libm::lgamma(a);
    if t < a + 1.0 {
        Ok((1.0 - gamma_p_series(a, t, lga)).max(0.0))
    } else {
        Ok(ln_gamma_q_cf(a, t, lga).exp())
    }
}

/// `ln Q(a, t)`, accurate deep into the tail where Q itself underflows.
pub fn ln_upper_incomplete_gamma_regularized(a: f64, t: f64) -> Result<f64> {
    check_gamma_args("ln_upper_incomplete_gamma_regularized", a, t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    if t.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    let lga = libm::lgamma(a);
    if t < a + 1.0 {
        Ok((-gamma_p_series(a, t, lga)).ln_1p())
    } else {
        Ok(ln_gamma_q_cf(a, t, lga))
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Log of the standard normal density.
pub fn ln_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> Result<f64> {
    check_finite("normal_cdf", "x", x)?;
    Ok(0.5 * libm::erfc(-x * FRAC_1_SQRT_2))
}

/// Upper tail 1 − Φ(x), computed without cancellation.
pub fn normal_sf(x: f64) -> Result<f64> {
    check_finite("normal_sf", "x", x)?;
    Ok(0.5 * libm::erfc(x * FRAC_1_SQRT_2))
}

/// Mills ratio (1 − Φ(x)) / φ(x) by continued fraction, for large positive x.
fn mills_ratio_cf(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=80).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln(1 − Φ(x))`, finite for every finite x.
pub fn ln_normal_sf(x: f64) -> Result<f64> {
    check_finite("ln_normal_sf", "x", x)?;
    if x == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if x < 25.0 {
        Ok((0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln())
    } else {
        Ok(ln_normal_pdf(x) + mills_ratio_cf(x).ln())
    }
}

/// `φ(x) / (1 − Φ(x))`, the inverse Mills ratio (standard normal hazard).
pub fn normal_hazard(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x >= 25.0 {
        return 1.0 / mills_ratio_cf(x);
    }
    (ln_normal_pdf(x) - (0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln()).exp()
}

/// Inverse of the standard normal CDF.
///
/// Rational starting point followed by two Halley refinements against
/// `erfc`, which brings it to full double precision.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_finite("normal_quantile", "p", p)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain("normal_quantile", format!("p = {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    if p > 0.5 {
        // lower-tail refinement is accurate; mirror through the upper tail
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let mut x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    for _ in 0..2 {
        let e = 0.5 * libm::erfc(-x * FRAC_1_SQRT_2) - p;
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Lentz continued fraction for the incomplete beta function.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_t(a, b), the CDF of a Beta(a, b) variable at t.
pub fn regularized_incomplete_beta(t: f64, a: f64, b: f64) -> Result<f64> {
    const F: &str = "regularized_incomplete_beta";
    check_finite(F, "t", t)?;
    check_finite(F, "a", a)?;
    check_finite(F, "b", b)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(F, format!("t = {t} outside [0, 1]")));
    }
    if a <= 0.0 || b <= 0.0 || a.is_infinite() || b.is_infinite() {
        return Err(Error::domain(F, format!("shapes ({a}, {b}) must be positive")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if t == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * t.ln() + b * (-t).ln_1p() - log_beta(a, b)?;
    let value = if t < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, t) / a).min(1.0)
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - t) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// `log Σ exp(terms)` with the running maximum factored out.
pub fn log_sum_exp(terms: &[f64]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::domain("log_sum_exp", "empty sequence"));
    }
    let mut max = f64::NEG_INFINITY;
    for &x in terms {
        check_finite("log_sum_exp", "term", x)?;
        if x > max {
            max = x;
        }
    }
    if max.is_infinite() {
        return Ok(max);
    }
    let sum: f64 = terms.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// CDF of Student's t with `df` degrees of freedom (`df = ∞` gives Φ).
pub fn student_t_cdf(x: f64, df: f64) -> Result<f64> {
    check_finite("student_t_cdf", "x", x)?;
    if !(df > 0.0) {
        return Err(Error::domain("student_t_cdf", format!("df = {df} must be positive")));
    }
    if df.is_infinite() {
        return normal_cdf(x);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let tail = 0.5 * regularized_incomplete_beta(df / (df + x * x), 0.5 * df, 0.5)?;
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Quantile of Student's t: safeguarded Newton inside a bisection bracket.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    check_finite("student_t_quantile", "p", p)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("student_t_quantile", format!("p = {p} outside (0, 1)")));
    }
    if !(df > 0.0) {
        return Err(Error::domain("student_t_quantile", format!("df = {df} must be positive")));
    }
    if df.is_infinite() {
        return normal_quantile(p);
    }
    if p < 0.5 {
        return Ok(-student_t_quantile(1.0 - p, df)?);
    }
    let ln_norm = log_gamma(0.5 * (df + 1.0))? - log_gamma(0.5 * df)? - 0.5 * (df * PI).ln();
    let pdf = |x: f64| (ln_norm - 0.5 * (df + 1.0) * (x * x / df).ln_1p()).exp();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while student_t_cdf(hi, df)? < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(f64::INFINITY);
        }
    }
    let mut x = normal_quantile(p)?.clamp(lo, hi);
    for _ in 0..200 {
        let f = student_t_cdf(x, df)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - f / pdf(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
