//! Standard normal density, distribution and quantile functions.

use libm::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * LN_2PI).exp()
}

/// Standard normal CDF, evaluated through `erfc` so both tails keep full relative precision.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability mass of the interval `[a, b]`.
pub fn interval_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // upper tail: subtract survival functions to avoid cancellation
        cdf(-a) - cdf(-b)
    } else {
        cdf(b) - cdf(a)
    }
}

/// Inverse of [`cdf`] by safeguarded Newton iteration.
///
/// Returns `-inf`/`+inf` at `p = 0`/`p = 1`.
pub fn quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    if p > 0.5 {
        return -quantile_lower(1.0 - p);
    }
    quantile_lower(p)
}

// p in (0, 0.5]; root lies in (-40, 0]
fn quantile_lower(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    let mut x = -(-2.0 * p.ln()).sqrt().min(39.0);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut next = x - f / d;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Log density of `N(0, I_d)` at `z`, including the normalization constant.
pub fn log_pdf_std(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * z.len() as f64 * LN_2PI - 0.5 * sq
}
