//! Standard-normal helpers and sample moments.

use statrs::function::erf::erfc;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, stable for large negative `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -20.0 {
        norm_cdf(x).ln()
    } else {
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `phi(x) / Phi(x)` without cancellation in the left tail.
pub fn mills_ratio_inv(x: f64) -> f64 {
    if x > -20.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        -x - 1.0 / x + 2.0 / (x * x * x)
    }
}

/// Population mean and `1/N` variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}
