//! Gaussian and gamma-family special functions.

use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Below this argument Φ is evaluated through the Mills-ratio continued
/// fraction in the log domain.
const LOG_DOMAIN_CUTOFF: f64 = -30.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 − Φ(x)) / φ(x)` for large positive `x`, by backward
/// evaluation of its continued fraction `1/(x+1/(x+2/(x+3/(x+…)))))`.
fn mills_ratio_cf(x: f64) -> f64 {
    let mut t = x;
    for n in (1..=60).rev() {
        t = x + n as f64 / t;
    }
    1.0 / t
}

pub fn normal_log_cdf(x: f64) -> f64 {
    if x < LOG_DOMAIN_CUTOFF {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio_cf(-x).ln()
    } else if x > 5.0 {
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        normal_cdf(x).ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`, finite for every finite `x`.
pub fn inverse_mills(x: f64) -> f64 {
    if x < LOG_DOMAIN_CUTOFF {
        1.0 / mills_ratio_cf(-x)
    } else {
        normal_pdf(x) / normal_cdf(x)
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Regularized lower incomplete gamma `P(a, x)`, with `P(a, 0) = 0`.
pub fn reg_gamma_lower(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn reg_gamma_upper(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(a, x)
    }
}

/// Density of `r = scale · χ²_dof`.
pub fn scaled_chi_square_pdf(r: f64, dof: usize, scale: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    let half = dof as f64 / 2.0;
    if r == 0.0 {
        return match dof {
            1 => f64::INFINITY,
            2 => 0.5 / scale,
            _ => 0.0,
        };
    }
    let ln = (half - 1.0) * r.ln() - r / (2.0 * scale) - half * (2.0 * scale).ln() - ln_gamma(half);
    ln.exp()
}

/// Mean absolute deviation of `N(mean, sd²)` about `t`.
pub fn gaussian_abs_deviation(mean: f64, sd: f64, t: f64) -> f64 {
    let z = (t - mean) / sd;
    (mean - t) * (1.0 - 2.0 * normal_cdf(z)) + 2.0 * sd * normal_pdf(z)
}

/// Numerically stable logistic function `1 / (1 + e^{−x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sqrt_2_over_pi() -> f64 {
    (2.0 / PI).sqrt()
}
