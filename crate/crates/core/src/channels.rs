//! Output-channel kernels `g_out(k, y, Θ) = (E[w | k, y, Θ] − k) / Θ` and
//! `r = −∂g_out/∂k` for AWGN and logistic measurement channels.
//!
//! The logistic likelihood is handled through a Gaussian-CDF mixture
//! `σ(w) ≈ Σ_u α_u Φ(w / σ_u)`, which makes every posterior moment of `w`
//! available in closed form.

use crate::special::{inverse_mills, normal_cdf, normal_log_cdf, normal_pdf, sigmoid};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::{Arc, OnceLock};

/// Sup-norm bound the mixture must meet on `[−FIT_RANGE, FIT_RANGE]`.
pub const MIXTURE_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_COMPONENTS: usize = 8;
const FIT_RANGE: f64 = 10.0;
const FIT_POINTS: usize = 4001;
const CHECK_POINTS: usize = 20_001;
const SCALE_RANGE: (f64, f64) = (0.8, 4.0);

/// ln Z̃ below which a logistic posterior is flagged as saturated.
const LN_UNDERFLOW: f64 = -690.0;

/// Nonnegative weights `α_u` (summing to one) and scales `σ_u` with
/// `Σ_u α_u Φ(w/σ_u) ≈ 1/(1 + e^{−w})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidMixture {
    pub u_max: usize,
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub fit_error: f64,
}

impl SigmoidMixture {
    /// Least-squares fit over a dense grid with log-spaced scales. The
    /// weights are constrained to sum to one; components that come out
    /// negative are dropped and the remainder refit.
    pub fn build(u_max: usize) -> Result<Self> {
        if u_max == 0 {
            return Err(Error::param("mixture needs at least one component"));
        }
        let sigmas: Vec<f64> = if u_max == 1 {
            vec![1.702]
        } else {
            let (lo, hi) = SCALE_RANGE;
            (0..u_max)
                .map(|u| lo * (hi / lo).powf(u as f64 / (u_max - 1) as f64))
                .collect()
        };
        let grid: Vec<f64> = (0..FIT_POINTS)
            .map(|i| -FIT_RANGE + 2.0 * FIT_RANGE * i as f64 / (FIT_POINTS - 1) as f64)
            .collect();

        let mut active: Vec<usize> = (0..u_max).collect();
        let alphas = loop {
            let alphas = fit_constrained(&grid, &sigmas, &active)?;
            let negative: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&u| alphas[u] < 0.0)
                .collect();
            if negative.is_empty() {
                break alphas;
            }
            active.retain(|u| !negative.contains(u));
        };

        let mut mix = Self {
            u_max,
            alphas,
            sigmas,
            fit_error: 0.0,
        };
        mix.fit_error = mix.sup_error();
        if mix.fit_error > MIXTURE_TOLERANCE {
            return Err(Error::MixtureFit {
                achieved: mix.fit_error,
                tolerance: MIXTURE_TOLERANCE,
            });
        }
        Ok(mix)
    }

    /// Process-wide default mixture with [`DEFAULT_COMPONENTS`] terms.
    pub fn standard() -> Arc<Self> {
        static CELL: OnceLock<Arc<SigmoidMixture>> = OnceLock::new();
        CELL.get_or_init(|| {
            Arc::new(Self::build(DEFAULT_COMPONENTS).expect("default sigmoid mixture fit"))
        })
        .clone()
    }

    pub fn eval(&self, w: f64) -> f64 {
        self.alphas
            .iter()
            .zip(&self.sigmas)
            .map(|(a, s)| a * normal_cdf(w / s))
            .sum()
    }

    /// Maximum deviation from the logistic function on a dense grid.
    pub fn sup_error(&self) -> f64 {
        (0..CHECK_POINTS)
            .map(|i| -FIT_RANGE + 2.0 * FIT_RANGE * i as f64 / (CHECK_POINTS - 1) as f64)
            .map(|w| (self.eval(w) - sigmoid(w)).abs())
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Loads a cached mixture and re-validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let mut mix: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if mix.alphas.len() != mix.u_max || mix.sigmas.len() != mix.u_max {
            return Err(Error::Spec(
                "mixture file lengths disagree with u_max".into(),
            ));
        }
        if mix.alphas.iter().any(|&a| a < 0.0) || mix.sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Spec(
                "mixture weights must be nonnegative and scales positive".into(),
            ));
        }
        mix.fit_error = mix.sup_error();
        if mix.fit_error > MIXTURE_TOLERANCE {
            return Err(Error::MixtureFit {
                achieved: mix.fit_error,
                tolerance: MIXTURE_TOLERANCE,
            });
        }
        Ok(mix)
    }
}

/// Solves `min ‖Σ_{u∈active} α_u Φ(w/σ_u) − σ(w)‖²` subject to `Σ α_u = 1`
/// by eliminating the last active weight.
fn fit_constrained(grid: &[f64], sigmas: &[f64], active: &[usize]) -> Result<Vec<f64>> {
    let mut alphas = vec![0.0; sigmas.len()];
    let (&last, free) = active
        .split_last()
        .ok_or_else(|| Error::Internal("no mixture components left".into()))?;
    if free.is_empty() {
        alphas[last] = 1.0;
        return Ok(alphas);
    }
    let design = DMatrix::from_fn(grid.len(), free.len(), |i, c| {
        normal_cdf(grid[i] / sigmas[free[c]]) - normal_cdf(grid[i] / sigmas[last])
    });
    let target = DVector::from_fn(grid.len(), |i, _| {
        sigmoid(grid[i]) - normal_cdf(grid[i] / sigmas[last])
    });
    let solution = design
        .svd(true, true)
        .solve(&target, 1e-14)
        .map_err(|e| Error::Internal(format!("mixture least squares: {e}")))?;
    for (c, &u) in free.iter().enumerate() {
        alphas[u] = solution[c];
    }
    alphas[last] = 1.0 - solution.sum();
    Ok(alphas)
}

/// Value and curvature of `g_out` together with the posterior moments of `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoutResult {
    pub g: f64,
    /// `−∂g_out/∂k`
    pub r: f64,
    pub posterior_mean_w: f64,
    pub posterior_var_w: f64,
    /// Set when the normalizer Z̃ underflowed and the log-domain path was
    /// required; the returned values remain finite.
    pub saturated: bool,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

pub fn awgn_gout(k: f64, y: f64, theta: f64, delta_z: f64) -> Result<GoutResult> {
    check_positive("theta", theta)?;
    check_positive("delta_z", delta_z)?;
    let total = delta_z + theta;
    let g = (y - k) / total;
    Ok(GoutResult {
        g,
        r: 1.0 / total,
        posterior_mean_w: k + theta * g,
        posterior_var_w: theta * delta_z / total,
        saturated: false,
    })
}

/// Gaussian-times-CDF moments `T_i(u) = ∫ wⁱ N(w; k, Θ) Φ(w/(σ_u/a)) dw`
/// for `i = 0, 1, 2`.
pub fn moment_terms(k: f64, theta: f64, a: f64, sigma_u: f64) -> (f64, f64, f64) {
    let c = sigma_u / a;
    let s2 = c * c + theta;
    let s = s2.sqrt();
    let eta = k / s;
    let t0 = normal_cdf(eta);
    let pdf = normal_pdf(eta);
    let t1 = k * t0 + theta * pdf / s;
    let t2 = if t0 > 1e-300 {
        t1 * t1 / t0 + theta * t0 - theta * theta * pdf / s2 * (eta + pdf / t0)
    } else {
        // T₁²/Φ − Θ²φ²/(s²Φ) rewritten through the inverse Mills ratio λ = φ/Φ.
        let lambda = inverse_mills(eta);
        let mean = k + theta * lambda / s;
        t0 * (mean * mean + theta - theta * theta * (eta + lambda) * lambda / s2)
    };
    (t0, t1, t2)
}

/// Posterior moments of `w` under `f(w | k, y, Θ) ∝ P(y | w) N(w; k, Θ)` for
/// the logistic channel `P(y = 1 | w) = 1/(1 + e^{−a w})`.
pub fn logistic_moments(
    k: f64,
    y: f64,
    theta: f64,
    a: f64,
    mix: &SigmoidMixture,
) -> Result<GoutResult> {
    check_positive("theta", theta)?;
    check_positive("a", a)?;
    if !k.is_finite() {
        return Err(Error::param(format!("k must be finite, got {k}")));
    }
    if y == 1.0 {
        Ok(logistic_positive(k, theta, a, mix))
    } else if y == 0.0 {
        // 1 − Σα_uΦ(η_u) = Σα_uΦ(−η_u) because Σα_u = 1, so y = 0 at k is
        // the mirror image of y = 1 at −k.
        let mirrored = logistic_positive(-k, theta, a, mix);
        let mean = -mirrored.posterior_mean_w;
        Ok(GoutResult {
            g: (mean - k) / theta,
            posterior_mean_w: mean,
            ..mirrored
        })
    } else {
        Err(Error::param(format!(
            "logistic observations must be 0 or 1, got {y}"
        )))
    }
}

fn logistic_positive(k: f64, theta: f64, a: f64, mix: &SigmoidMixture) -> GoutResult {
    // Per component: s_u² = (σ_u/a)² + Θ, η_u = k/s_u. With normalized
    // weights ω_u ∝ α_u Φ(η_u) and λ_u = φ(η_u)/Φ(η_u):
    //   E[w] = k + Θ Σ ω_u λ_u / s_u
    //   var  = Θ − Θ² (Σ ω_u η_u λ_u / s_u² + (Σ ω_u λ_u / s_u)²)
    let mut terms = Vec::with_capacity(mix.u_max);
    let mut max_log = f64::NEG_INFINITY;
    for (&alpha, &sigma) in mix.alphas.iter().zip(&mix.sigmas) {
        if alpha <= 0.0 {
            continue;
        }
        let c = sigma / a;
        let s2 = c * c + theta;
        let s = s2.sqrt();
        let eta = k / s;
        let log_w = alpha.ln() + normal_log_cdf(eta);
        max_log = max_log.max(log_w);
        terms.push((log_w, eta, s, s2));
    }
    let mut norm = 0.0;
    let mut first = 0.0;
    let mut curv = 0.0;
    for &(log_w, eta, s, s2) in &terms {
        let w = (log_w - max_log).exp();
        let lambda = inverse_mills(eta);
        norm += w;
        first += w * lambda / s;
        curv += w * eta * lambda / s2;
    }
    let ln_z = max_log + norm.ln();
    let g = first / norm;
    let r = (curv / norm + g * g).clamp(0.0, 1.0 / theta);
    GoutResult {
        g,
        r,
        posterior_mean_w: k + theta * g,
        posterior_var_w: theta * (1.0 - theta * r),
        saturated: ln_z < LN_UNDERFLOW,
    }
}

/// Evaluates the kernel for `channel` at one measurement.
pub fn gout(
    channel: &crate::model::ChannelModel,
    k: f64,
    y: f64,
    theta: f64,
) -> Result<GoutResult> {
    match channel {
        crate::model::ChannelModel::Awgn { delta_z } => awgn_gout(k, y, theta, *delta_z),
        crate::model::ChannelModel::Logistic { a, mixture } => {
            logistic_moments(k, y, theta, *a, mixture)
        }
    }
}
