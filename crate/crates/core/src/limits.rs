//! Performance limits of the equivalent scalar channel `q = x + N(0, Δ_v I)`.
//!
//! Everything here is a function of the scalar-channel variance `Δ_v`, which
//! is either measured from converged GAMP runs or predicted by
//! [`state_evolution_delta`].

use crate::metric::{hamming_threshold, mae_median, mwse_threshold, PosteriorSummary};
use crate::quad::{integrate, Tolerance};
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::{
    gaussian_abs_deviation, normal_cdf, normal_pdf, reg_gamma_lower, reg_gamma_upper,
    scaled_chi_square_pdf, sigmoid,
};
use crate::{Error, Result};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Upper end of the `Δ_v` search range used by [`invert_mmse`].
pub const DELTA_V_CAP: f64 = 1e12;
/// Lower end of the `Δ_v` search range used by [`invert_mmse`].
pub const DELTA_V_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitQuery {
    pub delta_v: f64,
    pub rho: f64,
    pub j: usize,
    pub beta: Option<f64>,
}

impl LimitQuery {
    pub fn new(delta_v: f64, rho: f64, j: usize) -> Self {
        Self {
            delta_v,
            rho,
            j,
            beta: None,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.delta_v, self.rho, self.j)?;
        if let Some(beta) = self.beta {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::param(format!("beta must lie in [0, 1], got {beta}")));
            }
        }
        Ok(())
    }
}

fn check_common(delta_v: f64, rho: f64, j: usize) -> Result<()> {
    if !(delta_v > 0.0 && delta_v.is_finite()) {
        return Err(Error::param(format!(
            "delta_v must be positive and finite, got {delta_v}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param(format!("rho must lie in (0, 1), got {rho}")));
    }
    if j == 0 {
        return Err(Error::param("J must be at least 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo { n_samples: usize, std_err: f64 },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ClosedForm => f.write_str("closed_form"),
            Method::Quadrature => f.write_str("quadrature"),
            Method::MonteCarlo { n_samples, .. } => write!(f, "monte_carlo:{n_samples}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitResult {
    pub value: f64,
    /// `(Pr(false alarm), Pr(miss))` for support-type limits.
    pub components: Option<(f64, f64)>,
    pub method: Method,
}

impl LimitResult {
    pub fn std_err(&self) -> Option<f64> {
        match self.method {
            Method::MonteCarlo { std_err, .. } => Some(std_err),
            _ => None,
        }
    }
}

pub const LIMITS_CSV_HEADER: &str = "delta_v,J,rho,beta,value,p_fa,p_miss,method";

/// One CSV row in the [`LIMITS_CSV_HEADER`] layout.
pub fn limits_csv_row(query: &LimitQuery, result: &LimitResult) -> String {
    let fmt = crate::model::fmt_f64;
    let beta = query.beta.map(fmt).unwrap_or_default();
    let (fa, miss) = match result.components {
        Some((fa, miss)) => (fmt(fa), fmt(miss)),
        None => (String::new(), String::new()),
    };
    format!(
        "{},{},{},{},{},{},{},{}",
        fmt(query.delta_v),
        query.j,
        fmt(query.rho),
        beta,
        fmt(result.value),
        fa,
        miss,
        result.method
    )
}

/// Minimum mean weighted support error of the threshold rule on `‖q_n‖²`.
pub fn mmwse(query: &LimitQuery) -> Result<LimitResult> {
    query.validate()?;
    let beta = query.beta.ok_or_else(|| Error::param("mmwse needs beta"))?;
    let LimitQuery {
        delta_v, rho, j, ..
    } = *query;
    let tau = mwse_threshold(delta_v, rho, beta, j);
    let half = 0.5 * j as f64;
    let (p_fa, p_miss) = if tau <= 0.0 {
        (1.0, 0.0)
    } else if tau.is_infinite() {
        (0.0, 1.0)
    } else {
        (
            reg_gamma_upper(half, tau / (2.0 * delta_v)),
            reg_gamma_lower(half, tau / (2.0 * (1.0 + delta_v))),
        )
    };
    // Zero weights must not turn 0 · 1 into anything else.
    let fa_term = if beta == 0.0 {
        0.0
    } else {
        beta * (1.0 - rho) * p_fa
    };
    let miss_term = if beta == 1.0 {
        0.0
    } else {
        (1.0 - beta) * rho * p_miss
    };
    Ok(LimitResult {
        value: fa_term + miss_term,
        components: Some((p_fa, p_miss)),
        method: Method::ClosedForm,
    })
}

/// Minimum mean super-symbol Hamming distance for the `{0, 1}` prior.
/// `Σ_j q_n⁽ʲ⁾` is Gaussian with variance `JΔ_v` and mean `0` or `J`.
pub fn mmhd(query: &LimitQuery) -> Result<LimitResult> {
    query.validate()?;
    let LimitQuery {
        delta_v, rho, j, ..
    } = *query;
    let theta = hamming_threshold(delta_v, rho, j);
    let sd = (j as f64 * delta_v).sqrt();
    let p_fa = normal_cdf(-theta / sd);
    let p_miss = normal_cdf((theta - j as f64) / sd);
    Ok(LimitResult {
        value: (1.0 - rho) * p_fa + rho * p_miss,
        components: Some((p_fa, p_miss)),
        method: Method::ClosedForm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC of the energy detector `‖q_n‖² > t`.
pub fn roc_curve(delta_v: f64, j: usize, thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    check_common(delta_v, 0.5, j)?;
    if thresholds.windows(2).any(|w| w[1] < w[0])
        || thresholds.iter().any(|t| t.is_nan() || *t < 0.0)
    {
        return Err(Error::param(
            "ROC thresholds must be nonnegative and sorted ascending",
        ));
    }
    let half = 0.5 * j as f64;
    Ok(thresholds
        .iter()
        .map(|&t| RocPoint {
            threshold: t,
            fpr: reg_gamma_upper(half, t / (2.0 * delta_v)),
            tpr: reg_gamma_upper(half, t / (2.0 * (1.0 + delta_v))),
        })
        .collect())
}

/// `points` thresholds: zero followed by a log-spaced sweep that resolves both
/// the inactive (`Δ_v χ²_J`) and active (`(1+Δ_v) χ²_J`) energy ranges.
pub fn default_roc_grid(delta_v: f64, j: usize, points: usize) -> Vec<f64> {
    let points = points.max(3);
    let lo = 1e-4 * delta_v;
    let hi = (1.0 + delta_v) * (j as f64 + 20.0 * (2.0 * j as f64).sqrt() + 40.0);
    let step = (hi / lo).ln() / (points - 2) as f64;
    std::iter::once(0.0)
        .chain((0..points - 1).map(|i| lo * (step * i as f64).exp()))
        .collect()
}

/// Trapezoidal area under the curve, closing it at `(0, 0)` and `(1, 1)`.
pub fn roc_area(curve: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[1].1 + w[0].1))
        .sum()
}

/// Log-odds that a Bernoulli–Gaussian super-symbol is active, written in terms
/// of `u = ‖q‖²/(1+Δ_v)`.
fn radial_log_odds(delta_v: f64, rho: f64, j: usize, u: f64) -> f64 {
    rho.ln() - (1.0 - rho).ln() - 0.5 * j as f64 * (1.0 / delta_v).ln_1p() + u / (2.0 * delta_v)
}

/// MMSE per super-symbol (summed over the `J` components) of the
/// Bernoulli–Gaussian prior.
///
/// Uses `MMSE = JρΔ/(1+Δ) + ρ/(1+Δ) ∫ (1 − π) u χ²_J(u) du`, which is the
/// textbook `Jρ − E‖E[x|q]‖²` rearranged so both terms are nonnegative. The
/// integral is taken over `s = √u` to remove the `J = 1` endpoint singularity.
pub fn mmse_of_delta(delta_v: f64, rho: f64, j: usize) -> Result<f64> {
    check_common(delta_v, rho, j)?;
    let jf = j as f64;
    let oracle_part = rho * jf * delta_v / (1.0 + delta_v);
    // Posterior flips to active around u*, over a width of a few Δ_v.
    let u_star = 2.0 * delta_v * ((1.0 - rho).ln() - rho.ln() + 0.5 * jf * (1.0 / delta_v).ln_1p());
    let u_max = jf + 40.0 * (2.0 * jf).sqrt() + 200.0;
    let s_max = u_max.sqrt();
    let mut breaks = Vec::new();
    for k in [-40.0, -4.0, 0.0, 4.0, 40.0] {
        let u = u_star + k * delta_v;
        if u > 0.0 && u < u_max {
            breaks.push(u.sqrt());
        }
    }
    let integrand = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let u = s * s;
        let inactive = sigmoid(-radial_log_odds(delta_v, rho, j, u));
        inactive * u * scaled_chi_square_pdf(u, j, 1.0) * 2.0 * s
    };
    let tol = Tolerance {
        abs: 1e-16 * oracle_part.max(f64::MIN_POSITIVE),
        rel: 1e-13,
        max_intervals: 4000,
    };
    let r = integrate(integrand, 0.0, s_max, &breaks, tol)?;
    Ok(oracle_part + rho / (1.0 + delta_v) * r.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub delta_v: f64,
    /// The target lies beyond what `Δ_v ∈ [1e-12, 1e12]` can produce.
    pub saturated: bool,
}

/// Solves `mmse_of_delta(Δ_v) = target` by bisection on `ln Δ_v`.
pub fn invert_mmse(target: f64, rho: f64, j: usize) -> Result<Inversion> {
    check_common(1.0, rho, j)?;
    let ceiling = j as f64 * rho;
    if !(target > 0.0 && target < ceiling) {
        return Err(Error::param(format!(
            "target MMSE {target} outside (0, {ceiling})"
        )));
    }
    let tol = 1e-12 * ceiling;
    let mut lo = DELTA_V_FLOOR.ln();
    let mut hi = DELTA_V_CAP.ln();
    if mmse_of_delta(DELTA_V_CAP, rho, j)? < target {
        return Ok(Inversion {
            delta_v: DELTA_V_CAP,
            saturated: true,
        });
    }
    if mmse_of_delta(DELTA_V_FLOOR, rho, j)? > target {
        return Ok(Inversion {
            delta_v: DELTA_V_FLOOR,
            saturated: true,
        });
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let m = mmse_of_delta(mid.exp(), rho, j)?;
        if (m - target).abs() <= tol || mid <= lo || mid >= hi {
            return Ok(Inversion {
                delta_v: mid.exp(),
                saturated: false,
            });
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Inversion {
        delta_v: (0.5 * (lo + hi)).exp(),
        saturated: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeFixedPoint {
    pub delta_v: f64,
    pub iterations: usize,
}

/// Iterates `Δ_v ← (Δ_z + mmse_of_delta(Δ_v)/J)/R` from the uninformed start
/// `(Δ_z + ρ)/R` for the AWGN channel with unit-norm rows.
pub fn state_evolution_delta(rate: f64, rho: f64, j: usize, delta_z: f64) -> Result<SeFixedPoint> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::param(format!("rate must be positive, got {rate}")));
    }
    if !(delta_z >= 0.0 && delta_z.is_finite()) {
        return Err(Error::param(format!(
            "delta_z must be nonnegative, got {delta_z}"
        )));
    }
    check_common(1.0, rho, j)?;
    let mut delta = (delta_z + rho) / rate;
    for it in 1..=10_000 {
        if delta < DELTA_V_FLOOR {
            return Ok(SeFixedPoint {
                delta_v: delta,
                iterations: it,
            });
        }
        let next = (delta_z + mmse_of_delta(delta, rho, j)? / j as f64) / rate;
        if ((next - delta) / delta).abs() <= 1e-10 {
            return Ok(SeFixedPoint {
                delta_v: next,
                iterations: it,
            });
        }
        delta = next;
    }
    Err(Error::Numeric {
        message: "state evolution did not reach a fixed point in 10000 iterations".into(),
        achieved: delta,
    })
}

/// Expected posterior absolute loss of the median estimate, averaged over the
/// `J` components.
pub fn posterior_mae_loss(q: &[f64], delta_v: f64, rho: f64) -> Result<f64> {
    let post = PosteriorSummary::bernoulli_gaussian(q, delta_v, rho);
    let sigma = post.active_var.sqrt();
    let mut total = 0.0;
    for &mu in &post.active_mean {
        let t = mae_median(post.pi, mu, sigma)?;
        total += (1.0 - post.pi) * t.abs() + post.pi * gaussian_abs_deviation(mu, sigma, t);
    }
    Ok(total / q.len() as f64)
}

const MC_CHUNK: usize = 8192;

/// Minimum mean absolute error by Monte Carlo over the marginal of `q_n`.
/// Chunks draw from independent derived streams, so the estimate does not
/// depend on the number of worker threads.
pub fn mmae(query: &LimitQuery, n_samples: usize, seed: u64) -> Result<LimitResult> {
    query.validate()?;
    if n_samples < 100 {
        return Err(Error::param(format!(
            "mmae needs at least 100 samples, got {n_samples}"
        )));
    }
    let LimitQuery {
        delta_v, rho, j, ..
    } = *query;
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let noise_sd = delta_v.sqrt();
    let partial: Vec<Result<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut rng = rng_from_seed(derive_seed(seed, &[c as u64]));
            let mut q = vec![0.0; j];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..len {
                let active = rng.random::<f64>() < rho;
                for v in q.iter_mut() {
                    let x: f64 = if active {
                        rng.sample(StandardNormal)
                    } else {
                        0.0
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    *v = x + noise_sd * z;
                }
                let loss = posterior_mae_loss(&q, delta_v, rho)?;
                sum += loss;
                sum_sq += loss * loss;
            }
            Ok((sum, sum_sq))
        })
        .collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for p in partial {
        let (s, s2) = p?;
        sum += s;
        sum_sq += s2;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(LimitResult {
        value: mean,
        components: None,
        method: Method::MonteCarlo {
            n_samples,
            std_err: (var / n).sqrt(),
        },
    })
}

/// Deterministic MMAE for `J = 1` by quadrature over the marginal density of
/// the scalar `q`.
pub fn mmae_quadrature(delta_v: f64, rho: f64) -> Result<LimitResult> {
    check_common(delta_v, rho, 1)?;
    let sd0 = delta_v.sqrt();
    let sd1 = (1.0 + delta_v).sqrt();
    let density =
        |q: f64| (1.0 - rho) * normal_pdf(q / sd0) / sd0 + rho * normal_pdf(q / sd1) / sd1;
    let q_max = 40.0 * sd1;
    // The median leaves the spike where F(0) drops below one half.
    let spike_margin = |q: f64| {
        let post = PosteriorSummary::bernoulli_gaussian(&[q], delta_v, rho);
        let sigma = post.active_var.sqrt();
        (1.0 - post.pi) + post.pi * normal_cdf(-post.active_mean[0] / sigma) - 0.5
    };
    let mut breaks = Vec::new();
    if spike_margin(q_max) < 0.0 && spike_margin(0.0) >= 0.0 {
        let (mut lo, mut hi) = (0.0, q_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spike_margin(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        breaks.push(0.5 * (lo + hi));
    }
    let mut failure = None;
    let r = integrate(
        |q| match posterior_mae_loss(&[q], delta_v, rho) {
            Ok(loss) => loss * density(q),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        0.0,
        q_max,
        &breaks,
        Tolerance {
            abs: 1e-14,
            rel: 1e-10,
            max_intervals: 4000,
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(LimitResult {
        value: 2.0 * r.value,
        components: None,
        method: Method::Quadrature,
    })
}
