//! Oracle suites shared by the oracle tests and the acceptance runner. Each
//! returns the worst discrepancy observed so callers can assert or report.

use super::*;
use mmv_core::channels::{awgn_gout, logistic_moments, SigmoidMixture};
use mmv_core::gamp::bg_denoise;
use mmv_core::limits::{invert_mmse, mmse_of_delta, mmwse, LimitQuery};
use mmv_core::metric::mae_median;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;

#[derive(Debug, Clone)]
pub struct Report {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    /// Description of the first failing case, if any.
    pub failure: Option<String>,
}

impl Report {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            worst: 0.0,
            tolerance,
            failure: None,
        }
    }

    // Negated comparisons so a NaN error counts as a failure.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn record(&mut self, err: f64, case: impl FnOnce() -> String) {
        self.cases += 1;
        if !(err <= self.worst) {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err <= self.tolerance) && self.failure.is_none() {
            self.failure = Some(case());
        }
    }

    fn fail(&mut self, msg: String) {
        self.cases += 1;
        self.worst = f64::INFINITY;
        if self.failure.is_none() {
            self.failure = Some(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.worst <= self.tolerance
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} cases, worst {:.3e} (tol {:.0e})",
            self.name, self.cases, self.worst, self.tolerance
        )?;
        if let Some(msg) = &self.failure {
            write!(f, "; first failure: {msg}")?;
        }
        Ok(())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `∫ xᵏ N(q; x, Δ) N(x; 0, 1) dx` for `k = 0, 1, 2`, the zeroth one as a
/// logarithm and the others divided by the zeroth.
fn slab_integrals(q: f64, delta: f64) -> (f64, f64, f64) {
    let log_l = |x: f64| {
        -(q - x).powi(2) / (2.0 * delta)
            - 0.5 * x * x
            - 0.5 * (2.0 * PI * delta).ln()
            - 0.5 * (2.0 * PI).ln()
    };
    let center = q / (1.0 + delta);
    let sd = (delta / (1.0 + delta)).sqrt();
    let peak = log_l(center);
    let scaled = |x: f64| (log_l(x) - peak).exp();
    let (a, b) = (center - 14.0 * sd, center + 14.0 * sd);
    let tol = 1e-14 * sd;
    let i0 = simpson_panels(&scaled, a, b, 28, tol);
    let i1 = simpson_panels(&|x| x * scaled(x), a, b, 28, tol);
    let i2 = simpson_panels(&|x| x * x * scaled(x), a, b, 28, tol);
    (peak + i0.ln(), i1 / i0, i2 / i0)
}

/// Posterior mean, variance and activity probability of a Bernoulli–Gaussian
/// super-symbol, from per-component quadrature of the slab evidence.
pub fn bg_posterior_by_quadrature(q: &[f64], delta: f64, rho: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let parts: Vec<(f64, f64, f64)> = q.iter().map(|&v| slab_integrals(v, delta)).collect();
    let ln_active: f64 = parts.iter().map(|p| p.0).sum::<f64>() + rho.ln();
    let ln_inactive: f64 = q
        .iter()
        .map(|&v| -v * v / (2.0 * delta) - 0.5 * (2.0 * PI * delta).ln())
        .sum::<f64>()
        + (1.0 - rho).ln();
    let pi = 1.0 / (1.0 + (ln_inactive - ln_active).exp());
    let mean: Vec<f64> = parts.iter().map(|p| pi * p.1).collect();
    let var: Vec<f64> = parts
        .iter()
        .zip(&mean)
        .map(|(p, m)| pi * p.2 - m * m)
        .collect();
    (mean, var, pi)
}

/// Denoiser mean and variance against quadrature on random inputs.
pub fn bg_denoise_suite(cases: usize) -> Report {
    let mut report = Report::new("bg_denoise vs quadrature", 1e-6);
    let mut r = rng(101);
    for _ in 0..cases {
        let j = r.random_range(1..=5);
        let delta = 10f64.powf(r.random_range(-2.0..0.5));
        let rho = r.random_range(0.01..0.95);
        let active = r.random::<f64>() < 0.5;
        let sd = if active {
            (1.0 + delta).sqrt()
        } else {
            delta.sqrt()
        };
        let q: Vec<f64> = (0..j)
            .map(|_| sd * r.sample::<f64, _>(StandardNormal))
            .collect();
        let d = bg_denoise(delta, &q, rho);
        let (mean, var, pi) = bg_posterior_by_quadrature(&q, delta, rho);
        let err = d
            .mean
            .iter()
            .zip(&mean)
            .chain(d.var.iter().zip(&var))
            .map(|(a, b)| (a - b).abs())
            .fold((d.pi - pi).abs(), f64::max);
        report.record(err, || format!("q = {q:?}, delta = {delta}, rho = {rho}"));
    }
    report
}

/// Posterior `E[w]`, `E[w²]` with the mixture likelihood `Σ α_u Φ(±a w/σ_u)`.
pub fn logistic_posterior_by_quadrature(
    k: f64,
    y: f64,
    theta: f64,
    a: f64,
    mix: &SigmoidMixture,
) -> (f64, f64) {
    let sign = if y == 1.0 { 1.0 } else { -1.0 };
    let lik = |w: f64| -> f64 {
        mix.alphas
            .iter()
            .zip(&mix.sigmas)
            .map(|(al, s)| al * std_normal_cdf(sign * a * w / s))
            .sum()
    };
    let sd = theta.sqrt();
    let f = |w: f64| lik(w) * gauss_pdf(w, k, theta);
    let (lo, hi) = (k - 14.0 * sd, k + 14.0 * sd);
    let z = simpson_panels(&f, lo, hi, 400, 1e-13);
    let m1 = simpson_panels(&|w| w * f(w), lo, hi, 400, 1e-13) / z;
    let m2 = simpson_panels(&|w| w * w * f(w), lo, hi, 400, 1e-13) / z;
    (m1, m2)
}

/// Logistic posterior moments on a 10 × 10 `(k, Θ)` grid for both
/// observations and several channel scales.
pub fn logistic_moment_suite() -> Report {
    let mut report = Report::new("logistic posterior moments vs quadrature", 1e-4);
    let mix = SigmoidMixture::standard();
    for &a in &[1.0, 10.0, 30.0] {
        for ki in 0..10 {
            let k = -2.0 + 4.0 * ki as f64 / 9.0;
            for ti in 0..10 {
                let theta = 0.05 * 40f64.powf(ti as f64 / 9.0);
                for &y in &[0.0, 1.0] {
                    let (m1, m2) = logistic_posterior_by_quadrature(k, y, theta, a, &mix);
                    match logistic_moments(k, y, theta, a, &mix) {
                        Ok(g) => {
                            let second = g.posterior_var_w + g.posterior_mean_w.powi(2);
                            let err = (g.posterior_mean_w - m1).abs().max((second - m2).abs());
                            report.record(err, || {
                                format!("k = {k}, y = {y}, theta = {theta}, a = {a}")
                            });
                        }
                        Err(e) => {
                            report.fail(format!("k = {k}, y = {y}, theta = {theta}, a = {a}: {e}"))
                        }
                    }
                }
            }
        }
    }
    report
}

/// `r = −∂g/∂k` against central differences with `h = 1e-5`.
pub fn finite_difference_suite() -> Report {
    let mut report = Report::new("g_out derivative vs finite differences", 1e-4);
    let h = 1e-5;
    let mix = SigmoidMixture::standard();
    for ki in 0..9 {
        let k = -2.0 + 0.5 * ki as f64;
        for &theta in &[0.05, 0.2, 0.5, 1.0, 2.0] {
            for &y in &[0.0, 1.0, 0.7] {
                let g = |k: f64| awgn_gout(k, y, theta, 0.1).map(|r| r.g);
                let r = awgn_gout(k, y, theta, 0.1).map(|r| r.r);
                match (g(k - h), g(k + h), r) {
                    (Ok(lo), Ok(hi), Ok(r)) => report
                        .record((r - (lo - hi) / (2.0 * h)).abs(), || {
                            format!("awgn k = {k}, y = {y}, theta = {theta}")
                        }),
                    _ => report.fail(format!("awgn kernel failed at k = {k}")),
                }
                if y == 0.7 {
                    continue;
                }
                for &a in &[1.0, 10.0, 30.0] {
                    let g = |k: f64| logistic_moments(k, y, theta, a, &mix).map(|r| r.g);
                    let r = logistic_moments(k, y, theta, a, &mix).map(|r| r.r);
                    match (g(k - h), g(k + h), r) {
                        (Ok(lo), Ok(hi), Ok(r)) => report
                            .record((r - (lo - hi) / (2.0 * h)).abs(), || {
                                format!("logistic k = {k}, y = {y}, theta = {theta}, a = {a}")
                            }),
                        _ => report.fail(format!("logistic kernel failed at k = {k}, a = {a}")),
                    }
                }
            }
        }
    }
    report
}

/// Closed-form MMWSE against direct integration of the two chi-square tails.
pub fn mmwse_quadrature_suite(cases: usize) -> Report {
    let mut report = Report::new("MMWSE closed form vs quadrature", 1e-8);
    let mut r = rng(202);
    for _ in 0..cases {
        let j = r.random_range(1..=6);
        let delta = 10f64.powf(r.random_range(-2.5..0.5));
        let rho: f64 = r.random_range(0.02..0.5);
        let beta: f64 = r.random_range(0.05..0.95);
        let log_arg = (beta * (1.0 - rho) / ((1.0 - beta) * rho)).ln()
            + 0.5 * j as f64 * ((1.0 + delta) / delta).ln();
        let tau = 2.0 * delta * (1.0 + delta) * log_arg;
        let (p_fa, p_miss) = if tau <= 0.0 {
            (1.0, 0.0)
        } else {
            (
                chi2_mass(tau, f64::INFINITY, j, delta),
                chi2_mass(0.0, tau, j, 1.0 + delta),
            )
        };
        let oracle = beta * (1.0 - rho) * p_fa + (1.0 - beta) * rho * p_miss;
        match mmwse(&LimitQuery::new(delta, rho, j).with_beta(beta)) {
            Ok(res) => report.record((res.value - oracle).abs(), || {
                format!(
                    "J = {j}, delta = {delta}, rho = {rho}, beta = {beta}: {} vs {oracle}",
                    res.value
                )
            }),
            Err(e) => report.fail(format!("J = {j}, delta = {delta}: {e}")),
        }
    }
    report
}

/// `mmse_of_delta(invert_mmse(m)) = m` for targets spread over `(0, Jρ)`.
pub fn invert_round_trip_suite() -> Report {
    let mut report = Report::new("invert_mmse round trip", 1e-9);
    for &rho in &[0.05, 0.1, 0.3] {
        for j in [1, 2, 3, 5] {
            for &frac in &[0.1, 0.3, 0.5, 0.7, 0.9] {
                let target = frac * j as f64 * rho;
                let back =
                    invert_mmse(target, rho, j).and_then(|inv| mmse_of_delta(inv.delta_v, rho, j));
                match back {
                    Ok(m) => report.record((m - target).abs(), || {
                        format!("rho = {rho}, J = {j}, target = {target}")
                    }),
                    Err(e) => report.fail(format!("rho = {rho}, J = {j}, target = {target}: {e}")),
                }
            }
        }
    }
    report
}

fn spike_slab_cdf(t: f64, pi: f64, mu: f64, sigma: f64) -> f64 {
    let spike = if t >= 0.0 { 1.0 - pi } else { 0.0 };
    spike + pi * std_normal_cdf((t - mu) / sigma)
}

/// Exact expected absolute loss of `t` under the spike-and-slab posterior.
fn expected_abs_loss(t: f64, pi: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    let slab = sigma * (2.0 * gauss_pdf(z, 0.0, 1.0) + z * (2.0 * std_normal_cdf(z) - 1.0));
    (1.0 - pi) * t.abs() + pi * slab
}

/// The posterior median: characterized by the CDF, better than `t ± 0.01`
/// in exact expected loss, and not worse than them on sampled loss beyond
/// three standard errors of the paired difference.
pub fn mae_median_suite(cases: usize, samples: usize) -> Report {
    let mut report = Report::new("MAE posterior median", 1e-10);
    let mut r = rng(303);
    let mut draws = vec![0.0; samples];
    for case in 0..cases {
        let (pi, mu, sigma) = if case == 0 {
            (0.8, 1.5, 0.6)
        } else {
            (
                r.random_range(0.0..1.0),
                r.random_range(-3.0..3.0),
                r.random_range(0.05..1.0),
            )
        };
        let t = match mae_median(pi, mu, sigma) {
            Ok(t) => t,
            Err(e) => {
                report.fail(format!("pi = {pi}, mu = {mu}, sigma = {sigma}: {e}"));
                continue;
            }
        };
        let below = if t == 0.0 {
            pi * std_normal_cdf(-mu / sigma)
        } else {
            spike_slab_cdf(t, pi, mu, sigma)
        };
        let err = if t == 0.0 {
            // A spike median needs F(0⁻) < 1/2 ≤ F(0).
            if below < 0.5 && spike_slab_cdf(0.0, pi, mu, sigma) >= 0.5 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (below - 0.5).abs()
        };
        let describe = || format!("pi = {pi}, mu = {mu}, sigma = {sigma}, t = {t}");
        report.record(err, describe);

        let here = expected_abs_loss(t, pi, mu, sigma);
        for delta in [-0.01, 0.01] {
            if expected_abs_loss(t + delta, pi, mu, sigma) < here {
                report.fail(format!(
                    "{}: exact loss improves at t {delta:+}",
                    describe()
                ));
            }
        }

        for d in draws.iter_mut() {
            *d = if r.random::<f64>() < pi {
                mu + sigma * r.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
        }
        for delta in [-0.01, 0.01] {
            let diffs: Vec<f64> = draws
                .iter()
                .map(|x| (x - t).abs() - (x - t - delta).abs())
                .collect();
            let (m, se) = mean_se(&diffs);
            if m > 3.0 * se + 1e-15 {
                report.fail(format!(
                    "{}: sampled loss improves at t {delta:+} ({m:e} > 3·{se:e})",
                    describe()
                ));
            }
        }
    }
    report
}
