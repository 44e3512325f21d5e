mod common;

use common::oracles::*;
use common::*;
use mmv_core::channels::{SigmoidMixture, DEFAULT_COMPONENTS};
use mmv_core::gamp::bernoulli_denoise;
use mmv_core::limits::{
    default_roc_grid, mmae, mmae_quadrature, mmhd, mmse_of_delta, roc_area, roc_curve, LimitQuery,
};
use mmv_core::special::scaled_chi_square_pdf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn check(report: Report) {
    assert!(report.passed(), "{report}");
}

#[test]
fn bg_denoise_matches_quadrature() {
    check(bg_denoise_suite(1000));
}

#[test]
fn logistic_moments_match_quadrature() {
    check(logistic_moment_suite());
}

#[test]
fn gout_derivatives_match_finite_differences() {
    check(finite_difference_suite());
}

#[test]
fn mmwse_closed_form_matches_quadrature() {
    check(mmwse_quadrature_suite(50));
}

#[test]
fn invert_mmse_round_trips() {
    check(invert_round_trip_suite());
}

#[test]
fn mae_median_is_optimal() {
    check(mae_median_suite(1000, 20_000));
}

#[test]
fn mae_median_spec_case_with_many_samples() {
    // One case at full sampling depth.
    check(mae_median_suite(1, 1_000_000));
}

#[test]
fn mixture_sup_error_on_dense_grid() {
    let mix = SigmoidMixture::build(DEFAULT_COMPONENTS).unwrap();
    let worst = (0..=200_000)
        .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
        .map(|w| {
            let approx: f64 = mix
                .alphas
                .iter()
                .zip(&mix.sigmas)
                .map(|(a, s)| a * std_normal_cdf(w / s))
                .sum();
            (approx - logistic(w)).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");
    assert!((mix.eval(0.0) - 0.5).abs() <= 1e-3);
    assert!((mix.eval(10.0) - logistic(10.0)).abs() <= 1e-3);
}

#[test]
fn bernoulli_pi_matches_two_point_bayes() {
    let (rho, delta, q) = (0.1, 0.2, 0.9);
    let on = rho * gauss_pdf(q, 1.0, delta);
    let off = (1.0 - rho) * gauss_pdf(q, 0.0, delta);
    let d = bernoulli_denoise(delta, &[q], rho);
    assert!(
        (d.pi - on / (on + off)).abs() <= 1e-12,
        "{} vs {}",
        d.pi,
        on / (on + off)
    );
}

#[test]
fn chi_square_densities_integrate_to_one() {
    for j in 1..=8 {
        for &scale in &[0.01, 0.3, 1.0, 4.0] {
            let f = |s: f64| 2.0 * s * scaled_chi_square_pdf(s * s, j, scale);
            let top = (scale * (j as f64 + 400.0)).sqrt();
            // Start just off zero: the J = 1 integrand is finite there but 0 · ∞ at it.
            let total = simpson_panels(&f, 1e-150, top, 400, 1e-15);
            assert!(
                (total - 1.0).abs() <= 1e-10,
                "J = {j}, scale = {scale}: {total}"
            );
        }
    }
}

#[test]
fn mmhd_matches_quadrature_of_gaussian_tails() {
    for &(delta, rho, j) in &[
        (0.05f64, 0.1f64, 1usize),
        (0.2, 0.1, 3),
        (0.5, 0.3, 2),
        (1.0, 0.05, 5),
    ] {
        let theta = 0.5 * j as f64 + delta * ((1.0 - rho) / rho).ln();
        let var = j as f64 * delta;
        let sd = var.sqrt();
        let p_fa = simpson_panels(
            &|s| gauss_pdf(s, 0.0, var),
            theta,
            40.0 * sd + theta.abs(),
            200,
            1e-15,
        );
        let p_miss = simpson_panels(
            &|s| gauss_pdf(s, j as f64, var),
            j as f64 - 40.0 * sd,
            theta,
            200,
            1e-15,
        );
        let oracle = (1.0 - rho) * p_fa + rho * p_miss;
        let got = mmhd(&LimitQuery::new(delta, rho, j)).unwrap().value;
        assert!((got - oracle).abs() <= 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn mmse_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for &(delta, rho, j) in &[(0.05, 0.1, 1), (0.2, 0.1, 3), (0.5, 0.3, 2)] {
        let n = 1_000_000;
        let sd = f64::sqrt(delta);
        let mut losses = Vec::with_capacity(n);
        let mut x = vec![0.0; j];
        let mut q = vec![0.0; j];
        for _ in 0..n {
            let active = rng.random::<f64>() < rho;
            for c in 0..j {
                x[c] = if active {
                    rng.sample(StandardNormal)
                } else {
                    0.0
                };
                q[c] = x[c] + sd * rng.sample::<f64, _>(StandardNormal);
            }
            let (mean, _, _) = posterior_mean_closed(&q, delta, rho);
            losses.push(x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum());
        }
        let (m, se) = mean_se(&losses);
        let theory = mmse_of_delta(delta, rho, j).unwrap();
        assert!(
            (m - theory).abs() <= 3.0 * se,
            "delta = {delta}, J = {j}: MC {m} ± {se} vs {theory}"
        );
    }
}

/// Spike-and-slab posterior mean written out from Bayes' rule.
fn posterior_mean_closed(q: &[f64], delta: f64, rho: f64) -> (Vec<f64>, f64, f64) {
    let norm2: f64 = q.iter().map(|v| v * v).sum();
    let j = q.len() as f64;
    let ln_on = rho.ln() - 0.5 * j * (1.0 + delta).ln() - norm2 / (2.0 * (1.0 + delta));
    let ln_off = (1.0 - rho).ln() - 0.5 * j * delta.ln() - norm2 / (2.0 * delta);
    let pi = 1.0 / (1.0 + (ln_off - ln_on).exp());
    (
        q.iter().map(|v| pi * v / (1.0 + delta)).collect(),
        pi,
        norm2,
    )
}

#[test]
fn mmse_large_delta_returns_prior_energy() {
    let m = mmse_of_delta(1e6, 0.1, 1).unwrap();
    assert!((m - 0.1).abs() <= 1e-3, "{m}");
}

#[test]
fn mmae_monte_carlo_agrees_with_quadrature() {
    let q = LimitQuery::new(0.25, 0.1, 1);
    let mc = mmae(&q, 1_000_000, 9).unwrap();
    let quad = mmae_quadrature(0.25, 0.1).unwrap();
    let se = mc.std_err().unwrap();
    assert!(
        (mc.value - quad.value).abs() <= 3.0 * se,
        "{} ± {se} vs {}",
        mc.value,
        quad.value
    );
}

#[test]
fn mmae_quadrature_matches_independent_double_integral() {
    // E over q of the posterior absolute loss, with the median from the
    // oracle CDF located by bisection here.
    let (delta, rho): (f64, f64) = (0.25, 0.1);
    let sd0 = delta.sqrt();
    let sd1 = (1.0 + delta).sqrt();
    let loss = |q: f64| {
        let (_, pi, _) = posterior_mean_closed(&[q], delta, rho);
        let mu = q / (1.0 + delta);
        let sigma = (delta / (1.0 + delta)).sqrt();
        let cdf = |t: f64| {
            (if t >= 0.0 { 1.0 - pi } else { 0.0 }) + pi * std_normal_cdf((t - mu) / sigma)
        };
        let t = if pi * std_normal_cdf(-mu / sigma) < 0.5 && cdf(0.0) >= 0.5 {
            0.0
        } else {
            let (mut lo, mut hi) = (mu.min(0.0) - 40.0 * sigma, mu.max(0.0) + 40.0 * sigma);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < 0.5 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            0.5 * (lo + hi)
        };
        let slab = simpson_panels(
            &|x| (x - t).abs() * gauss_pdf(x, mu, sigma * sigma),
            mu - 14.0 * sigma,
            mu + 14.0 * sigma,
            8,
            1e-13,
        );
        (1.0 - pi) * t.abs() + pi * slab
    };
    let density =
        |q: f64| (1.0 - rho) * gauss_pdf(q, 0.0, sd0 * sd0) + rho * gauss_pdf(q, 0.0, sd1 * sd1);
    let oracle = simpson_panels(
        &|q| loss(q) * density(q),
        -30.0 * sd1,
        30.0 * sd1,
        240,
        1e-12,
    );
    let got = mmae_quadrature(delta, rho).unwrap().value;
    assert!((got - oracle).abs() <= 1e-8, "{got} vs {oracle}");
}

#[test]
fn mmae_gaussian_limit() {
    // ρ close to one: the posterior is Gaussian and the loss is √(2/π)·σ.
    let delta: f64 = 0.4;
    let q = LimitQuery::new(delta, 1.0 - 1e-9, 2);
    let r = mmae(&q, 200_000, 3).unwrap();
    let exact = (2.0 / std::f64::consts::PI).sqrt() * (delta / (1.0 + delta)).sqrt();
    assert!(
        (r.value - exact).abs() <= 3.0 * r.std_err().unwrap() + 1e-9,
        "{} vs {exact}",
        r.value
    );
}

#[test]
fn roc_area_matches_quadrature() {
    // AUC = P(active energy > inactive energy).
    for j in [1, 3, 5] {
        let delta = 0.1;
        let curve = roc_curve(delta, j, &default_roc_grid(delta, j, 2000)).unwrap();
        let area = roc_area(&curve);
        let top = (1.0 + delta) * (j as f64 + 400.0);
        let f = |s: f64| {
            let u = s * s;
            2.0 * s * chi2_pdf(u, j, 1.0 + delta) * chi2_mass(0.0, u, j, delta)
        };
        let oracle = simpson_panels(&f, 0.0, top.sqrt(), 40, 1e-10);
        assert!((area - oracle).abs() <= 2e-3, "J = {j}: {area} vs {oracle}");
    }
}
