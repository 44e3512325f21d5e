//! Reference computations used as oracles. Nothing here calls into the
//! numerical code under test: integrals use a local adaptive Simpson rule,
//! densities are written out directly and Φ comes from `libm`.

#![allow(dead_code)]

pub mod oracles;

use std::f64::consts::PI;

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Splits `[a, b]` into `pieces` panels before running [`simpson`], which
/// keeps narrow peaks from being skipped by the first coarse estimate.
pub fn simpson_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            simpson(
                f,
                a + i as f64 * h,
                a + (i + 1) as f64 * h,
                tol / pieces as f64,
            )
        })
        .sum()
}

pub fn gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Φ(z) through the musl-derived `erfc` in `libm`, a separate code path from
/// the crate's own special functions.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// ln Γ(n/2) from the half-integer recursion.
pub fn ln_gamma_half(n: usize) -> f64 {
    let (mut value, mut x) = if n.is_multiple_of(2) {
        (0.0, 1.0)
    } else {
        (0.5 * PI.ln(), 0.5)
    };
    while x < 0.5 * n as f64 - 1e-12 {
        value += x.ln();
        x += 1.0;
    }
    value
}

/// Density of `scale · χ²_J` at `u`.
pub fn chi2_pdf(u: f64, j: usize, scale: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * j as f64;
    let x = u / scale;
    ((half - 1.0) * x.ln() - 0.5 * x - half * 2f64.ln() - ln_gamma_half(j)).exp() / scale
}

/// `P(scale · χ²_J ∈ [lo, hi])` by quadrature in `s = √u`, which removes the
/// `J = 1` singularity at zero.
pub fn chi2_mass(lo: f64, hi: f64, j: usize, scale: f64) -> f64 {
    let f = |s: f64| 2.0 * s * chi2_pdf(s * s, j, scale);
    let top = (scale * (j as f64 + 60.0 * (2.0 * j as f64).sqrt() + 200.0)).sqrt();
    let a = lo.max(0.0).sqrt();
    let b = if hi.is_finite() {
        hi.sqrt().min(top)
    } else {
        top
    };
    if b <= a {
        return 0.0;
    }
    simpson_panels(&f, a, b, 200, 1e-15)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
