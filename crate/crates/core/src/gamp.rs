//! GAMP for jointly sparse MMV problems.
//!
//! Each iteration runs two phases separated by a barrier:
//!
//! 1. Per channel `j` (data-parallel over `j`): `Θ = A²s`, `k = Ax̂ − Θ∘h`,
//!    `h, r` from the output kernel, `Δ_v⁽ʲ⁾ = N / Σ_m r_m ‖a_m‖²` and pseudo
//!    data `q⁽ʲ⁾ = x̂⁽ʲ⁾ + Δ_v⁽ʲ⁾ Aᵀh`.
//! 2. Aggregate `Δ_v` over channels, then denoise every super-symbol `q_n`
//!    (data-parallel over `n`).
//!
//! Every reduction inside a phase runs sequentially in a fixed order, so the
//! output does not depend on the number of worker threads.

use crate::channels::gout;
use crate::model::{ChannelModel, MeasurementSet};
use crate::{Error, Result};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Smallest output variance handed to the channel kernel.
const MIN_THETA: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// `ρ N(0, I_J) + (1 − ρ) δ(x)`
    BernoulliGaussian { rho: f64 },
    /// `ρ δ(x − 1) + (1 − ρ) δ(x)`
    BernoulliBinary { rho: f64 },
}

impl Prior {
    pub fn rho(&self) -> f64 {
        match *self {
            Prior::BernoulliGaussian { rho } | Prior::BernoulliBinary { rho } => rho,
        }
    }

    fn denoise_into(&self, delta_v: f64, q: &[f64], mean: &mut [f64], var: &mut [f64]) -> f64 {
        match *self {
            Prior::BernoulliGaussian { rho } => bg_denoise_into(delta_v, q, rho, mean, var),
            Prior::BernoulliBinary { rho } => bernoulli_denoise_into(delta_v, q, rho, mean, var),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaAggregation {
    /// `Δ_v = (1/J) Σ_j Δ_v⁽ʲ⁾`
    Mean,
    /// `Δ_v = Σ_j Δ_v⁽ʲ⁾`
    Sum,
}

/// Initial variance `s⁰` of every signal entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitVariance {
    /// `s⁰ = ρ`, the prior second moment of an entry.
    Prior,
    /// `s⁰ = ρΔ_z` for AWGN channels, `ρ` otherwise. Markedly less stable
    /// for `J > 1`.
    PriorTimesNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GampConfig {
    pub t_max: usize,
    /// Stop once the mean squared change of x̂ falls to this value.
    pub epsilon: f64,
    pub delta_aggregation: DeltaAggregation,
    /// Weight on the previous iterate for x̂ and h; 0 disables damping.
    pub damping: f64,
    pub init: InitVariance,
}

impl Default for GampConfig {
    fn default() -> Self {
        Self {
            t_max: 200,
            epsilon: 1e-8,
            delta_aggregation: DeltaAggregation::Mean,
            damping: 0.0,
            init: InitVariance::Prior,
        }
    }
}

impl GampConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::param("t_max must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::param(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub delta: f64,
    pub delta_v: f64,
}

#[derive(Debug, Clone)]
pub struct GampOutput {
    /// Posterior-mean estimate, `N × J`.
    pub x_hat: Array2<f64>,
    /// Posterior variances matching `x_hat`.
    pub variances: Array2<f64>,
    /// Pseudo data that produced `x_hat`, `N × J`.
    pub q: Array2<f64>,
    pub delta_v: f64,
    pub delta_v_per_channel: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

impl GampOutput {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,delta,delta_v\n");
        for t in &self.trace {
            out.push_str(&format!(
                "{},{},{}\n",
                t.iteration,
                crate::model::fmt_f64(t.delta),
                crate::model::fmt_f64(t.delta_v)
            ));
        }
        out
    }
}

/// Mean, variance and active probability of one denoised super-symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub pi: f64,
}

/// Posterior active probability `ρ/C` of a Bernoulli–Gaussian super-symbol
/// with squared norm `norm2`, evaluated in the log domain.
pub fn bg_active_probability(delta_v: f64, norm2: f64, rho: f64, j: usize) -> f64 {
    // C/ρ = 1 + exp(ln(1−ρ) − ln ρ + (J/2) ln(1 + 1/Δ_v) − ‖q‖²/(2Δ_v(Δ_v+1)))
    let log_ratio = (1.0 - rho).ln() - rho.ln() + 0.5 * j as f64 * (1.0 / delta_v).ln_1p()
        - norm2 / (2.0 * delta_v * (delta_v + 1.0));
    crate::special::sigmoid(-log_ratio)
}

fn bg_denoise_into(delta_v: f64, q: &[f64], rho: f64, mean: &mut [f64], var: &mut [f64]) -> f64 {
    let norm2: f64 = q.iter().map(|v| v * v).sum();
    let pi = bg_active_probability(delta_v, norm2, rho, q.len());
    let shrink = 1.0 / (delta_v + 1.0);
    let active_var = delta_v * shrink;
    for ((qj, m), v) in q.iter().zip(mean.iter_mut()).zip(var.iter_mut()) {
        let mu = qj * shrink;
        *m = pi * mu;
        // π(μ² + σ²) − (πμ)², written so it cannot go negative.
        *v = pi * (1.0 - pi) * mu * mu + pi * active_var;
    }
    pi
}

/// Posterior mean and variance for the Bernoulli–Gaussian prior observed
/// through `q = x + N(0, Δ_v I)`.
pub fn bg_denoise(delta_v: f64, q: &[f64], rho: f64) -> Denoised {
    let mut mean = vec![0.0; q.len()];
    let mut var = vec![0.0; q.len()];
    let pi = bg_denoise_into(delta_v, q, rho, &mut mean, &mut var);
    Denoised { mean, var, pi }
}

/// Posterior probability that a binary super-symbol is all-ones.
pub fn bernoulli_active_probability(delta_v: f64, q_sum: f64, rho: f64, j: usize) -> f64 {
    let log_odds = rho.ln() - (1.0 - rho).ln() + (q_sum - 0.5 * j as f64) / delta_v;
    crate::special::sigmoid(log_odds)
}

fn bernoulli_denoise_into(
    delta_v: f64,
    q: &[f64],
    rho: f64,
    mean: &mut [f64],
    var: &mut [f64],
) -> f64 {
    let pi = bernoulli_active_probability(delta_v, q.iter().sum(), rho, q.len());
    mean.fill(pi);
    var.fill(pi - pi * pi);
    pi
}

/// Posterior mean and variance for the `{0, 1}` prior.
pub fn bernoulli_denoise(delta_v: f64, q: &[f64], rho: f64) -> Denoised {
    let mut mean = vec![0.0; q.len()];
    let mut var = vec![0.0; q.len()];
    let pi = bernoulli_denoise_into(delta_v, q, rho, &mut mean, &mut var);
    Denoised { mean, var, pi }
}

struct ChannelState {
    x_hat: Vec<f64>,
    s: Vec<f64>,
    h: Vec<f64>,
    q: Vec<f64>,
    row_norm2: Vec<f64>,
    delta_v: f64,
}

impl ChannelState {
    fn new(a: ArrayView2<f64>, s0: f64) -> Self {
        let (m, n) = a.dim();
        Self {
            x_hat: vec![0.0; n],
            s: vec![s0; n],
            h: vec![0.0; m],
            q: vec![0.0; n],
            row_norm2: a.rows().into_iter().map(|r| r.dot(&r)).collect(),
            delta_v: f64::NAN,
        }
    }

    /// Output update and pseudo-data construction for one channel.
    fn output_step(
        &mut self,
        a: ArrayView2<f64>,
        y: &[f64],
        channel: &ChannelModel,
        damping: f64,
    ) -> Result<()> {
        let n = a.ncols();
        let mut r_weight = 0.0;
        for (m, row) in a.rows().into_iter().enumerate() {
            let row = row.as_slice().expect("standard layout");
            let (mut kx, mut theta) = (0.0, 0.0);
            for ((&amn, &x), &s) in row.iter().zip(&self.x_hat).zip(&self.s) {
                kx += amn * x;
                theta += amn * amn * s;
            }
            let theta = theta.max(MIN_THETA);
            let k = kx - theta * self.h[m];
            let out = gout(channel, k, y[m], theta)?;
            self.h[m] = (1.0 - damping) * out.g + damping * self.h[m];
            r_weight += out.r * self.row_norm2[m];
        }
        self.delta_v = n as f64 / r_weight;
        if !(self.delta_v.is_finite() && self.delta_v > 0.0) {
            return Ok(());
        }
        self.q.copy_from_slice(&self.x_hat);
        for (row, &hm) in a.rows().into_iter().zip(&self.h) {
            let scaled = self.delta_v * hm;
            for (qn, &amn) in self
                .q
                .iter_mut()
                .zip(row.as_slice().expect("standard layout"))
            {
                *qn += scaled * amn;
            }
        }
        Ok(())
    }
}

pub fn run_gamp(
    measurements: &MeasurementSet,
    prior: &Prior,
    config: &GampConfig,
) -> Result<GampOutput> {
    config.validate()?;
    let rho = prior.rho();
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param(format!(
            "prior sparsity rate must lie in (0, 1), got {rho}"
        )));
    }
    let (n, jn) = (measurements.n(), measurements.j());
    let s0 = match (config.init, &measurements.channel) {
        (InitVariance::PriorTimesNoise, ChannelModel::Awgn { delta_z }) => rho * delta_z,
        _ => rho,
    };
    let matrices: Vec<_> = measurements
        .matrices
        .iter()
        .map(|a| a.as_standard_layout())
        .collect();
    let observations: Vec<Vec<f64>> = measurements
        .observations
        .iter()
        .map(|y| y.to_vec())
        .collect();
    let mut channels: Vec<ChannelState> = matrices
        .iter()
        .map(|a| ChannelState::new(a.view(), s0))
        .collect();

    let mut trace = Vec::new();
    let mut q_rows = vec![0.0; n * jn];
    let mut mean_rows = vec![0.0; n * jn];
    let mut var_rows = vec![0.0; n * jn];
    let mut delta_v = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;

    let diverged = |iteration: usize, reason: String, trace: &[TraceEntry]| Error::Divergence {
        iteration,
        reason,
        trace: trace.iter().map(|t| (t.delta, t.delta_v)).collect(),
    };

    for t in 1..=config.t_max {
        iterations = t;
        channels
            .par_iter_mut()
            .zip(&matrices)
            .zip(&observations)
            .map(|((state, a), y)| {
                state.output_step(a.view(), y, &measurements.channel, config.damping)
            })
            .collect::<Result<Vec<()>>>()?;

        let per_channel: Vec<f64> = channels.iter().map(|c| c.delta_v).collect();
        if let Some(bad) = per_channel.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(diverged(
                t,
                format!("scalar channel variance {bad}"),
                &trace,
            ));
        }
        let total: f64 = per_channel.iter().sum();
        delta_v = match config.delta_aggregation {
            DeltaAggregation::Mean => total / jn as f64,
            DeltaAggregation::Sum => total,
        };

        for (j, c) in channels.iter().enumerate() {
            for (i, &qv) in c.q.iter().enumerate() {
                q_rows[i * jn + j] = qv;
            }
        }
        mean_rows
            .par_chunks_mut(jn)
            .zip(var_rows.par_chunks_mut(jn))
            .zip(q_rows.par_chunks(jn))
            .for_each(|((mean, var), q)| {
                prior.denoise_into(delta_v, q, mean, var);
            });

        let mut change = 0.0;
        for (j, c) in channels.iter_mut().enumerate() {
            for i in 0..n {
                let fresh = mean_rows[i * jn + j];
                let updated = (1.0 - config.damping) * fresh + config.damping * c.x_hat[i];
                change += (updated - c.x_hat[i]).powi(2);
                c.x_hat[i] = updated;
                c.s[i] = var_rows[i * jn + j];
            }
        }
        let delta = change / (n * jn) as f64;
        trace.push(TraceEntry {
            iteration: t,
            delta,
            delta_v,
        });
        if !delta.is_finite() {
            return Err(diverged(t, "non-finite estimate".into(), &trace));
        }
        if delta <= config.epsilon {
            converged = true;
            break;
        }
    }

    let x_hat = Array2::from_shape_fn((n, jn), |(i, j)| channels[j].x_hat[i]);
    let variances = Array2::from_shape_fn((n, jn), |(i, j)| channels[j].s[i]);
    let q = Array2::from_shape_vec((n, jn), q_rows).expect("q shape");
    Ok(GampOutput {
        x_hat,
        variances,
        q,
        delta_v,
        delta_v_per_channel: channels.iter().map(|c| c.delta_v).collect(),
        iterations,
        converged,
        trace,
    })
}
