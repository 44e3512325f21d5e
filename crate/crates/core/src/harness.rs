//! Experiment runner: spec parsing, seeded trial sweeps, aggregation and CSV
//! output.
//!
//! A spec file holds one `key = value` pair per line; `#` starts a comment
//! and list values are comma separated:
//!
//! ```text
//! name = wse_awgn
//! N = 2000
//! J = 1, 3
//! R = 0.3, 0.5, 0.7
//! noise = 0.01
//! rho = 0.1
//! metric = mwse:beta=0.2
//! trials = 10
//! base_seed = 42
//! ```
//!
//! Recognized keys: `name`, `N`, `J`, `R`, `noise`, `rho`, `beta`, `metric`,
//! `trials`, `base_seed`, `t_max`, `epsilon`, `delta_aggregation`, `damping`, `init`,
//! `matrix`, `delta_v_source`, `omp_max_atoms`, `omp_residual_tol`,
//! `omp_threshold`, `roc_points`, `mmae_samples`, `timing`, `output`.
//! `noise` is the AWGN variance `Δ_z`, or the logistic scale `a` for
//! `mae_logistic`.

use crate::channels::SigmoidMixture;
use crate::gamp::{run_gamp, DeltaAggregation, GampConfig, GampOutput, InitVariance, Prior};
use crate::limits::{self, default_roc_grid, roc_area, roc_curve, LimitQuery, RocPoint};
use crate::metric::{apply_metric, Estimate, MetricSpec};
use crate::model::{
    fmt_f64, ChannelModel, InstanceConfig, MatrixKind, PriorKind, ProblemInstance, SignalEnsemble,
};
use crate::omp::{binarize, omp, stack_channels, OmpConfig};
use crate::rng::derive_seed;
use crate::{Error, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const DESK_N: usize = 2000;
pub const DESK_TRIALS: usize = 10;
pub const FULL_N: usize = 10_000;
pub const FULL_TRIALS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Weighted support error over AWGN channels.
    WseAwgn,
    /// Energy-detector ROC of the pseudo data.
    Roc,
    /// Absolute error over logistic channels.
    MaeLogistic,
    /// Active user detection against the OMP baseline.
    Aud,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wse_awgn" => Ok(Self::WseAwgn),
            "roc" => Ok(Self::Roc),
            "mae_logistic" => Ok(Self::MaeLogistic),
            "aud" => Ok(Self::Aud),
            _ => Err(Error::Spec(format!("unknown experiment `{s}`"))),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WseAwgn => "wse_awgn",
            Self::Roc => "roc",
            Self::MaeLogistic => "mae_logistic",
            Self::Aud => "aud",
        })
    }
}

/// Where the `Δ_v` fed to the theoretic limits comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaVSource {
    /// Average of the converged GAMP values over the trials of a sweep point.
    Empirical,
    /// Fixed point of the AWGN state evolution.
    StateEvolution,
}

impl FromStr for DeltaVSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(Self::Empirical),
            "se" => Ok(Self::StateEvolution),
            _ => Err(Error::Spec(format!(
                "unknown delta_v source `{s}` (expected empirical or se)"
            ))),
        }
    }
}

impl fmt::Display for DeltaVSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Empirical => "empirical",
            Self::StateEvolution => "se",
        })
    }
}

fn parse_matrix_kind(s: &str) -> Result<MatrixKind> {
    match s {
        "gaussian_unit_row" => Ok(MatrixKind::GaussianUnitRow),
        "gaussian" => Ok(MatrixKind::GaussianRaw),
        "signed_bernoulli" => Ok(MatrixKind::SignedBernoulli),
        _ => Err(Error::Spec(format!("unknown matrix kind `{s}`"))),
    }
}

fn matrix_kind_name(kind: MatrixKind) -> &'static str {
    match kind {
        MatrixKind::GaussianUnitRow => "gaussian_unit_row",
        MatrixKind::GaussianRaw => "gaussian",
        MatrixKind::SignedBernoulli => "signed_bernoulli",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: ExperimentKind,
    pub n: usize,
    pub j_list: Vec<usize>,
    pub r_list: Vec<f64>,
    pub noise_list: Vec<f64>,
    pub rho: f64,
    pub metric: MetricSpec,
    pub trials: usize,
    pub base_seed: u64,
    pub gamp: GampConfig,
    pub matrix: MatrixKind,
    pub delta_v_source: DeltaVSource,
    /// `None` selects `⌈1.5ρN⌉`.
    pub omp_max_atoms: Option<usize>,
    pub omp_residual_tol: f64,
    pub omp_threshold: f64,
    pub roc_points: usize,
    pub mmae_samples: usize,
    /// Record per-trial wall time. Off by default so reruns are byte-identical.
    pub timing: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Desk-scale defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let (j_list, r_list, noise_list, metric, matrix) = match kind {
            ExperimentKind::WseAwgn => (
                vec![1, 3, 5],
                vec![0.3, 0.4, 0.5, 0.6, 0.7],
                vec![0.01],
                MetricSpec::Mwse { beta: 0.2 },
                MatrixKind::GaussianUnitRow,
            ),
            ExperimentKind::Roc => (
                vec![1, 3, 5],
                vec![0.3],
                vec![0.01],
                MetricSpec::Mwse { beta: 0.2 },
                MatrixKind::GaussianUnitRow,
            ),
            ExperimentKind::MaeLogistic => (
                vec![1, 3],
                vec![0.3, 0.4, 0.5, 0.6, 0.7],
                vec![10.0, 30.0],
                MetricSpec::Mae,
                MatrixKind::GaussianUnitRow,
            ),
            ExperimentKind::Aud => (
                vec![1],
                (0..9).map(|i| 0.2 + 0.05 * i as f64).collect(),
                vec![0.1, 10f64.powf(-1.5), 0.01],
                MetricSpec::Hamming,
                MatrixKind::SignedBernoulli,
            ),
        };
        Self {
            name: kind,
            n: DESK_N,
            j_list,
            r_list,
            noise_list,
            rho: 0.1,
            metric,
            trials: DESK_TRIALS,
            base_seed: 0,
            gamp: GampConfig::default(),
            matrix,
            delta_v_source: DeltaVSource::Empirical,
            omp_max_atoms: None,
            omp_residual_tol: 0.0,
            omp_threshold: 0.5,
            roc_points: 200,
            mmae_samples: 200_000,
            timing: false,
            output: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Spec(format!("cannot read spec file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if entries.iter().any(|(_, k, _)| *k == key) {
                return Err(Error::Parse {
                    line: line_no,
                    key,
                    message: "duplicate key".into(),
                });
            }
            entries.push((line_no, key, value));
        }
        let Some((_, _, name)) = entries.iter().find(|(_, k, _)| k == "name") else {
            return Err(Error::Parse {
                line: 0,
                key: "name".into(),
                message: "missing required key".into(),
            });
        };
        let name_line = entries
            .iter()
            .find(|(_, k, _)| k == "name")
            .map(|e| e.0)
            .unwrap_or(0);
        let kind: ExperimentKind = name.parse().map_err(|e: Error| Error::Parse {
            line: name_line,
            key: "name".into(),
            message: e.to_string(),
        })?;
        let mut spec = Self::defaults(kind);
        let mut metric_set = false;
        let mut beta = None;

        for (line, key, value) in &entries {
            let bad = |message: String| Error::Parse {
                line: *line,
                key: key.clone(),
                message,
            };
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("`{v}` is not a number")))
            };
            let count = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| bad(format!("`{v}` is not a nonnegative integer")))
            };
            let list =
                |v: &str| -> Vec<String> { v.split(',').map(|s| s.trim().to_string()).collect() };
            match key.as_str() {
                "name" => {}
                "N" => spec.n = count(value)?,
                "J" => {
                    spec.j_list = list(value)
                        .iter()
                        .map(|v| count(v))
                        .collect::<Result<_>>()?
                }
                "R" => spec.r_list = list(value).iter().map(|v| num(v)).collect::<Result<_>>()?,
                "noise" => {
                    spec.noise_list = list(value).iter().map(|v| num(v)).collect::<Result<_>>()?
                }
                "rho" => spec.rho = num(value)?,
                "beta" => beta = Some(num(value)?),
                "metric" => {
                    spec.metric = value.parse().map_err(|e: Error| bad(e.to_string()))?;
                    metric_set = true;
                }
                "trials" => spec.trials = count(value)?,
                "base_seed" => {
                    spec.base_seed = value
                        .parse()
                        .map_err(|_| bad(format!("`{value}` is not a u64")))?
                }
                "t_max" => spec.gamp.t_max = count(value)?,
                "epsilon" => spec.gamp.epsilon = num(value)?,
                "delta_aggregation" => {
                    spec.gamp.delta_aggregation = match value.as_str() {
                        "mean" => DeltaAggregation::Mean,
                        "sum" => DeltaAggregation::Sum,
                        _ => return Err(bad(format!("expected mean or sum, got `{value}`"))),
                    }
                }
                "damping" => spec.gamp.damping = num(value)?,
                "init" => {
                    spec.gamp.init = match value.as_str() {
                        "prior" => InitVariance::Prior,
                        "prior_noise" => InitVariance::PriorTimesNoise,
                        _ => {
                            return Err(bad(format!(
                                "expected prior or prior_noise, got `{value}`"
                            )))
                        }
                    }
                }
                "matrix" => {
                    spec.matrix = parse_matrix_kind(value).map_err(|e| bad(e.to_string()))?
                }
                "delta_v_source" => {
                    spec.delta_v_source = value.parse().map_err(|e: Error| bad(e.to_string()))?
                }
                "omp_max_atoms" => spec.omp_max_atoms = Some(count(value)?),
                "omp_residual_tol" => spec.omp_residual_tol = num(value)?,
                "omp_threshold" => spec.omp_threshold = num(value)?,
                "roc_points" => spec.roc_points = count(value)?,
                "mmae_samples" => spec.mmae_samples = count(value)?,
                "timing" => {
                    spec.timing = value
                        .parse()
                        .map_err(|_| bad(format!("expected true or false, got `{value}`")))?
                }
                "output" => spec.output = Some(PathBuf::from(value)),
                _ => return Err(bad("unknown key".into())),
            }
        }
        if let Some(beta) = beta {
            let from_beta = MetricSpec::mwse(beta)?;
            if metric_set && spec.metric != from_beta {
                let line = entries
                    .iter()
                    .find(|(_, k, _)| k == "beta")
                    .map(|e| e.0)
                    .unwrap_or(0);
                return Err(Error::Parse {
                    line,
                    key: "beta".into(),
                    message: format!("conflicts with metric {}", spec.metric),
                });
            }
            spec.metric = from_beta;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Switches to the full-scale problem size.
    pub fn full_scale(&mut self) {
        self.n = FULL_N;
        self.trials = FULL_TRIALS;
    }

    pub fn prior(&self) -> Prior {
        match self.name {
            ExperimentKind::Aud => Prior::BernoulliBinary { rho: self.rho },
            _ => Prior::BernoulliGaussian { rho: self.rho },
        }
    }

    fn prior_kind(&self) -> PriorKind {
        match self.name {
            ExperimentKind::Aud => PriorKind::BernoulliBinary,
            _ => PriorKind::BernoulliGaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(Error::Spec(m));
        if self.n == 0 {
            return spec_err("N must be positive".into());
        }
        if self.trials == 0 {
            return spec_err("trials must be at least 1".into());
        }
        if self.j_list.is_empty() || self.r_list.is_empty() || self.noise_list.is_empty() {
            return spec_err("sweep lists J, R and noise must be nonempty".into());
        }
        if self.j_list.contains(&0) {
            return spec_err("J values must be positive".into());
        }
        if let Some(r) = self.r_list.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return spec_err(format!("measurement rate {r} must be positive"));
        }
        if let Some(v) = self
            .noise_list
            .iter()
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return spec_err(format!("noise parameter {v} must be positive"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return spec_err(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        self.gamp
            .validate()
            .map_err(|e| Error::Spec(e.to_string()))?;
        match (self.name, self.metric) {
            (ExperimentKind::Aud, MetricSpec::Mae) => {
                return spec_err(
                    "the aud experiment uses a {0, 1} prior; mae is not available".into(),
                )
            }
            (ExperimentKind::Aud, _) => {}
            (_, MetricSpec::Hamming) => {
                return spec_err(format!(
                    "{} uses a Bernoulli-Gaussian prior; hamming needs the {{0, 1}} prior",
                    self.name
                ))
            }
            _ => {}
        }
        if let MetricSpec::Mwse { beta } = self.metric {
            if !(beta > 0.0 && beta < 1.0) {
                return spec_err(format!(
                    "beta = {beta} gives a constant estimator; use a value in (0, 1)"
                ));
            }
        }
        if self.delta_v_source == DeltaVSource::StateEvolution
            && !matches!(self.name, ExperimentKind::WseAwgn | ExperimentKind::Roc)
        {
            return spec_err(format!("delta_v_source = se is only defined for Bernoulli-Gaussian AWGN experiments, not {}", self.name));
        }
        if self.name == ExperimentKind::Roc && self.roc_points < 3 {
            return spec_err("roc_points must be at least 3".into());
        }
        if self.name == ExperimentKind::MaeLogistic
            && self.metric == MetricSpec::Mae
            && self.mmae_samples < 100
        {
            return spec_err("mmae_samples must be at least 100".into());
        }
        Ok(())
    }

    /// Normalized rendering of every field that affects the results.
    pub fn canonical(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let agg = match self.gamp.delta_aggregation {
            DeltaAggregation::Mean => "mean",
            DeltaAggregation::Sum => "sum",
        };
        [
            format!("name={}", self.name),
            format!("N={}", self.n),
            format!(
                "J={}",
                join(self.j_list.iter().map(|j| j.to_string()).collect())
            ),
            format!(
                "R={}",
                join(self.r_list.iter().map(|&r| fmt_f64(r)).collect())
            ),
            format!(
                "noise={}",
                join(self.noise_list.iter().map(|&v| fmt_f64(v)).collect())
            ),
            format!("rho={}", fmt_f64(self.rho)),
            format!("metric={}", self.metric),
            format!("trials={}", self.trials),
            format!("base_seed={}", self.base_seed),
            format!("t_max={}", self.gamp.t_max),
            format!("epsilon={}", fmt_f64(self.gamp.epsilon)),
            format!("delta_aggregation={agg}"),
            format!("damping={}", fmt_f64(self.gamp.damping)),
            format!(
                "init={}",
                match self.gamp.init {
                    InitVariance::Prior => "prior",
                    InitVariance::PriorTimesNoise => "prior_noise",
                }
            ),
            format!("matrix={}", matrix_kind_name(self.matrix)),
            format!("delta_v_source={}", self.delta_v_source),
            format!(
                "omp_max_atoms={}",
                self.omp_max_atoms
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "auto".into())
            ),
            format!("omp_residual_tol={}", fmt_f64(self.omp_residual_tol)),
            format!("omp_threshold={}", fmt_f64(self.omp_threshold)),
            format!("roc_points={}", self.roc_points),
            format!("mmae_samples={}", self.mmae_samples),
        ]
        .join("\n")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sweep points in output order: noise outermost, then `J`, then `R`.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let mut points = Vec::new();
        for &noise in &self.noise_list {
            for &j in &self.j_list {
                for &rate in &self.r_list {
                    points.push(SweepPoint {
                        index: points.len(),
                        rate,
                        j,
                        noise,
                    });
                }
            }
        }
        points
    }

    fn channel(&self, noise: f64) -> Result<ChannelModel> {
        match self.name {
            ExperimentKind::MaeLogistic => {
                ChannelModel::logistic(noise, SigmoidMixture::standard())
            }
            _ => ChannelModel::awgn(noise),
        }
    }

    fn metric_label(&self) -> String {
        match self.name {
            ExperimentKind::Roc => "roc_area".into(),
            _ => self.metric.to_string(),
        }
    }

    pub fn trial_seed(&self, sweep_index: usize, trial_index: usize) -> u64 {
        derive_seed(self.base_seed, &[sweep_index as u64, trial_index as u64])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub rate: f64,
    pub j: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// GAMP followed by the metric-optimal denoiser.
    Amp,
    Omp,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Amp => "amp",
            Estimator::Omp => "omp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub sweep_index: usize,
    pub trial_index: usize,
    pub seed: u64,
    pub rate: f64,
    pub j: usize,
    pub noise_param: f64,
    pub estimator: Estimator,
    /// `None` when the trial diverged.
    pub empirical_error: Option<f64>,
    pub theoretic_error: Option<f64>,
    pub delta_v_final: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Option<f64>,
    /// Divergence reason or solver warning, empty otherwise.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub sweep_index: usize,
    pub rate: f64,
    pub j: usize,
    pub noise_param: f64,
    pub estimator: Estimator,
    pub mean: f64,
    pub std_error: f64,
    /// Trials that produced an error value.
    pub n_used: usize,
    pub theoretic_error: Option<f64>,
    /// `Δ_v` at which the theory was evaluated.
    pub delta_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocRow {
    pub sweep_index: usize,
    pub rate: f64,
    pub j: usize,
    pub noise_param: f64,
    pub delta_v: f64,
    pub point: RocPoint,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRecord>,
    pub roc: Vec<RocRow>,
}

pub const CSV_HEADER: &str = "kind,experiment,sweep_index,trial_index,seed,config_hash,R,J,noise_param,metric,estimator,\
empirical_error,std_error,n_trials,theoretic_error,delta_v,delta_v_source,iterations,converged,t_max,epsilon,\
wall_time,threshold,fpr,tpr,note";

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let spec = &self.spec;
        let metric = spec.metric_label();
        let common = |kind: &str,
                      sweep: usize,
                      trial: String,
                      seed: u64,
                      rate: f64,
                      j: usize,
                      noise: f64,
                      est: &str| {
            format!(
                "{kind},{},{sweep},{trial},{seed},{},{},{j},{},{metric},{est}",
                spec.name,
                self.config_hash,
                fmt_f64(rate),
                fmt_f64(noise)
            )
        };
        let gamp_tail = format!("{},{}", spec.gamp.t_max, fmt_f64(spec.gamp.epsilon));
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for t in &self.trials {
            out.push_str(&common(
                "trial",
                t.sweep_index,
                t.trial_index.to_string(),
                t.seed,
                t.rate,
                t.j,
                t.noise_param,
                &t.estimator.to_string(),
            ));
            out.push_str(&format!(
                ",{},,,{},{},{},{},{},{},{},,,,{}\n",
                opt(t.empirical_error),
                opt(t.theoretic_error),
                opt(t.delta_v_final),
                if t.estimator == Estimator::Amp {
                    "gamp"
                } else {
                    ""
                },
                t.iterations,
                t.converged,
                gamp_tail,
                opt(t.wall_time),
                t.note.replace(',', ";"),
            ));
        }
        for a in &self.aggregates {
            out.push_str(&common(
                "aggregate",
                a.sweep_index,
                String::new(),
                spec.base_seed,
                a.rate,
                a.j,
                a.noise_param,
                &a.estimator.to_string(),
            ));
            let source = if a.theoretic_error.is_some() {
                spec.delta_v_source.to_string()
            } else {
                String::new()
            };
            out.push_str(&format!(
                ",{},{},{},{},{},{},,,{},,,,,\n",
                fmt_f64(a.mean),
                fmt_f64(a.std_error),
                a.n_used,
                opt(a.theoretic_error),
                opt(a.delta_v),
                source,
                gamp_tail,
            ));
        }
        for r in &self.roc {
            out.push_str(&common(
                "roc",
                r.sweep_index,
                String::new(),
                spec.base_seed,
                r.rate,
                r.j,
                r.noise_param,
                "theory",
            ));
            out.push_str(&format!(
                ",,,,,{},{},,,{},,{},{},{},\n",
                fmt_f64(r.delta_v),
                spec.delta_v_source,
                gamp_tail,
                fmt_f64(r.point.threshold),
                fmt_f64(r.point.fpr),
                fmt_f64(r.point.tpr),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn aggregate(&self, sweep_index: usize, estimator: Estimator) -> Option<&AggregateRecord> {
        self.aggregates
            .iter()
            .find(|a| a.sweep_index == sweep_index && a.estimator == estimator)
    }
}

/// `(1/N) Σ_n d(x_n, x̂_n)` for the chosen metric.
pub fn compute_empirical_error(
    truth: &SignalEnsemble,
    estimate: &Estimate,
    metric: &MetricSpec,
) -> Result<f64> {
    let (n, j) = truth.entries.dim();
    if n == 0 {
        return Err(Error::param("empty signal"));
    }
    let nf = n as f64;
    match (metric, estimate) {
        (MetricSpec::Mwse { beta }, est) => {
            let support: Vec<bool> = match est {
                Estimate::Support(s) => s.clone(),
                Estimate::Signal(x) => {
                    check_shape(x.dim(), (n, j))?;
                    x.rows()
                        .into_iter()
                        .map(|r| r.iter().any(|&v| v != 0.0))
                        .collect()
                }
            };
            if support.len() != n {
                return Err(Error::param(format!(
                    "support has {} entries, signal has {n}",
                    support.len()
                )));
            }
            let loss: f64 = truth
                .support
                .iter()
                .zip(&support)
                .map(|(&b, &bh)| match (b, bh) {
                    (false, true) => *beta,
                    (true, false) => 1.0 - beta,
                    _ => 0.0,
                })
                .sum();
            Ok(loss / nf)
        }
        (_, Estimate::Support(_)) => Err(Error::param(format!(
            "metric {metric} needs a signal estimate"
        ))),
        (MetricSpec::Mse, Estimate::Signal(x)) => {
            check_shape(x.dim(), (n, j))?;
            Ok((x - &truth.entries).mapv(|d| d * d).sum() / nf)
        }
        (MetricSpec::Hamming, Estimate::Signal(x)) => {
            check_shape(x.dim(), (n, j))?;
            let wrong = x
                .rows()
                .into_iter()
                .zip(truth.entries.rows())
                .filter(|(a, b)| a != b)
                .count();
            Ok(wrong as f64 / nf)
        }
        (MetricSpec::Mae, Estimate::Signal(x)) => {
            check_shape(x.dim(), (n, j))?;
            Ok((x - &truth.entries).mapv(f64::abs).sum() / (nf * j as f64))
        }
    }
}

fn check_shape(got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::param(format!(
            "estimate has shape {got:?}, signal has {want:?}"
        )))
    }
}

/// Theoretic limit for the spec's metric at `delta_v`; `None` where only a
/// Monte Carlo evaluation is available and `mc_seed` is absent.
fn theory(
    spec: &ExperimentSpec,
    delta_v: f64,
    j: usize,
    mc_seed: Option<u64>,
) -> Result<Option<f64>> {
    let query = LimitQuery::new(delta_v, spec.rho, j);
    let value = match (spec.name, spec.metric) {
        (ExperimentKind::Roc, _) => roc_area(&roc_curve(
            delta_v,
            j,
            &default_roc_grid(delta_v, j, spec.roc_points),
        )?),
        (ExperimentKind::Aud, MetricSpec::Hamming) => limits::mmhd(&query)?.value,
        (ExperimentKind::Aud, _) => return Ok(None),
        (_, MetricSpec::Mwse { beta }) => limits::mmwse(&query.with_beta(beta))?.value,
        (_, MetricSpec::Mse) => limits::mmse_of_delta(delta_v, spec.rho, j)?,
        (_, MetricSpec::Mae) => match mc_seed {
            Some(seed) => limits::mmae(&query, spec.mmae_samples, seed)?.value,
            None => return Ok(None),
        },
        (_, MetricSpec::Hamming) => return Ok(None),
    };
    Ok(Some(value))
}

/// Area under the empirical ROC of the energy detector `‖q_n‖² > t`.
fn empirical_roc_area(output: &GampOutput, truth: &SignalEnsemble, points: usize) -> f64 {
    let energies: Vec<f64> = output.q.rows().into_iter().map(|r| r.dot(&r)).collect();
    let positives = truth.support.iter().filter(|&&b| b).count().max(1) as f64;
    let negatives = truth.support.iter().filter(|&&b| !b).count().max(1) as f64;
    let curve: Vec<RocPoint> = default_roc_grid(output.delta_v, output.q.ncols(), points)
        .into_iter()
        .map(|t| {
            let (mut tp, mut fp) = (0.0, 0.0);
            for (&e, &b) in energies.iter().zip(&truth.support) {
                if e > t {
                    if b {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            RocPoint {
                threshold: t,
                fpr: fp / negatives,
                tpr: tp / positives,
            }
        })
        .collect();
    roc_area(&curve)
}

fn run_trial(spec: &ExperimentSpec, point: &SweepPoint, trial: usize) -> Result<Vec<TrialRecord>> {
    let seed = spec.trial_seed(point.index, trial);
    let config = InstanceConfig {
        n: spec.n,
        j: point.j,
        rate: point.rate,
        rho: spec.rho,
        prior: spec.prior_kind(),
        matrix: spec.matrix,
        channel: spec.channel(point.noise)?,
    };
    if config.m() == 0 {
        return Err(Error::Spec(format!(
            "R = {} gives no measurements at N = {}",
            point.rate, spec.n
        )));
    }
    let start = Instant::now();
    let instance = ProblemInstance::generate(&config, seed)?;
    let record = |estimator| TrialRecord {
        sweep_index: point.index,
        trial_index: trial,
        seed,
        rate: point.rate,
        j: point.j,
        noise_param: point.noise,
        estimator,
        empirical_error: None,
        theoretic_error: None,
        delta_v_final: None,
        iterations: 0,
        converged: false,
        wall_time: None,
        note: String::new(),
    };
    let prior = spec.prior();
    let mut amp = record(Estimator::Amp);
    match run_gamp(&instance.measurements, &prior, &spec.gamp) {
        Ok(output) => {
            amp.iterations = output.iterations;
            amp.converged = output.converged;
            amp.delta_v_final = Some(output.delta_v);
            amp.empirical_error = Some(match spec.name {
                ExperimentKind::Roc => {
                    empirical_roc_area(&output, &instance.signal, spec.roc_points)
                }
                _ => {
                    let est = apply_metric(&output, &spec.metric, &prior)?;
                    compute_empirical_error(&instance.signal, &est, &spec.metric)?
                }
            });
            amp.theoretic_error = theory(spec, output.delta_v, point.j, None)?;
        }
        Err(e) if e.is_spec_error() => return Err(e),
        Err(e) => {
            if let Error::Divergence { iteration, .. } = &e {
                amp.iterations = *iteration;
            }
            amp.note = e.to_string();
        }
    }
    if spec.timing {
        amp.wall_time = Some(start.elapsed().as_secs_f64());
    }
    let mut records = vec![amp];

    if spec.name == ExperimentKind::Aud {
        let start = Instant::now();
        let mut rec = record(Estimator::Omp);
        let (a, y) = stack_channels(
            &instance.measurements.matrices,
            &instance.measurements.observations,
        )?;
        let cfg = OmpConfig {
            max_atoms: spec
                .omp_max_atoms
                .unwrap_or(OmpConfig::for_sparsity(spec.rho, spec.n).max_atoms),
            residual_tol: spec.omp_residual_tol,
            threshold: spec.omp_threshold,
        };
        let result = omp(a.view(), y.view(), &cfg)?;
        let bits = binarize(result.x_hat.view(), cfg.threshold);
        let est = ndarray::Array2::from_shape_fn((spec.n, point.j), |(n, _)| bits[n]);
        rec.empirical_error = Some(compute_empirical_error(
            &instance.signal,
            &Estimate::Signal(est),
            &MetricSpec::Hamming,
        )?);
        rec.iterations = result.support.len();
        rec.converged = true;
        if result.rank_deficient {
            rec.note = "rank-deficient least squares".into();
        }
        if spec.timing {
            rec.wall_time = Some(start.elapsed().as_secs_f64());
        }
        records.push(rec);
    }
    Ok(records)
}

fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every sweep point and trial. Trials execute in parallel; results are
/// collected in `(sweep_index, trial_index)` order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let points = spec.sweep_points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<Result<Vec<TrialRecord>>> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(spec, &points[p], t))
        .collect();
    let mut trials = Vec::with_capacity(jobs.len());
    for outcome in outcomes {
        trials.extend(outcome?);
    }

    let estimators: &[Estimator] = if spec.name == ExperimentKind::Aud {
        &[Estimator::Amp, Estimator::Omp]
    } else {
        &[Estimator::Amp]
    };
    let mut aggregates = Vec::new();
    let mut roc = Vec::new();
    for point in &points {
        let rows: Vec<&TrialRecord> = trials
            .iter()
            .filter(|t| t.sweep_index == point.index)
            .collect();
        let delta_v = match spec.delta_v_source {
            DeltaVSource::Empirical => {
                let dvs: Vec<f64> = rows
                    .iter()
                    .filter(|t| t.estimator == Estimator::Amp)
                    .filter_map(|t| t.delta_v_final)
                    .collect();
                (!dvs.is_empty()).then(|| dvs.iter().sum::<f64>() / dvs.len() as f64)
            }
            DeltaVSource::StateEvolution => Some(
                limits::state_evolution_delta(point.rate, spec.rho, point.j, point.noise)?.delta_v,
            ),
        };
        for &estimator in estimators {
            let values: Vec<f64> = rows
                .iter()
                .filter(|t| t.estimator == estimator)
                .filter_map(|t| t.empirical_error)
                .collect();
            let (mean, std_error) = mean_and_std_error(&values);
            let theoretic = match (estimator, delta_v) {
                (Estimator::Amp, Some(dv)) => theory(
                    spec,
                    dv,
                    point.j,
                    Some(derive_seed(spec.base_seed, &[3, point.index as u64])),
                )?,
                _ => None,
            };
            aggregates.push(AggregateRecord {
                sweep_index: point.index,
                rate: point.rate,
                j: point.j,
                noise_param: point.noise,
                estimator,
                mean,
                std_error,
                n_used: values.len(),
                theoretic_error: theoretic,
                delta_v: if estimator == Estimator::Amp {
                    delta_v
                } else {
                    None
                },
            });
        }
        if let (ExperimentKind::Roc, Some(dv)) = (spec.name, delta_v) {
            for p in roc_curve(dv, point.j, &default_roc_grid(dv, point.j, spec.roc_points))? {
                roc.push(RocRow {
                    sweep_index: point.index,
                    rate: point.rate,
                    j: point.j,
                    noise_param: point.noise,
                    delta_v: dv,
                    point: p,
                });
            }
        }
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        config_hash: spec.config_hash(),
        trials,
        aggregates,
        roc,
    })
}

/// Runs one trial of one sweep point and returns the GAMP output, for
/// iteration traces.
pub fn trace_trial(
    spec: &ExperimentSpec,
    sweep_index: usize,
    trial_index: usize,
) -> Result<GampOutput> {
    spec.validate()?;
    let points = spec.sweep_points();
    let point = points.get(sweep_index).ok_or_else(|| {
        Error::Spec(format!(
            "sweep index {sweep_index} out of range (spec has {} points)",
            points.len()
        ))
    })?;
    let config = InstanceConfig {
        n: spec.n,
        j: point.j,
        rate: point.rate,
        rho: spec.rho,
        prior: spec.prior_kind(),
        matrix: spec.matrix,
        channel: spec.channel(point.noise)?,
    };
    let instance = ProblemInstance::generate(&config, spec.trial_seed(sweep_index, trial_index))?;
    run_gamp(&instance.measurements, &spec.prior(), &spec.gamp)
}
