//! Problem-instance data model: jointly sparse signals, sensing matrices and
//! noisy measurements.

use crate::channels::SigmoidMixture;
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::sigmoid;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Active super-symbols are `N(0, I_J)`.
    BernoulliGaussian,
    /// Active super-symbols are the all-ones vector.
    BernoulliBinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// `N(0, 1/N)` entries, each row rescaled to unit Euclidean norm.
    GaussianUnitRow,
    /// Raw `N(0, 1/N)` entries without row normalization.
    GaussianRaw,
    /// Uniform `±1/√N` entries.
    SignedBernoulli,
}

/// Measurement channel `y = Z(w)` applied entrywise to `w = A x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    Awgn {
        delta_z: f64,
    },
    Logistic {
        a: f64,
        mixture: Arc<SigmoidMixture>,
    },
}

impl ChannelModel {
    pub fn awgn(delta_z: f64) -> Result<Self> {
        if !(delta_z > 0.0 && delta_z.is_finite()) {
            return Err(Error::param(format!(
                "AWGN noise variance must be positive, got {delta_z}"
            )));
        }
        Ok(ChannelModel::Awgn { delta_z })
    }

    pub fn logistic(a: f64, mixture: Arc<SigmoidMixture>) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::param(format!(
                "logistic scale must be positive, got {a}"
            )));
        }
        Ok(ChannelModel::Logistic { a, mixture })
    }

    pub fn noise_param(&self) -> f64 {
        match self {
            ChannelModel::Awgn { delta_z } => *delta_z,
            ChannelModel::Logistic { a, .. } => *a,
        }
    }
}

/// `N × J` matrix of super-symbols sharing one support mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalEnsemble {
    pub entries: Array2<f64>,
    pub support: Vec<bool>,
    pub rho: f64,
    pub prior: PriorKind,
}

impl SignalEnsemble {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.entries.ncols()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "sparsity rate must lie in (0, 1), got {rho}"
        )))
    }
}

pub fn generate_signal(
    n: usize,
    j: usize,
    rho: f64,
    prior: PriorKind,
    seed: u64,
) -> Result<SignalEnsemble> {
    check_rho(rho)?;
    if n == 0 || j == 0 {
        return Err(Error::param("signal dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let support: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < rho).collect();
    let mut ensemble = signal_with_support(support, j, prior, &mut rng)?;
    ensemble.rho = rho;
    Ok(ensemble)
}

/// Fills active rows of a fixed support mask according to `prior`.
pub fn signal_with_support<R: Rng>(
    support: Vec<bool>,
    j: usize,
    prior: PriorKind,
    rng: &mut R,
) -> Result<SignalEnsemble> {
    if support.is_empty() || j == 0 {
        return Err(Error::param("signal dimensions must be positive"));
    }
    let n = support.len();
    let mut entries = Array2::zeros((n, j));
    for (mut row, _) in entries
        .rows_mut()
        .into_iter()
        .zip(&support)
        .filter(|(_, &active)| active)
    {
        match prior {
            PriorKind::BernoulliGaussian => {
                row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal))
            }
            PriorKind::BernoulliBinary => row.fill(1.0),
        }
    }
    let active = support.iter().filter(|&&b| b).count();
    Ok(SignalEnsemble {
        entries,
        support,
        rho: active as f64 / n as f64,
        prior,
    })
}

pub fn generate_matrix(m: usize, n: usize, kind: MatrixKind, seed: u64) -> Result<Array2<f64>> {
    if m == 0 || n == 0 {
        return Err(Error::param("matrix dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut a = match kind {
        MatrixKind::GaussianUnitRow | MatrixKind::GaussianRaw => {
            Array2::from_shape_simple_fn((m, n), || scale * rng.sample::<f64, _>(StandardNormal))
        }
        MatrixKind::SignedBernoulli => {
            Array2::from_shape_simple_fn(
                (m, n),
                || if rng.random::<bool>() { scale } else { -scale },
            )
        }
    };
    if kind == MatrixKind::GaussianUnitRow {
        for mut row in a.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(a)
}

pub fn measure(
    a: &Array2<f64>,
    x: ArrayView1<f64>,
    channel: &ChannelModel,
    seed: u64,
) -> Result<Array1<f64>> {
    if a.ncols() != x.len() {
        return Err(Error::param(format!(
            "matrix has {} columns but signal has {} entries",
            a.ncols(),
            x.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let w = a.dot(&x);
    Ok(match channel {
        ChannelModel::Awgn { delta_z } => {
            let sd = delta_z.sqrt();
            w.mapv(|wm| wm + sd * rng.sample::<f64, _>(StandardNormal))
        }
        ChannelModel::Logistic { a: scale, .. } => w.mapv(|wm| {
            if rng.random::<f64>() < sigmoid(scale * wm) {
                1.0
            } else {
                0.0
            }
        }),
    })
}

/// Per-channel sensing matrices and observations.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub matrices: Vec<Array2<f64>>,
    pub observations: Vec<Array1<f64>>,
    pub channel: ChannelModel,
}

impl MeasurementSet {
    pub fn new(
        matrices: Vec<Array2<f64>>,
        observations: Vec<Array1<f64>>,
        channel: ChannelModel,
    ) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::param("at least one channel is required"))?;
        let dim = first.dim();
        if matrices.iter().any(|a| a.dim() != dim) {
            return Err(Error::param("all channel matrices must share dimensions"));
        }
        if observations.len() != matrices.len() || observations.iter().any(|y| y.len() != dim.0) {
            return Err(Error::param(
                "one length-M observation vector is required per channel",
            ));
        }
        Ok(Self {
            matrices,
            observations,
            channel,
        })
    }

    pub fn m(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn n(&self) -> usize {
        self.matrices[0].ncols()
    }

    pub fn j(&self) -> usize {
        self.matrices.len()
    }

    pub fn rate(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub n: usize,
    pub j: usize,
    pub rate: f64,
    pub rho: f64,
    pub prior: PriorKind,
    pub matrix: MatrixKind,
    pub channel: ChannelModel,
}

impl InstanceConfig {
    pub fn m(&self) -> usize {
        ((self.rate * self.n as f64).round() as usize).max(1)
    }
}

/// A fully generated problem: ground truth plus what the estimator sees.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub config: InstanceConfig,
    pub seed: u64,
    pub signal: SignalEnsemble,
    pub measurements: MeasurementSet,
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct InstanceHeader {
    format_version: u32,
    n: usize,
    m: usize,
    j: usize,
    rate: f64,
    rho: f64,
    prior: PriorKind,
    matrix: MatrixKind,
    channel: ChannelModel,
    seed: u64,
}

impl ProblemInstance {
    /// Generates signal, matrices and observations from `seed` using the
    /// stream layout documented in [`crate::rng`].
    pub fn generate(config: &InstanceConfig, seed: u64) -> Result<Self> {
        check_rho(config.rho)?;
        if !(config.rate > 0.0) {
            return Err(Error::param(format!(
                "measurement rate must be positive, got {}",
                config.rate
            )));
        }
        let signal = generate_signal(
            config.n,
            config.j,
            config.rho,
            config.prior,
            derive_seed(seed, &[0]),
        )?;
        let m = config.m();
        let mut matrices = Vec::with_capacity(config.j);
        let mut observations = Vec::with_capacity(config.j);
        for ch in 0..config.j {
            let a = generate_matrix(
                m,
                config.n,
                config.matrix,
                derive_seed(seed, &[1, ch as u64]),
            )?;
            let y = measure(
                &a,
                signal.entries.column(ch),
                &config.channel,
                derive_seed(seed, &[2, ch as u64]),
            )?;
            matrices.push(a);
            observations.push(y);
        }
        let measurements = MeasurementSet::new(matrices, observations, config.channel.clone())?;
        Ok(Self {
            config: config.clone(),
            seed,
            signal,
            measurements,
        })
    }

    /// Writes `header.json`, `signal.csv`, `matrix_<j>.csv` and `obs_<j>.csv`
    /// into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = InstanceHeader {
            format_version: FORMAT_VERSION,
            n: self.measurements.n(),
            m: self.measurements.m(),
            j: self.measurements.j(),
            rate: self.config.rate,
            rho: self.config.rho,
            prior: self.config.prior,
            matrix: self.config.matrix,
            channel: self.config.channel.clone(),
            seed: self.seed,
        };
        fs::write(
            dir.join("header.json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        fs::write(dir.join("signal.csv"), matrix_to_csv(&self.signal.entries))?;
        for (ch, (a, y)) in self
            .measurements
            .matrices
            .iter()
            .zip(&self.measurements.observations)
            .enumerate()
        {
            fs::write(dir.join(format!("matrix_{ch}.csv")), matrix_to_csv(a))?;
            let col = y.view().insert_axis(ndarray::Axis(1));
            fs::write(
                dir.join(format!("obs_{ch}.csv")),
                matrix_to_csv(&col.to_owned()),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: InstanceHeader =
            serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Spec(format!(
                "unsupported instance format version {}",
                header.format_version
            )));
        }
        let entries = csv_to_matrix(
            &fs::read_to_string(dir.join("signal.csv"))?,
            header.n,
            header.j,
        )?;
        let support = entries
            .rows()
            .into_iter()
            .map(|r| r.iter().any(|&v| v != 0.0))
            .collect();
        let signal = SignalEnsemble {
            entries,
            support,
            rho: header.rho,
            prior: header.prior,
        };
        let mut matrices = Vec::with_capacity(header.j);
        let mut observations = Vec::with_capacity(header.j);
        for ch in 0..header.j {
            matrices.push(csv_to_matrix(
                &fs::read_to_string(dir.join(format!("matrix_{ch}.csv")))?,
                header.m,
                header.n,
            )?);
            let y = csv_to_matrix(
                &fs::read_to_string(dir.join(format!("obs_{ch}.csv")))?,
                header.m,
                1,
            )?;
            observations.push(y.column(0).to_owned());
        }
        let config = InstanceConfig {
            n: header.n,
            j: header.j,
            rate: header.rate,
            rho: header.rho,
            prior: header.prior,
            matrix: header.matrix,
            channel: header.channel.clone(),
        };
        let measurements = MeasurementSet::new(matrices, observations, header.channel)?;
        Ok(Self {
            config,
            seed: header.seed,
            signal,
            measurements,
        })
    }
}

/// Full-precision (17 significant digit) CSV encoding.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn matrix_to_csv(a: &Array2<f64>) -> String {
    let mut out = String::with_capacity(a.len() * 24);
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn csv_to_matrix(text: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let before = data.len();
        for field in line.split(',') {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Spec(format!("row {i}: {e}")))?,
            );
        }
        if data.len() - before != cols {
            return Err(Error::Spec(format!(
                "row {i} has {} columns, expected {cols}",
                data.len() - before
            )));
        }
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Spec(format!("matrix shape mismatch: {e}")))
}
