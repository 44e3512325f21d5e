//! C ABI over `mmv-core`.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`MmvStatus`]; results go through out
//!   pointers. On failure a message is stored per thread and can be fetched
//!   with [`mmv_last_error_message`].
//! * Heap objects are opaque handles created by `*_new`/`*_generate`/`*_run`
//!   functions and released by the matching `*_free`. Freeing `NULL` is a
//!   no-op.
//! * Matrices cross the boundary as row-major `N × J` buffers of `double`.
//! * Panics never unwind into the caller; they map to `MMV_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use mmv_core::channels::{awgn_gout, logistic_moments, GoutResult, SigmoidMixture};
use mmv_core::gamp::{self, DeltaAggregation, GampConfig, GampOutput, InitVariance, Prior};
use mmv_core::harness::{run_experiment, ExperimentSpec};
use mmv_core::limits::{self, LimitQuery, LimitResult};
use mmv_core::metric::{apply_metric, Estimate, MetricSpec};
use mmv_core::model::{ChannelModel, InstanceConfig, MatrixKind, PriorKind, ProblemInstance};
use mmv_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmvStatus {
    Ok = 0,
    /// A numeric argument is outside its domain.
    InvalidArgument = 1,
    /// Inconsistent configuration, malformed spec text or I/O failure.
    SpecError = 2,
    /// A numerical routine missed its tolerance.
    NumericError = 3,
    /// GAMP produced a non-finite or nonpositive quantity.
    Diverged = 4,
    NullPointer = 5,
    /// Output buffer too small; the required length is in the message.
    BufferTooSmall = 6,
    Panic = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmvPrior {
    BernoulliGaussian = 0,
    BernoulliBinary = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmvMatrixKind {
    GaussianUnitRow = 0,
    Gaussian = 1,
    SignedBernoulli = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmvChannelKind {
    Awgn = 0,
    Logistic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmvDeltaAggregation {
    Mean = 0,
    Sum = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmvInit {
    Prior = 0,
    PriorTimesNoise = 1,
}

/// Output-channel kernel values.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MmvGout {
    pub g: f64,
    pub r: f64,
    pub posterior_mean_w: f64,
    pub posterior_var_w: f64,
    pub saturated: bool,
}

/// A theoretic limit. Fields that do not apply are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmvLimit {
    pub value: f64,
    pub p_false_alarm: f64,
    pub p_miss: f64,
    pub std_err: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmvInstanceConfig {
    pub n: usize,
    pub j: usize,
    pub rate: f64,
    pub rho: f64,
    pub prior: MmvPrior,
    pub matrix: MmvMatrixKind,
    pub channel: MmvChannelKind,
    /// `Δ_z` for AWGN, the scale `a` for logistic channels.
    pub noise_param: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmvGampConfig {
    pub t_max: usize,
    pub epsilon: f64,
    pub delta_aggregation: MmvDeltaAggregation,
    pub damping: f64,
    pub init: MmvInit,
}

/// Sigmoid approximation used by logistic channels.
pub struct MmvMixture(Arc<SigmoidMixture>);

/// Generated signal, matrices and observations.
pub struct MmvInstance(ProblemInstance);

/// Converged GAMP state.
pub struct MmvGampResult {
    output: GampOutput,
    prior: Prior,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> MmvStatus {
    match err {
        Error::Parameter(_) => MmvStatus::InvalidArgument,
        Error::Spec(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => {
            MmvStatus::SpecError
        }
        Error::Numeric { .. } | Error::MixtureFit { .. } => MmvStatus::NumericError,
        Error::Divergence { .. } => MmvStatus::Diverged,
        Error::Internal(_) => MmvStatus::Internal,
    }
}

fn fail(status: MmvStatus, message: impl Into<String>) -> MmvStatus {
    set_error(message);
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MmvStatus>) -> MmvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MmvStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MmvStatus::Panic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, MmvStatus>;
}

impl<T> OrStatus<T> for mmv_core::Result<T> {
    fn or_status(self) -> Result<T, MmvStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, MmvStatus> {
    ptr.as_mut()
        .ok_or_else(|| fail(MmvStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn in_ref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, MmvStatus> {
    ptr.as_ref()
        .ok_or_else(|| fail(MmvStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn in_slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], MmvStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(MmvStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_slice<'a>(
    ptr: *mut f64,
    len: usize,
    needed: usize,
    name: &str,
) -> Result<&'a mut [f64], MmvStatus> {
    if len < needed {
        return Err(fail(
            MmvStatus::BufferTooSmall,
            format!("{name} needs {needed} elements, got {len}"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(fail(MmvStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

unsafe fn in_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, MmvStatus> {
    if ptr.is_null() {
        return Err(fail(MmvStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(MmvStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn limit_out(r: &LimitResult) -> MmvLimit {
    let (fa, miss) = r.components.unwrap_or((f64::NAN, f64::NAN));
    MmvLimit {
        value: r.value,
        p_false_alarm: fa,
        p_miss: miss,
        std_err: r.std_err().unwrap_or(f64::NAN),
    }
}

fn gout_out(g: GoutResult) -> MmvGout {
    MmvGout {
        g: g.g,
        r: g.r,
        posterior_mean_w: g.posterior_mean_w,
        posterior_var_w: g.posterior_var_w,
        saturated: g.saturated,
    }
}

fn prior_of(kind: MmvPrior, rho: f64) -> Prior {
    match kind {
        MmvPrior::BernoulliGaussian => Prior::BernoulliGaussian { rho },
        MmvPrior::BernoulliBinary => Prior::BernoulliBinary { rho },
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length
/// excluding the terminator. Pass `len = 0` to query the length.
#[no_mangle]
pub unsafe extern "C" fn mmv_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub unsafe extern "C" fn mmv_gout_awgn(
    k: f64,
    y: f64,
    theta: f64,
    delta_z: f64,
    out: *mut MmvGout,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = gout_out(awgn_gout(k, y, theta, delta_z).or_status()?);
        Ok(())
    })
}

/// Builds a sigmoid mixture with `components` terms.
#[no_mangle]
pub unsafe extern "C" fn mmv_mixture_new(
    components: usize,
    out: *mut *mut MmvMixture,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mix = SigmoidMixture::build(components).or_status()?;
        *out = Box::into_raw(Box::new(MmvMixture(Arc::new(mix))));
        Ok(())
    })
}

/// Handle to the shared default mixture; release with `mmv_mixture_free`.
#[no_mangle]
pub unsafe extern "C" fn mmv_mixture_standard(out: *mut *mut MmvMixture) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(MmvMixture(SigmoidMixture::standard())));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_mixture_free(mixture: *mut MmvMixture) {
    if !mixture.is_null() {
        drop(Box::from_raw(mixture));
    }
}

/// Sup-norm error of the mixture against the logistic function.
#[no_mangle]
pub unsafe extern "C" fn mmv_mixture_fit_error(
    mixture: *const MmvMixture,
    out: *mut f64,
) -> MmvStatus {
    guard(|| {
        let mix = in_ref(mixture, "mixture")?;
        *out_ref(out, "out")? = mix.0.fit_error;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_gout_logistic(
    k: f64,
    y: f64,
    theta: f64,
    a: f64,
    mixture: *const MmvMixture,
    out: *mut MmvGout,
) -> MmvStatus {
    guard(|| {
        let mix = in_ref(mixture, "mixture")?;
        let out = out_ref(out, "out")?;
        *out = gout_out(logistic_moments(k, y, theta, a, &mix.0).or_status()?);
        Ok(())
    })
}

unsafe fn denoise(
    prior: Prior,
    delta_v: f64,
    q: *const f64,
    j: usize,
    mean: *mut f64,
    var: *mut f64,
    pi: *mut f64,
) -> Result<(), MmvStatus> {
    if !(delta_v > 0.0 && delta_v.is_finite()) {
        return Err(fail(
            MmvStatus::InvalidArgument,
            format!("delta_v must be positive, got {delta_v}"),
        ));
    }
    let rho = prior.rho();
    if !(rho > 0.0 && rho < 1.0) {
        return Err(fail(
            MmvStatus::InvalidArgument,
            format!("rho must lie in (0, 1), got {rho}"),
        ));
    }
    if j == 0 {
        return Err(fail(MmvStatus::InvalidArgument, "J must be at least 1"));
    }
    let q = in_slice(q, j, "q")?;
    let d = match prior {
        Prior::BernoulliGaussian { rho } => gamp::bg_denoise(delta_v, q, rho),
        Prior::BernoulliBinary { rho } => gamp::bernoulli_denoise(delta_v, q, rho),
    };
    out_slice(mean, j, j, "mean")?.copy_from_slice(&d.mean);
    out_slice(var, j, j, "var")?.copy_from_slice(&d.var);
    if let Some(pi) = pi.as_mut() {
        *pi = d.pi;
    }
    Ok(())
}

/// Posterior mean and variance of one Bernoulli–Gaussian super-symbol of
/// length `j`. `pi` (optional) receives the activity probability.
#[no_mangle]
pub unsafe extern "C" fn mmv_bg_denoise(
    delta_v: f64,
    q: *const f64,
    j: usize,
    rho: f64,
    mean: *mut f64,
    var: *mut f64,
    pi: *mut f64,
) -> MmvStatus {
    guard(|| {
        denoise(
            Prior::BernoulliGaussian { rho },
            delta_v,
            q,
            j,
            mean,
            var,
            pi,
        )
    })
}

/// Same as [`mmv_bg_denoise`] for the `{0, 1}` prior.
#[no_mangle]
pub unsafe extern "C" fn mmv_bernoulli_denoise(
    delta_v: f64,
    q: *const f64,
    j: usize,
    rho: f64,
    mean: *mut f64,
    var: *mut f64,
    pi: *mut f64,
) -> MmvStatus {
    guard(|| denoise(Prior::BernoulliBinary { rho }, delta_v, q, j, mean, var, pi))
}

#[no_mangle]
pub unsafe extern "C" fn mmv_mmwse(
    delta_v: f64,
    rho: f64,
    j: usize,
    beta: f64,
    out: *mut MmvLimit,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = limit_out(
            &limits::mmwse(&LimitQuery::new(delta_v, rho, j).with_beta(beta)).or_status()?,
        );
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_mmhd(
    delta_v: f64,
    rho: f64,
    j: usize,
    out: *mut MmvLimit,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = limit_out(&limits::mmhd(&LimitQuery::new(delta_v, rho, j)).or_status()?);
        Ok(())
    })
}

/// Monte Carlo MMAE; `std_err` is filled.
#[no_mangle]
pub unsafe extern "C" fn mmv_mmae(
    delta_v: f64,
    rho: f64,
    j: usize,
    n_samples: usize,
    seed: u64,
    out: *mut MmvLimit,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = limit_out(
            &limits::mmae(&LimitQuery::new(delta_v, rho, j), n_samples, seed).or_status()?,
        );
        Ok(())
    })
}

/// MMSE per super-symbol at scalar-channel variance `delta_v`.
#[no_mangle]
pub unsafe extern "C" fn mmv_mmse_of_delta(
    delta_v: f64,
    rho: f64,
    j: usize,
    out: *mut f64,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = limits::mmse_of_delta(delta_v, rho, j).or_status()?;
        Ok(())
    })
}

/// `delta_v` with `mmse_of_delta(delta_v) = target`. `saturated` (optional)
/// reports that the search hit its range limit.
#[no_mangle]
pub unsafe extern "C" fn mmv_invert_mmse(
    target: f64,
    rho: f64,
    j: usize,
    delta_v: *mut f64,
    saturated: *mut bool,
) -> MmvStatus {
    guard(|| {
        let delta_v = out_ref(delta_v, "delta_v")?;
        let inv = limits::invert_mmse(target, rho, j).or_status()?;
        *delta_v = inv.delta_v;
        if let Some(s) = saturated.as_mut() {
            *s = inv.saturated;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_state_evolution_delta(
    rate: f64,
    rho: f64,
    j: usize,
    delta_z: f64,
    out: *mut f64,
) -> MmvStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = limits::state_evolution_delta(rate, rho, j, delta_z)
            .or_status()?
            .delta_v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_instance_generate(
    config: *const MmvInstanceConfig,
    seed: u64,
    out: *mut *mut MmvInstance,
) -> MmvStatus {
    guard(|| {
        let c = in_ref(config, "config")?;
        let out = out_ref(out, "out")?;
        let channel = match c.channel {
            MmvChannelKind::Awgn => ChannelModel::awgn(c.noise_param),
            MmvChannelKind::Logistic => {
                ChannelModel::logistic(c.noise_param, SigmoidMixture::standard())
            }
        }
        .or_status()?;
        let config = InstanceConfig {
            n: c.n,
            j: c.j,
            rate: c.rate,
            rho: c.rho,
            prior: match c.prior {
                MmvPrior::BernoulliGaussian => PriorKind::BernoulliGaussian,
                MmvPrior::BernoulliBinary => PriorKind::BernoulliBinary,
            },
            matrix: match c.matrix {
                MmvMatrixKind::GaussianUnitRow => MatrixKind::GaussianUnitRow,
                MmvMatrixKind::Gaussian => MatrixKind::GaussianRaw,
                MmvMatrixKind::SignedBernoulli => MatrixKind::SignedBernoulli,
            },
            channel,
        };
        let inst = ProblemInstance::generate(&config, seed).or_status()?;
        *out = Box::into_raw(Box::new(MmvInstance(inst)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_instance_free(instance: *mut MmvInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Signal length `n`, measurements per channel `m` and channel count `j`.
/// Any output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mmv_instance_dims(
    instance: *const MmvInstance,
    n: *mut usize,
    m: *mut usize,
    j: *mut usize,
) -> MmvStatus {
    guard(|| {
        let inst = &in_ref(instance, "instance")?.0;
        if let Some(n) = n.as_mut() {
            *n = inst.measurements.n();
        }
        if let Some(m) = m.as_mut() {
            *m = inst.measurements.m();
        }
        if let Some(j) = j.as_mut() {
            *j = inst.measurements.j();
        }
        Ok(())
    })
}

/// Copies the true `N × J` signal (row-major) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn mmv_instance_signal(
    instance: *const MmvInstance,
    buf: *mut f64,
    len: usize,
) -> MmvStatus {
    guard(|| {
        let inst = &in_ref(instance, "instance")?.0;
        let entries = &inst.signal.entries;
        let out = out_slice(buf, len, entries.len(), "buf")?;
        for (dst, src) in out.iter_mut().zip(entries.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_gamp_config_default(out: *mut MmvGampConfig) -> MmvStatus {
    guard(|| {
        let d = GampConfig::default();
        *out_ref(out, "out")? = MmvGampConfig {
            t_max: d.t_max,
            epsilon: d.epsilon,
            delta_aggregation: MmvDeltaAggregation::Mean,
            damping: d.damping,
            init: MmvInit::Prior,
        };
        Ok(())
    })
}

/// Runs GAMP on `instance` using the prior the instance was generated from.
/// `config` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn mmv_gamp_run(
    instance: *const MmvInstance,
    config: *const MmvGampConfig,
    out: *mut *mut MmvGampResult,
) -> MmvStatus {
    guard(|| {
        let inst = &in_ref(instance, "instance")?.0;
        let out = out_ref(out, "out")?;
        let cfg = match config.as_ref() {
            None => GampConfig::default(),
            Some(c) => GampConfig {
                t_max: c.t_max,
                epsilon: c.epsilon,
                delta_aggregation: match c.delta_aggregation {
                    MmvDeltaAggregation::Mean => DeltaAggregation::Mean,
                    MmvDeltaAggregation::Sum => DeltaAggregation::Sum,
                },
                damping: c.damping,
                init: match c.init {
                    MmvInit::Prior => InitVariance::Prior,
                    MmvInit::PriorTimesNoise => InitVariance::PriorTimesNoise,
                },
            },
        };
        let prior = match inst.config.prior {
            PriorKind::BernoulliGaussian => MmvPrior::BernoulliGaussian,
            PriorKind::BernoulliBinary => MmvPrior::BernoulliBinary,
        };
        let prior = prior_of(prior, inst.config.rho);
        let output = gamp::run_gamp(&inst.measurements, &prior, &cfg).or_status()?;
        *out = Box::into_raw(Box::new(MmvGampResult { output, prior }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_gamp_result_free(result: *mut MmvGampResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Final scalar-channel variance, iteration count and convergence flag. Any
/// output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mmv_gamp_result_summary(
    result: *const MmvGampResult,
    delta_v: *mut f64,
    iterations: *mut usize,
    converged: *mut bool,
) -> MmvStatus {
    guard(|| {
        let r = &in_ref(result, "result")?.output;
        if let Some(d) = delta_v.as_mut() {
            *d = r.delta_v;
        }
        if let Some(i) = iterations.as_mut() {
            *i = r.iterations;
        }
        if let Some(c) = converged.as_mut() {
            *c = r.converged;
        }
        Ok(())
    })
}

/// Copies the `N × J` posterior means (row-major).
#[no_mangle]
pub unsafe extern "C" fn mmv_gamp_result_x_hat(
    result: *const MmvGampResult,
    buf: *mut f64,
    len: usize,
) -> MmvStatus {
    guard(|| {
        let r = &in_ref(result, "result")?.output;
        let out = out_slice(buf, len, r.x_hat.len(), "buf")?;
        for (dst, src) in out.iter_mut().zip(r.x_hat.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Copies the `N × J` pseudo data (row-major).
#[no_mangle]
pub unsafe extern "C" fn mmv_gamp_result_q(
    result: *const MmvGampResult,
    buf: *mut f64,
    len: usize,
) -> MmvStatus {
    guard(|| {
        let r = &in_ref(result, "result")?.output;
        let out = out_slice(buf, len, r.q.len(), "buf")?;
        for (dst, src) in out.iter_mut().zip(r.q.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Metric-optimal estimate from a GAMP result, written as an `N × J`
/// row-major buffer. `metric` is `"mse"`, `"mwse:beta=<b>"`, `"hamming"` or
/// `"mae"`; support estimates are written as 0/1 in every column.
#[no_mangle]
pub unsafe extern "C" fn mmv_apply_metric(
    result: *const MmvGampResult,
    metric: *const c_char,
    buf: *mut f64,
    len: usize,
) -> MmvStatus {
    guard(|| {
        let r = in_ref(result, "result")?;
        let metric: MetricSpec = in_str(metric, "metric")?.parse().or_status()?;
        let (n, j) = r.output.q.dim();
        let out = out_slice(buf, len, n * j, "buf")?;
        match apply_metric(&r.output, &metric, &r.prior).or_status()? {
            Estimate::Signal(x) => {
                for (dst, src) in out.iter_mut().zip(x.iter()) {
                    *dst = *src;
                }
            }
            Estimate::Support(s) => {
                for (row, &b) in out.chunks_mut(j).zip(&s) {
                    row.fill(if b { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(())
    })
}

/// Runs the experiment described by `spec_text` (spec-file syntax) and
/// returns the CSV as a newly allocated string; release it with
/// `mmv_string_free`.
#[no_mangle]
pub unsafe extern "C" fn mmv_run_experiment(
    spec_text: *const c_char,
    csv: *mut *mut c_char,
) -> MmvStatus {
    guard(|| {
        let text = in_str(spec_text, "spec_text")?;
        let csv = out_ref(csv, "csv")?;
        let spec = ExperimentSpec::parse(text).or_status()?;
        let result = run_experiment(&spec).or_status()?;
        let owned = CString::new(result.to_csv())
            .map_err(|_| fail(MmvStatus::Internal, "CSV contains NUL"))?;
        *csv = owned.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mmv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
