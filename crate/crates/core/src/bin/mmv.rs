use clap::{ArgGroup, Args, Parser, Subcommand};
use mmv_core::harness::{
    run_experiment, trace_trial, DeltaVSource, ExperimentKind, ExperimentSpec,
};
use mmv_core::limits::{self, LimitQuery, LimitResult, Method, LIMITS_CSV_HEADER};
use mmv_core::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mmv",
    version,
    about = "Metric-optimal estimation for multi-measurement vector problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a spec file.
    Run(RunArgs),
    /// Run an active user detection spec (`name = aud`).
    Aud(RunArgs),
    /// Print the per-iteration GAMP trace of one trial.
    GampTrace(TraceArgs),
    /// Evaluate a theoretic limit.
    Limits(LimitArgs),
}

#[derive(Args)]
struct Common {
    /// Override the spec's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV path; stdout when neither this nor the spec sets one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    spec: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Full-scale problem size (N = 10000, 50 trials).
    #[arg(long)]
    full: bool,
    /// Record per-trial wall time (makes the CSV non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Source of the Δ_v used for theoretic values: empirical or se.
    #[arg(long)]
    delta_v_source: Option<String>,
}

#[derive(Args)]
struct TraceArgs {
    spec: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    sweep: usize,
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Args)]
#[command(group(ArgGroup::new("quantity").required(true).args(
    ["mmwse", "mmse", "mmae", "mmhd", "roc", "invert_mmse", "state_evolution"]
)))]
struct LimitArgs {
    /// Minimum weighted support error (needs --beta).
    #[arg(long)]
    mmwse: bool,
    /// Minimum squared error per super-symbol.
    #[arg(long)]
    mmse: bool,
    /// Minimum absolute error (Monte Carlo, or quadrature for J = 1 with --quadrature).
    #[arg(long)]
    mmae: bool,
    /// Minimum Hamming distance for the {0, 1} prior.
    #[arg(long)]
    mmhd: bool,
    /// ROC curve of the energy detector.
    #[arg(long)]
    roc: bool,
    /// Δ_v that produces the given MMSE.
    #[arg(long, value_name = "TARGET")]
    invert_mmse: Option<f64>,
    /// Fixed point of the AWGN state evolution (needs --rate and --delta-z).
    #[arg(long)]
    state_evolution: bool,

    #[arg(long)]
    delta_v: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "J", default_value_t = 1)]
    j: usize,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    delta_z: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long)]
    quadrature: bool,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match threads {
        Some(0) => Err(Error::Spec("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_file(path)?;
    if let Some(seed) = seed {
        spec.base_seed = seed;
    }
    Ok(spec)
}

fn run(args: RunArgs, require_aud: bool) -> Result<()> {
    let mut spec = load_spec(&args.spec, args.common.seed)?;
    if require_aud && spec.name != ExperimentKind::Aud {
        return Err(Error::Spec(format!(
            "`aud` needs a spec with name = aud, got {}",
            spec.name
        )));
    }
    if args.full {
        spec.full_scale();
    }
    if args.timing {
        spec.timing = true;
    }
    if let Some(source) = &args.delta_v_source {
        spec.delta_v_source = source.parse::<DeltaVSource>()?;
    }
    spec.validate()?;
    let result = with_threads(args.common.threads, || run_experiment(&spec))?;
    let out = args.common.out.or_else(|| spec.output.clone());
    emit(&result.to_csv(), out.as_ref())
}

fn gamp_trace(args: TraceArgs) -> Result<()> {
    let spec = load_spec(&args.spec, args.common.seed)?;
    let output = with_threads(args.common.threads, || {
        trace_trial(&spec, args.sweep, args.trial)
    });
    match output {
        Ok(output) => emit(&output.trace_csv(), args.common.out.as_ref()),
        Err(Error::Divergence {
            iteration,
            reason,
            trace,
        }) => {
            let mut text = String::from("iteration,delta,delta_v\n");
            for (i, (d, dv)) in trace.iter().enumerate() {
                text.push_str(&format!("{},{d:.16e},{dv:.16e}\n", i + 1));
            }
            emit(&text, args.common.out.as_ref())?;
            Err(Error::Divergence {
                iteration,
                reason,
                trace,
            })
        }
        Err(e) => Err(e),
    }
}

fn limits_cmd(args: LimitArgs) -> Result<()> {
    let need_delta = || {
        args.delta_v
            .ok_or_else(|| Error::Spec("--delta-v is required".into()))
    };
    let text = if let Some(target) = args.invert_mmse {
        let inv = limits::invert_mmse(target, args.rho, args.j)?;
        format!(
            "target,J,rho,delta_v,saturated\n{target:.16e},{},{:.16e},{:.16e},{}\n",
            args.j, args.rho, inv.delta_v, inv.saturated
        )
    } else if args.state_evolution {
        let rate = args
            .rate
            .ok_or_else(|| Error::Spec("--rate is required".into()))?;
        let dz = args
            .delta_z
            .ok_or_else(|| Error::Spec("--delta-z is required".into()))?;
        let fp = limits::state_evolution_delta(rate, args.rho, args.j, dz)?;
        format!(
            "R,J,rho,delta_z,delta_v,iterations\n{rate:.16e},{},{:.16e},{dz:.16e},{:.16e},{}\n",
            args.j, args.rho, fp.delta_v, fp.iterations
        )
    } else if args.roc {
        let dv = need_delta()?;
        let curve = limits::roc_curve(
            dv,
            args.j,
            &limits::default_roc_grid(dv, args.j, args.points),
        )?;
        let mut text = String::from("threshold,fpr,tpr\n");
        for p in &curve {
            text.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                p.threshold, p.fpr, p.tpr
            ));
        }
        text
    } else {
        let mut query = LimitQuery::new(need_delta()?, args.rho, args.j);
        if let Some(beta) = args.beta {
            query = query.with_beta(beta);
        }
        let result = if args.mmwse {
            if args.beta.is_none() {
                return Err(Error::Spec("--mmwse needs --beta".into()));
            }
            limits::mmwse(&query)?
        } else if args.mmse {
            LimitResult {
                value: limits::mmse_of_delta(query.delta_v, query.rho, query.j)?,
                components: None,
                method: Method::Quadrature,
            }
        } else if args.mmae && args.quadrature {
            if args.j != 1 {
                return Err(Error::Spec("the quadrature MMAE path needs --J 1".into()));
            }
            limits::mmae_quadrature(query.delta_v, query.rho)?
        } else if args.mmae {
            limits::mmae(&query, args.samples, args.seed)?
        } else {
            limits::mmhd(&query)?
        };
        format!(
            "{LIMITS_CSV_HEADER}\n{}\n",
            limits::limits_csv_row(&query, &result)
        )
    };
    emit(&text, args.out.as_ref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args, false),
        Command::Aud(args) => run(args, true),
        Command::GampTrace(args) => gamp_trace(args),
        Command::Limits(args) => limits_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_spec_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
