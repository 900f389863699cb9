use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use faultgt::faults::{inject, sample_fault_state, FaultSpec, FaultState};
use faultgt::harness::{
    calibration_statistics, calibration_traces, compare_methods, run_config, run_sweep, Experiment,
    ExperimentConfig, Method, Mode, SweepAxis,
};
use faultgt::kalman::empirical_quantile;
use faultgt::lds::{
    generate_random_stable_model, simulate, InputMode, SensorTrace, StateSpaceModel,
};
use faultgt::Result;

#[derive(Parser)]
#[command(
    name = "faultgt",
    version,
    about = "Sensor fault detection with group testing"
)]
struct Cli {
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Extra config settings, e.g. `--set bgt.alpha=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random stable state-space model (model.* config keys).
    GenModel,
    /// Simulate sensor outputs from a model file.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
    /// Inject faults into a trace CSV.
    Inject(InjectArgs),
    /// Calibrate the group-test threshold on clean simulated data.
    Calibrate,
    /// Run the configured experiment.
    Run,
    /// Run the experiment for each value of one parameter.
    Sweep {
        /// num_tests, threshold, alpha, prior or model_order.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run several methods on the same fault placements.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
    },
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Faulty sensor indices (0-based); sampled from --d-max when absent.
    #[arg(long, value_delimiter = ',')]
    faulty: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    d_max: usize,
    /// spike, nonlinearity, mean_drift or excessive_noise.
    #[arg(long, default_value = "spike")]
    kind: String,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| faultgt::Error::Parse(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| faultgt::Error::Configuration(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(1);
    match &cli.command {
        Command::GenModel => {
            let cfg = load_config(cli)?;
            let model = generate_random_stable_model(&cfg.model, seed)?;
            emit(cli.out.as_deref(), &model.to_text())
        }
        Command::Simulate { model, steps } => {
            let model = StateSpaceModel::load(model)?;
            let (_, trace) = simulate(&model, *steps, InputMode::None, seed)?;
            emit(cli.out.as_deref(), &trace.to_csv())
        }
        Command::Inject(args) => {
            let trace = SensorTrace::from_csv(&std::fs::read_to_string(&args.trace)?)?;
            let n = trace.num_sensors();
            let state = if args.faulty.is_empty() {
                sample_fault_state(n, args.d_max, seed)?
            } else {
                FaultState::from_support(n, &args.faulty)?
            };
            let spec = FaultSpec::default_for_kind(&args.kind)?;
            let faulty = inject(&trace, &state, &spec, seed)?;
            eprintln!("faulty sensors: {:?}", state.support());
            emit(cli.out.as_deref(), &faulty.to_csv())
        }
        Command::Calibrate => {
            let cfg = load_config(cli)?;
            if cfg.mode != Mode::KalmanTests {
                return Err(faultgt::Error::Configuration(
                    "calibration needs kalman_tests mode".into(),
                ));
            }
            let exp = Experiment::prepare(ExperimentConfig {
                threshold: Some(1.0),
                ..cfg.clone()
            })?;
            let tester = exp.tester().expect("kalman mode");
            let traces = calibration_traces(&cfg, exp.truth_model().expect("kalman mode"))?;
            let mut stats = calibration_statistics(&cfg, tester, &traces)?;
            let threshold = empirical_quantile(&mut stats, cfg.quantile);
            emit(
                cli.out.as_deref(),
                &format!("quantile = {}\nthreshold = {threshold}\n", cfg.quantile),
            )
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let mut table = faultgt::harness::ResultTable::default();
            table.rows.push(run_config(&cfg, "none", "-")?);
            emit(cfg.output.as_deref(), &table.to_csv())
        }
        Command::Sweep { axis, values } => {
            let cfg = load_config(cli)?;
            let table = run_sweep(&cfg, *axis, values)?;
            emit(cfg.output.as_deref(), &table.to_csv())
        }
        Command::Compare { methods } => {
            let cfg = load_config(cli)?;
            let configs: Vec<ExperimentConfig> = methods
                .iter()
                .map(|&m| ExperimentConfig {
                    method: m,
                    ..cfg.clone()
                })
                .collect();
            let table = compare_methods(&configs)?;
            emit(cfg.output.as_deref(), &table.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
