use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use cascade_core::experiment::{
    run_scaling_study, run_transmission_sweep, scaling_sidecar, sidecar_path, sweep_sidecar,
    validate_config, write_json, write_scaling_csv, write_sweep_csv, ExperimentError, LoadedConfig,
    StudyMode, SweepSpec,
};
use cascade_core::lattice::{propagate, single_pass_transmission, SensorConfig};
use cascade_core::metrology::{
    fisher_information, fisher_matrix_dense, matrix_rows, FisherResult, DEFAULT_STEP,
};
use cascade_core::parallel::{with_threads, Execution};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "cascade",
    version,
    about = "Cascaded multiphase sensor simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize every point of a transmission sweep.
    Sweep(RunArgs),
    /// Photon scaling with the number of phases.
    Scaling(RunArgs),
    /// Check a config file and report the first problem.
    Validate(CommonArgs),
    /// Fisher matrix and Cramér–Rao bound of one sensor config.
    Fisher(FisherArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV path; the JSON sidecar goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides the config's `de.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Stop starting new scaling points after this many minutes.
    #[arg(long)]
    max_minutes: Option<f64>,
    /// Leave the `# generated ...` line out so reruns are byte-identical.
    #[arg(long)]
    no_header_timestamp: bool,
}

#[derive(Args)]
struct FisherArgs {
    #[arg(long)]
    config: PathBuf,
    /// JSON output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn execution(threads: Option<usize>) -> Execution {
    if threads == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load_spec(path: &Path, mode: StudyMode) -> Result<SweepSpec, Failure> {
    match validate_config(path)? {
        LoadedConfig::Sweep(spec) if spec.mode == mode => Ok(spec),
        LoadedConfig::Sweep(spec) => Err(Failure::Config(format!(
            "{}: mode is {:?}, this subcommand needs {:?}",
            path.display(),
            spec.mode,
            mode
        ))),
        LoadedConfig::Sensor(_) => Err(Failure::Config(format!(
            "{}: expected an experiment spec with a `mode` key",
            path.display()
        ))),
    }
}

fn output_path(args: &RunArgs, spec: &SweepSpec) -> Result<PathBuf, Failure> {
    args.out
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::Config("no output path: pass --out or set `output`".into()))
}

fn stamp(args: &RunArgs) -> Option<String> {
    (!args.no_header_timestamp).then(|| format!("generated {}", chrono::Utc::now().to_rfc3339()))
}

fn sweep(args: &RunArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.config, StudyMode::TransmissionSweep)?;
    let out = output_path(args, &spec)?;
    let seed = args.seed.unwrap_or(spec.de.seed);
    let exec = execution(args.threads);
    let records = with_threads(args.threads, || run_transmission_sweep(&spec, seed, exec))?;
    let header = stamp(args);
    write_sweep_csv(&out, &records, header.as_deref())?;
    let sidecar = sidecar_path(&out);
    write_json(
        &sidecar,
        &sweep_sidecar(&spec, seed, &records, header.as_deref()),
    )?;
    let divergent = records
        .iter()
        .filter(|r| r.status.as_str() == "divergent")
        .count();
    println!(
        "{} rows ({divergent} divergent) -> {} + {}",
        records.len(),
        out.display(),
        sidecar.display()
    );
    Ok(())
}

fn scaling(args: &RunArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.config, StudyMode::ScalingStudy)?;
    let out = output_path(args, &spec)?;
    let seed = args.seed.unwrap_or(spec.de.seed);
    let exec = execution(args.threads);
    let budget = match args.max_minutes {
        Some(m) if m > 0.0 && m.is_finite() => Some(Duration::from_secs_f64(m * 60.0)),
        Some(m) => {
            return Err(Failure::Config(format!(
                "--max-minutes {m} must be positive"
            )))
        }
        None => None,
    };
    let report = with_threads(args.threads, || {
        run_scaling_study(&spec, seed, exec, budget)
    })?;
    let header = stamp(args);
    write_scaling_csv(&out, &report.records, header.as_deref())?;
    let sidecar = sidecar_path(&out);
    write_json(
        &sidecar,
        &scaling_sidecar(&spec, seed, &report, header.as_deref()),
    )?;

    println!("completed N: {:?}", report.completed_n);
    if !report.skipped_n.is_empty() {
        println!("skipped N (time budget): {:?}", report.skipped_n);
    }
    match report.fit {
        Some(f) => println!(
            "photon exponent {:.4} (reference {}), prefactor {:.4e}, r^2 {:.4}",
            f.exponent, report.reference_exponent, f.prefactor, f.r_squared
        ),
        None => println!("photon exponent: fewer than 3 completed points"),
    }
    if let Some(t) = report.large_n_single_pass {
        println!(
            "single-pass transmission, three largest N: {t:.4e} (reference {})",
            report.reference_single_pass
        );
    }
    if let Some(c) = &report.check {
        println!(
            "direct check at N={}: mean variance {:.6e} vs target {:.6e} (relative error {:.2e})",
            c.n_phases, c.direct_mean_variance, c.predicted_mean_variance, c.relative_error
        );
    }
    println!("-> {} + {}", out.display(), sidecar.display());
    Ok(())
}

fn validate(args: &CommonArgs) -> Result<(), Failure> {
    match validate_config(&args.config)? {
        LoadedConfig::Sensor(c) => println!(
            "ok: sensor config, {} phases, {} pulses",
            c.n_phases,
            c.pulses.len()
        ),
        LoadedConfig::Sweep(s) => println!("ok: {:?} spec, {} variants", s.mode, s.variants.len()),
    }
    Ok(())
}

fn fisher(args: &FisherArgs) -> Result<(), Failure> {
    let config: SensorConfig = match validate_config(&args.config)? {
        LoadedConfig::Sensor(c) => c,
        LoadedConfig::Sweep(_) => {
            return Err(Failure::Config(format!(
                "{}: expected a sensor config, found an experiment spec",
                args.config.display()
            )))
        }
    };
    if !(args.step > 0.0) {
        return Err(Failure::Config(format!(
            "--step {} must be positive",
            args.step
        )));
    }
    let exec = execution(args.threads);
    let transfer = propagate(&config, false).map_err(|e| Failure::Runtime(e.to_string()))?;
    let analytic = fisher_information(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
    let dense = with_threads(args.threads, || {
        fisher_matrix_dense(&config, args.step, exec)
    })
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    let (status, result, error) = match FisherResult::from_matrix(dense.clone()) {
        Ok(r) => ("ok", Some(r), None),
        Err(e) => ("divergent", None, Some(e.to_string())),
    };
    let doc = json!({
        "status": status,
        "fisher": result,
        "matrix": matrix_rows(&dense),
        "analytic_matrix": matrix_rows(&analytic),
        "error": error,
        "step": args.step,
        "truncation_loss": transfer.truncation_loss(),
        "input_photons": transfer.input_photons(),
        "single_pass_transmission": single_pass_transmission(&config),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Runtime(e.to_string()))?;
    match &args.out {
        Some(p) => write_json(p, &doc)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Scaling(a) => scaling(a),
        Command::Validate(a) => validate(a),
        Command::Fisher(a) => fisher(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
