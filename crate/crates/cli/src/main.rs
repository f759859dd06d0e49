//! `twrn` — simulate the relay network, run the estimators, tabulate
//! bounds and experiments, and verify the numerical machinery.
//!
//! Exit codes: 0 success, 1 invalid input or failed verification of
//! inputs, 2 numerical failure (including failed verify checks),
//! 3 I/O failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use twrn_core::estimators::{estimate, estimate_on_grid, Method};
use twrn_core::experiments::{
    iteration_statistics, iteration_statistics_csv, run_mse_vs_n, run_mse_vs_snr,
};
use twrn_core::model::{derive_stream, draw_channel, simulate_batch, simulate_noiseless_batch};
use twrn_core::{
    BatchEnvelope, BoundReport, ChannelState, Error, ErrorClass, ExperimentSidecar,
    ExperimentSpec, GridSpec, ObservationBatch, SolverConfig, Sweep, SystemConfig,
};

mod verify;

#[derive(Parser)]
#[command(
    name = "twrn",
    version,
    about = "Two-way relay network channel estimation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a received batch; writes <out>.csv and a JSON envelope.
    Simulate(SimulateArgs),
    /// Estimate the channel from a batch envelope written by `simulate`.
    Estimate(EstimateArgs),
    /// Compute Cramer-Rao and modified bounds for a channel.
    Bounds(BoundsArgs),
    /// Run the built-in numerical verification checks.
    Verify(VerifyArgs),
    /// MSE-versus-SNR experiment; writes CSV plus a JSON sidecar.
    SweepSnr(SweepArgs),
    /// MSE-versus-batch-size experiment; writes CSV plus a JSON sidecar.
    SweepN(SweepArgs),
    /// Solver-cost table extracted from a sweep sidecar.
    Iters(ItersArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON configuration file (system, optional channel, simulate options).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output base path; `.csv` and `.json` extensions are applied.
    #[arg(long)]
    out: PathBuf,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Batch envelope JSON written by `simulate` (the batch CSV is
    /// expected alongside with the same base name).  May carry an extra
    /// `solver` section.
    #[arg(long)]
    config: PathBuf,
    /// Report JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodChoice::Both)]
    method: MethodChoice,
    /// Also minimize on the refinement grid ladder and report those runs.
    #[arg(long)]
    grid_validate: bool,
}

#[derive(Args)]
struct BoundsArgs {
    /// JSON configuration file (system, optional channel and bounds options).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Optional JSON configuration file (master_seed is honored).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Check-results JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON configuration file (system, solver, experiment sections).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output base path; `.csv` and `.json` extensions are applied.
    #[arg(long)]
    out: PathBuf,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one estimator.
    #[arg(long, value_enum, default_value_t = MethodChoice::Both)]
    method: MethodChoice,
    /// Add grid-ladder validation rows to every cell.
    #[arg(long)]
    grid_validate: bool,
}

#[derive(Args)]
struct ItersArgs {
    /// Sweep sidecar JSON written by `sweep-snr` / `sweep-n`.
    #[arg(long)]
    config: PathBuf,
    /// Table CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodChoice {
    Ml,
    Msev,
    Both,
}

impl MethodChoice {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Ml => vec![Method::Ml],
            MethodChoice::Msev => vec![Method::Msev],
            MethodChoice::Both => vec![Method::Ml, Method::Msev],
        }
    }
}

/// Top-level configuration file.  Every section is optional; unknown keys
/// are ignored so the same file can serve several verbs.
#[derive(Debug, Default, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
struct CliConfig {
    system: Option<SystemConfig>,
    channel: Option<ChannelState>,
    solver: Option<SolverConfig>,
    grid: Option<GridSpec>,
    experiment: Option<ExperimentSpec>,
    master_seed: Option<u64>,
    simulate: Option<SimulateSection>,
    bounds: Option<BoundsSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
struct SimulateSection {
    pilot_count: usize,
    noiseless: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            pilot_count: 4,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
struct BoundsSection {
    symbol_draws: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection { symbol_draws: 500 }
    }
}

const DEFAULT_SEED: u64 = 7;

fn load_config(path: Option<&Path>) -> Result<CliConfig, Error> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))
        }
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<(), Error> {
    match out {
        Some(p) => {
            std::fs::write(p, content)?;
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.to_path_buf();
    p.set_extension(ext);
    p
}

fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn resolve_channel(
    config: &CliConfig,
    seed: u64,
) -> ChannelState {
    config
        .channel
        .unwrap_or_else(|| draw_channel(&mut derive_stream(seed, &[100])))
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, Error> {
    let config = load_config(args.config.as_deref())?;
    let system = config.system.unwrap_or_default();
    system.validate()?;
    let seed = args.seed.or(config.master_seed).unwrap_or(DEFAULT_SEED);
    let channel = resolve_channel(&config, seed);
    let sim = config.simulate.clone().unwrap_or_default();
    let mut rng = derive_stream(seed, &[101]);
    let batch = if sim.noiseless {
        simulate_noiseless_batch(&system, &channel, &mut rng, sim.pilot_count)?
    } else {
        simulate_batch(&system, &channel, &mut rng, sim.pilot_count)?
    };

    let csv_path = with_extension(&args.out, "csv");
    let json_path = with_extension(&args.out, "json");
    let file = std::fs::File::create(&csv_path)?;
    batch.write_csv(file)?;
    let envelope = BatchEnvelope {
        system,
        channel: Some(channel),
        pilot_count: sim.pilot_count,
        seed: Some(seed),
        noiseless: sim.noiseless,
        metadata: serde_json::json!({ "written_at": unix_timestamp() }),
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&envelope)?)?;
    eprintln!(
        "wrote {} samples to {} (envelope {})",
        batch.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn cmd_estimate(args: EstimateArgs) -> Result<u8, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let envelope: BatchEnvelope = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.config.display())))?;
    // The same file may carry an optional solver section.
    let extras: CliConfig = serde_json::from_str(&text).unwrap_or_default();
    let solver = extras.solver.unwrap_or_default();
    let csv_path = with_extension(&args.config, "csv");
    let file = std::fs::File::open(&csv_path)?;
    let batch = ObservationBatch::read_csv(file, envelope.system)?;

    let mut output = serde_json::Map::new();
    for method in args.method.methods() {
        let report = estimate(&batch, method, &solver)?;
        output.insert(method.to_string(), serde_json::to_value(&report)?);
        if args.grid_validate {
            let ladder = estimate_on_grid(&batch, method)?;
            output.insert(format!("{method}_grid"), serde_json::to_value(&ladder)?);
        }
    }
    let rendered = serde_json::to_string_pretty(&serde_json::Value::Object(output))?;
    write_or_print(args.out.as_deref(), &rendered)?;
    Ok(0)
}

fn cmd_bounds(args: BoundsArgs) -> Result<u8, Error> {
    let config = load_config(args.config.as_deref())?;
    let system = config.system.unwrap_or_default();
    system.validate()?;
    let seed = args.seed.or(config.master_seed).unwrap_or(DEFAULT_SEED);
    let channel = resolve_channel(&config, seed);
    let section = config.bounds.clone().unwrap_or_default();
    let mut rng = derive_stream(seed, &[102]);
    let report = BoundReport::compute(&system, &channel, section.symbol_draws, &mut rng)?;
    let rendered = serde_json::to_string_pretty(&report)?;
    write_or_print(args.out.as_deref(), &rendered)?;
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, Error> {
    let config = load_config(args.config.as_deref())?;
    let seed = args.seed.or(config.master_seed).unwrap_or(DEFAULT_SEED);
    let checks = verify::run_all(seed)?;
    let rendered = serde_json::to_string_pretty(&checks)?;
    write_or_print(args.out.as_deref(), &rendered)?;
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| c.status != "pass")
        .map(|c| c.check_name.as_str())
        .collect();
    if failed.is_empty() {
        eprintln!("all {} checks passed", checks.len());
        Ok(0)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(2)
    }
}

fn build_spec(args: &SweepArgs, want_snr: bool) -> Result<ExperimentSpec, Error> {
    let config = load_config(args.config.as_deref())?;
    let mut spec = config.experiment.clone().unwrap_or_default();
    if config.experiment.as_ref().map(|e| e.sweep.clone()).is_none() {
        spec.sweep = if want_snr {
            Sweep::Snr(vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
        } else {
            Sweep::SampleSize(vec![25, 50, 100, 200, 400])
        };
    }
    match (&spec.sweep, want_snr) {
        (Sweep::Snr(_), true) | (Sweep::SampleSize(_), false) => {}
        (Sweep::Snr(_), false) => {
            return Err(Error::InvalidConfig(
                "sweep-n needs a sample_size sweep in experiment.sweep".into(),
            ))
        }
        (Sweep::SampleSize(_), true) => {
            return Err(Error::InvalidConfig(
                "sweep-snr needs an snr sweep in experiment.sweep".into(),
            ))
        }
    }
    if let Some(system) = config.system {
        spec.config_template = system;
    }
    if let Some(solver) = config.solver {
        spec.solver = solver;
    }
    if let Some(seed) = args.seed.or(config.master_seed) {
        spec.master_seed = seed;
    }
    spec.methods = args.method.methods();
    if args.grid_validate {
        spec.grid_validation = true;
    }
    Ok(spec)
}

fn cmd_sweep(args: SweepArgs, want_snr: bool) -> Result<u8, Error> {
    let spec = build_spec(&args, want_snr)?;
    let result = if want_snr {
        run_mse_vs_snr(&spec)?
    } else {
        run_mse_vs_n(&spec)?
    };
    let csv_path = with_extension(&args.out, "csv");
    let json_path = with_extension(&args.out, "json");
    let file = std::fs::File::create(&csv_path)?;
    result.write_csv(file)?;
    let sidecar = ExperimentSidecar::new(
        &spec,
        &result,
        serde_json::json!({
            "written_at": unix_timestamp(),
            "command": if want_snr { "sweep-snr" } else { "sweep-n" },
        }),
    );
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)?;
    eprintln!(
        "wrote {} rows to {} (sidecar {}, fingerprint {})",
        result.rows.len(),
        csv_path.display(),
        json_path.display(),
        result.spec_fingerprint
    );
    Ok(0)
}

fn cmd_iters(args: ItersArgs) -> Result<u8, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let sidecar: ExperimentSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.config.display())))?;
    let result = twrn_core::ExperimentResult {
        rows: sidecar.rows,
        spec_fingerprint: sidecar.spec_fingerprint,
    };
    let table = iteration_statistics(&result);
    write_or_print(args.out.as_deref(), iteration_statistics_csv(&table).trim_end())?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Verify(a) => cmd_verify(a),
        Command::SweepSnr(a) => cmd_sweep(a, true),
        Command::SweepN(a) => cmd_sweep(a, false),
        Command::Iters(a) => cmd_iters(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Numerical => 2,
                ErrorClass::Io => 3,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parse_is_a_fixed_point() {
        let text = r#"{
            "system": {"m": 4, "n": 64, "p1": 1.0, "p2": 1.0, "p_relay": 1.0, "sigma2": 0.05},
            "channel": {"h": [0.3, -0.4], "g": [1.1, 0.2]},
            "solver": {"grad_tolerance": 1e-9},
            "master_seed": 11,
            "simulate": {"pilot_count": 6}
        }"#;
        let parsed: CliConfig = serde_json::from_str(text).unwrap();
        let emitted = serde_json::to_string(&parsed).unwrap();
        let reparsed: CliConfig = serde_json::from_str(&emitted).unwrap();
        assert_eq!(parsed, reparsed);
        assert_eq!(parsed.system.unwrap().n, 64);
        assert_eq!(parsed.simulate.unwrap().pilot_count, 6);
        // Solver defaults fill unspecified fields.
        assert_eq!(parsed.solver.unwrap().max_iterations, 500);
    }

    #[test]
    fn unknown_config_keys_are_tolerated() {
        let parsed: CliConfig =
            serde_json::from_str(r#"{"future_section": {"x": 1}}"#).unwrap();
        assert_eq!(parsed, CliConfig::default());
    }
}
