use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eit_cli::commands::{self, ContrastSource};
use eit_cli::config::Axis;
use eit_cli::{CliError, ScenarioConfig};

/// EIT light-storage simulator.
#[derive(Parser)]
#[command(name = "eitsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Overrides the scenario seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one storage sequence and write the exit field and a summary
    Simulate {
        #[command(flatten)]
        common: Common,

        /// Also write synthetic homodyne traces and a calibration scan
        #[arg(long)]
        emit_traces: bool,
    },
    /// Repeat the simulation along one axis
    Sweep {
        #[command(flatten)]
        common: Common,

        #[arg(long, value_enum)]
        axis: Option<Axis>,

        #[arg(long)]
        points: Option<usize>,
    },
    /// Recover I_P(t) and the retrieved-vs-leak phase from trace files
    ProcessTraces {
        #[command(flatten)]
        common: Common,

        /// Trace files (time_s,intensity,lo_phase_rad,shot_id)
        #[arg(required = true)]
        traces: Vec<PathBuf>,

        /// LO intensity I_C; defaults to the scenario value
        #[arg(long)]
        lo_intensity: Option<f64>,

        /// Known contrast α
        #[arg(long, conflicts_with = "estimate_contrast")]
        contrast: Option<f64>,

        /// Estimate α from the calibration scan
        #[arg(long, requires = "calibration")]
        estimate_contrast: bool,

        /// cw calibration trace file
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Print the normalized scenario (defaults filled in)
    EmitConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, emit_traces } => {
            let cfg = load(&common)?;
            let s = commands::simulate(&cfg, &common.out, emit_traces)?;
            println!(
                "efficiency {:.6}  leak_level {:.6}  phase_rad {:.6}",
                s.efficiency, s.leak_level, s.phase_rad
            );
        }
        Command::Sweep { common, axis, points } => {
            let mut cfg = load(&common)?;
            if let Some(a) = axis {
                cfg.sweep.axis = a;
            }
            if let Some(n) = points {
                if n == 0 {
                    return Err(CliError::Config("--points must be >= 1".into()));
                }
                cfg.sweep.points = n;
            }
            // Overrides may break cross-field rules (closed_form needs detuning)
            let cfg = ScenarioConfig::parse(&cfg.to_toml())?;
            let path = commands::sweep(&cfg, &common.out)?;
            println!("{}", path.display());
        }
        Command::ProcessTraces {
            common,
            traces,
            lo_intensity,
            contrast,
            estimate_contrast,
            calibration,
        } => {
            let cfg = load(&common)?;
            let source = match (estimate_contrast, calibration, contrast) {
                (true, Some(path), _) => ContrastSource::Calibration(path),
                (_, _, Some(a)) => ContrastSource::Known(a),
                _ => ContrastSource::Known(cfg.homodyne.contrast),
            };
            let lo = lo_intensity.unwrap_or(cfg.homodyne.lo_intensity);
            let s = commands::process_traces(&cfg, &traces, lo, source, &common.out)?;
            println!(
                "relative_phase_rad {:.6}  contrast {:.6}",
                s.relative_phase_rad, s.contrast
            );
        }
        Command::EmitConfig { config } => {
            let cfg = match config {
                Some(path) => ScenarioConfig::load(&path)?,
                None => ScenarioConfig::default(),
            };
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
