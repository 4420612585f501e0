use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mavtrack_cli::{exit, run_calibrate, run_compare, run_track, scenario_source, CliError, Overrides};
use mavtrack_core::RateMode;

/// Lidar scan-integration tracker for small aerial vehicles, in simulation.
#[derive(Debug, Parser)]
#[command(name = "mavtrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the point-density model and write model.json plus calibration.csv.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one closed-loop tracking scenario.
    Track {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in scenario: circle_ramp, corridor_35m or hover.
        #[arg(long)]
        preset: Option<String>,
        /// Density model; calibrated on the fly when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `adaptive` or `fixed:<Hz>`.
        #[arg(long)]
        mode: Option<RateMode>,
    },
    /// Run one scenario under several rate modes.
    Compare {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated modes.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "fixed:5,fixed:10,fixed:20,fixed:100,adaptive"
        )]
        modes: Vec<RateMode>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { config, out, seed } => {
            let path = run_calibrate(&config, out.as_deref(), seed)?;
            println!("wrote {}", path.display());
        }
        Command::Track {
            config,
            preset,
            model,
            out,
            seed,
            mode,
        } => {
            let cfg = scenario_source(config.as_deref(), preset.as_deref())?;
            let r = run_track(cfg, model.as_deref(), out.as_deref(), &Overrides { seed, mode })?;
            let m = &r.metrics;
            println!(
                "mode {}: tracked {:.2} s of {:.2} s{}, fused rmse {:.3} m, miss rate {:.3}",
                m.mode,
                m.track_duration,
                m.duration,
                if m.lost { " (lost)" } else { "" },
                m.fused.rmse,
                m.miss_rate
            );
        }
        Command::Compare {
            config,
            preset,
            model,
            out,
            seed,
            modes,
        } => {
            let cfg = scenario_source(config.as_deref(), preset.as_deref())?;
            for m in run_compare(cfg, model.as_deref(), out.as_deref(), &modes, seed)? {
                println!(
                    "{:>12}  {:7.2} s  lost={}  rmse {:.3} m  miss {:.3}",
                    m.mode, m.track_duration, m.lost, m.fused.rmse, m.miss_rate
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
