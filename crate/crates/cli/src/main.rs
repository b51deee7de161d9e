use cavteleport_cli::{
    dump_trajectory, gate_calc_report, load_config, run_experiment, ExperimentConfig, SweepAxis,
};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cavteleport",
    about = "Qubit-cavity teleportation under continuous homodyne monitoring"
)]
struct Cli {
    /// Flat key = value config file; omitted keys use built-in defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for results.csv and record files
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write one homodyne record per sweep point
    #[arg(long, global = true)]
    debug_records: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment configured in the config file (single point or sweep)
    Run,
    /// Sweep detector efficiency over the config grid (default 0.2..1.0)
    SweepEta,
    /// Sweep total measuring time over the config grid (default 1,2,3 per kappa)
    SweepTime,
    /// Print the transmon calibration report
    GateCalc,
    /// Simulate one trajectory and write its homodyne record plus decisions
    DumpTrajectory,
}

fn effective_config(cli: &Cli) -> cavteleport::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.protocol.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.debug_records |= cli.debug_records;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> cavteleport::Result<()> {
    match cli.command {
        Command::GateCalc => {
            let (_, text) = gate_calc_report()?;
            print!("{text}");
            Ok(())
        }
        Command::DumpTrajectory => {
            let cfg = effective_config(cli)?;
            print!("{}", dump_trajectory(&cfg)?);
            Ok(())
        }
        Command::Run => {
            let cfg = effective_config(cli)?;
            let table = run_experiment(&cfg)?;
            print!("{}", table.summary());
            Ok(())
        }
        Command::SweepEta => {
            let mut cfg = effective_config(cli)?;
            cfg.sweep = SweepAxis::Eta;
            if cfg.grid.is_empty() {
                cfg.grid = vec![0.2, 0.4, 0.6, 0.8, 1.0];
            }
            let table = run_experiment(&cfg)?;
            print!("{}", table.summary());
            Ok(())
        }
        Command::SweepTime => {
            let mut cfg = effective_config(cli)?;
            cfg.sweep = SweepAxis::Time;
            if cfg.grid.is_empty() {
                cfg.grid = vec![1.0, 2.0, 3.0];
            }
            let table = run_experiment(&cfg)?;
            print!("{}", table.summary());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
