mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Status;

/// Model, simulate and schedule p-GEMM workloads on a GTA array.
#[derive(Debug, Parser)]
#[command(name = "gta", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lanes: Option<usize>,
    #[arg(long, global = true)]
    pub mpra_rows: Option<usize>,
    #[arg(long, global = true)]
    pub mpra_cols: Option<usize>,
    /// Lane mask width in bits.
    #[arg(long, global = true)]
    pub mask_width: Option<u32>,
    /// Cycles charged per layout change inside a workload.
    #[arg(long, global = true)]
    pub reconfig_cycles: Option<u64>,
    /// Throughput table for SIMD execution.
    /// Falls back to the config file, then to $GTA_CALIBRATION.
    #[arg(long, global = true)]
    pub calibration: Option<PathBuf>,
    /// Workload catalog to use instead of the built-in one.
    #[arg(long, global = true)]
    pub workloads: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration on the register-level simulator.
    Simulate(commands::SimulateArgs),
    /// Model cost of one configuration next to SIMD and the vector baseline.
    Cost(commands::CostArgs),
    /// Search all configurations for an operator or workload.
    Schedule(commands::ScheduleArgs),
    /// List or export the workload catalog.
    Workloads(commands::WorkloadsArgs),
    /// Run the self-check suites.
    Verify(commands::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = commands::Context::new(&cli.global).and_then(|ctx| match &cli.command {
        Command::Simulate(args) => commands::simulate(&ctx, args),
        Command::Cost(args) => commands::cost(&ctx, args),
        Command::Schedule(args) => commands::schedule(&ctx, args),
        Command::Workloads(args) => commands::workloads(&ctx, args),
        Command::Verify(args) => commands::verify(args),
    });
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::VerificationFailed) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
