use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qsc_core::cli::{self, CalibrateArgs, CapacityArgs, CodesValidateArgs, Exit, SimulateArgs};
use qsc_core::pipeline::{ReportFormat, BENCHMARK_BATCH_SIZE, BENCHMARK_DATASET_SIZE};

#[derive(Parser)]
#[command(
    name = "qsc",
    version,
    about = "Quantum semantic point-cloud transmission simulator"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Reference,
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a dataset, time it and send the codes through a STIKE session.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        dry_run: bool,
    },
    /// Print the Shannon and Wyner lines and compare report EDRs against them.
    Capacity {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "reference")]
        mode: Mode,
        /// Eavesdropper error rate for the model secrecy line.
        #[arg(long, default_value_t = 0.0)]
        eve_error: f64,
        /// Transmission report (JSON or CSV) whose EDRs are marked.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Fit the affine timing model to an `n,total_time_ms` table.
    Calibrate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = BENCHMARK_DATASET_SIZE)]
        dataset_size: usize,
        #[arg(long, default_value_t = BENCHMARK_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long, default_value = "timing.json")]
        out: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
    /// Check a code archive's header and power normalization.
    CodesValidate {
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dry_run: bool,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Simulate {
            config,
            seed,
            out,
            format,
            dry_run,
        } => cli::simulate(&SimulateArgs {
            config,
            seed,
            out,
            format: match format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            },
            dry_run,
        }),
        Command::Capacity {
            config,
            mode,
            eve_error,
            report,
            dry_run,
        } => cli::capacity(&CapacityArgs {
            config,
            mode: match mode {
                Mode::Reference => "reference".into(),
                Mode::Model => "model".into(),
            },
            eve_error,
            report,
            dry_run,
        }),
        Command::Calibrate {
            table,
            dataset_size,
            batch_size,
            out,
            dry_run,
        } => cli::calibrate(&CalibrateArgs {
            table,
            dataset_size,
            batch_size,
            out,
            dry_run,
        }),
        Command::CodesValidate {
            archive,
            config,
            dry_run,
        } => cli::codes_validate(&CodesValidateArgs {
            archive,
            config,
            dry_run,
        }),
    };
    match result {
        Ok(exit) => ExitCode::from(exit as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Exit::Error as u8)
        }
    }
}
