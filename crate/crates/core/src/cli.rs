//! Subcommand implementations behind the `qsc` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::config::{self, ConfigError, RunConfig};
use crate::link::{self, CapacityConfig, CapacityMode, ChannelParams};
use crate::pipeline::{self, PipelineError, ReportFormat};
use crate::stike::{self, Phase, StikeError};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Error = 1,
    /// Session aborted because the QBER check detected eavesdropping.
    SecurityAbort = 2,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Session(#[from] StikeError),
    #[error(transparent)]
    Link(#[from] link::LinkError),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{0}")]
    Usage(String),
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Where the session report goes next to the transmission report.
pub fn session_report_path(out: &Path) -> PathBuf {
    out.with_extension("session.json")
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub format: ReportFormat,
    pub dry_run: bool,
}

/// Runs the codec pipeline, then sends the codes through a STIKE session.
pub fn simulate(args: &SimulateArgs) -> Result<Exit, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let timing = cfg.resolve_timing()?;
    if args.dry_run {
        println!("config ok: {}", args.config.display());
        return Ok(Exit::Ok);
    }

    let dataset = pipeline::load_dataset(cfg.dataset_dir())?;
    let run = pipeline::simulate_run(&dataset, &cfg.codec, &timing, cfg.batch_size)?;
    let payload: Vec<bool> = run.codes.iter().flat_map(|c| c.to_bits()).collect();
    let session = match stike::run_session(payload, &cfg.session_config(), &cfg.channel, cfg.seed) {
        Ok(report) => report,
        Err(StikeError::KeyExhausted {
            session: Some(parked),
            ..
        }) => parked.report(),
        Err(e) => return Err(e.into()),
    };

    pipeline::emit_report(&run.report, &args.out, args.format)?;
    let mut body = serde_json::to_string_pretty(&session).expect("session report serializes");
    body.push('\n');
    write_file(&session_report_path(&args.out), &body)?;

    let r = &run.report;
    println!(
        "n={} clouds={} rounds={} total={:.1} ms edr={:.2} kbps rte={:.2} mean_cd={:.3e}",
        r.n,
        dataset.len(),
        r.rounds,
        r.total_time_ms,
        r.edr_bps / 1000.0,
        r.rte,
        r.mean_cd
    );
    println!(
        "session: {:?}, {} frames",
        session.phase,
        session.frames.len()
    );
    match session.phase {
        Phase::Completed => Ok(Exit::Ok),
        Phase::Aborted => {
            eprintln!("eavesdropping detected: QBER above {}", cfg.threshold);
            Ok(Exit::SecurityAbort)
        }
        _ => Err(CliError::Usage(format!(
            "key pool exhausted after {} frames; session paused",
            session.frames.len()
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct CapacityArgs {
    pub config: Option<PathBuf>,
    pub mode: String,
    pub eve_error: f64,
    pub report: Option<PathBuf>,
    pub dry_run: bool,
}

fn marker(value: f64, line: f64) -> char {
    if value > line {
        '>'
    } else {
        '<'
    }
}

/// Capacity lines, and each report's EDR marked against them.
pub fn capacity_table(
    channel: &ChannelParams,
    config: &CapacityConfig,
    reports: &[pipeline::TransmissionReport],
) -> Result<String, CliError> {
    let lines = link::capacity_lines(channel, config)?;
    let mut out = String::new();
    let _ = writeln!(out, "mode: {:?}", config.mode);
    let _ = writeln!(out, "shannon: {:.2} kbps", lines.shannon_bps / 1000.0);
    let _ = writeln!(out, "wyner:   {:.2} kbps", lines.secrecy_bps / 1000.0);
    for r in reports {
        let _ = writeln!(
            out,
            "n={:<5} edr={:>10.2} kbps  {} wyner  {} shannon",
            r.n,
            r.edr_bps / 1000.0,
            marker(r.edr_bps, lines.secrecy_bps),
            marker(r.edr_bps, lines.shannon_bps),
        );
    }
    Ok(out)
}

pub fn capacity(args: &CapacityArgs) -> Result<Exit, CliError> {
    let mode: CapacityMode = args.mode.parse()?;
    let channel = match &args.config {
        Some(path) => RunConfig::load(path)?.channel,
        None => ChannelParams::default(),
    };
    let reports = match &args.report {
        Some(path) => pipeline::read_reports(path)?,
        None => Vec::new(),
    };
    if args.dry_run {
        return Ok(Exit::Ok);
    }
    let cfg = CapacityConfig {
        mode,
        eve_error: args.eve_error,
    };
    print!("{}", capacity_table(&channel, &cfg, &reports)?);
    Ok(Exit::Ok)
}

#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    pub table: PathBuf,
    pub dataset_size: usize,
    pub batch_size: usize,
    pub out: PathBuf,
    pub dry_run: bool,
}

pub fn calibrate(args: &CalibrateArgs) -> Result<Exit, CliError> {
    let rows = config::read_timing_table(&args.table)?;
    let cal = pipeline::calibrate_timing(&rows, args.dataset_size, args.batch_size)?;
    if args.dry_run {
        return Ok(Exit::Ok);
    }
    let t = &cal.timing;
    println!(
        "overhead {:.3} ms/round, rate {:.2} bps, {} rounds",
        t.per_round_overhead_ms, t.effective_rate_bps, cal.rounds
    );
    println!(
        "{:>6} {:>12} {:>12} {:>12}",
        "n", "observed", "fitted", "residual"
    );
    for r in &cal.residuals {
        println!(
            "{:>6} {:>12.3} {:>12.3} {:>12.3e}",
            r.n, r.observed_round_ms, r.fitted_round_ms, r.residual_ms
        );
    }
    let mut body = serde_json::to_string_pretty(&cal).expect("calibration serializes");
    body.push('\n');
    write_file(&args.out, &body)?;
    Ok(Exit::Ok)
}

#[derive(Debug, Clone)]
pub struct CodesValidateArgs {
    pub archive: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub dry_run: bool,
}

pub fn codes_validate(args: &CodesValidateArgs) -> Result<Exit, CliError> {
    let path = match (&args.archive, &args.config) {
        (Some(p), _) => p.clone(),
        (None, Some(cfg)) => RunConfig::load(cfg)?
            .codec
            .source
            .ok_or_else(|| CliError::Usage("config has no codec.source archive".into()))?,
        (None, None) => return Err(CliError::Usage("pass --archive or --config".into())),
    };
    if args.dry_run {
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "{} does not exist",
                path.display()
            )));
        }
        return Ok(Exit::Ok);
    }
    let records = codec::load_external_codes(&path)?;
    let worst = records
        .iter()
        .map(|r| r.code.power_error())
        .fold(0.0, f64::max);
    println!(
        "{}: {} records ok, worst power drift {:.3e}",
        path.display(),
        records.len(),
        worst
    );
    Ok(Exit::Ok)
}
