//! End-to-end transmission runs and efficiency metrics.
//!
//! A run pushes a dataset through a codec in rounds of `batch_size` clouds.
//! Each round costs a fixed overhead plus the batch's code bits at the
//! effective channel rate; per-cloud encode and decode latencies are added on
//! top. EDR counts reconstructed bits (`N * 3 * 32` per cloud) per second of
//! total time; RTE compares against sending the raw coordinates.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecDescriptor, CodecError, SemanticCode, BITS_PER_SYMBOL};
use crate::pointcloud::{self, chamfer_distance, CloudError, CloudFormat, PointCloud};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("cloud {id:?}: {source}")]
    Codec {
        id: String,
        #[source]
        source: CodecError,
    },
    #[error(transparent)]
    CodecSetup(#[from] CodecError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// One row of the published 50 km benchmark over 10,261 test clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkRow {
    pub n: usize,
    pub encode_ms: f64,
    pub decode_ms: f64,
    pub total_ms: f64,
    pub cd: f64,
    pub edr_kbps: f64,
    pub rte: f64,
}

/// Published benchmark; the `n = 6144` row is raw coordinate transmission.
pub const BENCHMARK: [BenchmarkRow; 7] = [
    BenchmarkRow {
        n: 6144,
        encode_ms: 0.0,
        decode_ms: 0.0,
        total_ms: 57_636_000.0,
        cd: 0.0,
        edr_kbps: 34.37,
        rte: 1.0,
    },
    BenchmarkRow {
        n: 10,
        encode_ms: 3.72,
        decode_ms: 1.44,
        total_ms: 1_244_715.0,
        cd: 3.40e-3,
        edr_kbps: 1591.52,
        rte: 46.30,
    },
    BenchmarkRow {
        n: 20,
        encode_ms: 3.86,
        decode_ms: 1.41,
        total_ms: 1_690_240.0,
        cd: 2.58e-3,
        edr_kbps: 1172.02,
        rte: 34.10,
    },
    BenchmarkRow {
        n: 50,
        encode_ms: 3.89,
        decode_ms: 1.35,
        total_ms: 2_708_329.0,
        cd: 2.00e-3,
        edr_kbps: 731.44,
        rte: 21.28,
    },
    BenchmarkRow {
        n: 100,
        encode_ms: 3.15,
        decode_ms: 1.34,
        total_ms: 4_855_498.0,
        cd: 1.68e-3,
        edr_kbps: 407.99,
        rte: 11.87,
    },
    BenchmarkRow {
        n: 200,
        encode_ms: 2.76,
        decode_ms: 1.22,
        total_ms: 5_303_667.0,
        cd: 1.47e-3,
        edr_kbps: 373.51,
        rte: 10.87,
    },
    BenchmarkRow {
        n: 300,
        encode_ms: 3.21,
        decode_ms: 1.39,
        total_ms: 7_530_870.0,
        cd: 1.38e-3,
        edr_kbps: 263.05,
        rte: 7.65,
    },
];

pub const BENCHMARK_DATASET_SIZE: usize = 10_261;
pub const BENCHMARK_BATCH_SIZE: usize = 3;
pub const BENCHMARK_POINTS: usize = 2048;

/// `(n, total_ms)` pairs of the semantic rows, for calibration.
pub fn benchmark_semantic_rows() -> Vec<(usize, f64)> {
    BENCHMARK
        .iter()
        .filter(|r| r.n != 6144)
        .map(|r| (r.n, r.total_ms))
        .collect()
}

/// Affine round-time model: each round costs `per_round_overhead_ms` plus
/// its bits at `effective_rate_bps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingModel {
    pub per_round_overhead_ms: f64,
    pub effective_rate_bps: f64,
    pub encode_ms: f64,
    pub decode_ms: f64,
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fields = [
            ("per_round_overhead_ms", self.per_round_overhead_ms),
            ("encode_ms", self.encode_ms),
            ("decode_ms", self.decode_ms),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PipelineError::Argument(format!(
                    "{name} = {v} must be >= 0"
                )));
            }
        }
        if !(self.effective_rate_bps.is_finite() && self.effective_rate_bps > 0.0) {
            return Err(PipelineError::Argument(format!(
                "effective_rate_bps = {} must be > 0",
                self.effective_rate_bps
            )));
        }
        Ok(())
    }

    pub fn round_ms(&self, bits_per_round: f64) -> f64 {
        self.per_round_overhead_ms + bits_per_round / self.effective_rate_bps * 1000.0
    }

    /// Channel time for `clouds` clouds at code length `n`.
    pub fn channel_ms(&self, clouds: usize, n: usize, batch_size: usize) -> f64 {
        let rounds = clouds.div_ceil(batch_size);
        let bits = (batch_size * n) as f64 * BITS_PER_SYMBOL as f64;
        rounds as f64 * self.round_ms(bits)
    }
}

/// Summary of one run. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionReport {
    pub n: usize,
    pub total_time_ms: f64,
    pub total_bits: u64,
    pub mean_cd: f64,
    pub edr_bps: f64,
    pub rte: f64,
    pub rounds: usize,
    pub batch_size: usize,
}

pub const REPORT_CSV_HEADER: &str =
    "n,total_time_ms,total_bits,mean_cd,edr_bps,rte,rounds,batch_size";

/// A cloud with its dataset identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub cloud: PointCloud,
}

/// Loads every `.xyz`/`.txt`/`.bin`/`.f32` file in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.is_file() && CloudFormat::from_path(p).is_some());
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let format = CloudFormat::from_path(&path).expect("filtered above");
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let cloud = pointcloud::load_pointcloud(&path, format)?;
            Ok(Sample { id, cloud })
        })
        .collect()
}

/// Report plus the codes that crossed the channel, in dataset order.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: TransmissionReport,
    pub codes: Vec<SemanticCode>,
}

/// Encodes, times and decodes `dataset` with the given codec.
pub fn simulate_run(
    dataset: &[Sample],
    codec_desc: &CodecDescriptor,
    timing: &TimingModel,
    batch_size: usize,
) -> Result<RunOutput, PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::Argument("dataset is empty".into()));
    }
    if batch_size == 0 {
        return Err(PipelineError::Argument(
            "batch size must be positive".into(),
        ));
    }
    timing.validate()?;
    let codec = codec::build_codec(codec_desc)?;
    let n = codec.n();

    let mut codes = Vec::with_capacity(dataset.len());
    let mut cd_sum = 0.0;
    let mut total_bits = 0u64;
    let mut max_points = 0;
    for sample in dataset {
        let wrap = |source| PipelineError::Codec {
            id: sample.id.clone(),
            source,
        };
        let code = codec.encode(&sample.id, &sample.cloud).map_err(wrap)?;
        let decoded = codec
            .decode(&sample.id, &code, sample.cloud.len())
            .map_err(wrap)?;
        cd_sum += chamfer_distance(&sample.cloud, &decoded);
        total_bits += reconstructed_bits(decoded.len());
        max_points = max_points.max(sample.cloud.len());
        codes.push(code);
    }

    let clouds = dataset.len();
    let rounds = clouds.div_ceil(batch_size);
    let total_time_ms = timing.channel_ms(clouds, n, batch_size)
        + clouds as f64 * (timing.encode_ms + timing.decode_ms);
    let raw_time_ms = timing.channel_ms(clouds, 3 * max_points, batch_size);

    let report = TransmissionReport {
        n,
        total_time_ms,
        total_bits,
        mean_cd: cd_sum / clouds as f64,
        edr_bps: compute_edr(total_bits, total_time_ms)?,
        rte: compute_rte(raw_time_ms, total_time_ms)?,
        rounds,
        batch_size,
    };
    Ok(RunOutput { report, codes })
}

/// Bits of a reconstructed cloud with `points` points (three 32-bit reals each).
pub fn reconstructed_bits(points: usize) -> u64 {
    points as u64 * 3 * BITS_PER_SYMBOL
}

pub fn compute_edr(
    total_reconstructed_bits: u64,
    total_time_ms: f64,
) -> Result<f64, PipelineError> {
    if total_time_ms.is_nan() || total_time_ms <= 0.0 {
        return Err(PipelineError::Argument(format!(
            "total time {total_time_ms} ms must be positive"
        )));
    }
    Ok(total_reconstructed_bits as f64 / (total_time_ms / 1000.0))
}

pub fn compute_rte(raw_time_ms: f64, task_time_ms: f64) -> Result<f64, PipelineError> {
    if !(task_time_ms > 0.0 && raw_time_ms > 0.0) {
        return Err(PipelineError::Argument(format!(
            "times must be positive (raw {raw_time_ms} ms, task {task_time_ms} ms)"
        )));
    }
    Ok(raw_time_ms / task_time_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResidual {
    pub n: usize,
    pub bits_per_round: f64,
    pub observed_round_ms: f64,
    pub fitted_round_ms: f64,
    pub residual_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub timing: TimingModel,
    pub rounds: usize,
    pub residuals: Vec<CalibrationResidual>,
}

/// Fits the affine round-time model to `(n, total_ms)` rows.
///
/// Per-round time is `total / ceil(dataset_size / batch_size)` against
/// `batch_size * n * 32` bits per round. The fit is ordinary least squares on
/// per-bit time `y / x = slope + overhead / x`, i.e. weights `1 / x^2` on the
/// affine model, so the long-code rows do not drown out the short ones. The
/// intercept is clamped at zero.
pub fn calibrate_timing(
    rows: &[(usize, f64)],
    dataset_size: usize,
    batch_size: usize,
) -> Result<Calibration, PipelineError> {
    if rows.len() < 2 {
        return Err(PipelineError::Calibration(format!(
            "need at least 2 rows, got {}",
            rows.len()
        )));
    }
    if dataset_size == 0 || batch_size == 0 {
        return Err(PipelineError::Calibration(
            "dataset and batch size must be positive".into(),
        ));
    }
    let rounds = dataset_size.div_ceil(batch_size);
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|&(n, total)| {
            (
                (batch_size * n) as f64 * BITS_PER_SYMBOL as f64,
                total / rounds as f64,
            )
        })
        .collect();
    if let Some(&(_, y)) = points.iter().find(|(_, y)| !(y.is_finite() && *y > 0.0)) {
        return Err(PipelineError::Calibration(format!(
            "per-round time {y} must be positive"
        )));
    }

    // weighted normal equations with weights 1 / x^2
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in &points {
        let w = 1.0 / (x * x);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if det.abs() <= 1e-12 * sw * sxx {
        return Err(PipelineError::Calibration(
            "all rows share the same code length; slope is undetermined".into(),
        ));
    }
    let mut slope = (sw * sxy - sx * sy) / det;
    let mut intercept = (sy - slope * sx) / sw;
    if intercept < 0.0 {
        intercept = 0.0;
        slope = sxy / sxx;
    }
    if slope.is_nan() || slope <= 0.0 {
        return Err(PipelineError::Calibration(format!(
            "fitted slope {slope} ms/bit is not positive"
        )));
    }
    let timing = TimingModel {
        per_round_overhead_ms: intercept,
        effective_rate_bps: 1000.0 / slope,
        encode_ms: 0.0,
        decode_ms: 0.0,
    };
    let residuals = rows
        .iter()
        .zip(&points)
        .map(|(&(n, _), &(x, y))| {
            let fitted = timing.round_ms(x);
            CalibrationResidual {
                n,
                bits_per_round: x,
                observed_round_ms: y,
                fitted_round_ms: fitted,
                residual_ms: y - fitted,
            }
        })
        .collect();
    Ok(Calibration {
        timing,
        rounds,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSaturation {
    pub time_b3_ms: f64,
    pub time_b32_ms: f64,
    /// Fractional reduction `1 - time_b32 / time_b3`.
    pub reduction: f64,
}

/// Channel time at batch 3 versus a saturated batch of 32.
pub fn batch_saturation_report(
    timing: &TimingModel,
    n: usize,
    dataset_size: usize,
) -> BatchSaturation {
    let time_b3_ms = timing.channel_ms(dataset_size, n, 3);
    let time_b32_ms = timing.channel_ms(dataset_size, n, 32);
    BatchSaturation {
        time_b3_ms,
        time_b32_ms,
        reduction: 1.0 - time_b32_ms / time_b3_ms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(PipelineError::Argument(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

pub fn report_csv(reports: &[TransmissionReport]) -> Result<String, PipelineError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    for r in reports {
        w.serialize(r)
            .map_err(|e| PipelineError::Argument(e.to_string()))?;
    }
    if reports.is_empty() {
        return Ok(format!("{REPORT_CSV_HEADER}\n"));
    }
    let bytes = w
        .into_inner()
        .map_err(|e| PipelineError::Argument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_report(
    report: &TransmissionReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), PipelineError> {
    let body = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => report_csv(std::slice::from_ref(report))?,
    };
    fs::write(path, body).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads reports written by [`emit_report`] (JSON object, JSON array or CSV).
pub fn read_reports(path: &Path) -> Result<Vec<TransmissionReport>, PipelineError> {
    let io = |reason: String| PipelineError::Io {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return serde_json::from_str(&text)
            .map(|r| vec![r])
            .map_err(|e| io(e.to_string()));
    }
    if trimmed.starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| io(e.to_string()));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecDescriptor;

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64 / n as f64, 0.0, 0.0]).collect()).unwrap()
    }

    fn samples(count: usize, points: usize) -> Vec<Sample> {
        (0..count)
            .map(|i| Sample {
                id: format!("c{i:03}"),
                cloud: line_cloud(points),
            })
            .collect()
    }

    #[test]
    fn single_round_arithmetic() {
        let rate = 20_000.0;
        let timing = TimingModel {
            per_round_overhead_ms: 0.0,
            effective_rate_bps: rate,
            encode_ms: 0.0,
            decode_ms: 0.0,
        };
        assert_eq!(timing.channel_ms(1, 6144, 1), 6144.0 * 32.0 / rate * 1000.0);
        let data = samples(1, 2048);
        let out = simulate_run(&data, &CodecDescriptor::baseline(6144), &timing, 1).unwrap();
        assert!((out.report.total_time_ms - 6144.0 * 32.0 / rate * 1000.0).abs() < 1e-6);
        assert!((out.report.rte - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rounds_use_ceiling() {
        let timing = TimingModel {
            per_round_overhead_ms: 10.0,
            effective_rate_bps: 1e4,
            encode_ms: 1.0,
            decode_ms: 0.5,
        };
        let data = samples(6, 10);
        let out = simulate_run(&data, &CodecDescriptor::baseline(6), &timing, 3).unwrap();
        assert_eq!(out.report.rounds, 2);
        let out = simulate_run(&samples(7, 10), &CodecDescriptor::baseline(6), &timing, 3).unwrap();
        assert_eq!(out.report.rounds, 3);
        assert_eq!(out.report.total_bits, 7 * 10 * 96);
    }

    #[test]
    fn codec_failure_names_cloud() {
        let timing = TimingModel {
            per_round_overhead_ms: 0.0,
            effective_rate_bps: 1.0,
            encode_ms: 0.0,
            decode_ms: 0.0,
        };
        let mut data = samples(2, 10);
        data[1].cloud = line_cloud(2);
        let err = simulate_run(&data, &CodecDescriptor::baseline(9), &timing, 1).unwrap_err();
        assert!(
            matches!(err, PipelineError::Codec { ref id, .. } if id == "c001"),
            "{err}"
        );
        assert!(simulate_run(&[], &CodecDescriptor::baseline(9), &timing, 1).is_err());
    }

    #[test]
    fn edr_and_rte_examples() {
        assert_eq!(compute_edr(1000, 1000.0).unwrap(), 1000.0);
        assert_eq!(compute_edr(0, 5.0).unwrap(), 0.0);
        assert!(compute_edr(1, 0.0).is_err());
        let bits = reconstructed_bits(2048) * 10_261;
        assert_eq!(bits, 2_017_394_688);
        let edr = compute_edr(bits, 1_244_715.0).unwrap();
        assert!((edr - 1_620_768.36).abs() < 1.0, "{edr}");
        assert!((compute_rte(57_636_000.0, 1_244_715.0).unwrap() - 46.30).abs() < 0.005);
        assert!((compute_rte(57_636_000.0, 2_708_329.0).unwrap() - 21.28).abs() < 0.005);
        assert_eq!(compute_rte(7.0, 7.0).unwrap(), 1.0);
        assert!(compute_rte(1.0, 0.0).is_err());
    }

    #[test]
    fn calibration_recovers_synthetic_model() {
        let truth = TimingModel {
            per_round_overhead_ms: 300.0,
            effective_rate_bps: 15_000.0,
            encode_ms: 0.0,
            decode_ms: 0.0,
        };
        let rounds = 10_261usize.div_ceil(3);
        let rows: Vec<(usize, f64)> = [10, 300]
            .iter()
            .map(|&n| (n, rounds as f64 * truth.round_ms((3 * n * 32) as f64)))
            .collect();
        let cal = calibrate_timing(&rows, 10_261, 3).unwrap();
        let t = &cal.timing;
        assert!((t.per_round_overhead_ms / 300.0 - 1.0).abs() < 1e-6);
        assert!((t.effective_rate_bps / 15_000.0 - 1.0).abs() < 1e-6);
        assert!(cal.residuals.iter().all(|r| r.residual_ms.abs() < 1e-9));
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            calibrate_timing(&[(10, 1.0)], 10, 3),
            Err(PipelineError::Calibration(_))
        ));
        assert!(matches!(
            calibrate_timing(&[(10, 1.0), (10, 2.0)], 10, 3),
            Err(PipelineError::Calibration(_))
        ));
    }

    #[test]
    fn benchmark_two_point_anchors() {
        // per-round times of the n = 10 and n = 300 rows
        let rounds = 3421.0_f64;
        let y10 = 1_244_715.0 / rounds;
        let y300 = 7_530_870.0 / rounds;
        assert!((y10 - 363.85).abs() < 0.01 && (y300 - 2201.37).abs() < 0.01);
        let cal = calibrate_timing(&[(10, 1_244_715.0), (300, 7_530_870.0)], 10_261, 3).unwrap();
        assert!((cal.timing.effective_rate_bps - 15_150.86).abs() < 0.1);
        assert!((cal.timing.per_round_overhead_ms - 300.48).abs() < 0.01);
    }

    #[test]
    fn benchmark_full_fit() {
        let cal = calibrate_timing(&benchmark_semantic_rows(), 10_261, 3).unwrap();
        assert!((cal.timing.per_round_overhead_ms - 289.397_233_8).abs() < 1e-6);
        assert!((cal.timing.effective_rate_bps - 11_140.863_263).abs() < 1e-5);
        let sat = batch_saturation_report(&cal.timing, 10, 10_261);
        assert!((sat.reduction - 0.698_057_166).abs() < 1e-8);
        assert_eq!(cal.residuals.len(), 6);
    }

    #[test]
    fn saturation_limits() {
        let no_overhead = TimingModel {
            per_round_overhead_ms: 0.0,
            effective_rate_bps: 1e4,
            encode_ms: 0.0,
            decode_ms: 0.0,
        };
        // 10_272 clouds fill both batch sizes exactly
        let s = batch_saturation_report(&no_overhead, 10, 96 * 107);
        assert!(s.reduction.abs() < 1e-12);
        let overhead_only = TimingModel {
            per_round_overhead_ms: 100.0,
            effective_rate_bps: 1e300,
            ..no_overhead
        };
        let d = 1_000_000;
        let s = batch_saturation_report(&overhead_only, 10, d);
        let expect = 1.0 - d.div_ceil(32) as f64 / d.div_ceil(3) as f64;
        assert!((s.reduction - expect).abs() < 1e-12);
        assert!((s.reduction - 0.906).abs() < 1e-3);
    }

    #[test]
    fn report_roundtrip_json_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let report = TransmissionReport {
            n: 50,
            total_time_ms: 2_708_329.123456789,
            total_bits: 2_017_394_688,
            mean_cd: 0.1 + 0.2,
            edr_bps: 744_885.384_308_9,
            rte: 21.281,
            rounds: 3421,
            batch_size: 3,
        };
        let json = dir.path().join("r.json");
        emit_report(&report, &json, ReportFormat::Json).unwrap();
        assert_eq!(read_reports(&json).unwrap(), vec![report.clone()]);

        let csv_path = dir.path().join("r.csv");
        emit_report(&report, &csv_path, ReportFormat::Csv).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPORT_CSV_HEADER);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_reports(&csv_path).unwrap(), vec![report.clone()]);

        let bad = dir.path().join("missing").join("r.json");
        assert!(matches!(
            emit_report(&report, &bad, ReportFormat::Json),
            Err(PipelineError::Io { .. })
        ));
    }

    #[test]
    fn dataset_is_sorted_by_name() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.xyz", "a.bin", "c.txt"] {
            let fmt = CloudFormat::from_path(Path::new(name)).unwrap();
            pointcloud::save_pointcloud(&line_cloud(4), &dir.path().join(name), fmt).unwrap();
        }
        fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let ids: Vec<String> = load_dataset(dir.path())
            .unwrap()
            .into_iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }
}
