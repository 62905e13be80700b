//! JSON run configuration.
//!
//! Top-level scalar fields can be overridden from the environment with a
//! `QSC_` prefix (`QSC_SEED=7`, `QSC_EVE_FRACTION=1`). Command-line flags win
//! over both.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codec::{CodecDescriptor, CodecKind};
use crate::link::{ChannelParams, LinkError};
use crate::pipeline::{self, TimingModel, BENCHMARK_BATCH_SIZE, BENCHMARK_DATASET_SIZE};
use crate::stike::{SessionConfig, DEFAULT_THRESHOLD};

pub const ENV_PREFIX: &str = "QSC_";

/// Top-level fields that accept environment overrides.
pub const SCALAR_FIELDS: [&str; 5] = [
    "seed",
    "batch_size",
    "dataset_dir",
    "threshold",
    "eve_fraction",
];

/// A configuration problem, tagged with the offending field path.
#[derive(Debug, Error, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingKeyword {
    Calibrate,
}

/// Either an explicit timing model or `"calibrate"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimingSpec {
    Keyword(TimingKeyword),
    Model(TimingModel),
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self::Keyword(TimingKeyword::Calibrate)
    }
}

/// Rows used when `timing` is `"calibrate"`. Without a table the built-in
/// benchmark rows are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSource {
    pub table_csv: Option<PathBuf>,
    pub dataset_size: usize,
    pub batch_size: usize,
}

impl Default for CalibrationSource {
    fn default() -> Self {
        Self {
            table_csv: None,
            dataset_size: BENCHMARK_DATASET_SIZE,
            batch_size: BENCHMARK_BATCH_SIZE,
        }
    }
}

/// Session knobs other than threshold and eavesdropper, which sit at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionTuning {
    pub check_fraction: f64,
    pub min_check_bits: usize,
    pub frame_payload_bits: usize,
    pub initial_key_bits: usize,
    pub authenticated: bool,
    pub residual_ber: f64,
}

impl Default for SessionTuning {
    fn default() -> Self {
        let d = SessionConfig::default();
        Self {
            check_fraction: d.check_fraction,
            min_check_bits: d.min_check_bits,
            frame_payload_bits: d.frame_payload_bits,
            initial_key_bits: d.initial_key_bits,
            authenticated: d.authenticated,
            residual_ber: d.residual_ber,
        }
    }
}

fn default_codec() -> CodecDescriptor {
    CodecDescriptor::baseline(300)
}

fn default_batch() -> usize {
    BENCHMARK_BATCH_SIZE
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default = "default_codec")]
    pub codec: CodecDescriptor,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default)]
    pub calibration: CalibrationSource,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub eve_fraction: f64,
    #[serde(default)]
    pub session: SessionTuning,
}

impl RunConfig {
    /// Parses `text`, applies `QSC_*` overrides from `env` and validates.
    pub fn from_json_with_env<I>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut value: Value = serde_json::from_str(text).map_err(|e| {
            ConfigError::at("<root>", format!("invalid JSON at line {}: {e}", e.line()))
        })?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| ConfigError::at("<root>", "config must be a JSON object"))?;
        for (key, raw) in env {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let field = field.to_ascii_lowercase();
            if !SCALAR_FIELDS.contains(&field.as_str()) {
                continue;
            }
            let parsed = match serde_json::from_str::<Value>(&raw) {
                Ok(v) if !v.is_object() && !v.is_array() => v,
                _ => Value::String(raw),
            };
            obj.insert(field, parsed);
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(
                if path == "." {
                    "<root>".to_string()
                } else {
                    path
                },
                e.into_inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` with overrides taken from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::at("--config", format!("{}: {e}", path.display())))?;
        Self::from_json_with_env(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.dataset_dir {
            None => return Err(ConfigError::at("dataset_dir", "is required")),
            Some(dir) if !dir.is_dir() => {
                return Err(ConfigError::at(
                    "dataset_dir",
                    format!("{} is not a directory", dir.display()),
                ))
            }
            _ => {}
        }
        self.channel.validate().map_err(|e| match e {
            LinkError::Param { field, reason } => {
                ConfigError::at(format!("channel.{field}"), reason)
            }
            other => ConfigError::at("channel", other.to_string()),
        })?;
        if let Err(e) = self.codec.validate() {
            let field = match self.codec.kind {
                CodecKind::ExternalNeural if self.codec.source.is_none() => "codec.source",
                _ => "codec.n",
            };
            return Err(ConfigError::at(field, e.to_string()));
        }
        for (field, path) in [
            ("codec.source", &self.codec.source),
            ("codec.reconstructions", &self.codec.reconstructions),
            ("calibration.table_csv", &self.calibration.table_csv),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::at(
                        field,
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        if let TimingSpec::Model(t) = &self.timing {
            t.validate()
                .map_err(|e| ConfigError::at("timing", e.to_string()))?;
        }
        if self.batch_size == 0 {
            return Err(ConfigError::at("batch_size", "must be >= 1"));
        }
        for (field, p) in [
            ("threshold", self.threshold),
            ("eve_fraction", self.eve_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::at(field, format!("{p} is not a probability")));
            }
        }
        self.session_config()
            .validate()
            .map_err(|e| ConfigError::at("session", e.to_string()))?;
        Ok(())
    }

    pub fn dataset_dir(&self) -> &Path {
        self.dataset_dir
            .as_deref()
            .expect("validated config has a dataset_dir")
    }

    pub fn session_config(&self) -> SessionConfig {
        let s = &self.session;
        SessionConfig {
            threshold: self.threshold,
            eve_fraction: self.eve_fraction,
            check_fraction: s.check_fraction,
            min_check_bits: s.min_check_bits,
            frame_payload_bits: s.frame_payload_bits,
            initial_key_bits: s.initial_key_bits,
            authenticated: s.authenticated,
            residual_ber: s.residual_ber,
        }
    }

    /// The timing model to run with, fitting it first when requested.
    pub fn resolve_timing(&self) -> Result<TimingModel, ConfigError> {
        match &self.timing {
            TimingSpec::Model(t) => Ok(t.clone()),
            TimingSpec::Keyword(TimingKeyword::Calibrate) => {
                let src = &self.calibration;
                let rows = match &src.table_csv {
                    Some(path) => read_timing_table(path)?,
                    None => pipeline::benchmark_semantic_rows(),
                };
                pipeline::calibrate_timing(&rows, src.dataset_size, src.batch_size)
                    .map(|c| c.timing)
                    .map_err(|e| ConfigError::at("calibration", e.to_string()))
            }
        }
    }
}

/// Reads an `n,total_time_ms` CSV table.
pub fn read_timing_table(path: &Path) -> Result<Vec<(usize, f64)>, ConfigError> {
    let file = fs::File::open(path)
        .map_err(|e| ConfigError::at(path.display().to_string(), e.to_string()))?;
    parse_timing_table(file).map_err(|mut e| {
        e.path = format!("{}:{}", path.display(), e.path);
        e
    })
}

/// Parses an `n,total_time_ms` CSV table. Errors carry the line number as
/// their path.
pub fn parse_timing_table<R: std::io::Read>(reader: R) -> Result<Vec<(usize, f64)>, ConfigError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ConfigError::at("1", e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["n", "total_time_ms"] {
        return Err(ConfigError::at("1", "header must be \"n,total_time_ms\""));
    }
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ConfigError::at(line.to_string(), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0).to_string();
        let n: usize = record[0].parse().map_err(|_| {
            ConfigError::at(&line, format!("n = {:?} is not an integer", &record[0]))
        })?;
        let total: f64 = record[1].parse().map_err(|_| {
            ConfigError::at(
                &line,
                format!("total_time_ms = {:?} is not a number", &record[1]),
            )
        })?;
        rows.push((n, total));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_dir(extra: &str) -> (tempfile::TempDir, String) {
        let dir = tempfile::tempdir().unwrap();
        let json = format!(
            "{{\"dataset_dir\": {}{extra}}}",
            serde_json::to_string(dir.path()).unwrap()
        );
        (dir, json)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let (_d, json) = with_dir("");
        let cfg = RunConfig::from_json_with_env(&json, []).unwrap();
        assert_eq!(cfg.channel, ChannelParams::default());
        assert_eq!(cfg.batch_size, 3);
        assert_eq!(cfg.threshold, 0.12);
        assert_eq!(cfg.timing, TimingSpec::Keyword(TimingKeyword::Calibrate));
        let t = cfg.resolve_timing().unwrap();
        assert!(t.effective_rate_bps > 0.0);
    }

    #[test]
    fn missing_dataset_dir_is_reported_by_path() {
        let err = RunConfig::from_json_with_env("{}", []).unwrap_err();
        assert_eq!(err.path, "dataset_dir");
        let err = RunConfig::from_json_with_env(r#"{"dataset_dir": "/definitely/not/here"}"#, [])
            .unwrap_err();
        assert_eq!(err.path, "dataset_dir");
    }

    #[test]
    fn nested_errors_carry_paths() {
        let (_d, json) = with_dir(r#", "channel": {"det_efficiency": 2.0}"#);
        assert_eq!(
            RunConfig::from_json_with_env(&json, []).unwrap_err().path,
            "channel.det_efficiency"
        );
        let (_d, json) = with_dir(r#", "channel": {"det_efficiency": "high"}"#);
        assert_eq!(
            RunConfig::from_json_with_env(&json, []).unwrap_err().path,
            "channel.det_efficiency"
        );
        let (_d, json) = with_dir(r#", "codec": {"kind": "baseline-fps", "n": 10}"#);
        assert_eq!(
            RunConfig::from_json_with_env(&json, []).unwrap_err().path,
            "codec.n"
        );
        let (_d, json) = with_dir(r#", "bogus": 1"#);
        assert!(RunConfig::from_json_with_env(&json, []).is_err());
        let (_d, json) = with_dir(r#", "timing": "sometimes""#);
        assert_eq!(
            RunConfig::from_json_with_env(&json, []).unwrap_err().path,
            "timing"
        );
    }

    #[test]
    fn env_overrides_top_level_scalars() {
        let (_d, json) = with_dir(r#", "seed": 1"#);
        let env = [
            ("QSC_SEED".to_string(), "77".to_string()),
            ("QSC_EVE_FRACTION".to_string(), "1".to_string()),
            ("QSC_CHANNEL".to_string(), "{}".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let cfg = RunConfig::from_json_with_env(&json, env).unwrap();
        assert_eq!(cfg.seed, 77);
        assert_eq!(cfg.eve_fraction, 1.0);
        let err = RunConfig::from_json_with_env(&json, [("QSC_BATCH_SIZE".into(), "0".into())])
            .unwrap_err();
        assert_eq!(err.path, "batch_size");
    }

    #[test]
    fn explicit_timing_model() {
        let (_d, json) = with_dir(
            r#", "timing": {"per_round_overhead_ms": 1.0, "effective_rate_bps": 100.0, "encode_ms": 0.0, "decode_ms": 0.0}"#,
        );
        let cfg = RunConfig::from_json_with_env(&json, []).unwrap();
        assert_eq!(cfg.resolve_timing().unwrap().effective_rate_bps, 100.0);
    }

    #[test]
    fn timing_table_parsing() {
        let rows =
            parse_timing_table("n,total_time_ms\n10,1244715\n300,7530870\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![(10, 1_244_715.0), (300, 7_530_870.0)]);
        let err = parse_timing_table("n,total_time_ms\n10,1\n20,abc\n".as_bytes()).unwrap_err();
        assert_eq!(err.path, "3");
        let err = parse_timing_table("n,time\n10,1\n".as_bytes()).unwrap_err();
        assert_eq!(err.path, "1");
    }
}
