//! Semantic codes and the codecs that produce them.
//!
//! A [`SemanticCode`] is a length-`n` vector of 32-bit symbols with unit
//! average power (`sum(x^2) == n`). The deterministic baseline codec picks
//! `n / 3` points by farthest-point sampling; externally trained codecs are
//! ingested through the `QSCC` archive format.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{self, squared_distance, CloudError, CloudFormat, PointCloud};

/// Code lengths with published reconstruction results.
pub const REFERENCE_CODE_LENGTHS: [usize; 6] = [10, 20, 50, 100, 200, 300];

/// Bits used per transmitted symbol.
pub const BITS_PER_SYMBOL: u64 = 32;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"QSCC";
pub const ARCHIVE_VERSION: u16 = 1;

/// Relative power drift tolerated when loading an archive.
pub const ARCHIVE_POWER_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector has length {len}, expected {n}")]
    LengthMismatch { len: usize, n: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("code carries no scale factor; cannot map it back to cloud coordinates")]
    MissingScale,
    #[error("archive format error: {0}")]
    Format(String),
    #[error("archive record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("no code for cloud {0:?}")]
    UnknownCloud(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Scales `v` so that its squared norm equals `n`.
pub fn power_normalize(v: &[f64], n: usize) -> Result<Vec<f64>, CodecError> {
    if v.len() != n || n == 0 {
        return Err(CodecError::LengthMismatch { len: v.len(), n });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(CodecError::ZeroVector);
    }
    let gain = (n as f64).sqrt() / norm;
    Ok(v.iter().map(|x| x * gain).collect())
}

/// Length-`n` transmitted symbol vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCode {
    values: Vec<f32>,
    /// Gain applied by power normalization (`sqrt(n) / |v|`). `None` when
    /// the producer did not record it.
    scale: Option<f64>,
}

impl SemanticCode {
    pub fn new(values: Vec<f32>, scale: Option<f64>) -> Result<Self, CodecError> {
        if values.is_empty() {
            return Err(CodecError::Argument(
                "code length must be at least 1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::Argument(
                "code contains a non-finite value".into(),
            ));
        }
        if let Some(s) = scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(CodecError::Argument(format!(
                    "scale factor {s} must be positive"
                )));
            }
        }
        Ok(Self { values, scale })
    }

    /// Power-normalizes `raw` and quantizes it to 32-bit symbols.
    pub fn from_raw(raw: &[f64]) -> Result<Self, CodecError> {
        let n = raw.len();
        let normalized = power_normalize(raw, n)?;
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = (n as f64).sqrt() / norm;
        Self::new(normalized.iter().map(|&x| x as f32).collect(), Some(scale))
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn scale(&self) -> Option<f64> {
        self.scale
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }

    /// `|sum(x^2) - n| / n`
    pub fn power_error(&self) -> f64 {
        (self.energy() - self.n() as f64).abs() / self.n() as f64
    }

    pub fn bit_len(&self) -> u64 {
        self.n() as u64 * BITS_PER_SYMBOL
    }

    /// Symbols as a bit string, little-endian bytes, LSB first within a byte.
    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.values.len() * 32);
        for v in &self.values {
            let word = v.to_bits();
            bits.extend((0..32).map(|b| (word >> b) & 1 == 1));
        }
        bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    BaselineFps,
    ExternalNeural,
}

/// Which codec to run and at what code length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecDescriptor {
    pub kind: CodecKind,
    pub n: usize,
    /// Code archive for `external-neural`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    /// Directory of decoded clouds (`<id>.xyz` or `<id>.bin`) produced by the
    /// external decoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstructions: Option<PathBuf>,
}

impl CodecDescriptor {
    pub fn baseline(n: usize) -> Self {
        Self {
            kind: CodecKind::BaselineFps,
            n,
            source: None,
            reconstructions: None,
        }
    }

    pub fn is_reference_length(&self) -> bool {
        REFERENCE_CODE_LENGTHS.contains(&self.n)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.n == 0 {
            return Err(CodecError::Argument("n must be at least 1".into()));
        }
        match self.kind {
            CodecKind::BaselineFps if !self.n.is_multiple_of(3) => Err(CodecError::Argument(
                format!("baseline codec needs n divisible by 3, got {}", self.n),
            )),
            CodecKind::ExternalNeural if self.source.is_none() => Err(CodecError::Argument(
                "external-neural codec needs a source archive".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Farthest-point sampling. Starts at the lowest-index point with minimal x,
/// then repeatedly takes the point farthest from everything selected so far
/// (lowest index on ties).
pub fn farthest_point_sample(cloud: &PointCloud, m: usize) -> Vec<usize> {
    let pts = cloud.points();
    if m == 0 {
        return Vec::new();
    }
    let mut seed = 0;
    for (i, p) in pts.iter().enumerate() {
        if p[0] < pts[seed][0] {
            seed = i;
        }
    }
    let mut selected = Vec::with_capacity(m);
    selected.push(seed);
    let mut nearest: Vec<f64> = pts
        .iter()
        .map(|p| squared_distance(p, &pts[seed]))
        .collect();
    // selected points are masked out so duplicates of them stay pickable
    nearest[seed] = f64::NEG_INFINITY;
    while selected.len() < m {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in nearest.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected.push(best);
        for (i, p) in pts.iter().enumerate() {
            let d = squared_distance(p, &pts[best]);
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
        nearest[best] = f64::NEG_INFINITY;
    }
    selected
}

pub fn baseline_encode(cloud: &PointCloud, n: usize) -> Result<SemanticCode, CodecError> {
    if n == 0 || !n.is_multiple_of(3) {
        return Err(CodecError::Argument(format!(
            "n = {n} is not a positive multiple of 3"
        )));
    }
    let m = n / 3;
    if m > cloud.len() {
        return Err(CodecError::Argument(format!(
            "n / 3 = {m} exceeds the cloud's {} points",
            cloud.len()
        )));
    }
    let picks = farthest_point_sample(cloud, m);
    let raw: Vec<f64> = picks.iter().flat_map(|&i| cloud.points()[i]).collect();
    SemanticCode::from_raw(&raw)
}

pub fn baseline_decode(
    code: &SemanticCode,
    target_points: usize,
) -> Result<PointCloud, CodecError> {
    if !code.n().is_multiple_of(3) {
        return Err(CodecError::Argument(format!(
            "code length {} is not divisible by 3",
            code.n()
        )));
    }
    if target_points == 0 {
        return Err(CodecError::Argument(
            "target point count must be positive".into(),
        ));
    }
    let scale = code.scale().ok_or(CodecError::MissingScale)?;
    let restored: Vec<[f64; 3]> = code
        .values()
        .chunks_exact(3)
        .map(|c| {
            [
                c[0] as f64 / scale,
                c[1] as f64 / scale,
                c[2] as f64 / scale,
            ]
        })
        .collect();
    let points = (0..target_points)
        .map(|i| restored[i % restored.len()])
        .collect();
    Ok(PointCloud::new(points)?)
}

/// One archive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeRecord {
    pub id: String,
    pub code: SemanticCode,
}

pub fn write_code_archive(path: &Path, records: &[CodeRecord]) -> Result<(), CodecError> {
    let mut buf = Vec::new();
    encode_archive(&mut buf, records)?;
    let mut file = fs::File::create(path).map_err(|source| CodecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&buf).map_err(|source| CodecError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_archive(out: &mut Vec<u8>, records: &[CodeRecord]) -> Result<(), CodecError> {
    let count =
        u32::try_from(records.len()).map_err(|_| CodecError::Format("too many records".into()))?;
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (index, rec) in records.iter().enumerate() {
        let id = rec.id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| CodecError::Record {
            index,
            reason: "identifier longer than 65535 bytes".into(),
        })?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(rec.code.n() as u32).to_le_bytes());
        // NaN marks a code without scale metadata
        out.extend_from_slice(&rec.code.scale().unwrap_or(f64::NAN).to_le_bytes());
        for v in rec.code.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(
        &mut self,
        len: usize,
        what: &str,
        record: Option<usize>,
    ) -> Result<&'a [u8], CodecError> {
        if self.bytes.len() - self.pos < len {
            let reason = format!("truncated while reading {what} at byte {}", self.pos);
            return Err(match record {
                Some(index) => CodecError::Record { index, reason },
                None => CodecError::Format(reason),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }
}

/// Parses an archive and validates power normalization of every record.
pub fn decode_archive(bytes: &[u8]) -> Result<Vec<CodeRecord>, CodecError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic", None)?;
    if magic != ARCHIVE_MAGIC {
        return Err(CodecError::Format(format!("bad magic {magic:02x?}")));
    }
    let version = u16::from_le_bytes(cur.take(2, "version", None)?.try_into().unwrap());
    if version != ARCHIVE_VERSION {
        return Err(CodecError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(cur.take(4, "record count", None)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let r = Some(index);
        let id_len = u16::from_le_bytes(cur.take(2, "identifier length", r)?.try_into().unwrap());
        let id = std::str::from_utf8(cur.take(id_len as usize, "identifier", r)?)
            .map_err(|_| CodecError::Record {
                index,
                reason: "identifier is not valid UTF-8".into(),
            })?
            .to_string();
        let n = u32::from_le_bytes(cur.take(4, "n", r)?.try_into().unwrap()) as usize;
        let scale = f64::from_le_bytes(cur.take(8, "scale", r)?.try_into().unwrap());
        let raw = cur.take(n.saturating_mul(4), "values", r)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let scale = if scale.is_nan() { None } else { Some(scale) };
        let code = SemanticCode::new(values, scale).map_err(|e| CodecError::Record {
            index,
            reason: e.to_string(),
        })?;
        let drift = code.power_error();
        if drift > ARCHIVE_POWER_TOLERANCE {
            return Err(CodecError::Record {
                index,
                reason: format!(
                    "power {:.6} deviates from n = {n} by {drift:.3e} (relative)",
                    code.energy()
                ),
            });
        }
        records.push(CodeRecord { id, code });
    }
    if cur.pos != bytes.len() {
        return Err(CodecError::Format(format!(
            "{} trailing bytes after last record",
            bytes.len() - cur.pos
        )));
    }
    Ok(records)
}

pub fn load_external_codes(path: &Path) -> Result<Vec<CodeRecord>, CodecError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CodecError::Io {
            path: path.display().to_string(),
            source,
        })?;
    decode_archive(&bytes)
}

/// Encoder/decoder pair driven by the pipeline.
pub trait Codec {
    fn n(&self) -> usize;
    fn encode(&self, id: &str, cloud: &PointCloud) -> Result<SemanticCode, CodecError>;
    fn decode(
        &self,
        id: &str,
        code: &SemanticCode,
        target_points: usize,
    ) -> Result<PointCloud, CodecError>;
}

pub struct BaselineCodec {
    n: usize,
}

impl BaselineCodec {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Codec for BaselineCodec {
    fn n(&self) -> usize {
        self.n
    }

    fn encode(&self, _id: &str, cloud: &PointCloud) -> Result<SemanticCode, CodecError> {
        baseline_encode(cloud, self.n)
    }

    fn decode(
        &self,
        _id: &str,
        code: &SemanticCode,
        target_points: usize,
    ) -> Result<PointCloud, CodecError> {
        baseline_decode(code, target_points)
    }
}

/// Replays codes and reconstructions produced by an external neural codec.
pub struct ExternalCodec {
    n: usize,
    codes: HashMap<String, SemanticCode>,
    reconstructions: Option<PathBuf>,
}

impl ExternalCodec {
    pub fn open(desc: &CodecDescriptor) -> Result<Self, CodecError> {
        let source = desc.source.as_deref().ok_or_else(|| {
            CodecError::Argument("external-neural codec needs a source archive".into())
        })?;
        let mut codes = HashMap::new();
        for (index, rec) in load_external_codes(source)?.into_iter().enumerate() {
            if rec.code.n() != desc.n {
                return Err(CodecError::Record {
                    index,
                    reason: format!("n = {} but the descriptor expects {}", rec.code.n(), desc.n),
                });
            }
            codes.insert(rec.id, rec.code);
        }
        Ok(Self {
            n: desc.n,
            codes,
            reconstructions: desc.reconstructions.clone(),
        })
    }
}

impl Codec for ExternalCodec {
    fn n(&self) -> usize {
        self.n
    }

    fn encode(&self, id: &str, _cloud: &PointCloud) -> Result<SemanticCode, CodecError> {
        self.codes
            .get(id)
            .cloned()
            .ok_or_else(|| CodecError::UnknownCloud(id.to_string()))
    }

    fn decode(
        &self,
        id: &str,
        _code: &SemanticCode,
        _target_points: usize,
    ) -> Result<PointCloud, CodecError> {
        let dir = self.reconstructions.as_deref().ok_or_else(|| {
            CodecError::Argument("external-neural codec has no reconstructions directory".into())
        })?;
        for (ext, fmt) in [
            ("xyz", CloudFormat::XyzText),
            ("bin", CloudFormat::F32Binary),
        ] {
            let path = dir.join(format!("{id}.{ext}"));
            if path.exists() {
                return Ok(pointcloud::load_pointcloud(&path, fmt)?);
            }
        }
        Err(CodecError::UnknownCloud(id.to_string()))
    }
}

pub fn build_codec(desc: &CodecDescriptor) -> Result<Box<dyn Codec>, CodecError> {
    desc.validate()?;
    Ok(match desc.kind {
        CodecKind::BaselineFps => Box::new(BaselineCodec::new(desc.n)),
        CodecKind::ExternalNeural => Box::new(ExternalCodec::open(desc)?),
    })
}
