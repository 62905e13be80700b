//! Point-cloud container, on-disk formats, brute-force kNN graph and the
//! Chamfer distance used both as reconstruction metric and codec check.
//!
//! Coordinates live in memory as `f64` and are written to disk as `f32`.
//! All reductions run in ascending point index so results are bit-stable
//! regardless of how many threads computed the per-point minima.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

/// Neighbor count used when callers do not pick one.
pub const DEFAULT_K: usize = 20;

/// Point count of the benchmark dataset clouds.
pub const DEFAULT_POINTS: usize = 2048;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud must contain at least one point")]
    Empty,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("line {line}: {reason}")]
    ParseLine { line: usize, reason: String },
    #[error("binary cloud truncated: {len} bytes is not a multiple of 12 (trailing bytes start at offset {offset})")]
    Truncated { len: usize, offset: usize },
    #[error("k = {k} is invalid for a cloud of {n} points (need 1 <= k <= n - 1)")]
    InvalidK { k: usize, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// File layout of a stored cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// One `x y z` line per point.
    XyzText,
    /// Packed little-endian `f32` triples, no header.
    F32Binary,
}

impl CloudFormat {
    /// Picks a format from a file extension (`xyz`/`txt` or `bin`/`f32`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" => Some(Self::XyzText),
            "bin" | "f32" => Some(Self::F32Binary),
            _ => None,
        }
    }
}

/// An ordered, non-empty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::Empty);
        }
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(CloudError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns the cloud shifted by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
            .collect();
        PointCloud { points }
    }

    /// Rounds every coordinate through `f32`, as happens on disk.
    pub fn quantized(&self) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| p.map(|c| c as f32 as f64))
            .collect();
        PointCloud { points }
    }

    pub fn to_xyz_text(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 32);
        for p in &self.points {
            let [x, y, z] = p.map(|c| c as f32);
            out.push_str(&format!("{x} {y} {z}\n"));
        }
        out
    }

    pub fn to_f32_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 12);
        for p in &self.points {
            for c in p {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn parse_xyz_text(text: &str) -> Result<Self, CloudError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(CloudError::ParseLine {
                    line: line_no,
                    reason: format!("expected 3 coordinates, found {}", fields.len()),
                });
            }
            let mut p = [0.0f64; 3];
            for (slot, field) in p.iter_mut().zip(&fields) {
                let value: f32 = field.parse().map_err(|_| CloudError::ParseLine {
                    line: line_no,
                    reason: format!("cannot parse {field:?} as a real"),
                })?;
                if !value.is_finite() {
                    return Err(CloudError::NonFinite {
                        index: points.len(),
                    });
                }
                *slot = value as f64;
            }
            points.push(p);
        }
        Self::new(points)
    }

    pub fn parse_f32_bytes(bytes: &[u8]) -> Result<Self, CloudError> {
        if !bytes.len().is_multiple_of(12) {
            return Err(CloudError::Truncated {
                len: bytes.len(),
                offset: bytes.len() - bytes.len() % 12,
            });
        }
        let points = bytes
            .chunks_exact(12)
            .map(|chunk| {
                let mut p = [0.0f64; 3];
                for (slot, c) in p.iter_mut().zip(chunk.chunks_exact(4)) {
                    *slot = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                }
                p
            })
            .collect();
        Self::new(points)
    }
}

pub fn load_pointcloud(path: &Path, format: CloudFormat) -> Result<PointCloud, CloudError> {
    let io_err = |source| CloudError::Io {
        path: path.display().to_string(),
        source,
    };
    match format {
        CloudFormat::XyzText => {
            let text = fs::read_to_string(path).map_err(io_err)?;
            PointCloud::parse_xyz_text(&text)
        }
        CloudFormat::F32Binary => {
            let bytes = fs::read(path).map_err(io_err)?;
            PointCloud::parse_f32_bytes(&bytes)
        }
    }
}

pub fn save_pointcloud(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
) -> Result<(), CloudError> {
    let result = match format {
        CloudFormat::XyzText => fs::write(path, cloud.to_xyz_text()),
        CloudFormat::F32Binary => fs::write(path, cloud.to_f32_bytes()),
    };
    result.map_err(|source| CloudError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[inline]
pub(crate) fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// k nearest neighbors of every point, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    adjacency: Vec<Vec<usize>>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }
}

/// Exact kNN by full scan. Ties in distance go to the lower index.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<KnnGraph, CloudError> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(CloudError::InvalidK { k, n });
    }
    let pts = cloud.points();
    let adjacency = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(&pts[i], &pts[j]), j))
                .collect();
            let order =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, order);
                cand.truncate(k);
            }
            cand.sort_unstable_by(order);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(KnnGraph { k, adjacency })
}

fn mean_nearest(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let minima: Vec<f64> = from
        .par_iter()
        .map(|a| {
            to.iter()
                .map(|b| squared_distance(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    // sequential sum keeps the result independent of the thread count
    let mut sum = 0.0;
    for m in minima {
        sum += m;
    }
    sum / from.len() as f64
}

/// Symmetric Chamfer distance with squared Euclidean norms:
/// the mean nearest-neighbor squared distance from `p` to `q` plus the same
/// from `q` to `p`.
pub fn chamfer_distance(p: &PointCloud, q: &PointCloud) -> f64 {
    mean_nearest(p.points(), q.points()) + mean_nearest(q.points(), p.points())
}
