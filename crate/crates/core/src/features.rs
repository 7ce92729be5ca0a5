//! Feature matrices, the FMX binary format, score CSV files and seeded
//! stratified subsampling.
//!
//! FMX layout (little-endian):
//!
//! | offset | size  | field                                  |
//! |--------|-------|----------------------------------------|
//! | 0      | 4     | magic `FMX1`                           |
//! | 4      | 1     | dtype code (`1` = float32)             |
//! | 5      | 1     | flags (bit 0 = label block present)    |
//! | 6      | 2     | reserved, must be 0                    |
//! | 8      | 8     | rows `M` (u64)                         |
//! | 16     | 8     | columns `d` (u64)                      |
//! | 24     | 4·M·d | payload, float32 row-major             |
//! | …      | 4·M   | labels, i32 (only when flag bit 0 set) |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FreError, Result};

pub const FMX_MAGIC: [u8; 4] = *b"FMX1";
pub const FMX_HEADER_LEN: usize = 24;
const DTYPE_F32: u8 = 1;
const FLAG_LABELS: u8 = 0b1;

/// Dense `M x d` matrix of feature vectors with optional class labels.
///
/// Values are kept as `f32`, the storage precision of feature dumps; numeric
/// routines promote to `f64` on access.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, labels: Option<Vec<u32>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FreError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(FreError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FreError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(FreError::LabelLengthMismatch {
                    expected: rows as u64 * 4,
                    found: l.len() as u64 * 4,
                });
            }
            if let Some((row, &label)) = l.iter().enumerate().find(|(_, &v)| v > i32::MAX as u32) {
                return Err(FreError::InvalidLabel {
                    row,
                    label: label as i64,
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            labels,
        })
    }

    /// Builds a matrix from `f64` rows, rounding each value to `f32`.
    pub fn from_rows_f64(rows: &[Vec<f64>], labels: Option<Vec<u32>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(FreError::InvalidArgument(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), cols, data, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Number of classes `N = 1 + max(label)`, or `None` when unlabeled.
    pub fn class_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m as usize + 1))
    }

    /// Row indices grouped by label, classes in ascending order.
    /// An unlabeled matrix yields a single group keyed 0.
    pub fn class_groups(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        match &self.labels {
            Some(l) => {
                for (i, &c) in l.iter().enumerate() {
                    groups.entry(c).or_default().push(i);
                }
            }
            None => {
                groups.insert(0, (0..self.rows).collect());
            }
        }
        groups
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(indices.len(), self.cols, data, labels)
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f64::from(v)),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let label_len = self.labels.as_ref().map_or(0, |l| l.len() * 4);
        let mut out = Vec::with_capacity(FMX_HEADER_LEN + self.data.len() * 4 + label_len);
        out.extend_from_slice(&FMX_MAGIC);
        out.push(DTYPE_F32);
        out.push(if self.labels.is_some() {
            FLAG_LABELS
        } else {
            0
        });
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            for &c in l {
                out.extend_from_slice(&(c as i32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != FMX_MAGIC {
            return Err(FreError::BadMagic {
                expected: FMX_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < FMX_HEADER_LEN {
            return Err(FreError::Truncated {
                expected: FMX_HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        if bytes[4] != DTYPE_F32 {
            return Err(FreError::UnsupportedDtype(bytes[4]));
        }
        let flags = bytes[5];
        if flags & !FLAG_LABELS != 0 {
            return Err(FreError::BadHeader(format!(
                "unknown flag bits {flags:#04x}"
            )));
        }
        let reserved = u16::from_le_bytes([bytes[6], bytes[7]]);
        if reserved != 0 {
            return Err(FreError::BadHeader(format!(
                "reserved field is {reserved}, expected 0"
            )));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if rows == 0 || cols == 0 {
            return Err(FreError::EmptyMatrix {
                rows: rows as usize,
                cols: cols as usize,
            });
        }
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| FreError::BadHeader(format!("{rows} x {cols} overflows")))?;
        let payload_end = FMX_HEADER_LEN as u64 + n * 4;
        let available = bytes.len() as u64;
        if available < payload_end {
            return Err(FreError::Truncated {
                expected: payload_end,
                found: available,
            });
        }
        let (rows, cols, n) = (rows as usize, cols as usize, n as usize);
        let data: Vec<f32> = bytes[FMX_HEADER_LEN..payload_end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        debug_assert_eq!(data.len(), n);

        let rest = &bytes[payload_end as usize..];
        let labels = if flags & FLAG_LABELS != 0 {
            if rest.len() as u64 != rows as u64 * 4 {
                return Err(FreError::LabelLengthMismatch {
                    expected: rows as u64 * 4,
                    found: rest.len() as u64,
                });
            }
            let mut labels = Vec::with_capacity(rows);
            for (row, c) in rest.chunks_exact(4).enumerate() {
                let v = i32::from_le_bytes(c.try_into().unwrap());
                if v < 0 {
                    return Err(FreError::InvalidLabel {
                        row,
                        label: v as i64,
                    });
                }
                labels.push(v as u32);
            }
            Some(labels)
        } else {
            if !rest.is_empty() {
                return Err(FreError::TrailingData(rest.len() as u64));
            }
            None
        };
        Self::new(rows, cols, data, labels)
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FreError::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| FreError::io(path, e))
}

/// Per-sample uncertainty scores, oriented so that larger means more
/// out-of-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub tag: String,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, tag: impl Into<String>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(FreError::NonFinite { row: i, col: 0 });
        }
        Ok(Self {
            scores,
            tag: tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Writes `index,score` CSV. Scores use the shortest decimal form that
/// parses back to the same `f64`.
pub fn write_scores(scores: &ScoreVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["index", "score"])
        .map_err(|e| csv_err(path, e))?;
    for (i, s) in scores.scores.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| FreError::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreVector> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?;
    if headers.iter().collect::<Vec<_>>() != ["index", "score"] {
        return Err(FreError::BadScoreFile(format!(
            "{}: header must be `index,score`",
            path.display()
        )));
    }
    let mut scores = Vec::new();
    for (pos, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad =
            |what: &str| FreError::BadScoreFile(format!("{}: row {pos}: {what}", path.display()));
        let index: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad index"))?;
        if index != pos {
            return Err(bad("index out of sequence"));
        }
        let score: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad score"))?;
        if !score.is_finite() {
            return Err(bad("non-finite score"));
        }
        scores.push(score);
    }
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ScoreVector::new(scores, tag)
}

fn csv_err(path: &Path, e: csv::Error) -> FreError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => FreError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        FreError::BadScoreFile(format!("{}: {e}", path.display()))
    }
}

/// Number of rows kept from a class of `count` rows. The small slack keeps
/// products like `0.2 * 50` from rounding up past the intended integer.
pub(crate) fn retained_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64 - 1e-9).ceil().max(0.0) as usize).min(count)
}

/// Stratified seeded subsample keeping `ceil(fraction * M_c)` rows of every
/// class `c`, in their original order.
///
/// Row choice per class uses ChaCha8 seeded with `seed`, drawing classes in
/// ascending label order, so results do not depend on thread count.
/// `fraction == 1.0` returns the input unchanged.
pub fn subsample(m: &FeatureMatrix, fraction: f64, seed: u64) -> Result<FeatureMatrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FreError::FractionOutOfRange(fraction));
    }
    if fraction == 1.0 {
        return Ok(m.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (class, rows) in m.class_groups() {
        let k = retained_count(fraction, rows.len());
        if k == 0 {
            return Err(FreError::ClassEmptied(class));
        }
        keep.extend(
            rand::seq::index::sample(&mut rng, rows.len(), k)
                .into_iter()
                .map(|j| rows[j]),
        );
    }
    keep.sort_unstable();
    m.select_rows(&keep)
}
