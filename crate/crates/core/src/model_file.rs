//! The `FREB` model file.
//!
//! ```text
//! magic      "FREB"                      4 bytes
//! version    u16 LE (currently 1)        2 bytes
//! header_len u32 LE                      4 bytes
//! header     UTF-8 JSON metadata         header_len bytes
//! blocks     one binary block per model, ascending class id
//! checksum   SHA-256 of all bytes above  32 bytes
//! ```
//!
//! Every integer is little-endian and every real is an IEEE-754 `f64`, so a
//! loaded model scores bit-identically to the one that was saved. Block
//! layouts:
//!
//! ```text
//! PCA (tag 1):   tag u8 | class u32 | d u64 | m u64
//!                | mean[d] | components[m*d] (row-major) | singular[m] | ratio[m]
//! kPCA (tag 2):  tag u8 | class u32 | d u64 | n u64 | m u64 | kernel u8 (1 rbf, 2 linear)
//!                | gamma f64 | total_mean f64 | retained f64
//!                | points[n*d] | row_means[n] | eigenvalues[m] | alphas[m*n]
//! Mahalanobis (tag 3): tag u8 | classes u64 | d u64 | ridge f64
//!                | class ids u32[classes] | means[classes*d] | precision[d*d]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{BankConfig, Method, Mode, ModelBank, SubspaceModel};
use crate::baselines::MahalanobisModel;
use crate::error::{FreError, Result};
use crate::kernel::{Kernel, KpcaModel};
use crate::linear::PcaModel;

pub const FREB_MAGIC: [u8; 4] = *b"FREB";
pub const FREB_VERSION: u16 = 1;
const CHECKSUM_LEN: usize = 32;

const TAG_PCA: u8 = 1;
const TAG_KPCA: u8 = 2;
const TAG_MAHALANOBIS: u8 = 3;
const KERNEL_RBF: u8 = 1;
const KERNEL_LINEAR: u8 = 2;

/// Anything the CLI can fit, save and score with.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Bank(ModelBank),
    Mahalanobis {
        model: MahalanobisModel,
        provenance: BTreeMap<String, String>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Header {
    Bank {
        mode: Mode,
        method: Method,
        dim: usize,
        config: BankConfig,
        classes: Vec<u32>,
        provenance: BTreeMap<String, String>,
    },
    Mahalanobis {
        dim: usize,
        provenance: BTreeMap<String, String>,
    },
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                FreError::CorruptedModel(format!("payload ends early at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        // no block can hold more f64s than bytes remain
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| FreError::CorruptedModel(format!("implausible length {v}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| FreError::CorruptedModel("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn rows(&mut self, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| FreError::CorruptedModel("length overflow".into()))?;
        let flat = self.f64s(n)?;
        Ok(flat
            .chunks(cols.max(1))
            .take(rows)
            .map(<[f64]>::to_vec)
            .collect())
    }
}

fn write_pca(w: &mut Writer, class: u32, m: &PcaModel) {
    w.u8(TAG_PCA);
    w.u32(class);
    w.u64(m.dim());
    w.u64(m.n_components());
    w.f64s(m.mean());
    for r in m.components().row_iter() {
        w.f64s(r.iter());
    }
    w.f64s(m.singular_values());
    w.f64s(m.explained_variance_ratio());
}

fn write_kpca(w: &mut Writer, class: u32, m: &KpcaModel) {
    w.u8(TAG_KPCA);
    w.u32(class);
    w.u64(m.dim());
    w.u64(m.n_train());
    w.u64(m.n_components());
    match m.kernel() {
        Kernel::Rbf { gamma } => {
            w.u8(KERNEL_RBF);
            w.f64(gamma);
        }
        Kernel::Linear => {
            w.u8(KERNEL_LINEAR);
            w.f64(0.0);
        }
    }
    w.f64(m.total_mean());
    w.f64(m.retained_ratio());
    w.f64s(m.points());
    w.f64s(m.row_means());
    w.f64s(m.eigenvalues());
    for r in m.alphas().row_iter() {
        w.f64s(r.iter());
    }
}

fn write_mahalanobis(w: &mut Writer, m: &MahalanobisModel) {
    w.u8(TAG_MAHALANOBIS);
    w.u64(m.classes().len());
    w.u64(m.dim());
    w.f64(m.ridge());
    for &c in m.classes() {
        w.u32(c);
    }
    for r in m.means().row_iter() {
        w.f64s(r.iter());
    }
    for r in m.precision().row_iter() {
        w.f64s(r.iter());
    }
}

fn corrupted(e: FreError) -> FreError {
    match e {
        FreError::CorruptedModel(_) => e,
        other => FreError::CorruptedModel(other.to_string()),
    }
}

fn read_pca(r: &mut Reader) -> Result<(u32, SubspaceModel)> {
    let class = r.u32()?;
    let d = r.len()?;
    let m = r.len()?;
    let mean = r.f64s(d)?;
    let comps = r.rows(m, d)?;
    let sv = r.f64s(m)?;
    let ratio = r.f64s(m)?;
    let model = PcaModel::from_parts(mean, comps, sv, ratio).map_err(corrupted)?;
    Ok((class, SubspaceModel::Pca(model)))
}

fn read_kpca(r: &mut Reader) -> Result<(u32, SubspaceModel)> {
    let class = r.u32()?;
    let d = r.len()?;
    let n = r.len()?;
    let m = r.len()?;
    let kernel = match (r.u8()?, r.f64()?) {
        (KERNEL_RBF, gamma) => Kernel::Rbf { gamma },
        (KERNEL_LINEAR, _) => Kernel::Linear,
        (code, _) => {
            return Err(FreError::CorruptedModel(format!(
                "unknown kernel code {code}"
            )))
        }
    };
    let total_mean = r.f64()?;
    let retained = r.f64()?;
    let points = r.f64s(
        n.checked_mul(d)
            .ok_or_else(|| FreError::CorruptedModel("length overflow".into()))?,
    )?;
    let row_means = r.f64s(n)?;
    let eigenvalues = r.f64s(m)?;
    let alphas = r.rows(m, n)?;
    let model = KpcaModel::from_parts(
        kernel,
        d,
        points,
        alphas,
        eigenvalues,
        row_means,
        total_mean,
        retained,
    )
    .map_err(corrupted)?;
    Ok((class, SubspaceModel::Kpca(model)))
}

fn read_mahalanobis(r: &mut Reader) -> Result<MahalanobisModel> {
    if r.u8()? != TAG_MAHALANOBIS {
        return Err(FreError::CorruptedModel(
            "expected a Mahalanobis block".into(),
        ));
    }
    let n = r.len()?;
    let d = r.len()?;
    let ridge = r.f64()?;
    let classes = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let means = r.rows(n, d)?;
    let precision = r.rows(d, d)?;
    MahalanobisModel::from_parts(classes, means, precision, ridge).map_err(corrupted)
}

impl Detector {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = match self {
            Detector::Bank(b) => Header::Bank {
                mode: b.mode(),
                method: b.method(),
                dim: b.dim(),
                config: b.config().clone(),
                classes: b.models().keys().copied().collect(),
                provenance: b.provenance.clone(),
            },
            Detector::Mahalanobis { model, provenance } => Header::Mahalanobis {
                dim: model.dim(),
                provenance: provenance.clone(),
            },
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&FREB_MAGIC);
        w.0.extend_from_slice(&FREB_VERSION.to_le_bytes());
        w.u32(header.len() as u32);
        w.0.extend_from_slice(&header);
        match self {
            Detector::Bank(b) => {
                for (&class, model) in b.models() {
                    match model {
                        SubspaceModel::Pca(m) => write_pca(&mut w, class, m),
                        SubspaceModel::Kpca(m) => write_kpca(&mut w, class, m),
                    }
                }
            }
            Detector::Mahalanobis { model, .. } => write_mahalanobis(&mut w, model),
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || bytes[..4] != FREB_MAGIC {
            return Err(FreError::BadMagic {
                expected: FREB_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FREB_VERSION {
            return Err(FreError::VersionMismatch {
                expected: FREB_VERSION,
                found: version,
            });
        }
        if bytes.len() < 10 + CHECKSUM_LEN {
            return Err(FreError::CorruptedModel("file too short".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(FreError::CorruptedModel("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 6 };
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| FreError::CorruptedModel(format!("bad header: {e}")))?;
        let detector = match header {
            Header::Bank {
                mode,
                method,
                dim,
                config,
                classes,
                provenance,
            } => {
                let mut models = BTreeMap::new();
                for &expected in &classes {
                    let (class, model) = match (r.u8()?, method) {
                        (TAG_PCA, Method::Pca) => read_pca(&mut r)?,
                        (TAG_KPCA, Method::Kpca) => read_kpca(&mut r)?,
                        (tag, _) => {
                            return Err(FreError::CorruptedModel(format!(
                                "block tag {tag} does not match method {method}"
                            )))
                        }
                    };
                    if class != expected || model.dim() != dim {
                        return Err(FreError::CorruptedModel(format!(
                            "block for class {class} disagrees with the header"
                        )));
                    }
                    models.insert(class, model);
                }
                Detector::Bank(
                    ModelBank::from_parts(mode, method, config, models, provenance)
                        .map_err(corrupted)?,
                )
            }
            Header::Mahalanobis { dim, provenance } => {
                let model = read_mahalanobis(&mut r)?;
                if model.dim() != dim {
                    return Err(FreError::CorruptedModel(
                        "dimension disagrees with the header".into(),
                    ));
                }
                Detector::Mahalanobis { model, provenance }
            }
        };
        if r.pos != body.len() {
            return Err(FreError::CorruptedModel(format!(
                "{} unread bytes after the last block",
                body.len() - r.pos
            )));
        }
        Ok(detector)
    }

    pub fn dim(&self) -> usize {
        match self {
            Detector::Bank(b) => b.dim(),
            Detector::Mahalanobis { model, .. } => model.dim(),
        }
    }
}

pub fn save_detector(detector: &Detector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, detector.to_bytes()).map_err(|e| FreError::io(path, e))
}

pub fn load_detector(path: impl AsRef<Path>) -> Result<Detector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FreError::io(path, e))?;
    Detector::from_bytes(&bytes)
}

pub fn save_bank(bank: &ModelBank, path: impl AsRef<Path>) -> Result<()> {
    save_detector(&Detector::Bank(bank.clone()), path)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<ModelBank> {
    match load_detector(path)? {
        Detector::Bank(b) => Ok(b),
        Detector::Mahalanobis { .. } => Err(FreError::InvalidArgument(
            "model file holds a Mahalanobis baseline, not a subspace bank".into(),
        )),
    }
}
