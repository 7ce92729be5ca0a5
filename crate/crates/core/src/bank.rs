//! Global and per-class subspace model banks.
//!
//! A bank holds one subspace model (global mode, keyed 0) or one per class.
//! At test time labels are unknown, so a sample's score is the smallest
//! reconstruction error over all member models: a sample is in-distribution
//! if it fits at least one class subspace.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FreError, Result};
use crate::features::{FeatureMatrix, ScoreVector};
use crate::kernel::{fit_kpca, KfreVariant, KpcaModel, PreimageConfig};
use crate::linear::{fit_pca, PcaModel, DEFAULT_VARIANCE_RETENTION};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Global,
    PerClass,
}

impl Mode {
    /// Per-class when labels are available, global otherwise.
    pub fn default_for(m: &FeatureMatrix) -> Self {
        if m.labels().is_some() {
            Mode::PerClass
        } else {
            Mode::Global
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Kpca,
}

macro_rules! str_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = FreError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(FreError::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(Mode { "global" => Mode::Global, "per-class" => Mode::PerClass });
str_enum!(Method { "pca" => Method::Pca, "kpca" => Method::Kpca });
str_enum!(KfreVariant { "preimage" => KfreVariant::Preimage, "rkhs" => KfreVariant::Rkhs });

/// Hyperparameters shared by every model in a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub variance_retention: f64,
    /// RBF width; `None` selects it per model by the median heuristic.
    pub gamma: Option<f64>,
    pub kfre_variant: KfreVariant,
    pub preimage: PreimageConfig,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            variance_retention: DEFAULT_VARIANCE_RETENTION,
            gamma: None,
            kfre_variant: KfreVariant::Preimage,
            preimage: PreimageConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceModel {
    Pca(PcaModel),
    Kpca(KpcaModel),
}

impl SubspaceModel {
    pub fn dim(&self) -> usize {
        match self {
            SubspaceModel::Pca(m) => m.dim(),
            SubspaceModel::Kpca(m) => m.dim(),
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            SubspaceModel::Pca(m) => m.n_components(),
            SubspaceModel::Kpca(m) => m.n_components(),
        }
    }

    /// Retained share of variance (PCA) or of Gram eigenvalue mass (kPCA).
    pub fn retained(&self) -> f64 {
        match self {
            SubspaceModel::Pca(m) => m.retained_variance(),
            SubspaceModel::Kpca(m) => m.retained_ratio(),
        }
    }

    pub fn score(&self, x: &[f64], config: &BankConfig) -> Result<f64> {
        match self {
            SubspaceModel::Pca(m) => m.fre_score(x),
            SubspaceModel::Kpca(m) => m.kfre_score(x, config.kfre_variant, &config.preimage),
        }
    }

    fn method(&self) -> Method {
        match self {
            SubspaceModel::Pca(_) => Method::Pca,
            SubspaceModel::Kpca(_) => Method::Kpca,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBank {
    mode: Mode,
    method: Method,
    config: BankConfig,
    models: BTreeMap<u32, SubspaceModel>,
    /// Free-form metadata (layer, backbone, dataset, training fraction, ...).
    pub provenance: BTreeMap<String, String>,
}

impl ModelBank {
    pub fn from_parts(
        mode: Mode,
        method: Method,
        config: BankConfig,
        models: BTreeMap<u32, SubspaceModel>,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        let first = models
            .values()
            .next()
            .ok_or_else(|| FreError::InvalidArgument("bank has no models".into()))?;
        let d = first.dim();
        for m in models.values() {
            if m.method() != method {
                return Err(FreError::InvalidArgument("bank mixes model kinds".into()));
            }
            if m.dim() != d {
                return Err(FreError::DimensionMismatch {
                    expected: d,
                    got: m.dim(),
                });
            }
        }
        if mode == Mode::Global && (models.len() != 1 || !models.contains_key(&0)) {
            return Err(FreError::InvalidArgument(
                "global bank must hold exactly one model keyed 0".into(),
            ));
        }
        Ok(Self {
            mode,
            method,
            config,
            models,
            provenance,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn models(&self) -> &BTreeMap<u32, SubspaceModel> {
        &self.models
    }

    pub fn dim(&self) -> usize {
        self.models.values().next().map_or(0, SubspaceModel::dim)
    }

    /// Same models scored with a different kFRE variant.
    pub fn with_kfre_variant(mut self, variant: KfreVariant) -> Self {
        self.config.kfre_variant = variant;
        self
    }

    pub fn tag(&self) -> String {
        let mut tag = format!("fre-{}-{}", self.method, self.mode);
        if self.method == Method::Kpca {
            tag.push('-');
            tag.push_str(&self.config.kfre_variant.to_string());
        }
        tag
    }

    /// Minimum reconstruction error of `x` over all member models.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(FreError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut best = f64::INFINITY;
        for model in self.models.values() {
            best = best.min(model.score(x, &self.config)?);
        }
        Ok(best)
    }

    pub fn score_matrix(&self, test: &FeatureMatrix) -> Result<ScoreVector> {
        if test.cols() != self.dim() {
            return Err(FreError::DimensionMismatch {
                expected: self.dim(),
                got: test.cols(),
            });
        }
        let scores = par::try_map_range(test.rows(), |i| self.score(&test.row_f64(i)))?;
        ScoreVector::new(scores, self.tag())
    }
}

fn fit_one(
    rows: &FeatureMatrix,
    method: Method,
    config: &BankConfig,
    seed: u64,
) -> Result<SubspaceModel> {
    Ok(match method {
        Method::Pca => SubspaceModel::Pca(fit_pca(rows, config.variance_retention)?),
        Method::Kpca => SubspaceModel::Kpca(fit_kpca(
            rows,
            config.variance_retention,
            config.gamma,
            seed,
        )?),
    })
}

/// Fits a bank. Per-class fits run in parallel when the `parallel` feature
/// is on; the result is identical to sequential fitting.
pub fn fit_bank(
    train: &FeatureMatrix,
    mode: Mode,
    method: Method,
    config: &BankConfig,
) -> Result<ModelBank> {
    let models = match mode {
        Mode::Global => {
            let mut models = BTreeMap::new();
            models.insert(
                0,
                fit_one(&train.without_labels(), method, config, config.seed)?,
            );
            models
        }
        Mode::PerClass => {
            if train.labels().is_none() {
                return Err(FreError::MissingLabels);
            }
            let groups: Vec<(u32, Vec<usize>)> = train.class_groups().into_iter().collect();
            for (class, rows) in &groups {
                if rows.len() < 2 {
                    return Err(FreError::ClassTooSmall {
                        class: *class,
                        count: rows.len(),
                        needed: 2,
                    });
                }
            }
            let fitted = par::try_map_range(groups.len(), |g| {
                let (class, rows) = &groups[g];
                let subset = train.select_rows(rows)?;
                fit_one(
                    &subset,
                    method,
                    config,
                    config.seed.wrapping_add(u64::from(*class)),
                )
            })?;
            groups.iter().map(|(c, _)| *c).zip(fitted).collect()
        }
    };
    ModelBank::from_parts(mode, method, config.clone(), models, BTreeMap::new())
}

pub fn score_bank(bank: &ModelBank, test: &FeatureMatrix) -> Result<ScoreVector> {
    bank.score_matrix(test)
}
