//! Comparison baselines: class-conditional Gaussians with a tied covariance
//! (Mahalanobis score) and maximum softmax probability.
//!
//! Both are oriented like FRE: larger means more out-of-distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{FreError, Result};
use crate::features::{FeatureMatrix, ScoreVector};
use crate::par;

/// Default ridge, relative to `trace(cov) / d`.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    classes: Vec<u32>,
    /// `N x d`, one class mean per row.
    means: DMatrix<f64>,
    /// Inverse of `cov + ridge * I`.
    precision: DMatrix<f64>,
    ridge: f64,
}

impl MahalanobisModel {
    pub fn from_parts(
        classes: Vec<u32>,
        means: Vec<Vec<f64>>,
        precision: Vec<Vec<f64>>,
        ridge: f64,
    ) -> Result<Self> {
        let d = precision.len();
        if d == 0 || precision.iter().any(|r| r.len() != d) {
            return Err(FreError::InvalidArgument(
                "precision must be a non-empty square matrix".into(),
            ));
        }
        if classes.is_empty() || classes.len() != means.len() || means.iter().any(|m| m.len() != d)
        {
            return Err(FreError::InvalidArgument(
                "class means do not match the precision shape".into(),
            ));
        }
        Ok(Self {
            classes,
            means: DMatrix::from_fn(means.len(), d, |i, j| means[i][j]),
            precision: DMatrix::from_fn(d, d, |i, j| precision[i][j]),
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn class_mean(&self, idx: usize) -> Vec<f64> {
        self.means.row(idx).iter().copied().collect()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Squared Mahalanobis distance to the nearest class mean.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(FreError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        let best = self
            .means
            .row_iter()
            .map(|mu| {
                let diff = &x - mu.transpose();
                diff.dot(&(&self.precision * &diff))
            })
            .fold(f64::INFINITY, f64::min);
        Ok(best.max(0.0))
    }

    pub fn scores(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        if m.cols() != self.dim() {
            return Err(FreError::DimensionMismatch {
                expected: self.dim(),
                got: m.cols(),
            });
        }
        par::try_map_range(m.rows(), |i| self.score(&m.row_f64(i)))
    }
}

pub fn fit_mahalanobis(train: &FeatureMatrix) -> Result<MahalanobisModel> {
    fit_mahalanobis_with_ridge(train, DEFAULT_RELATIVE_RIDGE)
}

/// Fits class means and the tied covariance
/// `cov = (1/M) sum_c sum_{i in c} (x_i - mu_c)(x_i - mu_c)^T`, then inverts
/// `cov + ridge * I` with `ridge = relative_ridge * trace(cov) / d`.
pub fn fit_mahalanobis_with_ridge(
    train: &FeatureMatrix,
    relative_ridge: f64,
) -> Result<MahalanobisModel> {
    if train.labels().is_none() {
        return Err(FreError::MissingLabels);
    }
    if !(relative_ridge >= 0.0) {
        return Err(FreError::InvalidArgument(format!(
            "ridge {relative_ridge} must be non-negative"
        )));
    }
    let d = train.cols();
    let groups = train.class_groups();
    for (&class, rows) in &groups {
        if rows.len() < 2 {
            return Err(FreError::ClassTooSmall {
                class,
                count: rows.len(),
                needed: 2,
            });
        }
    }
    let x = train.to_dmatrix();
    let mut centered = x.clone();
    let mut means = DMatrix::zeros(groups.len(), d);
    for (c, rows) in groups.values().enumerate() {
        let mut mu = DVector::zeros(d);
        for &i in rows {
            mu += x.row(i).transpose();
        }
        mu /= rows.len() as f64;
        for &i in rows {
            let mut r = centered.row_mut(i);
            r -= mu.transpose();
        }
        means.set_row(c, &mu.transpose());
    }
    let cov = centered.tr_mul(&centered) / train.rows() as f64;
    let ridge = relative_ridge * cov.trace() / d as f64;
    let regularized = &cov + DMatrix::identity(d, d) * ridge;
    let chol = regularized.cholesky().ok_or(FreError::SingularCovariance)?;
    let inv = chol.inverse();
    let precision = (&inv + inv.transpose()) * 0.5;
    if precision.iter().any(|v| !v.is_finite()) {
        return Err(FreError::SingularCovariance);
    }
    Ok(MahalanobisModel {
        classes: groups.keys().copied().collect(),
        means,
        precision,
        ridge,
    })
}

/// `1 - max softmax(logits)`, computed with max subtraction.
pub fn softmax_score(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(FreError::InvalidArgument("empty logit vector".into()));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(FreError::NonFinite { row: 0, col: i });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // the max term contributes exp(0) = 1
    let denom: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    Ok(1.0 - 1.0 / denom)
}

/// Softmax scores for every row of a logit matrix (`d` = class count).
pub fn softmax_scores(logits: &FeatureMatrix) -> Result<ScoreVector> {
    let s = par::try_map_range(logits.rows(), |i| softmax_score(&logits.row_f64(i)))?;
    ScoreVector::new(s, "softmax")
}
