//! Linear subspace modeling with PCA.
//!
//! The forward map projects a centered feature onto the retained principal
//! axes; the inverse map is its pseudo-inverse (the transpose of the
//! orthonormal basis). The feature reconstruction error is the norm of what
//! the round trip loses.

use nalgebra::{DMatrix, DVector};

use crate::error::{FreError, Result};
use crate::features::FeatureMatrix;
use crate::par;

/// Retention used when none is given.
pub const DEFAULT_VARIANCE_RETENTION: f64 = 0.995;

/// Slack when comparing a cumulative variance ratio with the threshold, so a
/// retention of exactly 1.0 is reachable despite rounding.
const RETENTION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `m x d`, orthonormal rows.
    components: DMatrix<f64>,
    singular_values: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    /// Assembles a model from its parts, checking shapes and orthonormality.
    ///
    /// `components` holds `m` rows of length `d`.
    pub fn from_parts(
        mean: Vec<f64>,
        components: Vec<Vec<f64>>,
        singular_values: Vec<f64>,
        explained_variance_ratio: Vec<f64>,
    ) -> Result<Self> {
        let d = mean.len();
        let m = components.len();
        if d == 0 {
            return Err(FreError::InvalidArgument("empty mean vector".into()));
        }
        if singular_values.len() != m || explained_variance_ratio.len() != m {
            return Err(FreError::InvalidArgument(format!(
                "{m} components but {} singular values and {} variance ratios",
                singular_values.len(),
                explained_variance_ratio.len()
            )));
        }
        for row in &components {
            if row.len() != d {
                return Err(FreError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        }
        if singular_values.windows(2).any(|w| w[0] < w[1])
            || singular_values.iter().any(|&s| s < 0.0)
        {
            return Err(FreError::InvalidArgument(
                "singular values must be non-negative and non-increasing".into(),
            ));
        }
        let components = DMatrix::from_fn(m, d, |i, j| components[i][j]);
        let gram = &components * components.transpose();
        if (gram - DMatrix::identity(m, m)).amax() > 1e-10 {
            return Err(FreError::InvalidArgument(
                "component rows are not orthonormal".into(),
            ));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            components,
            singular_values,
            explained_variance_ratio,
        })
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Retained dimension `m`.
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.components.row(k).iter().copied().collect()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    /// Fraction of training variance captured by the retained components.
    pub fn retained_variance(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    /// Copy keeping only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.n_components());
        Self {
            mean: self.mean.clone(),
            components: self.components.rows(0, k).into_owned(),
            singular_values: self.singular_values[..k].to_vec(),
            explained_variance_ratio: self.explained_variance_ratio[..k].to_vec(),
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(FreError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    fn centered(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b))
    }

    /// Coordinates of `x` in the retained subspace: `components * (x - mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok((&self.components * self.centered(x)).data.into())
    }

    /// Maps subspace coordinates back to feature space: `mean + components^T z`.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n_components() {
            return Err(FreError::DimensionMismatch {
                expected: self.n_components(),
                got: z.len(),
            });
        }
        let z = DVector::from_column_slice(z);
        Ok((&self.mean + self.components.tr_mul(&z)).data.into())
    }

    /// Orthogonal projection of `x` onto the affine subspace.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.transform(x)?;
        self.inverse_transform(&z)
    }

    /// Feature reconstruction error `||x - reconstruct(x)||_2`.
    pub fn fre_score(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let c = self.centered(x);
        let z = &self.components * &c;
        let residual = c - self.components.tr_mul(&z);
        Ok(residual.norm())
    }

    /// FRE for every row of `m`.
    pub fn fre_scores(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_dim(m.cols())?;
        par::try_map_range(m.rows(), |i| self.fre_score(&m.row_f64(i)))
    }
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Flips each row so its largest-magnitude entry is positive; ties go to the
/// lowest index.
fn fix_signs(components: &mut DMatrix<f64>) {
    for mut row in components.row_iter_mut() {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j].abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.neg_mut();
        }
    }
}

struct CenteredSvd {
    mean: DVector<f64>,
    /// Rows are right singular vectors, sorted by decreasing singular value.
    vt: DMatrix<f64>,
    singular_values: Vec<f64>,
    /// `s_k^2 / sum(s^2)` for the `min(M-1, d)` leading directions.
    ratios: Vec<f64>,
}

fn centered_svd(train: &FeatureMatrix) -> Result<CenteredSvd> {
    let (rows, cols) = (train.rows(), train.cols());
    if rows < 2 {
        return Err(FreError::TooFewSamples {
            needed: 2,
            got: rows,
        });
    }
    let raw = train.to_dmatrix();
    let mean = column_mean(&raw);
    let mut x = raw.clone();
    for mut r in x.row_iter_mut() {
        r -= mean.transpose();
    }
    let svd = x.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let available = (rows - 1).min(cols);
    let singular_values: Vec<f64> = order
        .iter()
        .take(available)
        .map(|&k| svd.singular_values[k])
        .collect();

    let scale = raw.amax().max(f64::MIN_POSITIVE);
    let zero_tol = (rows * cols) as f64 * f64::EPSILON * scale;
    if singular_values.first().is_none_or(|&s| s <= zero_tol) {
        return Err(FreError::ZeroVariance);
    }
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let ratios = singular_values.iter().map(|s| s * s / total).collect();
    let vt = DMatrix::from_fn(available, cols, |i, j| vt[(order[i], j)]);
    Ok(CenteredSvd {
        mean,
        vt,
        singular_values,
        ratios,
    })
}

fn assemble(svd: CenteredSvd, m: usize) -> PcaModel {
    let mut components = svd.vt.rows(0, m).into_owned();
    fix_signs(&mut components);
    PcaModel {
        mean: svd.mean,
        components,
        singular_values: svd.singular_values[..m].to_vec(),
        explained_variance_ratio: svd.ratios[..m].to_vec(),
    }
}

/// Smallest `k` whose cumulative ratio reaches `retention`.
pub(crate) fn select_by_retention(ratios: &[f64], retention: f64) -> usize {
    let mut cum = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= retention - RETENTION_SLACK {
            return k + 1;
        }
    }
    ratios.len()
}

pub(crate) fn check_retention(retention: f64) -> Result<()> {
    if retention > 0.0 && retention <= 1.0 {
        Ok(())
    } else {
        Err(FreError::InvalidArgument(format!(
            "variance retention {retention} outside (0, 1]"
        )))
    }
}

/// Fits PCA keeping the fewest components whose cumulative explained
/// variance ratio reaches `variance_retention`.
pub fn fit_pca(train: &FeatureMatrix, variance_retention: f64) -> Result<PcaModel> {
    check_retention(variance_retention)?;
    let svd = centered_svd(train)?;
    let m = select_by_retention(&svd.ratios, variance_retention);
    Ok(assemble(svd, m))
}

/// Fits PCA with a fixed number of components. Requests above `M - 1` (or
/// `d`) are clamped with a warning.
pub fn fit_pca_components(train: &FeatureMatrix, n_components: usize) -> Result<PcaModel> {
    if n_components == 0 {
        return Err(FreError::InvalidArgument(
            "n_components must be at least 1".into(),
        ));
    }
    let svd = centered_svd(train)?;
    let available = svd.ratios.len();
    let m = if n_components > available {
        log::warn!(
            "requested {n_components} components but only {available} are available \
             ({} samples, {} features); clamping",
            train.rows(),
            train.cols()
        );
        available
    } else {
        n_components
    };
    Ok(assemble(svd, m))
}

/// Singular values of the raw (uncentered) data matrix, descending.
pub fn singular_values(m: &FeatureMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.to_dmatrix().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank of the raw data matrix: the count of singular values above
/// `max(M, d) * eps * sigma_max`.
///
/// `eps` is the `f32` machine epsilon, matching the storage precision; with
/// the `f64` epsilon the rounding noise of `f32` storage alone would make
/// almost every matrix full rank.
pub fn numerical_rank(m: &FeatureMatrix) -> usize {
    let s = singular_values(m);
    let Some(&max) = s.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    let tol = m.rows().max(m.cols()) as f64 * f64::from(f32::EPSILON) * max;
    s.iter().filter(|&&v| v > tol).count()
}
