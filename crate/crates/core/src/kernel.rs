//! Kernel PCA with an RBF kernel, fixed-point pre-images and the kernel
//! feature reconstruction error (kFRE).
//!
//! Centering follows the usual double-centering of the Gram matrix. For a
//! test point the centered kernel row is
//! `k~_i = k(x, x_i) - mean_j k(x, x_j) - r_i + t`, with `r` the Gram row
//! means and `t` their mean, both stored on the model.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FreError, Result};
use crate::features::FeatureMatrix;
use crate::linear::{check_retention, select_by_retention};
use crate::par;

/// Dense Gram matrices above this many rows are refused.
pub const MAX_KPCA_ROWS: usize = 10_000;
/// Exact median heuristic up to this many rows; sampled above.
pub const MEDIAN_EXACT_ROWS: usize = 2_000;
const MEDIAN_SAMPLE_PAIRS: usize = 2_000;
/// Eigenvalues below this fraction of the largest are treated as zero.
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-gamma * ||x - y||^2)`
    Rbf { gamma: f64 },
    /// Plain inner product. Kernel PCA with it reduces to linear PCA, which
    /// makes it useful for cross-checking against [`crate::linear`].
    Linear,
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * squared_distance(x, y)).exp(),
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(FreError::InvalidArgument(format!(
                    "RBF gamma must be positive and finite, got {gamma}"
                )))
            }
            _ => Ok(()),
        }
    }
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FreError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let k = Kernel::Rbf { gamma };
    k.validate()?;
    Ok(k.eval(x, y))
}

/// RBF width by the median heuristic: `gamma = 1 / (2 * median^2)` over
/// pairwise Euclidean distances. All pairs are used up to
/// [`MEDIAN_EXACT_ROWS`] rows; above that, a seeded sample of 2000 pairs.
pub fn median_heuristic_gamma(train: &FeatureMatrix, seed: u64) -> Result<f64> {
    let n = train.rows();
    if n < 2 {
        return Err(FreError::TooFewSamples { needed: 2, got: n });
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| train.row_f64(i)).collect();
    let mut dists: Vec<f64> = if n <= MEDIAN_EXACT_ROWS {
        par::map_range(n, |i| {
            ((i + 1)..n)
                .map(|j| squared_distance(&points[i], &points[j]).sqrt())
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MEDIAN_SAMPLE_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                squared_distance(&points[i], &points[j]).sqrt()
            })
            .collect()
    };
    let median = median(&mut dists);
    if !(median > 0.0) {
        return Err(FreError::DegenerateBandwidth);
    }
    Ok(1.0 / (2.0 * median * median))
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Stopping rule for the fixed-point pre-image iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreimageConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PreimageConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Result of a pre-image search.
#[derive(Debug, Clone, PartialEq)]
pub struct Preimage {
    pub point: Vec<f64>,
    pub iterations: usize,
    /// `false` when `max_iter` ran out before the step size fell below `tol`;
    /// `point` is still the best iterate found.
    pub converged: bool,
    /// The iteration collapsed once and was restarted from the training
    /// point nearest to the query.
    pub restarted: bool,
}

/// How kFRE measures the reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KfreVariant {
    /// Input-space distance between `x` and the pre-image of its projection.
    #[default]
    Preimage,
    /// Distance in the kernel feature space between `phi(x)` and its
    /// projection. No pre-image is computed.
    Rkhs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel {
    kernel: Kernel,
    dim: usize,
    /// Training points, row-major `M x d`.
    points: Vec<f64>,
    /// `m x M`; row `k` scaled so `eigenvalue_k * ||alpha_k||^2 = 1`.
    alphas: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    row_means: Vec<f64>,
    total_mean: f64,
    retained_ratio: f64,
}

impl KpcaModel {
    /// Assembles a model from stored parts, checking every shape.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kernel: Kernel,
        dim: usize,
        points: Vec<f64>,
        alphas: Vec<Vec<f64>>,
        eigenvalues: Vec<f64>,
        row_means: Vec<f64>,
        total_mean: f64,
        retained_ratio: f64,
    ) -> Result<Self> {
        kernel.validate()?;
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(FreError::InvalidArgument(format!(
                "{} stored values do not form rows of length {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if row_means.len() != n {
            return Err(FreError::DimensionMismatch {
                expected: n,
                got: row_means.len(),
            });
        }
        if alphas.len() != eigenvalues.len() || alphas.iter().any(|a| a.len() != n) {
            return Err(FreError::InvalidArgument(
                "alpha matrix shape mismatch".into(),
            ));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0)) || eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(FreError::InvalidArgument(
                "eigenvalues must be positive and non-increasing".into(),
            ));
        }
        let m = alphas.len();
        let alphas = DMatrix::from_fn(m, n, |k, i| alphas[k][i]);
        Ok(Self {
            kernel,
            dim,
            points,
            alphas,
            eigenvalues,
            row_means,
            total_mean,
            retained_ratio,
        })
    }

    /// Zero-component model over a single point `p`. Its projection is the
    /// kernel mean, which is `phi(p)` itself, so every pre-image is `p`.
    pub fn single_point(p: Vec<f64>, kernel: Kernel) -> Result<Self> {
        let kpp = kernel.eval(&p, &p);
        let dim = p.len();
        Self::from_parts(kernel, dim, p, Vec::new(), Vec::new(), vec![kpp], kpp, 0.0)
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_train(&self) -> usize {
        self.row_means.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn alphas(&self) -> &DMatrix<f64> {
        &self.alphas
    }

    pub fn alpha(&self, k: usize) -> Vec<f64> {
        self.alphas.row(k).iter().copied().collect()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_means(&self) -> &[f64] {
        &self.row_means
    }

    pub fn total_mean(&self) -> f64 {
        self.total_mean
    }

    /// Fraction of the (floored) centered-Gram eigenvalue mass retained.
    pub fn retained_ratio(&self) -> f64 {
        self.retained_ratio
    }

    /// Copy keeping only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.n_components());
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..k].iter().sum();
        Self {
            alphas: self.alphas.rows(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            retained_ratio: if total > 0.0 {
                self.retained_ratio * kept / total
            } else {
                0.0
            },
            ..self.clone()
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(FreError::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    /// `[k(x, x_i)]` over the training points.
    pub fn kernel_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(self
            .points
            .chunks_exact(self.dim)
            .map(|p| self.kernel.eval(x, p))
            .collect())
    }

    fn centered_row(&self, k_row: &[f64]) -> Vec<f64> {
        let mean = k_row.iter().sum::<f64>() / k_row.len() as f64;
        k_row
            .iter()
            .zip(&self.row_means)
            .map(|(k, r)| k - mean - r + self.total_mean)
            .collect()
    }

    /// Projection from a precomputed kernel row `[k(x, x_i)]`.
    pub fn project_kernel_row(&self, k_row: &[f64]) -> Result<Vec<f64>> {
        if k_row.len() != self.n_train() {
            return Err(FreError::DimensionMismatch {
                expected: self.n_train(),
                got: k_row.len(),
            });
        }
        let centered = self.centered_row(k_row);
        Ok(self
            .alphas
            .row_iter()
            .map(|a| a.iter().zip(&centered).map(|(a, k)| a * k).sum())
            .collect())
    }

    /// Coordinates of `phi(x)` along the retained kernel principal axes.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k_row = self.kernel_row(x)?;
        self.project_kernel_row(&k_row)
    }

    /// Centered self-similarity `k~(x, x)`, the squared RKHS distance from
    /// `phi(x)` to the training kernel mean.
    fn centered_self(&self, x: &[f64], k_row: &[f64]) -> f64 {
        let mean = k_row.iter().sum::<f64>() / k_row.len() as f64;
        self.kernel.eval(x, x) - 2.0 * mean + self.total_mean
    }

    /// Distance in the kernel feature space between `phi(x)` and its
    /// projection onto the retained subspace.
    pub fn rkhs_residual(&self, x: &[f64]) -> Result<f64> {
        let k_row = self.kernel_row(x)?;
        let beta = self.project_kernel_row(&k_row)?;
        let kxx = self.centered_self(x, &k_row);
        let radicand = kxx - beta.iter().map(|b| b * b).sum::<f64>();
        let slack = 1e-6 * kxx.abs().max(1.0);
        if radicand < -slack {
            return Err(FreError::NegativeResidual(radicand));
        }
        Ok(radicand.max(0.0).sqrt())
    }

    /// Expansion coefficients `gamma_i` with
    /// `projection(phi(x)) + mean(phi) = sum_i gamma_i phi(x_i)`.
    fn expansion_weights(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.n_train();
        let mut delta = vec![0.0; n];
        for (b, a) in beta.iter().zip(self.alphas.row_iter()) {
            for (d, a) in delta.iter_mut().zip(a.iter()) {
                *d += b * a;
            }
        }
        let shift = (1.0 - delta.iter().sum::<f64>()) / n as f64;
        delta.iter_mut().for_each(|d| *d += shift);
        delta
    }

    /// Squared RKHS distance between `phi(z)` and the reconstruction of
    /// `phi(x)` (projection plus kernel mean). This is the quantity the
    /// pre-image search minimizes. Costs `O(M^2 d)`.
    pub fn preimage_objective(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_dim(z.len())?;
        let beta = self.project(x)?;
        let w = self.expansion_weights(&beta);
        let kz = self.kernel_row(z)?;
        let cross: f64 = w.iter().zip(&kz).map(|(a, b)| a * b).sum();
        let quad: f64 = (0..self.n_train())
            .map(|i| {
                let pi = self.point(i);
                w[i] * (0..self.n_train())
                    .map(|j| w[j] * self.kernel.eval(pi, self.point(j)))
                    .sum::<f64>()
            })
            .sum();
        Ok(self.kernel.eval(z, z) - 2.0 * cross + quad)
    }

    fn combine(&self, coeffs: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for (c, p) in coeffs.zip(self.points.chunks_exact(self.dim)) {
            for (zj, pj) in z.iter_mut().zip(p) {
                *zj += c * pj;
            }
        }
        z
    }

    fn nearest_point(&self, x: &[f64]) -> Vec<f64> {
        self.points
            .chunks_exact(self.dim)
            .min_by(|a, b| squared_distance(x, a).total_cmp(&squared_distance(x, b)))
            .expect("model has training points")
            .to_vec()
    }

    /// Input-space pre-image of the projection of `phi(x)`.
    ///
    /// RBF kernels use the fixed-point update
    /// `z <- sum_i w_i k(z, x_i) x_i / sum_i w_i k(z, x_i)` from `z = x`,
    /// where `w` are the expansion weights of the reconstruction. The best
    /// iterate (by RKHS objective, start point included) is returned. If the
    /// denominator vanishes the search restarts once from the training point
    /// nearest to `x`. The linear kernel has an exact closed form.
    pub fn preimage(&self, x: &[f64], cfg: &PreimageConfig) -> Result<Preimage> {
        if cfg.max_iter == 0 || !(cfg.tol > 0.0) {
            return Err(FreError::InvalidArgument(
                "pre-image needs max_iter >= 1 and tol > 0".into(),
            ));
        }
        let beta = self.project(x)?;
        let w = self.expansion_weights(&beta);
        if let Kernel::Linear = self.kernel {
            return Ok(Preimage {
                point: self.combine(w.iter().copied()),
                iterations: 0,
                converged: true,
                restarted: false,
            });
        }

        // For RBF k(z, z) = 1, so minimizing the objective means maximizing
        // the weighted kernel sum.
        let fit = |z: &[f64]| -> f64 {
            self.points
                .chunks_exact(self.dim)
                .zip(&w)
                .map(|(p, wi)| wi * self.kernel.eval(z, p))
                .sum()
        };

        let mut z = x.to_vec();
        let mut best = (fit(&z), z.clone());
        let mut restarted = false;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iter {
            iterations += 1;
            let wk: Vec<f64> = self
                .points
                .chunks_exact(self.dim)
                .zip(&w)
                .map(|(p, wi)| wi * self.kernel.eval(&z, p))
                .collect();
            let denom: f64 = wk.iter().sum();
            let mass: f64 = wk.iter().map(|v| v.abs()).sum();
            if !(denom.abs() > 1e-12 * mass) || mass < f64::MIN_POSITIVE {
                if restarted {
                    return Err(FreError::PreimageCollapse);
                }
                restarted = true;
                z = self.nearest_point(x);
                continue;
            }
            let next = self.combine(wk.iter().map(|v| v / denom));
            let step = squared_distance(&next, &z).sqrt();
            let scale = 1.0 + z.iter().map(|v| v * v).sum::<f64>().sqrt();
            z = next;
            let f = fit(&z);
            if f > best.0 {
                best = (f, z.clone());
            }
            if step <= cfg.tol * scale {
                converged = true;
                break;
            }
        }
        Ok(Preimage {
            point: best.1,
            iterations,
            converged,
            restarted,
        })
    }

    /// kFRE of `x` under the chosen variant.
    pub fn kfre_score(&self, x: &[f64], variant: KfreVariant, cfg: &PreimageConfig) -> Result<f64> {
        match variant {
            KfreVariant::Rkhs => self.rkhs_residual(x),
            KfreVariant::Preimage => {
                let pre = self.preimage(x, cfg)?;
                if !pre.converged {
                    log::debug!(
                        "pre-image stopped after {} iterations without converging",
                        pre.iterations
                    );
                }
                Ok(squared_distance(x, &pre.point).sqrt())
            }
        }
    }

    pub fn kfre_scores(
        &self,
        m: &FeatureMatrix,
        variant: KfreVariant,
        cfg: &PreimageConfig,
    ) -> Result<Vec<f64>> {
        self.check_dim(m.cols())?;
        par::try_map_range(m.rows(), |i| self.kfre_score(&m.row_f64(i), variant, cfg))
    }
}

/// Fits RBF kernel PCA. When `gamma` is `None` it is chosen by the median
/// heuristic (seeded for large inputs).
pub fn fit_kpca(
    train: &FeatureMatrix,
    variance_retention: f64,
    gamma: Option<f64>,
    seed: u64,
) -> Result<KpcaModel> {
    let gamma = match gamma {
        Some(g) => g,
        None => median_heuristic_gamma(train, seed)?,
    };
    fit_kpca_with_kernel(train, variance_retention, Kernel::Rbf { gamma })
}

pub fn fit_kpca_with_kernel(
    train: &FeatureMatrix,
    variance_retention: f64,
    kernel: Kernel,
) -> Result<KpcaModel> {
    check_retention(variance_retention)?;
    kernel.validate()?;
    let n = train.rows();
    if n < 2 {
        return Err(FreError::TooFewSamples { needed: 2, got: n });
    }
    if n > MAX_KPCA_ROWS {
        return Err(FreError::TooManyRows(n, MAX_KPCA_ROWS));
    }
    let dim = train.cols();
    let points: Vec<f64> = train.data().iter().map(|&v| f64::from(v)).collect();
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let gram_rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| kernel.eval(row(i), row(j)))
            .collect::<Vec<_>>()
    });
    let row_means: Vec<f64> = gram_rows
        .iter()
        .map(|r| r.iter().sum::<f64>() / n as f64)
        .collect();
    let total_mean = row_means.iter().sum::<f64>() / n as f64;
    let diag_scale = (0..n).map(|i| gram_rows[i][i].abs()).fold(0.0, f64::max);
    let centered = DMatrix::from_fn(n, n, |i, j| {
        gram_rows[i][j] - row_means[i] - row_means[j] + total_mean
    });
    drop(gram_rows);

    let eig = SymmetricEigen::new(centered);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let lambda_max = eig.eigenvalues[order[0]];
    if !(lambda_max > EIGEN_FLOOR * diag_scale.max(f64::MIN_POSITIVE)) {
        return Err(FreError::DegenerateKernel);
    }
    let kept: Vec<usize> = order
        .into_iter()
        .take_while(|&k| eig.eigenvalues[k] > EIGEN_FLOOR * lambda_max)
        .collect();
    let mass: f64 = kept.iter().map(|&k| eig.eigenvalues[k]).sum();
    let ratios: Vec<f64> = kept.iter().map(|&k| eig.eigenvalues[k] / mass).collect();
    let m = select_by_retention(&ratios, variance_retention);

    let eigenvalues: Vec<f64> = kept[..m].iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut alphas = DMatrix::zeros(m, n);
    for (r, &k) in kept[..m].iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut best = 0;
        for i in 1..n {
            if v[i].abs() > v[best].abs() {
                best = i;
            }
        }
        let sign = if v[best] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / eigenvalues[r].sqrt();
        for i in 0..n {
            alphas[(r, i)] = v[i] * scale;
        }
    }
    Ok(KpcaModel {
        kernel,
        dim,
        points,
        alphas,
        eigenvalues,
        row_means,
        total_mean,
        retained_ratio: ratios[..m].iter().sum(),
    })
}
