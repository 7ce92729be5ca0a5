#![allow(dead_code)]

use fre_core::{FeatureMatrix, Kernel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gaussian rows; with `anisotropic`, column `j` is scaled by `1.6^-j` so the
/// spectrum has distinct, decaying variances.
pub fn gaussian_matrix<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    anisotropic: bool,
) -> FeatureMatrix {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|j| {
                    let s = if anisotropic {
                        1.6f64.powi(-(j as i32)) * 3.0
                    } else {
                        1.0
                    };
                    s * rng.sample::<f64, _>(StandardNormal) + 0.5
                })
                .collect()
        })
        .collect();
    FeatureMatrix::from_rows_f64(&data, None).unwrap()
}

pub fn brute_force_auc(id: &[f64], ood: &[f64]) -> f64 {
    let mut num = 0.0;
    for &o in ood {
        for &i in id {
            if o > i {
                num += 1.0;
            } else if o == i {
                num += 0.5;
            }
        }
    }
    num / (id.len() as f64 * ood.len() as f64)
}

/// FRE through the covariance eigenvectors, independent of the SVD path.
pub fn covariance_oracle(train: &FeatureMatrix, retention: f64) -> (usize, impl Fn(&[f64]) -> f64) {
    let x = train.to_dmatrix();
    let n = x.nrows() as f64;
    let mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
    let c = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let cov = c.transpose() * &c / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut cum = 0.0;
    let mut m = 0;
    for &k in &order {
        cum += eig.eigenvalues[k].max(0.0) / total;
        m += 1;
        if cum >= retention - 1e-12 {
            break;
        }
    }
    let basis: Vec<Vec<f64>> = order[..m]
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    let fre = move |q: &[f64]| {
        let c: Vec<f64> = q.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let mut r = c.clone();
        for v in &basis {
            let dot: f64 = c.iter().zip(v).map(|(a, b)| a * b).sum();
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri -= dot * vi;
            }
        }
        norm(&r)
    };
    (m, fre)
}

pub fn points(m: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row_f64(i)).collect()
}

/// Explicitly centered Gram `H K H` and its full eigendecomposition,
/// sorted by decreasing eigenvalue.
pub struct GramOracle {
    pub pts: Vec<Vec<f64>>,
    pub kernel: Kernel,
    pub gram: DMatrix<f64>,
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
}

impl GramOracle {
    pub fn new(pts: Vec<Vec<f64>>, kernel: Kernel) -> Self {
        let n = pts.len();
        let gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&pts[i], &pts[j]));
        let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let centered = &h * &gram * &h;
        let eig = SymmetricEigen::new(centered);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        Self {
            values: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
            vectors: order
                .iter()
                .map(|&k| eig.eigenvectors.column(k).into_owned())
                .collect(),
            pts,
            kernel,
            gram,
        }
    }

    pub fn n(&self) -> usize {
        self.pts.len()
    }

    /// Centered test kernel vector `H (k_x - K 1/n)` and centered `k~(x, x)`.
    pub fn centered(&self, x: &[f64]) -> (DVector<f64>, f64) {
        let n = self.n();
        let kx = DVector::from_iterator(n, self.pts.iter().map(|p| self.kernel.eval(x, p)));
        let ones = DVector::from_element(n, 1.0 / n as f64);
        let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let kc = &h * (&kx - &self.gram * &ones);
        let kxx = self.kernel.eval(x, x) - 2.0 * kx.dot(&ones) + ones.dot(&(&self.gram * &ones));
        (kc, kxx)
    }

    /// RKHS distance from `phi(x)` to its projection on the leading `m` axes.
    pub fn residual(&self, x: &[f64], m: usize) -> f64 {
        let (kc, kxx) = self.centered(x);
        let proj: f64 = (0..m)
            .map(|k| self.vectors[k].dot(&kc).powi(2) / self.values[k])
            .sum();
        (kxx - proj).max(0.0).sqrt()
    }

    /// Expansion weights of the reconstruction `P phi~(x) + mean phi`.
    pub fn weights(&self, x: &[f64], m: usize) -> Vec<f64> {
        let n = self.n();
        let (kc, _) = self.centered(x);
        let mut delta = DVector::zeros(n);
        for k in 0..m {
            let beta = self.vectors[k].dot(&kc) / self.values[k].sqrt();
            delta += &self.vectors[k] * (beta / self.values[k].sqrt());
        }
        let shift = (1.0 - delta.sum()) / n as f64;
        delta.iter().map(|d| d + shift).collect()
    }

    /// `||phi(z) - reconstruction||^2` for the given expansion weights.
    pub fn objective(&self, w: &[f64], z: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let quad = wv.dot(&(&self.gram * &wv));
        let cross: f64 = self
            .pts
            .iter()
            .zip(w)
            .map(|(p, wi)| wi * self.kernel.eval(z, p))
            .sum();
        self.kernel.eval(z, z) - 2.0 * cross + quad
    }
}

/// Unit circle in the plane with isotropic Gaussian noise.
pub fn noisy_circle(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            vec![
                t.cos() + sigma * rng.sample::<f64, _>(StandardNormal),
                t.sin() + sigma * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    FeatureMatrix::from_rows_f64(&rows, None).unwrap()
}
