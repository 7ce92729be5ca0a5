//! Seeded synthetic feature sets with known low-dimensional structure.
//!
//! Generative process (all draws from one ChaCha8 stream, in this order):
//!
//! * **Shared subspace** layout: a random orthonormal basis `U` (`d x m`,
//!   from the QR factorization of a Gaussian matrix) and class centers
//!   `c_k ~ 3 N(0, I_m)` (a single class is centered at 0). An ID sample of
//!   class `k` is `U (c_k + z) + noise_sigma * e` with `z ~ N(0, I_m)`,
//!   `e ~ N(0, I_d)`.
//! * **Per-class subspaces** layout: each class `k` gets its own basis `U_k`
//!   and mean `mu_k ~ 2 N(0, I_d)`; samples are
//!   `mu_k + U_k z + noise_sigma * e`. A basis is redrawn while its leading
//!   axis has `|cos| > MAX_AXIS_COSINE` with an earlier class's, so every
//!   class has a distinct principal axis.
//! * **Nonlinear manifold**: a unit circle in a random plane,
//!   `cos(t) u_1 + sin(t) u_2 + noise_sigma * e` with `t ~ U(0, 2 pi)`.
//!
//! OOD samples depend on [`OodShift`]:
//!
//! * `OffSubspace`: isotropic `center + ood_sigma * e` around the mean of the
//!   class centers.
//! * `ShiftedMean { distance }`: an ID draw from a uniformly chosen class,
//!   moved by `distance` along one fixed random unit direction.
//! * `NonlinearManifold`: points uniform in the disk of radius
//!   [`DISK_RADIUS`] inside the circle's plane (plus the same noise), i.e.
//!   inside the linear span of the data but off the manifold.
//!
//! Train and ID-test rows carry class labels; OOD rows are unlabeled.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FreError, Result};
use crate::features::FeatureMatrix;

/// Largest allowed `|cos|` between leading axes of two classes in the
/// per-class layout.
pub const MAX_AXIS_COSINE: f64 = 0.9;

const MAX_BASIS_DRAWS: usize = 10_000;

/// Radius of the OOD disk for the circle construction.
pub const DISK_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassLayout {
    SharedSubspace,
    PerClassSubspaces,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OodShift {
    OffSubspace,
    ShiftedMean { distance: f64 },
    NonlinearManifold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    pub noise_sigma: f64,
    pub ood_sigma: f64,
    pub layout: ClassLayout,
    pub shift: OodShift,
}

impl SyntheticSpec {
    /// 5-dimensional subspace of R^20, noise 0.01, isotropic unit-variance OOD.
    pub fn subspace() -> Self {
        Self {
            ambient_dim: 20,
            intrinsic_dim: 5,
            classes: 1,
            train_per_class: 1000,
            n_id_test: 500,
            n_ood_test: 500,
            noise_sigma: 0.01,
            ood_sigma: 1.0,
            layout: ClassLayout::SharedSubspace,
            shift: OodShift::OffSubspace,
        }
    }

    /// Four classes in R^3, each stretched along its own direction.
    pub fn anisotropic_classes() -> Self {
        Self {
            ambient_dim: 3,
            intrinsic_dim: 1,
            classes: 4,
            train_per_class: 200,
            n_id_test: 400,
            n_ood_test: 400,
            noise_sigma: 0.05,
            ood_sigma: 2.0,
            layout: ClassLayout::PerClassSubspaces,
            shift: OodShift::OffSubspace,
        }
    }

    /// Noisy unit circle in R^4 with OOD points inside the disk.
    pub fn circle() -> Self {
        Self {
            ambient_dim: 4,
            intrinsic_dim: 1,
            classes: 1,
            train_per_class: 300,
            n_id_test: 300,
            n_ood_test: 300,
            noise_sigma: 0.05,
            ood_sigma: 0.0,
            layout: ClassLayout::SharedSubspace,
            shift: OodShift::NonlinearManifold,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FreError::InvalidArgument(msg));
        if self.classes == 0
            || self.train_per_class < 2
            || self.n_id_test == 0
            || self.n_ood_test == 0
        {
            return bad(
                "need at least one class, two training rows per class and non-empty test sets"
                    .into(),
            );
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise sigma {} must be finite and non-negative",
                self.noise_sigma
            ));
        }
        match self.shift {
            OodShift::NonlinearManifold => {
                if self.ambient_dim < 2 {
                    return bad("the circle needs at least two ambient dimensions".into());
                }
                if self.classes != 1 {
                    return bad("the circle construction has a single class".into());
                }
            }
            OodShift::OffSubspace | OodShift::ShiftedMean { .. } => {
                if self.intrinsic_dim == 0 || self.intrinsic_dim >= self.ambient_dim {
                    return bad(format!(
                        "intrinsic dimension {} must lie in [1, {})",
                        self.intrinsic_dim, self.ambient_dim
                    ));
                }
            }
        }
        match self.shift {
            OodShift::OffSubspace if !(self.ood_sigma > 0.0 && self.ood_sigma.is_finite()) => {
                bad(format!("OOD sigma {} must be positive", self.ood_sigma))
            }
            OodShift::ShiftedMean { distance } if !distance.is_finite() => {
                bad("shift distance must be finite".into())
            }
            _ => Ok(()),
        }
    }
}

/// Generated splits plus the ground truth used to build them.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: FeatureMatrix,
    pub id_test: FeatureMatrix,
    pub ood_test: FeatureMatrix,
    /// Per-class orthonormal basis, `d x m` (the plane basis for the circle).
    pub bases: Vec<DMatrix<f64>>,
    /// Per-class mean in feature space.
    pub means: Vec<Vec<f64>>,
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    fn orthonormal(&mut self, d: usize, m: usize) -> DMatrix<f64> {
        let g = DMatrix::from_iterator(d, m, self.normals(d * m));
        g.qr().q().columns(0, m).into_owned()
    }

    fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        loop {
            let v = self.normals(d);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

struct Classes {
    bases: Vec<DMatrix<f64>>,
    means: Vec<Vec<f64>>,
}

impl Classes {
    fn sample(&self, g: &mut Gen, class: usize, spec: &SyntheticSpec) -> Vec<f64> {
        let basis = &self.bases[class];
        let mut x = self.means[class].clone();
        match spec.shift {
            OodShift::NonlinearManifold => {
                let t = g.rng.random_range(0.0..TAU);
                for (j, v) in x.iter_mut().enumerate() {
                    *v += t.cos() * basis[(j, 0)] + t.sin() * basis[(j, 1)];
                }
            }
            _ => {
                let z = g.normals(spec.intrinsic_dim);
                for (j, v) in x.iter_mut().enumerate() {
                    *v += (0..z.len()).map(|k| basis[(j, k)] * z[k]).sum::<f64>();
                }
            }
        }
        for v in &mut x {
            *v += spec.noise_sigma * g.normal();
        }
        x
    }
}

fn distinct_basis(
    g: &mut Gen,
    earlier: &[DMatrix<f64>],
    d: usize,
    m: usize,
) -> Result<DMatrix<f64>> {
    for _ in 0..MAX_BASIS_DRAWS {
        let u = g.orthonormal(d, m);
        let lead = u.column(0);
        if earlier
            .iter()
            .all(|b| b.column(0).dot(&lead).abs() <= MAX_AXIS_COSINE)
        {
            return Ok(u);
        }
    }
    Err(FreError::InvalidArgument(format!(
        "cannot place {} distinct class axes in {d} dimensions",
        earlier.len() + 1
    )))
}

/// Draws train, ID-test and OOD-test splits as described in the module docs.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.ambient_dim;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };

    let classes = match (spec.shift, spec.layout) {
        (OodShift::NonlinearManifold, _) => Classes {
            bases: vec![g.orthonormal(d, 2)],
            means: vec![vec![0.0; d]],
        },
        (_, ClassLayout::SharedSubspace) => {
            let basis = g.orthonormal(d, spec.intrinsic_dim);
            let means = (0..spec.classes)
                .map(|_| {
                    if spec.classes == 1 {
                        vec![0.0; d]
                    } else {
                        let c: Vec<f64> = g
                            .normals(spec.intrinsic_dim)
                            .into_iter()
                            .map(|v| 3.0 * v)
                            .collect();
                        (0..d)
                            .map(|j| (0..c.len()).map(|k| basis[(j, k)] * c[k]).sum())
                            .collect()
                    }
                })
                .collect();
            Classes {
                bases: vec![basis; spec.classes],
                means,
            }
        }
        (_, ClassLayout::PerClassSubspaces) => {
            let mut bases = Vec::new();
            let mut means = Vec::new();
            for _ in 0..spec.classes {
                bases.push(distinct_basis(&mut g, &bases, d, spec.intrinsic_dim)?);
                means.push(g.normals(d).into_iter().map(|v| 2.0 * v).collect());
            }
            Classes { bases, means }
        }
    };

    let mut rows = Vec::with_capacity(spec.classes * spec.train_per_class);
    let mut labels = Vec::with_capacity(rows.capacity());
    for c in 0..spec.classes {
        for _ in 0..spec.train_per_class {
            rows.push(classes.sample(&mut g, c, spec));
            labels.push(c as u32);
        }
    }
    let train = FeatureMatrix::from_rows_f64(&rows, Some(labels))?;

    let (rows, labels): (Vec<_>, Vec<_>) = (0..spec.n_id_test)
        .map(|i| {
            let c = i % spec.classes;
            (classes.sample(&mut g, c, spec), c as u32)
        })
        .unzip();
    let id_test = FeatureMatrix::from_rows_f64(&rows, Some(labels))?;

    let center: Vec<f64> = (0..d)
        .map(|j| classes.means.iter().map(|m| m[j]).sum::<f64>() / classes.means.len() as f64)
        .collect();
    let direction = match spec.shift {
        OodShift::ShiftedMean { .. } => g.unit_vector(d),
        _ => Vec::new(),
    };
    let ood_rows: Vec<Vec<f64>> = (0..spec.n_ood_test)
        .map(|_| match spec.shift {
            OodShift::OffSubspace => center
                .iter()
                .map(|c| c + spec.ood_sigma * g.normal())
                .collect(),
            OodShift::ShiftedMean { distance } => {
                let c = g.rng.random_range(0..spec.classes);
                let x = classes.sample(&mut g, c, spec);
                x.iter()
                    .zip(&direction)
                    .map(|(v, u)| v + distance * u)
                    .collect()
            }
            OodShift::NonlinearManifold => {
                let basis = &classes.bases[0];
                let r = DISK_RADIUS * g.rng.random::<f64>().sqrt();
                let t = g.rng.random_range(0.0..TAU);
                (0..d)
                    .map(|j| {
                        r * t.cos() * basis[(j, 0)]
                            + r * t.sin() * basis[(j, 1)]
                            + spec.noise_sigma * g.normal()
                    })
                    .collect()
            }
        })
        .collect();
    let ood_test = FeatureMatrix::from_rows_f64(&ood_rows, None)?;

    Ok(SyntheticData {
        train,
        id_test,
        ood_test,
        bases: classes.bases,
        means: classes.means,
    })
}
