//! Out-of-distribution and anomaly detection by feature reconstruction
//! error (FRE).
//!
//! Deep features of in-distribution data occupy a low-dimensional subspace
//! (or manifold) of the feature space. Fitting that subspace with PCA or
//! kernel PCA and measuring how much of a test feature the subspace fails to
//! reconstruct gives a cheap, label-free uncertainty score.
//!
//! * [`features`]: FMX feature files, score CSVs, stratified subsampling.
//! * [`linear`]: PCA, linear FRE, numerical rank.
//! * [`kernel`]: RBF kernel PCA, pre-images, kFRE.
//! * [`bank`]: global / per-class model banks with min aggregation.
//! * [`model_file`]: the `FREB` model container.
//! * [`baselines`]: Mahalanobis (tied covariance) and softmax scores.
//! * [`eval`]: AUROC, ROC curves, experiment runner, robustness sweep.
//! * [`synthetic`]: seeded generators with known structure.
//!
//! The `parallel` feature (on by default) spreads per-sample scoring,
//! per-class fitting, Gram rows and sweep points over rayon. Results are
//! identical with the feature off.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod kernel;
pub mod linear;
pub mod model_file;
pub mod par;
pub mod synthetic;

pub use bank::{fit_bank, score_bank, BankConfig, Method, Mode, ModelBank, SubspaceModel};
pub use baselines::{fit_mahalanobis, softmax_score, softmax_scores, MahalanobisModel};
pub use error::{FreError, Result};
pub use eval::{
    auroc, robustness_sweep, run_experiment, EvalReport, Scorer, SweepReport, DEFAULT_FRACTIONS,
};
pub use features::{
    read_features, read_scores, subsample, write_features, write_scores, FeatureMatrix, ScoreVector,
};
pub use kernel::{fit_kpca, rbf_kernel, Kernel, KfreVariant, KpcaModel, Preimage, PreimageConfig};
pub use linear::{fit_pca, numerical_rank, PcaModel, DEFAULT_VARIANCE_RETENTION};
pub use model_file::{load_bank, load_detector, save_bank, save_detector, Detector};
pub use synthetic::{generate_synthetic, ClassLayout, OodShift, SyntheticData, SyntheticSpec};
