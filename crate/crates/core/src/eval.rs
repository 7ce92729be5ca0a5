//! ROC / AUROC evaluation, experiment runner and the training-fraction
//! robustness sweep.
//!
//! Out-of-distribution samples are the positive class and every scorer is
//! oriented so that larger scores mean more out-of-distribution.

use std::path::Path;

use crate::bank::ModelBank;
use crate::baselines::MahalanobisModel;
use crate::error::{FreError, Result};
use crate::features::{subsample, FeatureMatrix, ScoreVector};
use crate::linear::PcaModel;
use crate::model_file::Detector;
use crate::par;

/// Training fractions swept by default, largest first.
pub const DEFAULT_FRACTIONS: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub roc_points: Vec<(f64, f64)>,
    pub n_id: usize,
    pub n_ood: usize,
    pub method_tag: String,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "auroc={:?} n_id={} n_ood={} method={}",
            self.auroc, self.n_id, self.n_ood, self.method_tag
        )
    }

    /// Area under `roc_points` by the trapezoid rule.
    pub fn trapezoid_area(&self) -> f64 {
        self.roc_points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub fractions: Vec<f64>,
    pub aurocs: Vec<f64>,
    pub seed: u64,
}

/// Groups of tied scores in descending order, as `(n_id, n_ood)` counts.
fn tie_groups(id: &[f64], ood: &[f64]) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut n_id, mut n_ood) = (0, 0);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                n_ood += 1;
            } else {
                n_id += 1;
            }
            j += 1;
        }
        groups.push((n_id, n_ood));
        i = j;
    }
    groups
}

/// Mann-Whitney estimate of `P(ood > id) + 0.5 P(ood == id)`.
pub fn mann_whitney_auc(id: &[f64], ood: &[f64]) -> f64 {
    // walking groups in descending order, each ID sample beats the OOD
    // samples already seen and ties half of those in its own group
    let mut ood_above = 0usize;
    let mut u = 0.0;
    for (n_id, n_ood) in tie_groups(id, ood) {
        u += n_id as f64 * (ood_above as f64 + 0.5 * n_ood as f64);
        ood_above += n_ood;
    }
    u / (id.len() as f64 * ood.len() as f64)
}

/// ROC points from a descending threshold sweep over the merged scores.
pub fn roc_curve(id: &[f64], ood: &[f64]) -> Vec<(f64, f64)> {
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    for (gi, go) in tie_groups(id, ood) {
        fp += gi;
        tp += go;
        points.push((fp as f64 / n_id, tp as f64 / n_ood));
    }
    points
}

pub fn auroc(id_scores: &ScoreVector, ood_scores: &ScoreVector) -> Result<EvalReport> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(FreError::InvalidArgument(
            "AUROC needs at least one in-distribution and one OOD score".into(),
        ));
    }
    let (id, ood) = (&id_scores.scores, &ood_scores.scores);
    Ok(EvalReport {
        auroc: mann_whitney_auc(id, ood),
        roc_points: roc_curve(id, ood),
        n_id: id.len(),
        n_ood: ood.len(),
        method_tag: id_scores.tag.clone(),
    })
}

/// Something that assigns an uncertainty score to each row of a matrix.
pub trait Scorer: Sync {
    fn dim(&self) -> usize;
    fn tag(&self) -> String;
    fn score_matrix(&self, m: &FeatureMatrix) -> Result<ScoreVector>;
}

impl Scorer for ModelBank {
    fn dim(&self) -> usize {
        ModelBank::dim(self)
    }
    fn tag(&self) -> String {
        ModelBank::tag(self)
    }
    fn score_matrix(&self, m: &FeatureMatrix) -> Result<ScoreVector> {
        ModelBank::score_matrix(self, m)
    }
}

impl Scorer for MahalanobisModel {
    fn dim(&self) -> usize {
        MahalanobisModel::dim(self)
    }
    fn tag(&self) -> String {
        "mahalanobis".into()
    }
    fn score_matrix(&self, m: &FeatureMatrix) -> Result<ScoreVector> {
        ScoreVector::new(self.scores(m)?, "mahalanobis")
    }
}

impl Scorer for PcaModel {
    fn dim(&self) -> usize {
        PcaModel::dim(self)
    }
    fn tag(&self) -> String {
        "fre-pca".into()
    }
    fn score_matrix(&self, m: &FeatureMatrix) -> Result<ScoreVector> {
        ScoreVector::new(self.fre_scores(m)?, "fre-pca")
    }
}

impl Scorer for Detector {
    fn dim(&self) -> usize {
        Detector::dim(self)
    }
    fn tag(&self) -> String {
        match self {
            Detector::Bank(b) => b.tag(),
            Detector::Mahalanobis { .. } => "mahalanobis".into(),
        }
    }
    fn score_matrix(&self, m: &FeatureMatrix) -> Result<ScoreVector> {
        match self {
            Detector::Bank(b) => b.score_matrix(m),
            Detector::Mahalanobis { model, .. } => Scorer::score_matrix(model, m),
        }
    }
}

/// Scores both test sets and reports the AUROC.
pub fn run_experiment<S: Scorer + ?Sized>(
    scorer: &S,
    id_test: &FeatureMatrix,
    ood_test: &FeatureMatrix,
) -> Result<EvalReport> {
    for m in [id_test, ood_test] {
        if m.cols() != scorer.dim() {
            return Err(FreError::DimensionMismatch {
                expected: scorer.dim(),
                got: m.cols(),
            });
        }
    }
    let id = scorer.score_matrix(id_test)?;
    let ood = scorer.score_matrix(ood_test)?;
    let mut report = auroc(&id, &ood)?;
    report.method_tag = scorer.tag();
    Ok(report)
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.first() != Some(&1.0) {
        return Err(FreError::InvalidArgument(
            "sweep fractions must start at 1.0".into(),
        ));
    }
    if let Some(&f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(FreError::FractionOutOfRange(f));
    }
    if fractions.windows(2).any(|w| w[1] >= w[0]) {
        return Err(FreError::InvalidArgument(
            "sweep fractions must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Refits on stratified subsamples of `train` and evaluates each fit.
///
/// `fit` is called once per fraction with the subsampled training matrix
/// and must apply the same configuration every time. Every fraction uses
/// `seed` for its subsample, so reruns are identical.
pub fn robustness_sweep<S, F>(
    train: &FeatureMatrix,
    id_test: &FeatureMatrix,
    ood_test: &FeatureMatrix,
    fractions: &[f64],
    seed: u64,
    fit: F,
) -> Result<SweepReport>
where
    S: Scorer + Send,
    F: Fn(&FeatureMatrix) -> Result<S> + Sync + Send,
{
    check_fractions(fractions)?;
    let aurocs = par::try_map_range(fractions.len(), |i| {
        let sub = subsample(train, fractions[i], seed)?;
        let scorer = fit(&sub)?;
        Ok::<_, FreError>(run_experiment(&scorer, id_test, ood_test)?.auroc)
    })?;
    Ok(SweepReport {
        fractions: fractions.to_vec(),
        aurocs,
        seed,
    })
}

fn csv_write(path: &Path, header: [&str; 2], rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let err = |e: csv::Error| FreError::BadScoreFile(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| FreError::io(path, e))
}

/// `fpr,tpr` CSV.
pub fn write_roc_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    csv_write(
        path.as_ref(),
        ["fpr", "tpr"],
        report.roc_points.iter().copied(),
    )
}

/// `fraction,auroc` CSV.
pub fn write_sweep_csv(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    csv_write(
        path.as_ref(),
        ["fraction", "auroc"],
        report
            .fractions
            .iter()
            .copied()
            .zip(report.aurocs.iter().copied()),
    )
}
