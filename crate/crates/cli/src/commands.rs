use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use fre_core::eval::{write_roc_csv, write_sweep_csv};
use fre_core::{
    auroc, fit_bank, fit_mahalanobis, fit_pca, generate_synthetic, load_detector, numerical_rank,
    read_features, read_scores, robustness_sweep, save_detector, softmax_scores, write_features,
    write_scores, BankConfig, Detector, FeatureMatrix, FreError, Kernel, KfreVariant, Method, Mode,
    PreimageConfig, Scorer, SubspaceModel, SyntheticSpec,
};

use crate::{FitArgs, MethodArg, ModeArg, SynthKind};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or invalid input; exit code 2.
    Usage(String),
    /// Failure during computation or I/O; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<FreError> for CliError {
    fn from(e: FreError) -> Self {
        use FreError::*;
        match e {
            MissingLabels => CliError::Usage(
                "training file has no labels; per-class fitting needs them (use --mode global)"
                    .into(),
            ),
            BadMagic { .. }
            | UnsupportedDtype(_)
            | BadHeader(_)
            | Truncated { .. }
            | EmptyMatrix { .. }
            | NonFinite { .. }
            | LabelLengthMismatch { .. }
            | InvalidLabel { .. }
            | TrailingData(_)
            | BadScoreFile(_)
            | DimensionMismatch { .. }
            | InvalidArgument(_)
            | FractionOutOfRange(_)
            | TooFewSamples { .. }
            | TooManyRows(..)
            | ClassTooSmall { .. }
            | VersionMismatch { .. }
            | CorruptedModel(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn input_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn output_file(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Usage(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ if path.is_dir() => Err(CliError::Usage(format!(
            "output path {} is a directory",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn resolve_mode(arg: ModeArg, train: &FeatureMatrix) -> Mode {
    match arg {
        ModeArg::Auto => Mode::default_for(train),
        ModeArg::Global => Mode::Global,
        ModeArg::PerClass => Mode::PerClass,
    }
}

fn bank_config(args: &FitArgs) -> BankConfig {
    BankConfig {
        variance_retention: args.variance,
        gamma: args.gamma,
        kfre_variant: args.kfre_variant.into(),
        preimage: PreimageConfig {
            max_iter: args.max_iter,
            tol: args.tol,
        },
        seed: args.seed,
    }
}

fn check_fit_args(args: &FitArgs, train: &FeatureMatrix) -> Result<Mode, CliError> {
    let mode = resolve_mode(args.mode, train);
    if train.labels().is_none() {
        if args.mode == ModeArg::PerClass {
            return Err(CliError::Usage(
                "--mode per-class needs a labelled training file; this one has no labels (use --mode global)".into(),
            ));
        }
        if args.method == MethodArg::Mahalanobis {
            return Err(CliError::Usage(
                "--method mahalanobis needs a labelled training file".into(),
            ));
        }
    }
    if args.max_iter == 0 {
        return Err(CliError::Usage("--max-iter must be at least 1".into()));
    }
    Ok(mode)
}

fn fit_detector(train: &FeatureMatrix, mode: Mode, args: &FitArgs) -> fre_core::Result<Detector> {
    let method = match args.method {
        MethodArg::Mahalanobis => {
            return Ok(Detector::Mahalanobis {
                model: fit_mahalanobis(train)?,
                provenance: BTreeMap::new(),
            })
        }
        MethodArg::Pca => Method::Pca,
        MethodArg::Kpca => Method::Kpca,
    };
    Ok(Detector::Bank(fit_bank(
        train,
        mode,
        method,
        &bank_config(args),
    )?))
}

pub fn fit(train_path: &Path, out: &Path, args: &FitArgs, tags: &[(String, String)]) -> CliResult {
    input_file(train_path)?;
    output_file(out)?;
    let train = read_features(train_path)?;
    let mode = check_fit_args(args, &train)?;
    log::info!(
        "fitting on {} rows x {} features",
        train.rows(),
        train.cols()
    );
    let mut detector = fit_detector(&train, mode, args)?;

    let provenance = match &mut detector {
        Detector::Bank(b) => &mut b.provenance,
        Detector::Mahalanobis { provenance, .. } => provenance,
    };
    provenance.insert("train_file".into(), train_path.display().to_string());
    provenance.insert("train_rows".into(), train.rows().to_string());
    provenance.insert("seed".into(), args.seed.to_string());
    for (k, v) in tags {
        provenance.insert(k.clone(), v.clone());
    }
    save_detector(&detector, out)?;

    println!(
        "model {} (d={}, rows={})",
        detector.tag(),
        train.cols(),
        train.rows()
    );
    match &detector {
        Detector::Bank(bank) => {
            let cfg = bank.config();
            let gamma = cfg
                .gamma
                .map_or("median heuristic".to_string(), |g| g.to_string());
            println!(
                "variance_retention={} seed={} gamma={gamma} kfre_variant={} max_iter={} tol={}",
                cfg.variance_retention,
                cfg.seed,
                cfg.kfre_variant,
                cfg.preimage.max_iter,
                cfg.preimage.tol
            );
            for (class, model) in bank.models() {
                let extra = match model {
                    SubspaceModel::Kpca(k) => match k.kernel() {
                        Kernel::Rbf { gamma } => format!(" gamma={gamma}"),
                        Kernel::Linear => " kernel=linear".to_string(),
                    },
                    SubspaceModel::Pca(_) => String::new(),
                };
                println!(
                    "class {class}: m={} retained={:.6}{extra}",
                    model.n_components(),
                    model.retained()
                );
            }
        }
        Detector::Mahalanobis { model, .. } => {
            println!(
                "classes={} ridge={:e}",
                model.classes().len(),
                model.ridge()
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn score(
    model_path: &Path,
    input: &Path,
    out: &Path,
    variant: Option<KfreVariant>,
) -> CliResult {
    input_file(model_path)?;
    input_file(input)?;
    output_file(out)?;
    let mut detector = load_detector(model_path)?;
    if let Some(v) = variant {
        detector = match detector {
            Detector::Bank(b) if b.method() == Method::Kpca => {
                Detector::Bank(b.with_kfre_variant(v))
            }
            _ => {
                return Err(CliError::Usage(
                    "--kfre-variant only applies to kpca models".into(),
                ))
            }
        };
    }
    let features = read_features(input)?;
    if features.cols() != detector.dim() {
        return Err(CliError::Usage(format!(
            "input has {} features but the model expects {}",
            features.cols(),
            detector.dim()
        )));
    }
    let scores = detector.score_matrix(&features)?;
    write_scores(&scores, out)?;
    println!(
        "scored {} rows with {}; wrote {}",
        scores.len(),
        scores.tag,
        out.display()
    );
    Ok(())
}

pub fn score_softmax(input: &Path, out: &Path) -> CliResult {
    input_file(input)?;
    output_file(out)?;
    let logits = read_features(input)?;
    let scores = softmax_scores(&logits)?;
    write_scores(&scores, out)?;
    println!(
        "scored {} rows with {}; wrote {}",
        scores.len(),
        scores.tag,
        out.display()
    );
    Ok(())
}

pub fn eval(id: &Path, ood: &Path, roc: Option<&Path>) -> CliResult {
    input_file(id)?;
    input_file(ood)?;
    if let Some(r) = roc {
        output_file(r)?;
    }
    let report = auroc(&read_scores(id)?, &read_scores(ood)?)?;
    if let Some(r) = roc {
        write_roc_csv(&report, r)?;
    }
    println!("{}", report.summary());
    Ok(())
}

pub fn rank(input: &Path, variance: f64) -> CliResult {
    input_file(input)?;
    let m = read_features(input)?;
    let r = numerical_rank(&m);
    let header = format!("With {}% PCA", variance * 100.0);
    let pca = if m.rows() >= 2 {
        fit_pca(&m, variance).map(|p| p.n_components().to_string())
    } else {
        Ok("-".to_string())
    };
    let pca = match pca {
        Ok(v) => v,
        Err(FreError::ZeroVariance) => "0".to_string(),
        Err(e) => return Err(e.into()),
    };
    println!("{:<10} {:<8} {header}", "Dimension", "Rank");
    println!("{:<10} {:<8} {pca}", m.cols(), r);
    Ok(())
}

pub fn sweep(
    train: &Path,
    id: &Path,
    ood: &Path,
    fractions: &[f64],
    out: &Path,
    args: &FitArgs,
) -> CliResult {
    for p in [train, id, ood] {
        input_file(p)?;
    }
    output_file(out)?;
    let train_m = read_features(train)?;
    let mode = check_fit_args(args, &train_m)?;
    let id_m = read_features(id)?;
    let ood_m = read_features(ood)?;
    let report = robustness_sweep(&train_m, &id_m, &ood_m, fractions, args.seed, |sub| {
        fit_detector(sub, mode, args)
    })?;
    write_sweep_csv(&report, out)?;
    for (f, a) in report.fractions.iter().zip(&report.aurocs) {
        println!("fraction={f} auroc={a:?}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn synth(kind: SynthKind, dir: &Path, seed: u64) -> CliResult {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    let spec = match kind {
        SynthKind::Subspace => SyntheticSpec::subspace(),
        SynthKind::Anisotropic => SyntheticSpec::anisotropic_classes(),
        SynthKind::Circle => SyntheticSpec::circle(),
    };
    let data = generate_synthetic(&spec, seed)?;
    for (name, m) in [
        ("train", &data.train),
        ("id", &data.id_test),
        ("ood", &data.ood_test),
    ] {
        let path = dir.join(format!("{name}.fmx"));
        write_features(m, &path)?;
        println!("wrote {} ({} x {})", path.display(), m.rows(), m.cols());
    }
    Ok(())
}
