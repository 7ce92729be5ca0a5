//! `fre`: fit, score and evaluate feature reconstruction error detectors on
//! FMX feature files.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fre_core::{KfreVariant, DEFAULT_FRACTIONS, DEFAULT_VARIANCE_RETENTION};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "fre",
    version,
    about = "Feature reconstruction error OOD detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a detector on a training FMX file and write a FREB model.
    Fit {
        /// Training features (FMX).
        #[arg(long)]
        train: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Extra provenance entries stored in the model, as key=value.
        #[arg(long = "tag", value_parser = parse_tag)]
        tags: Vec<(String, String)>,
    },
    /// Score an FMX file with a saved model and write a score CSV.
    Score {
        /// Model file written by `fit` (not needed with --softmax).
        #[arg(long, required_unless_present = "softmax")]
        model: Option<PathBuf>,
        /// Features (or logits with --softmax) to score.
        #[arg(long)]
        input: PathBuf,
        /// Output score CSV.
        #[arg(long)]
        out: PathBuf,
        /// Override the kFRE variant stored in a kernel model.
        #[arg(long, value_enum)]
        kfre_variant: Option<VariantArg>,
        /// Treat the input as logits and emit 1 - max softmax probability.
        #[arg(long, conflicts_with_all = ["model", "kfre_variant"])]
        softmax: bool,
    },
    /// AUROC of two score CSVs (OOD is the positive class).
    Eval {
        /// In-distribution scores.
        #[arg(long)]
        id: PathBuf,
        /// Out-of-distribution scores.
        #[arg(long)]
        ood: PathBuf,
        /// Optional ROC curve output (fpr,tpr).
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Feature dimension, numerical rank and PCA component count.
    Rank {
        /// Features (FMX).
        #[arg(long)]
        input: PathBuf,
        /// Variance retention for the PCA column.
        #[arg(long, default_value_t = DEFAULT_VARIANCE_RETENTION, value_parser = parse_retention)]
        variance: f64,
    },
    /// Refit on stratified subsamples of the training set and report AUROC.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        /// Training fractions, starting at 1.0 and strictly decreasing.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FRACTIONS.to_vec())]
        fractions: Vec<f64>,
        /// Output CSV (fraction,auroc).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Write a synthetic train / id / ood triple of FMX files.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        /// Directory receiving train.fmx, id.fmx and ood.fmx.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// auto = per-class when the training file has labels, else global.
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Pca)]
    method: MethodArg,
    /// Fraction of variance (or kernel eigenvalue mass) to retain, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_VARIANCE_RETENTION, value_parser = parse_retention)]
    variance: f64,
    /// RBF width; median heuristic when absent.
    #[arg(long, value_parser = parse_positive)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = VariantArg::Preimage)]
    kfre_variant: VariantArg,
    /// Pre-image iteration cap.
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Pre-image relative step tolerance.
    #[arg(long, default_value_t = 1e-6, value_parser = parse_positive)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Auto,
    Global,
    PerClass,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Pca,
    Kpca,
    Mahalanobis,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VariantArg {
    Preimage,
    Rkhs,
}

impl From<VariantArg> for KfreVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Preimage => KfreVariant::Preimage,
            VariantArg::Rkhs => KfreVariant::Rkhs,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SynthKind {
    Subspace,
    Anisotropic,
    Circle,
}

fn parse_retention(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a positive number"))
    }
}

fn parse_tag(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            train,
            out,
            fit,
            tags,
        } => commands::fit(&train, &out, &fit, &tags),
        Command::Score {
            model,
            input,
            out,
            kfre_variant,
            softmax,
        } => {
            if softmax {
                commands::score_softmax(&input, &out)
            } else {
                let model = model.expect("clap enforces --model without --softmax");
                commands::score(&model, &input, &out, kfre_variant.map(Into::into))
            }
        }
        Command::Eval { id, ood, roc } => commands::eval(&id, &ood, roc.as_deref()),
        Command::Rank { input, variance } => commands::rank(&input, variance),
        Command::Sweep {
            train,
            id,
            ood,
            fractions,
            out,
            fit,
        } => commands::sweep(&train, &id, &ood, &fractions, &out, &fit),
        Command::Synth {
            kind,
            out_dir,
            seed,
        } => commands::synth(kind, &out_dir, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
