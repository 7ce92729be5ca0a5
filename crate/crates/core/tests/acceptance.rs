//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances are pinned below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fre_core::eval::mann_whitney_auc;
use fre_core::kernel::fit_kpca_with_kernel;
use fre_core::{
    fit_bank, fit_kpca, fit_mahalanobis, fit_pca, generate_synthetic, load_bank, robustness_sweep,
    run_experiment, save_bank, score_bank, write_scores, BankConfig, FeatureMatrix, Kernel,
    KfreVariant, KpcaModel, Method, Mode, PreimageConfig, SyntheticSpec, DEFAULT_FRACTIONS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{
    brute_force_auc, covariance_oracle, gaussian_matrix, noisy_circle, norm, points, GramOracle,
};

const ORACLE_TOL: f64 = 1e-8;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const SELF_RECON_REL_TOL: f64 = 1e-6;
const PYTHAGORAS_TOL: f64 = 1e-8;
const LINEAR_KERNEL_TOL: f64 = 1e-6;
const PREIMAGE_BUDGET: Duration = Duration::from_secs(30);
const GRID_SLACK: f64 = 1e-3;
const SUBSPACE_FRE_MIN: f64 = 0.99;
const SUBSPACE_MAHALANOBIS_MIN: f64 = 0.95;
const NONLINEAR_MARGIN: f64 = 0.05;
const SWEEP_TOL: f64 = 0.01;
const SWEEP_BUDGET: Duration = Duration::from_secs(60);
const SEED: u64 = 2024;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let d = rng.random_range(2..=20);
        let rows = rng.random_range(d + 2..=200);
        let train = gaussian_matrix(&mut rng, rows, d, true);
        let retention = rng.random_range(0.5..0.999);
        let model = fit_pca(&train, retention).map_err(err)?;
        let (m, oracle) = covariance_oracle(&train, retention);
        if m != model.n_components() {
            return Err(format!(
                "instance {i}: m={} vs oracle m={m}",
                model.n_components()
            ));
        }
        for _ in 0..50 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            worst = worst.max((model.fre_score(&q).map_err(err)? - oracle(&q)).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!("max |FRE - oracle| = {worst:.2e} (tol {ORACLE_TOL:e}), {elapsed:.2?}"),
    )
}

fn reconstruction_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst_self: f64 = 0.0;
    for (rows, d) in [(100, 8), (30, 12), (8, 20), (200, 20)] {
        let train = gaussian_matrix(&mut rng, rows, d, true);
        let model = fit_pca(&train, 1.0).map_err(err)?;
        for i in 0..train.rows() {
            let x = train.row_f64(i);
            worst_self = worst_self.max(model.fre_score(&x).map_err(err)? / norm(&x));
        }
    }
    let train = gaussian_matrix(&mut rng, 150, 10, true);
    let model = fit_pca(&train, 0.9).map_err(err)?;
    let mut worst_pyth: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: Vec<f64> = x.iter().zip(model.mean()).map(|(a, b)| a - b).collect();
        let z = model.transform(&x).map_err(err)?;
        let fre = model.fre_score(&x).map_err(err)?;
        worst_pyth = worst_pyth.max((norm(&c).powi(2) - norm(&z).powi(2) - fre * fre).abs());
    }
    check(
        worst_self <= SELF_RECON_REL_TOL && worst_pyth <= PYTHAGORAS_TOL,
        format!("training-row FRE/||x|| <= {worst_self:.2e}, |  ||c||^2 - ||z||^2 - FRE^2 | <= {worst_pyth:.2e} over 1000 queries"),
    )
}

fn linear_kernel_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let train = gaussian_matrix(&mut rng, 50, 5, true);
    let pca = fit_pca(&train, 0.995).map_err(err)?;
    let kpca = fit_kpca_with_kernel(&train, 0.995, Kernel::Linear).map_err(err)?;
    let mut worst: f64 = 0.0;
    for i in 0..150 {
        let x = if i < 50 {
            train.row_f64(i)
        } else {
            (0..5).map(|_| rng.random_range(-5.0..5.0)).collect()
        };
        worst = worst
            .max((kpca.rkhs_residual(&x).map_err(err)? - pca.fre_score(&x).map_err(err)?).abs());
    }
    check(
        worst <= LINEAR_KERNEL_TOL && kpca.n_components() == pca.n_components(),
        format!(
            "m={}/{}, max |residual - FRE| = {worst:.2e}",
            kpca.n_components(),
            pca.n_components()
        ),
    )
}

fn preimage_sanity() -> Outcome {
    let start = Instant::now();
    let cfg = PreimageConfig::default();
    let p = vec![0.3, -1.2, 2.5];
    let single = KpcaModel::single_point(p.clone(), Kernel::Rbf { gamma: 0.7 }).map_err(err)?;
    for q in [
        [0.0, 0.0, 0.0],
        [0.3, -1.2, 2.5],
        [1.0, 1.0, 1.0],
        [-2.0, 0.5, 3.0],
    ] {
        let z = single.preimage(&q, &cfg).map_err(err)?.point;
        if z != p {
            return Err(format!("single-point model returned {z:?} for {q:?}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let train = noisy_circle(&mut rng, 150, 0.05);
    let model = fit_kpca(&train, 0.995, None, SEED).map_err(err)?;
    let oracle = GramOracle::new(points(&train), model.kernel());
    let mut lines = Vec::new();
    for angle in [0.4f64, 2.2, 3.7, 5.5] {
        let x = [1.3 * angle.cos(), 1.3 * angle.sin()];
        let pre = model.preimage(&x, &cfg).map_err(err)?;
        let w = oracle.weights(&x, model.n_components());
        let begin = oracle.objective(&w, &x);
        let end = oracle.objective(&w, &pre.point);
        let mut grid = f64::INFINITY;
        for i in 0..=160 {
            for j in 0..=160 {
                grid = grid.min(oracle.objective(
                    &w,
                    &[-1.6 + 0.02 * f64::from(i), -1.6 + 0.02 * f64::from(j)],
                ));
            }
        }
        if !(end < begin && end <= grid + GRID_SLACK) {
            return Err(format!(
                "angle {angle}: start {begin:.4}, end {end:.4}, grid min {grid:.4}"
            ));
        }
        lines.push(format!("{begin:.3}->{end:.3} (grid {grid:.3})"));
    }
    let elapsed = start.elapsed();
    check(
        elapsed < PREIMAGE_BUDGET,
        format!(
            "single-point exact; circle objectives {}; {elapsed:.2?}",
            lines.join(", ")
        ),
    )
}

fn auroc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    for i in 0..100 {
        let n_id = rng.random_range(1..=30);
        let n_ood = rng.random_range(1..=30);
        let levels = rng.random_range(2..=40);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| f64::from(rng.random_range(0..levels)) * 0.1)
                .collect()
        };
        let id = draw(n_id);
        let ood = draw(n_ood);
        let a = mann_whitney_auc(&id, &ood);
        if a != brute_force_auc(&id, &ood) {
            return Err(format!(
                "instance {i}: {a} vs brute force {}",
                brute_force_auc(&id, &ood)
            ));
        }
        if a + mann_whitney_auc(&ood, &id) != 1.0 {
            return Err(format!("instance {i}: antisymmetry off"));
        }
    }
    Ok("100 instances exact, antisymmetry exact".into())
}

fn synthetic_power() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::subspace(), SEED).map_err(err)?;
    let bank = fit_bank(
        &data.train,
        Mode::Global,
        Method::Pca,
        &BankConfig::default(),
    )
    .map_err(err)?;
    let fre = run_experiment(&bank, &data.id_test, &data.ood_test).map_err(err)?;
    let maha = run_experiment(
        &fit_mahalanobis(&data.train).map_err(err)?,
        &data.id_test,
        &data.ood_test,
    )
    .map_err(err)?;
    check(
        fre.auroc >= SUBSPACE_FRE_MIN
            && maha.auroc >= SUBSPACE_MAHALANOBIS_MIN
            && fre.n_id == 500
            && fre.n_ood == 500,
        format!(
            "FRE {:.4} (>= {SUBSPACE_FRE_MIN}), Mahalanobis {:.4} (>= {SUBSPACE_MAHALANOBIS_MIN})",
            fre.auroc, maha.auroc
        ),
    )
}

fn per_class_advantage() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::anisotropic_classes(), SEED).map_err(err)?;
    let cfg = BankConfig::default();
    let per = fit_bank(&data.train, Mode::PerClass, Method::Pca, &cfg).map_err(err)?;
    let global = fit_bank(&data.train, Mode::Global, Method::Pca, &cfg).map_err(err)?;
    let a = run_experiment(&per, &data.id_test, &data.ood_test)
        .map_err(err)?
        .auroc;
    let b = run_experiment(&global, &data.id_test, &data.ood_test)
        .map_err(err)?
        .auroc;
    let dims: Vec<usize> = per.models().values().map(|m| m.n_components()).collect();
    check(
        a >= b,
        format!(
            "per-class {a:.4} (m={dims:?}) vs global {b:.4} (m={})",
            global.models()[&0].n_components()
        ),
    )
}

fn nonlinear_advantage() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::circle(), SEED).map_err(err)?;
    let cfg = BankConfig::default();
    let kpca = fit_bank(&data.train, Mode::Global, Method::Kpca, &cfg).map_err(err)?;
    let pca = fit_bank(&data.train, Mode::Global, Method::Pca, &cfg).map_err(err)?;
    let k = run_experiment(&kpca, &data.id_test, &data.ood_test)
        .map_err(err)?
        .auroc;
    let l = run_experiment(&pca, &data.id_test, &data.ood_test)
        .map_err(err)?
        .auroc;
    // reported alongside, not gated: the default kFRE is the pre-image variant
    let rkhs = kpca.clone().with_kfre_variant(KfreVariant::Rkhs);
    let r = run_experiment(&rkhs, &data.id_test, &data.ood_test)
        .map_err(err)?
        .auroc;
    check(
        k - l >= NONLINEAR_MARGIN,
        format!(
            "kFRE {k:.4} vs FRE {l:.4}, margin {:.4} (>= {NONLINEAR_MARGIN}); kPCA m={}; rkhs-variant kFRE {r:.4}",
            k - l,
            kpca.models()[&0].n_components()
        ),
    )
}

fn robustness() -> Outcome {
    let start = Instant::now();
    let data = generate_synthetic(&SyntheticSpec::subspace(), SEED).map_err(err)?;
    let cfg = BankConfig::default();
    let fit = |m: &FeatureMatrix| fit_bank(m, Mode::Global, Method::Pca, &cfg);
    let sweep = robustness_sweep(
        &data.train,
        &data.id_test,
        &data.ood_test,
        &DEFAULT_FRACTIONS,
        SEED,
        fit,
    )
    .map_err(err)?;
    let elapsed = start.elapsed();
    let full = sweep.aurocs[0];
    let low = sweep.aurocs[sweep
        .fractions
        .iter()
        .position(|&f| f == 0.2)
        .ok_or("no 0.2 point")?];
    check(
        (full - low).abs() <= SWEEP_TOL && elapsed < SWEEP_BUDGET,
        format!(
            "AUROC {:?} at fractions {:?}; |full - 20%| = {:.4}; {elapsed:.2?}",
            sweep.aurocs,
            sweep.fractions,
            (full - low).abs()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let run = |tag: &str, method: Method| -> Result<(Vec<u8>, Vec<u8>), String> {
        let data = generate_synthetic(&SyntheticSpec::anisotropic_classes(), SEED).map_err(err)?;
        let bank =
            fit_bank(&data.train, Mode::PerClass, method, &BankConfig::default()).map_err(err)?;
        let model_path = dir.path().join(format!("{tag}.freb"));
        save_bank(&bank, &model_path).map_err(err)?;
        let scores = score_bank(&bank, &data.ood_test).map_err(err)?;
        let csv_path = dir.path().join(format!("{tag}.csv"));
        write_scores(&scores, &csv_path).map_err(err)?;
        let loaded = load_bank(&model_path).map_err(err)?;
        let again = score_bank(&loaded, &data.ood_test).map_err(err)?;
        let id_a = score_bank(&bank, &data.id_test).map_err(err)?;
        let id_b = score_bank(&loaded, &data.id_test).map_err(err)?;
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same(&scores.scores, &again.scores) || !same(&id_a.scores, &id_b.scores) {
            return Err(format!("{tag}: scores changed after save/load"));
        }
        Ok((
            std::fs::read(&model_path).map_err(err)?,
            std::fs::read(&csv_path).map_err(err)?,
        ))
    };
    for method in [Method::Pca, Method::Kpca] {
        let a = run(&format!("{method}-a"), method)?;
        let b = run(&format!("{method}-b"), method)?;
        if a != b {
            return Err(format!("{method}: repeated runs produced different files"));
        }
    }
    Ok(
        "pca and kpca: identical model and score files across runs; save/load scores bit-exact"
            .into(),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("reconstruction identities", reconstruction_identities),
        ("linear-kernel reduction", linear_kernel_reduction),
        ("pre-image sanity", preimage_sanity),
        ("AUROC correctness", auroc_correctness),
        ("synthetic OOD power", synthetic_power),
        ("per-class advantage", per_class_advantage),
        ("nonlinear advantage", nonlinear_advantage),
        ("robustness sweep", robustness),
        ("determinism and persistence", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
