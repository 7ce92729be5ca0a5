use fre_core::linear::{fit_pca_components, singular_values};
use fre_core::{fit_pca, numerical_rank, FeatureMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{covariance_oracle, gaussian_matrix, norm};

#[test]
fn matches_covariance_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let d = rng.random_range(2..=12);
        let rows = rng.random_range(d + 2..=120);
        let train = gaussian_matrix(&mut rng, rows, d, true);
        let model = fit_pca(&train, 0.9).unwrap();
        let (m, oracle) = covariance_oracle(&train, 0.9);
        assert_eq!(model.n_components(), m);
        for _ in 0..20 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = model.fre_score(&q).unwrap();
            assert!((a - oracle(&q)).abs() < 1e-8);
        }
    }
}

#[test]
fn full_rank_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train = gaussian_matrix(&mut rng, 40, 6, false);
    let model = fit_pca(&train, 1.0).unwrap();
    assert_eq!(model.n_components(), 6);
    let x: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
    let back = model.reconstruct(&x).unwrap();
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn gaussian_square_matrix_has_full_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = gaussian_matrix(&mut rng, 10, 10, false);
    let s = singular_values(&m);
    let tol = 10.0 * f64::from(f32::EPSILON) * s[0];
    assert!(s.iter().all(|&v| v > tol));
    assert_eq!(numerical_rank(&m), 10);
}

#[test]
fn low_rank_product_survives_f32_storage() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
    let rows: Vec<Vec<f64>> = (a * b)
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    let m = FeatureMatrix::from_rows_f64(&rows, None).unwrap();
    assert_eq!(numerical_rank(&m), 3);
}

fn arb_matrix() -> impl Strategy<Value = (FeatureMatrix, u64)> {
    (2usize..8, 3usize..30, any::<u64>()).prop_map(|(d, extra, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (gaussian_matrix(&mut rng, d + extra, d, true), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_idempotent((train, seed) in arb_matrix(), retention in 0.5f64..1.0) {
        let model = fit_pca(&train, retention).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x: Vec<f64> = (0..train.cols()).map(|_| rng.random_range(-4.0..4.0)).collect();
        let once = model.reconstruct(&x).unwrap();
        let twice = model.reconstruct(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn pythagoras((train, seed) in arb_matrix(), retention in 0.3f64..1.0) {
        let model = fit_pca(&train, retention).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let x: Vec<f64> = (0..train.cols()).map(|_| rng.random_range(-4.0..4.0)).collect();
        let c: Vec<f64> = x.iter().zip(model.mean()).map(|(a, b)| a - b).collect();
        let z = model.transform(&x).unwrap();
        // squared form; the square-root form loses digits to cancellation
        // when the residual is tiny
        let fre = model.fre_score(&x).unwrap();
        prop_assert!((norm(&c).powi(2) - norm(&z).powi(2) - fre * fre).abs() < 1e-8);
    }

    #[test]
    fn inverse_then_transform_is_identity((train, seed) in arb_matrix()) {
        let model = fit_pca(&train, 0.99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let z: Vec<f64> = (0..model.n_components()).map(|_| rng.random_range(-4.0..4.0)).collect();
        let x = model.inverse_transform(&z).unwrap();
        let back = model.transform(&x).unwrap();
        for (a, b) in z.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        // a point built inside the subspace has no residual
        prop_assert!(model.fre_score(&x).unwrap() < 1e-8);
        let zero = model.inverse_transform(&vec![0.0; model.n_components()]).unwrap();
        prop_assert_eq!(zero.as_slice(), model.mean());
    }

    #[test]
    fn more_components_never_increase_fre((train, seed) in arb_matrix()) {
        let full = fit_pca_components(&train, train.cols()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let x: Vec<f64> = (0..train.cols()).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut prev = f64::INFINITY;
        for k in 0..=full.n_components() {
            let s = full.truncated(k).fre_score(&x).unwrap();
            prop_assert!(s <= prev + 1e-12);
            prev = s;
        }
    }

    #[test]
    fn spectrum_invariants((train, _seed) in arb_matrix()) {
        let model = fit_pca_components(&train, usize::MAX).unwrap();
        let r = model.explained_variance_ratio();
        prop_assert!(r.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let s = model.singular_values();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&v| v >= 0.0));
        let c = model.components();
        let gram = c * c.transpose();
        prop_assert!((gram - DMatrix::identity(c.nrows(), c.nrows())).amax() < 1e-10);
    }

    #[test]
    fn full_retention_reconstructs_training_rows((train, _seed) in arb_matrix()) {
        let model = fit_pca(&train, 1.0).unwrap();
        for i in 0..train.rows() {
            let x = train.row_f64(i);
            prop_assert!(model.fre_score(&x).unwrap() <= 1e-6 * norm(&x).max(1.0));
        }
    }
}

#[test]
fn thin_data_full_retention() {
    // fewer rows than features: the centered rank is M - 1
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = gaussian_matrix(&mut rng, 6, 15, false);
    let model = fit_pca(&train, 1.0).unwrap();
    assert_eq!(model.n_components(), 5);
    for i in 0..train.rows() {
        let x = train.row_f64(i);
        assert!(model.fre_score(&x).unwrap() <= 1e-6 * norm(&x));
    }
}
