//! Ridge training checked against a dense normal-equations solve done with
//! nalgebra's LU decomposition, on independently standardized data.

use nalgebra::{DMatrix, DVector};
use orbit_audio::classifier::{majority_vote, ridge_gradient_norm, train_ridge, train_ridge_with};
use orbit_audio::par::Exec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(n: usize, d: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<usize> = (0..n)
        .map(|i| if i < classes { i } else { rng.gen_range(0..classes) })
        .collect();
    let x = y
        .iter()
        .map(|&c| {
            (0..d)
                .map(|f| rng.gen_range(-1.0..1.0) * (1.0 + f as f64 * 0.1) + (c * f % 3) as f64)
                .collect()
        })
        .collect();
    (x, y)
}

struct Oracle {
    weights: DMatrix<f64>,
    bias: Vec<f64>,
}

fn oracle(x: &[Vec<f64>], y: &[usize], classes: usize, lambda: f64) -> Oracle {
    let n = x.len();
    let d = x[0].len();
    let raw = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let mut z = raw.clone();
    for j in 0..d {
        let col = raw.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            z[(i, j)] = (raw[(i, j)] - mean) / sd;
        }
    }
    let targets = DMatrix::from_fn(n, classes, |i, k| if y[i] == k { 1.0 } else { -1.0 });
    let gram = z.transpose() * &z + DMatrix::identity(d, d) * lambda;
    let rhs = z.transpose() * &targets;
    let weights = gram.lu().solve(&rhs).expect("regularized Gram matrix is invertible");
    let bias = (0..classes).map(|k| targets.column(k).sum() / n as f64).collect();
    Oracle { weights, bias }
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

fn check_against_oracle(n: usize, d: usize, classes: usize, lambda: f64, seed: u64) {
    let (x, y) = random_problem(n, d, classes, seed);
    let model = train_ridge(&x, &y, classes, lambda).unwrap();
    let o = oracle(&x, &y, classes, lambda);
    let scale = o.weights.amax();
    for f in 0..d {
        for k in 0..classes {
            let e = rel_err(model.weight(f, k), o.weights[(f, k)], scale);
            assert!(e <= 1e-8, "weight ({f},{k}) off by {e:e} relative");
        }
    }
    for k in 0..classes {
        assert!((model.bias[k] - o.bias[k]).abs() <= 1e-12);
    }
    let (grad, gscale) = ridge_gradient_norm(&model, &x, &y).unwrap();
    assert!(grad <= 1e-6 * gscale, "gradient {grad:e} against scale {gscale:e}");
}

#[test]
fn matches_oracle_on_tall_systems() {
    check_against_oracle(120, 30, 4, 1.0, 1);
    check_against_oracle(300, 80, 10, 0.1, 2);
}

#[test]
fn matches_oracle_when_dimensions_exceed_samples() {
    check_against_oracle(40, 90, 3, 5.0, 3);
}

#[test]
fn scores_match_oracle_predictions() {
    let (x, y) = random_problem(200, 20, 5, 9);
    let model = train_ridge(&x, &y, 5, 2.0).unwrap();
    let o = oracle(&x, &y, 5, 2.0);
    let (test, _) = random_problem(30, 20, 5, 10);
    for row in &test {
        let z = DVector::from_vec(model.standardize(row));
        let expected = o.weights.transpose() * z;
        let got = model.scores(row).unwrap();
        for k in 0..5 {
            assert!((got[k] - expected[k] - o.bias[k]).abs() <= 1e-8 * (1.0 + expected[k].abs()));
        }
    }
}

#[test]
fn execution_mode_does_not_change_the_model() {
    let (x, y) = random_problem(150, 40, 6, 4);
    let a = train_ridge_with(&x, &y, 6, 0.5, Exec::Sequential).unwrap();
    let b = train_ridge_with(&x, &y, 6, 0.5, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vote_ties_resolve_to_lowest_label() {
    assert_eq!(majority_vote(&[2, 1, 2, 1]).unwrap(), 1);
    assert_eq!(majority_vote(&[0, 2, 2]).unwrap(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_systems_match_oracle(
        n in 10usize..80,
        d in 1usize..25,
        classes in 2usize..5,
        log_lambda in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(n >= classes);
        check_against_oracle(n, d, classes, 10f64.powf(log_lambda), seed);
    }
}
