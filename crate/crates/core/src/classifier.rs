//! One-vs-rest regularized least squares on standardized frame features,
//! plus frame-level prediction and majority voting.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::pooling::dot;

/// Dimensions whose training standard deviation falls below this (relative
/// to their magnitude) are dropped.
const MIN_SCALE: f64 = 1e-12;

/// Linear one-vs-rest scorer: `scores = W^T z + b` with `z` the standardized
/// input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Row-major, `feature_dim x class_count`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
    pub feature_dim: usize,
    pub class_count: usize,
    pub mean: Vec<f64>,
    /// Standard deviation per dimension; 0 marks a dropped dimension.
    pub scale: Vec<f64>,
}

impl RidgeModel {
    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.weights[feature * self.class_count + class]
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        let z = self.standardize(x);
        let mut s = self.bias.clone();
        for (f, zf) in z.iter().enumerate() {
            if *zf != 0.0 {
                let row = &self.weights[f * self.class_count..(f + 1) * self.class_count];
                for (sc, w) in s.iter_mut().zip(row) {
                    *sc += w * zf;
                }
            }
        }
        Ok(s)
    }

    pub fn dropped_dims(&self) -> usize {
        self.scale.iter().filter(|&&s| s == 0.0).count()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict_frame(model: &RidgeModel, x: &[f64]) -> Result<usize> {
    Ok(argmax(&model.scores(x)?))
}

/// Most frequent label; ties go to the lowest class index.
pub fn majority_vote(labels: &[usize]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::Empty("frame labels"));
    }
    let top = *labels.iter().max().unwrap();
    let mut counts = vec![0usize; top + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Standardized training data stored column-major (one vector per kept
/// feature) with the per-dimension statistics.
struct Standardized {
    columns: Vec<Vec<f64>>,
    kept: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize_columns<R: AsRef<[f64]>>(x: &[R], dim: usize) -> Standardized {
    let n = x.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in x {
        for ((s, v), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut scale: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let mut kept = Vec::with_capacity(dim);
    for f in 0..dim {
        if scale[f] <= MIN_SCALE * (1.0 + mean[f].abs()) {
            scale[f] = 0.0;
        } else {
            kept.push(f);
        }
    }
    if kept.len() < dim {
        warn!(
            "dropping {} constant feature dimension(s) out of {dim}",
            dim - kept.len()
        );
    }
    let columns = kept
        .iter()
        .map(|&f| x.iter().map(|r| (r.as_ref()[f] - mean[f]) / scale[f]).collect())
        .collect();
    Standardized {
        columns,
        kept,
        mean,
        scale,
    }
}

/// In-place Cholesky factorization of a symmetric positive-definite matrix
/// (row-major, lower triangle used).
fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Invariant(format!(
                "normal-equation matrix is not positive definite at pivot {j}"
            )));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` for every column of `b` (row-major `n x c`).
fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64], c: usize) {
    for col in 0..c {
        for i in 0..n {
            let mut s = b[i * c + col];
            for k in 0..i {
                s -= l[i * n + k] * b[k * c + col];
            }
            b[i * c + col] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i * c + col];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k * c + col];
            }
            b[i * c + col] = s / l[i * n + i];
        }
    }
}

/// `+1` for the true class, `-1` elsewhere.
fn one_hot(y: &[usize], classes: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn check_training<R: AsRef<[f64]>>(x: &[R], y: &[usize], class_count: usize, lambda: f64) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Empty("training frames"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} must be positive")));
    }
    let dim = x[0].as_ref().len();
    for row in x {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training features"));
        }
    }
    let mut seen = vec![false; class_count];
    for &l in y {
        if l >= class_count {
            return Err(Error::InvalidParameter(format!(
                "label {l} out of range for {class_count} classes"
            )));
        }
        seen[l] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidParameter(format!("class {c} has no training frames")));
    }
    Ok(dim)
}

/// Fits one-vs-rest ridge regression: standardize features, then solve
/// `(Z^T Z + lambda I) W = Z^T Y` with `Y` in `{-1, +1}`. The bias is the
/// mean target per class, which is the exact intercept because `Z` is
/// centered.
pub fn train_ridge<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[usize],
    class_count: usize,
    lambda: f64,
) -> Result<RidgeModel> {
    train_ridge_with(x, y, class_count, lambda, Exec::default())
}

pub fn train_ridge_with<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[usize],
    class_count: usize,
    lambda: f64,
    exec: Exec,
) -> Result<RidgeModel> {
    let dim = check_training(x, y, class_count, lambda)?;
    let st = standardize_columns(x, dim);
    let p = st.kept.len();
    let targets = one_hot(y, class_count);

    // Gram matrix, lower triangle, rows in parallel.
    let gram_rows = exec.map_range(p, |i| {
        (0..=i)
            .map(|j| dot(&st.columns[i], &st.columns[j]))
            .collect::<Vec<f64>>()
    });
    let mut a = vec![0.0; p * p];
    for (i, row) in gram_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[i * p + j] = v;
            a[j * p + i] = v;
        }
        a[i * p + i] += lambda;
    }
    let mut rhs = vec![0.0; p * class_count];
    let xty = exec.map_range(p, |i| {
        targets.iter().map(|t| dot(&st.columns[i], t)).collect::<Vec<f64>>()
    });
    for (i, row) in xty.iter().enumerate() {
        rhs[i * class_count..(i + 1) * class_count].copy_from_slice(row);
    }
    if p > 0 {
        cholesky(&mut a, p)?;
        cholesky_solve(&a, p, &mut rhs, class_count);
    }
    let mut weights = vec![0.0; dim * class_count];
    for (i, &f) in st.kept.iter().enumerate() {
        weights[f * class_count..(f + 1) * class_count].copy_from_slice(&rhs[i * class_count..(i + 1) * class_count]);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Invariant("ridge solve produced non-finite weights".into()));
    }
    let n = y.len() as f64;
    let bias = targets.iter().map(|t| t.iter().sum::<f64>() / n).collect();
    Ok(RidgeModel {
        weights,
        bias,
        lambda,
        feature_dim: dim,
        class_count,
        mean: st.mean,
        scale: st.scale,
    })
}

/// Gradient of `||Z W - Y||_F^2 + lambda ||W||_F^2` at the model's weights,
/// on the model's own standardization, with the Frobenius norm of `Z^T Y` as
/// the natural scale. Returns `(gradient norm, scale)`.
pub fn ridge_gradient_norm<R: AsRef<[f64]>>(model: &RidgeModel, x: &[R], y: &[usize]) -> Result<(f64, f64)> {
    let c = model.class_count;
    let targets = one_hot(y, c);
    let z: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r.as_ref())).collect();
    // residual R = Z W - Y (targets centered by the bias)
    let residual: Vec<Vec<f64>> = z
        .iter()
        .enumerate()
        .map(|(i, zi)| {
            (0..c)
                .map(|k| {
                    let mut s = 0.0;
                    for (f, v) in zi.iter().enumerate() {
                        s += v * model.weight(f, k);
                    }
                    s - targets[k][i]
                })
                .collect()
        })
        .collect();
    let mut grad_sq = 0.0;
    let mut scale_sq = 0.0;
    for f in 0..model.feature_dim {
        if model.scale[f] == 0.0 {
            continue;
        }
        for k in 0..c {
            let zr: f64 = z.iter().zip(&residual).map(|(zi, ri)| zi[f] * ri[k]).sum();
            let zy: f64 = z.iter().enumerate().map(|(i, zi)| zi[f] * targets[k][i]).sum();
            let g = 2.0 * (zr + model.lambda * model.weight(f, k));
            grad_sq += g * g;
            scale_sq += zy * zy;
        }
    }
    Ok((grad_sq.sqrt(), scale_sq.sqrt()))
}

/// Chooses lambda from `grid` by k-fold cross-validation over groups
/// (tracks), scoring frame error. Ties keep the smaller lambda.
pub fn select_lambda<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[usize],
    groups: &[usize],
    class_count: usize,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    if folds < 2 {
        return Err(Error::InvalidParameter(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of = |g: usize| ids.iter().position(|&x| x == g).unwrap() % folds;
    let assignment: Vec<usize> = groups.iter().map(|&g| fold_of(g)).collect();
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let mut wrong = 0usize;
        let mut total = 0usize;
        for f in 0..folds {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, &a) in assignment.iter().enumerate() {
                if a == f {
                    vx.push(x[i].as_ref());
                    vy.push(y[i]);
                } else {
                    tx.push(x[i].as_ref());
                    ty.push(y[i]);
                }
            }
            if vx.is_empty() {
                continue;
            }
            let model = match train_ridge(&tx, &ty, class_count, lambda) {
                Ok(m) => m,
                // a fold that loses a whole class cannot be scored
                Err(Error::InvalidParameter(_)) => continue,
                Err(e) => return Err(e),
            };
            for (xi, &yi) in vx.iter().zip(&vy) {
                total += 1;
                if predict_frame(&model, xi)? != yi {
                    wrong += 1;
                }
            }
        }
        if total > 0 {
            let err = wrong as f64 / total as f64;
            if err < best.0 {
                best = (err, lambda);
            }
        }
    }
    Ok(best.1)
}

/// `1e-3, 1e-2, ..., 1e3`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn separable_toy() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let y = vec![0, 1];
        let m = train_ridge(&x, &y, 2, 1e-9).unwrap();
        let s = m.scores(&x[0]).unwrap();
        assert!(s[0] > s[1]);
        assert_eq!(predict_frame(&m, &x[0]).unwrap(), 0);
        assert_eq!(predict_frame(&m, &x[1]).unwrap(), 1);
    }

    #[test]
    fn huge_lambda_collapses_to_priors() {
        let x = vec![vec![1.0, 0.3], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.2, 0.9]];
        let y = vec![0, 1, 1, 1];
        let m = train_ridge(&x, &y, 2, 1e12).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-10));
        let s = m.scores(&x[0]).unwrap();
        assert!((s[0] - (-0.5)).abs() < 1e-9);
        assert!((s[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn argmax_and_vote_rules() {
        assert_eq!(argmax(&[0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(majority_vote(&[2, 2, 5]).unwrap(), 2);
        assert_eq!(majority_vote(&[1, 3]).unwrap(), 1);
        let mut frames = vec![7; 81];
        frames.extend(std::iter::repeat_n(3, 80));
        assert_eq!(majority_vote(&frames).unwrap(), 7);
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn constant_dimensions_are_dropped() {
        let x = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0], vec![4.0, 5.0]];
        let y = vec![0, 0, 1, 1];
        let m = train_ridge(&x, &y, 2, 1.0).unwrap();
        assert_eq!(m.dropped_dims(), 1);
        assert_eq!(m.weight(1, 0), 0.0);
        assert_eq!(predict_frame(&m, &[4.0, 123.0]).unwrap(), 1);
    }

    #[test]
    fn training_errors() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(train_ridge(&x, &[0, 0], 2, 1.0).is_err());
        assert!(train_ridge(&x, &[0, 1], 2, 0.0).is_err());
        assert!(train_ridge(&[vec![f64::NAN], vec![1.0]], &[0, 1], 2, 1.0).is_err());
        assert!(train_ridge(&x, &[0], 2, 1.0).is_err());
        let m = train_ridge(&x, &[0, 1], 2, 1.0).unwrap();
        assert!(m.scores(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let m = train_ridge(&x, &y, 3, 0.7).unwrap();
        let (g, scale) = ridge_gradient_norm(&m, &x, &y).unwrap();
        assert!(g <= 1e-9 * scale, "{g} vs {scale}");
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c = rng.gen_range(0.01..100.0);
            let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
            assert_eq!(argmax(&s), argmax(&scaled));
        }
    }

    #[test]
    fn cross_validation_prefers_useful_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for g in 0..20 {
            let label = g % 2;
            for _ in 0..5 {
                let mut row: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                row[0] += if label == 0 { 2.0 } else { -2.0 };
                x.push(row);
                y.push(label);
                groups.push(g);
            }
        }
        let lambda = select_lambda(&x, &y, &groups, 2, &default_lambda_grid(), 5, 0).unwrap();
        assert!(default_lambda_grid().contains(&lambda));
        assert!(select_lambda(&x, &y, &groups, 2, &[], 5, 0).is_err());
    }

    #[test]
    fn sequential_and_parallel_training_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<usize> = (0..80).map(|i| i % 4).collect();
        let a = train_ridge_with(&x, &y, 4, 1.0, Exec::Sequential).unwrap();
        let b = train_ridge_with(&x, &y, 4, 1.0, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
