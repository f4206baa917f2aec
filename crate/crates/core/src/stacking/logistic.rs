//! Multinomial logistic regression trained by full-batch gradient descent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_targets, log_priors, softmax, Matrix, StackError};
use crate::seed::rng_from_seed;
use crate::{ClassProbs, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-4,
            epochs: 500,
            lr: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Per-feature standardization: `(x - mean) / scale`.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `NUM_CLASSES x n_features`.
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> ClassProbs {
        let d = self.n_features();
        let z: Vec<f64> = (0..d).map(|j| (x[j] - self.mean[j]) / self.scale[j]).collect();
        let mut s = self.bias;
        for (c, sc) in s.iter_mut().enumerate() {
            *sc += dot(&self.weights[c * d..(c + 1) * d], &z);
        }
        softmax(&s)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<ClassProbs>, StackError> {
        if x.cols() != self.n_features() {
            return Err(StackError::Dimension(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.cols()
            )));
        }
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Penalized mean negative log-likelihood and its gradient.
///
/// `theta` holds the `NUM_CLASSES x d` weights row-major followed by the
/// `NUM_CLASSES` biases. The L2 term `l2/2 * |W|^2` excludes the biases.
pub fn logistic_objective(x: &Matrix, y: &[usize], l2: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let nw = NUM_CLASSES * d;
    assert_eq!(theta.len(), nw + NUM_CLASSES, "parameter vector length");
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let mut s = [0.0; NUM_CLASSES];
        for (c, sc) in s.iter_mut().enumerate() {
            *sc = dot(&theta[c * d..(c + 1) * d], row) + theta[nw + c];
        }
        let p = softmax(&s);
        loss -= p[y[i]].max(f64::MIN_POSITIVE).ln();
        for c in 0..NUM_CLASSES {
            let r = p[c] - if y[i] == c { 1.0 } else { 0.0 };
            for (g, &v) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                *g += r * v;
            }
            grad[nw + c] += r;
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    for k in 0..nw {
        loss += 0.5 * l2 * theta[k] * theta[k];
        grad[k] += l2 * theta[k];
    }
    (loss, grad)
}

fn standardize(x: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    let data = (0..n * d)
        .map(|k| (x.data()[k] - mean[k % d]) / scale[k % d])
        .collect();
    let z = Matrix::new(n, d, data).expect("same shape");
    (mean, scale, z)
}

/// Fits standardized multinomial logistic regression; biases start at the
/// class log-priors and weights at small seeded values.
pub fn train_logistic(x: &Matrix, y: &[usize], p: &LogisticParams) -> Result<LogisticModel, StackError> {
    check_targets(x, y)?;
    if !(p.lr > 0.0 && p.lr.is_finite()) || !(p.l2 >= 0.0 && p.l2.is_finite()) {
        return Err(StackError::Parameter(format!("lr {} / l2 {}", p.lr, p.l2)));
    }
    let d = x.cols();
    let nw = NUM_CLASSES * d;
    let (mean, scale, z) = standardize(x);
    let mut rng = rng_from_seed(p.seed);
    let mut theta: Vec<f64> = (0..nw).map(|_| rng.random_range(-1e-3..=1e-3)).collect();
    theta.extend(log_priors(y));
    for _ in 0..p.epochs {
        let (_, g) = logistic_objective(&z, y, p.l2, &theta);
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= p.lr * gi;
        }
    }
    let mut bias = [0.0; NUM_CLASSES];
    bias.copy_from_slice(&theta[nw..]);
    theta.truncate(nw);
    Ok(LogisticModel {
        mean,
        scale,
        weights: theta,
        bias,
    })
}
