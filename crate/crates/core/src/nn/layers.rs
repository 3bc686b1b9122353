//! Trainable kernels with hand-written backward passes.

use rand::Rng as _;

use super::matrix::{matmul, Layout, Matrix};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

impl Dense {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization for weight and bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Matrix::from_vec(outputs, inputs, weight).unwrap(),
            bias,
        }
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::DimensionMismatch(format!(
                "bias of {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.cols()
            )));
        }
        let mut y = matmul(x, Layout::Normal, &self.weight, Layout::Transposed)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> Result<DenseGrads> {
        if dy.cols() != self.outputs() || dy.rows() != x.rows() {
            return Err(Error::DimensionMismatch("dense backward shapes".into()));
        }
        let weight = matmul(dy, Layout::Transposed, x, Layout::Normal)?.into_data();
        let mut bias = vec![0.0; self.outputs()];
        for r in 0..dy.rows() {
            for (b, g) in bias.iter_mut().zip(dy.row(r)) {
                *b += g;
            }
        }
        let input = matmul(dy, Layout::Normal, &self.weight, Layout::Normal)?;
        Ok(DenseGrads {
            weight,
            bias,
            input,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight kept by the running statistics at each update.
    pub momentum: f64,
    pub epsilon: f64,
}

/// Batch mean and biased variance per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub input: Matrix,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.features() {
            return Err(Error::DimensionMismatch(format!(
                "batch norm over {} features, got {}",
                self.features(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Normalizes by batch statistics. Running statistics are not touched;
    /// pass the returned stats to [`BatchNorm::update_running`].
    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache, BatchStats)> {
        self.check(x)?;
        let (n, f) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();

        let mut normalized = Matrix::zeros(n, f);
        let mut out = Matrix::zeros(n, f);
        for r in 0..n {
            for c in 0..f {
                let xh = (x.get(r, c) - mean[c]) * inv_std[c];
                normalized.row_mut(r)[c] = xh;
                out.row_mut(r)[c] = self.gamma[c] * xh + self.beta[c];
            }
        }
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
            },
            BatchStats {
                mean,
                var,
                count: n,
            },
        ))
    }

    /// Blends batch statistics into the running estimates. The running
    /// variance uses the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let correction = stats.count as f64 / (stats.count as f64 - 1.0);
        for c in 0..self.features() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * stats.var[c] * correction;
        }
    }

    /// Normalizes by the running statistics.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let scale: Vec<f64> = (0..self.features())
            .map(|c| self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt())
            .collect();
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[c]) * scale[c] + self.beta[c];
            }
        }
        Ok(out)
    }

    /// Backward pass for a train-mode forward.
    pub fn backward(&self, cache: &BatchNormCache, dy: &Matrix) -> Result<BatchNormGrads> {
        let (n, f) = (dy.rows(), dy.cols());
        if n != cache.normalized.rows() || f != self.features() {
            return Err(Error::DimensionMismatch("batch norm backward shapes".into()));
        }
        let mut gamma = vec![0.0; f];
        let mut beta = vec![0.0; f];
        for r in 0..n {
            for c in 0..f {
                let g = dy.get(r, c);
                gamma[c] += g * cache.normalized.get(r, c);
                beta[c] += g;
            }
        }
        // dx = inv_std / n * (n * dxh - sum(dxh) - xh * sum(dxh * xh)), dxh = dy * gamma
        let mut input = Matrix::zeros(n, f);
        for r in 0..n {
            for c in 0..f {
                let dxh = dy.get(r, c) * self.gamma[c];
                let sum_dxh = beta[c] * self.gamma[c];
                let sum_dxh_xh = gamma[c] * self.gamma[c];
                input.row_mut(r)[c] = cache.inv_std[c] / n as f64
                    * (n as f64 * dxh - sum_dxh - cache.normalized.get(r, c) * sum_dxh_xh);
            }
        }
        Ok(BatchNormGrads { gamma, beta, input })
    }
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the forward input; zero at the kink.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy and its gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, classes) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::BadLabel { label, classes });
    }
    let mut loss = 0.0;
    let mut grad = softmax(logits);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad.row_mut(r)[label] -= 1.0;
    }
    grad.data_mut().iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, grad))
}
