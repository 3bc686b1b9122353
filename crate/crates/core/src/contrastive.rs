//! Cosine similarity and the NT-Xent contrastive loss with its exact gradient.
//!
//! A batch holds `2N` embeddings where indices `(2k, 2k + 1)` are the two
//! augmented views of lesion `k`. For anchor `i` with positive `j`,
//!
//! ```text
//! l(i, j) = -log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )
//! ```
//!
//! with `s` the cosine similarity. The batch loss is the mean of `l` over all
//! `2N` ordered positive pairs, i.e. both `(i, j)` and `(j, i)`.

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::ZeroVector(0));
    }
    if nb == 0.0 {
        return Err(Error::ZeroVector(1));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Index of the positive partner of `i`.
#[inline]
pub fn partner(i: usize) -> usize {
    i ^ 1
}

/// `2N` embeddings of dimension `dim`, stored row-major, plus temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    dim: usize,
    values: Vec<f64>,
    temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(embeddings: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        let dim = embeddings.first().map_or(0, Vec::len);
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::DimensionMismatch("ragged embeddings".into()));
        }
        Self::from_flat(embeddings.into_iter().flatten().collect(), dim, temperature)
    }

    pub fn from_flat(values: Vec<f64>, dim: usize, temperature: f64) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of {dim}",
                values.len()
            )));
        }
        let count = values.len() / dim;
        if count < 2 || count % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "a contrastive batch needs an even number >= 2 of embeddings, got {count}"
            )));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite embedding value at {i}")));
        }
        Ok(Self {
            dim,
            values,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn norms(&self) -> Result<Vec<f64>> {
        (0..self.len())
            .map(|i| {
                let n = norm(self.embedding(i));
                if n == 0.0 {
                    Err(Error::ZeroVector(i))
                } else {
                    Ok(n)
                }
            })
            .collect()
    }

    /// Full `2N x 2N` cosine similarity matrix, row-major.
    pub fn similarity_matrix(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let norms = self.norms()?;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for k in i..n {
                let v = (dot(self.embedding(i), self.embedding(k)) / (norms[i] * norms[k])).clamp(-1.0, 1.0);
                s[i * n + k] = v;
                s[k * n + i] = v;
            }
        }
        Ok(s)
    }
}

/// Loss for anchor `i` against positive `j`, given row `i` of the similarity
/// matrix. Uses max-subtraction inside the log-sum-exp.
pub fn pair_loss_from_similarities(row: &[f64], i: usize, j: usize, temperature: f64) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &s)| s / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &s)| (s / temperature - max).exp())
        .sum();
    let loss = max + sum.ln() - row[j] / temperature;
    loss.max(0.0)
}

pub fn nt_xent_pair_loss(batch: &ContrastiveBatch, i: usize, j: usize) -> Result<f64> {
    let n = batch.len();
    if i >= n || j >= n || i == j {
        return Err(Error::InvalidConfig(format!("({i}, {j}) is not a pair in a batch of {n}")));
    }
    let norms = batch.norms()?;
    let row: Vec<f64> = (0..n)
        .map(|k| (dot(batch.embedding(i), batch.embedding(k)) / (norms[i] * norms[k])).clamp(-1.0, 1.0))
        .collect();
    Ok(pair_loss_from_similarities(&row, i, j, batch.temperature))
}

pub fn nt_xent_batch_loss(batch: &ContrastiveBatch) -> Result<f64> {
    let n = batch.len();
    let s = batch.similarity_matrix()?;
    let total: f64 = (0..n)
        .map(|i| pair_loss_from_similarities(&s[i * n..(i + 1) * n], i, partner(i), batch.temperature))
        .sum();
    Ok(total / n as f64)
}

/// Batch loss and its gradient with respect to every embedding (row-major,
/// same layout as the batch).
pub fn nt_xent_loss_and_gradient(batch: &ContrastiveBatch) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    let dim = batch.dim;
    let tau = batch.temperature;
    let norms = batch.norms()?;
    let s = batch.similarity_matrix()?;

    // g[i][k] = dL/ds_ik as seen from anchor row i.
    let mut g = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let j = partner(i);
        loss += pair_loss_from_similarities(row, i, j, tau);
        let max = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] / tau - max).exp()).sum();
        for k in (0..n).filter(|&k| k != i) {
            let p = (row[k] / tau - max).exp() / z;
            let target = if k == j { 1.0 } else { 0.0 };
            g[i * n + k] = (p - target) / (tau * n as f64);
        }
    }
    loss /= n as f64;

    // ds_ik/dz_i = (u_k - s_ik u_i) / |z_i|, with u the unit vectors.
    let unit: Vec<f64> = (0..n)
        .flat_map(|i| {
            let n = norms[i];
            batch.embedding(i).iter().map(move |v| v / n)
        })
        .collect();
    let u = |i: usize| &unit[i * dim..(i + 1) * dim];
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        for k in 0..n {
            if k == i {
                continue;
            }
            let coeff = g[i * n + k] + g[k * n + i];
            if coeff == 0.0 {
                continue;
            }
            let sik = s[i * n + k];
            let scale = coeff / norms[i];
            let (ui, uk) = (u(i), u(k));
            for d in 0..dim {
                grad[i * dim + d] += scale * (uk[d] - sik * ui[d]);
            }
        }
    }
    Ok((loss, grad))
}

pub fn nt_xent_gradient(batch: &ContrastiveBatch) -> Result<Vec<Vec<f64>>> {
    let (_, grad) = nt_xent_loss_and_gradient(batch)?;
    Ok(grad.chunks(batch.dim).map(<[f64]>::to_vec).collect())
}

/// Mean cosine similarity over positive pairs and over negative pairs.
pub fn pair_similarity_means(batch: &ContrastiveBatch) -> Result<(f64, f64)> {
    let n = batch.len();
    let s = batch.similarity_matrix()?;
    let (mut pos, mut neg, mut neg_count) = (0.0, 0.0, 0usize);
    for i in 0..n {
        for k in 0..n {
            if k == i {
                continue;
            }
            if k == partner(i) {
                pos += s[i * n + k];
            } else {
                neg += s[i * n + k];
                neg_count += 1;
            }
        }
    }
    let neg_mean = if neg_count == 0 { 0.0 } else { neg / neg_count as f64 };
    Ok((pos / n as f64, neg_mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(n_pairs: usize, dim: usize, tau: f64, seed: u64) -> ContrastiveBatch {
        let mut rng = rng::generator(seed);
        let values = (0..2 * n_pairs * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        ContrastiveBatch::from_flat(values, dim, tau).unwrap()
    }

    /// Direct transcription of the pair loss, no stabilization.
    fn naive_pair_loss(batch: &ContrastiveBatch, i: usize, j: usize) -> f64 {
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let tau = batch.temperature();
        let num = (cos(batch.embedding(i), batch.embedding(j)) / tau).exp();
        let mut den = 0.0;
        for k in 0..batch.len() {
            if k != i {
                den += (cos(batch.embedding(i), batch.embedding(k)) / tau).exp();
            }
        }
        -(num / den).ln()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector(0))));
    }

    #[test]
    fn single_pair_is_zero() {
        let b = ContrastiveBatch::new(vec![vec![1.0, 2.0], vec![-3.0, 0.5]], 0.07).unwrap();
        assert_eq!(nt_xent_pair_loss(&b, 0, 1).unwrap(), 0.0);
        assert_eq!(nt_xent_batch_loss(&b).unwrap(), 0.0);
        assert!(nt_xent_gradient(&b).unwrap().iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_embeddings_give_log3() {
        let b = ContrastiveBatch::new(vec![vec![0.3, -1.2, 2.0]; 4], 0.07).unwrap();
        assert!((nt_xent_pair_loss(&b, 0, 1).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((nt_xent_batch_loss(&b).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_transcription() {
        for seed in 0..50 {
            let b = random_batch(2, 5, 0.5, seed);
            for i in 0..4 {
                let fast = nt_xent_pair_loss(&b, i, partner(i)).unwrap();
                assert!((fast - naive_pair_loss(&b, i, partner(i))).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_pairs_closed_form() {
        let tau = 0.07;
        let b = ContrastiveBatch::new(
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            tau,
        )
        .unwrap();
        // Each anchor sees similarities {1, 0, 0}.
        let e = (1.0 / tau).exp();
        let expected = -(e / (e + 2.0)).ln();
        assert!((nt_xent_batch_loss(&b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn random_unit_embeddings_near_uniform_loss() {
        // Similarities of random high-dimensional vectors concentrate near 0,
        // so every anchor sees roughly equal logits and the loss approaches
        // log(2N - 1). At low temperature the spread of s / tau adds roughly
        // var(s / tau) / 2 = 1 / (2 D tau^2).
        let (n, d) = (32, 128);
        let uniform = ((2 * n - 1) as f64).ln();
        for seed in 0..5 {
            let warm = nt_xent_batch_loss(&random_batch(n, d, 0.5, seed)).unwrap();
            assert!((warm - uniform).abs() / uniform < 0.15, "{warm} vs {uniform}");

            let tau = DEFAULT_TEMPERATURE;
            let spread = uniform + 1.0 / (2.0 * d as f64 * tau * tau);
            let cold = nt_xent_batch_loss(&random_batch(n, d, tau, seed)).unwrap();
            assert!((cold - spread).abs() / spread < 0.12, "{cold} vs {spread}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (n, d) in [(2, 3), (4, 8), (8, 8), (2, 128)] {
            for seed in 0..3 {
                let b = random_batch(n, d, 0.07, seed);
                let (_, grad) = nt_xent_loss_and_gradient(&b).unwrap();
                let h = 1e-5;
                let mut worst: f64 = 0.0;
                let mut values = b.values.clone();
                for idx in (0..values.len()).step_by(values.len() / 24 + 1) {
                    let orig = values[idx];
                    values[idx] = orig + h;
                    let up = nt_xent_batch_loss(&ContrastiveBatch::from_flat(values.clone(), d, 0.07).unwrap()).unwrap();
                    values[idx] = orig - h;
                    let dn = nt_xent_batch_loss(&ContrastiveBatch::from_flat(values.clone(), d, 0.07).unwrap()).unwrap();
                    values[idx] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
                    worst = worst.max(rel);
                }
                assert!(worst < 1e-5, "N={n} D={d}: {worst}");
            }
        }
    }

    #[test]
    fn radial_gradient_vanishes() {
        let b = random_batch(4, 8, 0.07, 21);
        let grads = nt_xent_gradient(&b).unwrap();
        for i in 0..b.len() {
            let radial: f64 = grads[i].iter().zip(b.embedding(i)).map(|(g, z)| g * z).sum();
            assert!(radial.abs() < 1e-12);
        }
    }

    #[test]
    fn invariances() {
        let b = random_batch(4, 6, 0.07, 5);
        let base = nt_xent_batch_loss(&b).unwrap();

        let mut scaled = b.values.clone();
        scaled[6..12].iter_mut().for_each(|v| *v *= 3.7);
        let scaled = ContrastiveBatch::from_flat(scaled, 6, 0.07).unwrap();
        assert!((nt_xent_batch_loss(&scaled).unwrap() - base).abs() < 1e-9);

        // Rotation in the (0, 3) plane applied to every embedding.
        let (s, c) = 0.83f64.sin_cos();
        let mut rotated = b.values.clone();
        for row in rotated.chunks_mut(6) {
            let (a, d) = (row[0], row[3]);
            row[0] = c * a - s * d;
            row[3] = s * a + c * d;
        }
        let rotated = ContrastiveBatch::from_flat(rotated, 6, 0.07).unwrap();
        assert!((nt_xent_batch_loss(&rotated).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn pair_loss_decreases_with_positive_similarity() {
        let mut rng = rng::generator(2);
        let mut row: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        row[0] = 1.0;
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            row[1] = -0.9 + 0.2 * step as f64;
            let l = pair_loss_from_similarities(&row, 0, 1, 0.07);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn stable_at_extreme_similarities() {
        let b = ContrastiveBatch::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]],
            0.07,
        )
        .unwrap();
        let (loss, grad) = nt_xent_loss_and_gradient(&b).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(ContrastiveBatch::new(vec![vec![1.0]; 3], 0.1).is_err());
        assert!(ContrastiveBatch::new(vec![vec![1.0]; 2], 0.0).is_err());
        let b = ContrastiveBatch::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], 0.1).unwrap();
        assert!(matches!(nt_xent_batch_loss(&b), Err(Error::ZeroVector(1))));
    }
}
