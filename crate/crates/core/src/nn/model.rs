//! Encoder `f`, projector `g` and classification head `p`.
//!
//! The encoder average-pools a square view down to `pooled_side^2` features
//! and applies `Dense -> ReLU -> Dense`. The projector is
//! `Dense -> BatchNorm -> ReLU -> Dense` ending in 128 dimensions, and the
//! head is `BatchNorm -> Dense` on encoder outputs.

use std::collections::HashMap;

use super::checkpoint::NamedTensor;
use super::layers::{relu_backward, relu_forward, BatchNorm, BatchNormCache, BatchStats, Dense};
use super::matrix::Matrix;
use crate::contrastive::{nt_xent_loss_and_gradient, ContrastiveBatch};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Layer widths of the desk-scale networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub view_size: usize,
    pub pooled_side: usize,
    pub hidden: usize,
    pub repr: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            view_size: 224,
            pooled_side: 32,
            hidden: 512,
            repr: 512,
            proj_hidden: 512,
            proj_out: 128,
        }
    }
}

/// Parameter gradients in the owning module's parameter order.
pub type Grads = Vec<Vec<f64>>;

fn dense_tensors(prefix: &str, d: &Dense, out: &mut Vec<NamedTensor>) {
    out.push(NamedTensor::new(
        format!("{prefix}.weight"),
        vec![d.outputs(), d.inputs()],
        d.weight.data().to_vec(),
    ));
    out.push(NamedTensor::new(format!("{prefix}.bias"), vec![d.outputs()], d.bias.clone()));
}

fn bn_tensors(prefix: &str, bn: &BatchNorm, out: &mut Vec<NamedTensor>) {
    let f = bn.features();
    for (name, data) in [
        ("gamma", &bn.gamma),
        ("beta", &bn.beta),
        ("running_mean", &bn.running_mean),
        ("running_var", &bn.running_var),
    ] {
        out.push(NamedTensor::new(format!("{prefix}.{name}"), vec![f], data.clone()));
    }
}

type TensorMap<'a> = HashMap<&'a str, &'a NamedTensor>;

fn take<'a>(map: &TensorMap<'a>, name: &str) -> Result<&'a NamedTensor> {
    map.get(name)
        .copied()
        .ok_or_else(|| Error::InvalidHeader(format!("checkpoint lacks tensor {name}")))
}

fn dense_from(map: &TensorMap, prefix: &str) -> Result<Dense> {
    let w = take(map, &format!("{prefix}.weight"))?;
    let b = take(map, &format!("{prefix}.bias"))?;
    if w.dims.len() != 2 || b.dims != [w.dims[0]] {
        return Err(Error::InvalidHeader(format!("bad shapes for {prefix}")));
    }
    Dense::from_parts(Matrix::from_vec(w.dims[0], w.dims[1], w.data.clone())?, b.data.clone())
}

fn bn_from(map: &TensorMap, prefix: &str) -> Result<BatchNorm> {
    let get = |n: &str| take(map, &format!("{prefix}.{n}")).map(|t| t.data.clone());
    let mut bn = BatchNorm::new(0);
    bn.gamma = get("gamma")?;
    bn.beta = get("beta")?;
    bn.running_mean = get("running_mean")?;
    bn.running_var = get("running_var")?;
    let f = bn.gamma.len();
    if bn.beta.len() != f || bn.running_mean.len() != f || bn.running_var.len() != f {
        return Err(Error::InvalidHeader(format!("bad shapes for {prefix}")));
    }
    Ok(bn)
}

fn index(tensors: &[NamedTensor]) -> TensorMap<'_> {
    tensors.iter().map(|t| (t.name.as_str(), t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub view_size: usize,
    pub pooled_side: usize,
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Matrix,
    pre_activation: Matrix,
    hidden: Matrix,
}

impl Encoder {
    pub fn new(dims: &ModelDims, rng: &mut Rng) -> Result<Self> {
        if dims.pooled_side == 0 || dims.view_size % dims.pooled_side != 0 {
            return Err(Error::InvalidConfig(format!(
                "view size {} is not a multiple of pooled side {}",
                dims.view_size, dims.pooled_side
            )));
        }
        let inputs = dims.pooled_side * dims.pooled_side;
        Ok(Self {
            view_size: dims.view_size,
            pooled_side: dims.pooled_side,
            fc1: Dense::new(inputs, dims.hidden, rng),
            fc2: Dense::new(dims.hidden, dims.repr, rng),
        })
    }

    pub fn repr_dim(&self) -> usize {
        self.fc2.outputs()
    }

    /// Average-pools a `view_size x view_size` view into a feature row.
    pub fn pool(&self, view: &Image) -> Result<Vec<f64>> {
        if view.shape() != (self.view_size, self.view_size) {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {0}x{0} views, got {1}x{2}",
                self.view_size,
                view.rows(),
                view.cols()
            )));
        }
        Ok(view.average_pool(self.view_size / self.pooled_side)?.into_data())
    }

    pub fn pool_batch<'a>(&self, views: impl IntoIterator<Item = &'a Image>) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = views.into_iter().map(|v| self.pool(v)).collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    }

    /// Forward from pooled features, keeping what backward needs.
    pub fn forward(&self, pooled: &Matrix) -> Result<(Matrix, EncoderCache)> {
        let pre_activation = self.fc1.forward(pooled)?;
        let hidden = relu_forward(&pre_activation);
        let y = self.fc2.forward(&hidden)?;
        Ok((
            y,
            EncoderCache {
                input: pooled.clone(),
                pre_activation,
                hidden,
            },
        ))
    }

    pub fn embed(&self, pooled: &Matrix) -> Result<Matrix> {
        let h = relu_forward(&self.fc1.forward(pooled)?);
        self.fc2.forward(&h)
    }

    pub fn backward(&self, cache: &EncoderCache, dy: &Matrix) -> Result<Grads> {
        let g2 = self.fc2.backward(&cache.hidden, dy)?;
        let dh = relu_backward(&cache.pre_activation, &g2.input);
        let g1 = self.fc1.backward(&cache.input, &dh)?;
        Ok(vec![g1.weight, g1.bias, g2.weight, g2.bias])
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.fc1.weight.data_mut(),
            &mut self.fc1.bias,
            self.fc2.weight.data_mut(),
            &mut self.fc2.bias,
        ]
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        vec![
            self.fc1.weight.data().len(),
            self.fc1.bias.len(),
            self.fc2.weight.data().len(),
            self.fc2.bias.len(),
        ]
    }

    pub fn tensors(&self, out: &mut Vec<NamedTensor>) {
        dense_tensors("encoder.fc1", &self.fc1, out);
        dense_tensors("encoder.fc2", &self.fc2, out);
    }

    pub fn from_tensors(tensors: &[NamedTensor], view_size: usize) -> Result<Self> {
        let map = index(tensors);
        let fc1 = dense_from(&map, "encoder.fc1")?;
        let fc2 = dense_from(&map, "encoder.fc2")?;
        let pooled_side = (fc1.inputs() as f64).sqrt().round() as usize;
        if pooled_side * pooled_side != fc1.inputs() || pooled_side == 0 || view_size % pooled_side != 0 {
            return Err(Error::InvalidHeader(format!(
                "encoder input width {} does not pool a {view_size}x{view_size} view",
                fc1.inputs()
            )));
        }
        if fc2.inputs() != fc1.outputs() {
            return Err(Error::InvalidHeader("encoder layers do not chain".into()));
        }
        Ok(Self {
            view_size,
            pooled_side,
            fc1,
            fc2,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub fc1: Dense,
    pub bn: BatchNorm,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct ProjectorCache {
    input: Matrix,
    bn_cache: BatchNormCache,
    normalized: Matrix,
    activated: Matrix,
}

impl Projector {
    pub fn new(dims: &ModelDims, rng: &mut Rng) -> Self {
        Self {
            fc1: Dense::new(dims.repr, dims.proj_hidden, rng),
            bn: BatchNorm::new(dims.proj_hidden),
            fc2: Dense::new(dims.proj_hidden, dims.proj_out, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.outputs()
    }

    pub fn forward_train(&self, y: &Matrix) -> Result<(Matrix, ProjectorCache, BatchStats)> {
        let a = self.fc1.forward(y)?;
        let (normalized, bn_cache, stats) = self.bn.forward_train(&a)?;
        let activated = relu_forward(&normalized);
        let z = self.fc2.forward(&activated)?;
        Ok((
            z,
            ProjectorCache {
                input: y.clone(),
                bn_cache,
                normalized,
                activated,
            },
            stats,
        ))
    }

    pub fn forward_eval(&self, y: &Matrix) -> Result<Matrix> {
        let a = self.fc1.forward(y)?;
        let n = self.bn.forward_eval(&a)?;
        self.fc2.forward(&relu_forward(&n))
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ProjectorCache, dz: &Matrix) -> Result<(Grads, Matrix)> {
        let g2 = self.fc2.backward(&cache.activated, dz)?;
        let dn = relu_backward(&cache.normalized, &g2.input);
        let gb = self.bn.backward(&cache.bn_cache, &dn)?;
        let g1 = self.fc1.backward(&cache.input, &gb.input)?;
        Ok((
            vec![g1.weight, g1.bias, gb.gamma, gb.beta, g2.weight, g2.bias],
            g1.input,
        ))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.fc1.weight.data_mut(),
            &mut self.fc1.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            self.fc2.weight.data_mut(),
            &mut self.fc2.bias,
        ]
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        vec![
            self.fc1.weight.data().len(),
            self.fc1.bias.len(),
            self.bn.gamma.len(),
            self.bn.beta.len(),
            self.fc2.weight.data().len(),
            self.fc2.bias.len(),
        ]
    }

    pub fn tensors(&self, out: &mut Vec<NamedTensor>) {
        dense_tensors("projector.fc1", &self.fc1, out);
        bn_tensors("projector.bn", &self.bn, out);
        dense_tensors("projector.fc2", &self.fc2, out);
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let map = index(tensors);
        let p = Self {
            fc1: dense_from(&map, "projector.fc1")?,
            bn: bn_from(&map, "projector.bn")?,
            fc2: dense_from(&map, "projector.fc2")?,
        };
        if p.bn.features() != p.fc1.outputs() || p.fc2.inputs() != p.fc1.outputs() {
            return Err(Error::InvalidHeader("projector layers do not chain".into()));
        }
        Ok(p)
    }
}

/// Batch norm followed by a fully connected layer, fed by encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub bn: BatchNorm,
    pub fc: Dense,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    bn_cache: BatchNormCache,
    normalized: Matrix,
}

impl ClassificationHead {
    pub fn new(repr: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            bn: BatchNorm::new(repr),
            fc: Dense::new(repr, classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.fc.outputs()
    }

    pub fn forward_train(&self, y: &Matrix) -> Result<(Matrix, HeadCache, BatchStats)> {
        let (normalized, bn_cache, stats) = self.bn.forward_train(y)?;
        let logits = self.fc.forward(&normalized)?;
        Ok((logits, HeadCache { bn_cache, normalized }, stats))
    }

    pub fn forward_eval(&self, y: &Matrix) -> Result<Matrix> {
        self.fc.forward(&self.bn.forward_eval(y)?)
    }

    pub fn backward(&self, cache: &HeadCache, dlogits: &Matrix) -> Result<(Grads, Matrix)> {
        let gf = self.fc.backward(&cache.normalized, dlogits)?;
        let gb = self.bn.backward(&cache.bn_cache, &gf.input)?;
        Ok((vec![gb.gamma, gb.beta, gf.weight, gf.bias], gb.input))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.bn.gamma,
            &mut self.bn.beta,
            self.fc.weight.data_mut(),
            &mut self.fc.bias,
        ]
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        vec![
            self.bn.gamma.len(),
            self.bn.beta.len(),
            self.fc.weight.data().len(),
            self.fc.bias.len(),
        ]
    }

    pub fn tensors(&self, out: &mut Vec<NamedTensor>) {
        bn_tensors("head.bn", &self.bn, out);
        dense_tensors("head.fc", &self.fc, out);
    }
}

/// Encoder plus projector, the unit trained by contrastive pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveModel {
    pub encoder: Encoder,
    pub projector: Projector,
}

impl ContrastiveModel {
    pub fn new(dims: &ModelDims, rng: &mut Rng) -> Result<Self> {
        let encoder = Encoder::new(dims, rng)?;
        let projector = Projector::new(dims, rng);
        Ok(Self { encoder, projector })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.projector.params_mut());
        p
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut s = self.encoder.param_sizes();
        s.extend(self.projector.param_sizes());
        s
    }

    /// All tensors in definition order, running statistics included.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.encoder.tensors(&mut out);
        self.projector.tensors(&mut out);
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor], view_size: usize) -> Result<Self> {
        let encoder = Encoder::from_tensors(tensors, view_size)?;
        let projector = Projector::from_tensors(tensors)?;
        if projector.fc1.inputs() != encoder.repr_dim() {
            return Err(Error::InvalidHeader("projector does not match encoder".into()));
        }
        Ok(Self { encoder, projector })
    }

    /// NT-Xent loss of a batch of pooled views whose rows `(2k, 2k + 1)` are
    /// positive pairs, with gradients for every encoder and projector
    /// parameter and the projector's batch statistics.
    pub fn contrastive_loss_and_grads(
        &self,
        pooled: &Matrix,
        temperature: f64,
    ) -> Result<(f64, Grads, BatchStats)> {
        let (y, enc_cache) = self.encoder.forward(pooled)?;
        let (z, proj_cache, stats) = self.projector.forward_train(&y)?;
        let batch = ContrastiveBatch::from_flat(z.data().to_vec(), z.cols(), temperature)?;
        let (loss, dz) = nt_xent_loss_and_gradient(&batch)?;
        let dz = Matrix::from_vec(z.rows(), z.cols(), dz)?;
        let (proj_grads, dy) = self.projector.backward(&proj_cache, &dz)?;
        let mut grads = self.encoder.backward(&enc_cache, &dy)?;
        grads.extend(proj_grads);
        Ok((loss, grads, stats))
    }

    /// Projector outputs with batch norm in eval mode.
    pub fn project_eval(&self, pooled: &Matrix) -> Result<Matrix> {
        self.projector.forward_eval(&self.encoder.embed(pooled)?)
    }
}
