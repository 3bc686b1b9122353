//! Dense networks with hand-written gradients, Adam, checkpoints and
//! parameter counting for convolutional backbones.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod layers;
pub mod matrix;
pub mod model;

pub use adam::{AdamConfig, AdamState};
pub use arch::{count_parameters, resnet18_descriptor, ArchDescriptor, Dimensionality, Layer};
pub use checkpoint::{load_tensors, save_tensors, NamedTensor};
pub use layers::{BatchNorm, BatchStats, Dense, Mode};
pub use matrix::{matmul, Layout, Matrix};
pub use model::{ClassificationHead, ContrastiveModel, Encoder, ModelDims, Projector};
