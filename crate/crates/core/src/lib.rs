//! Spiral contrastive learning for 3D lesion volumes.
//!
//! Volumes are unrolled into 2D views by sampling along spherical spirals
//! around the lesion center ([`spiral`]). Views are augmented ([`augment`]),
//! encoded by a small MLP encoder and projector ([`nn`]), and trained with
//! the NT-Xent objective ([`contrastive`]). Representations are evaluated by
//! linear probing and fine-tuning under stratified k-fold cross-validation
//! ([`train`], [`metrics`]).

pub mod augment;
pub mod contrastive;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod spiral;
pub mod split;
pub mod synth;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use image::Image;
pub use volume::{LesionSample, Volume3D};
