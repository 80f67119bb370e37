//! Deeply-supervised convolutional networks for binary image segmentation.
//!
//! The crate is self-contained: a rank-4 tensor type with reverse-mode
//! differentiation ([`autograd`]), the layers and architectures built on it
//! ([`layers`], [`model`]), Dice objectives ([`loss`]), SGD ([`optim`]),
//! data handling ([`data`]), evaluation ([`metrics`]) and the training
//! driver used by the `dscnn` command-line tool ([`train`], [`cli`]).

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{build_dscnn, build_unet, Model, ModelKind, Network};
pub use params::{ParamId, ParamStore};
pub use tensor::{Element, Shape, Tensor};
