//! Lightweight multi-information fusion network for image deblurring.
//!
//! The crate is self-contained: a small tape-based autodiff core
//! ([`autograd`]), the network blocks ([`blocks`], [`attention`]), the
//! assembled model ([`model`]), a synthetic-blur training harness
//! ([`train`]) and image quality metrics ([`metrics`]).

pub mod attention;
pub mod autograd;
pub mod blocks;
pub mod error;
pub mod gradsuite;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{LmfnError, Result};
pub use metrics::ImagePlane;
pub use model::{LmfnModel, ModelConfig};
pub use params::ParamStore;
pub use tensor::{Shape, Tensor};
