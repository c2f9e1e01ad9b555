//! Motion-flow deblurring: heterogeneous blur synthesis, flow estimation
//! with a small fully-convolutional classifier, and non-blind deconvolution.
//!
//! The pipeline has three stages. `sim` draws parametric camera motions and
//! renders them to dense pixel-wise motion flows; `blur` applies the
//! per-pixel linear kernels those flows induce. `net` trains a classifier
//! that recovers the flow from a single blurred image. `deconv` then removes
//! the blur with a half-quadratic splitting solver under a hyper-Laplacian
//! gradient prior.

pub mod blur;
pub mod dataset;
pub mod deconv;
pub mod error;
pub mod flow;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod net;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
