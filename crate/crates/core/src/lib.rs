//! Noise translation for Gaussian-specialised denoisers.
//!
//! A small translator network maps images with arbitrary (spatially
//! correlated, signal-dependent) noise to images carrying i.i.d. Gaussian
//! noise, which a frozen Gaussian denoiser then removes. The crate contains
//! everything needed to train and verify that pipeline on a CPU: an autodiff
//! tensor engine, seeded noise synthesis, order-statistics Wasserstein
//! distances, channel-wise Fourier analysis, the translation losses, the
//! networks and their optimiser, and the data/training/evaluation pipeline.

pub mod error;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod rand_noise;
pub mod spectral;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{gradcheck, GradcheckReport, Gradients, Graph, Real, Tensor, Var};
