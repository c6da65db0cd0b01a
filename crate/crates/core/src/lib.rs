//! Explaining Bayesian neural networks at desk scale.
//!
//! The crate trains a small feedforward classifier, wraps it in an
//! approximate weight posterior (deep ensemble, MC dropout, or diagonal
//! Laplace), samples relevance maps for a given input over that posterior,
//! and aggregates the samples into Mean, Intersection, Union and UAI+
//! explanations. Spectral clustering exposes the distinct explanation modes,
//! and localization metrics (AUC, relevance mass accuracy) score every
//! aggregate against ground-truth object masks from a synthetic
//! glyph-on-noise dataset.
//!
//! Everything is deterministic: a single seed fans out through
//! [`rng::derive_seed`] into per-image, per-sample and per-epoch streams, and
//! all parallel reductions run in fixed order.

pub mod attribution;
pub mod error;
pub mod eval;
pub mod io;
pub mod net;
pub mod posterior;
pub mod rng;
pub mod spray;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod uai;

pub use error::{Error, Result};
pub use eval::ObjectMask;
pub use net::{DropoutMask, LayerParams, LayerSpec, Network, WeightSet};
pub use posterior::{PosteriorSample, WeightPosterior};
pub use synth::LabeledImage;
pub use tensor::Tensor;
