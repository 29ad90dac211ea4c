//! Decompose, transfer and compose: class decomposition for classifiers
//! trained on small, irregular datasets.
//!
//! Every class of a labelled feature matrix is split into sub-classes with
//! k-means in a PCA-projected space, a softmax head is trained on the
//! sub-class labels, and its predictions are folded back onto the original
//! classes before evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The `*64` and
//! `*32` aliases below name the common instantiations.

pub mod classifier;
mod codec;
pub mod config;
pub mod dataset;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod pipeline;
pub mod projection;
pub mod scalar;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

pub type SampleSet64 = dataset::SampleSet<f64>;
pub type SampleSet32 = dataset::SampleSet<f32>;
pub type DecomposedSet64 = dataset::DecomposedSet<f64>;
pub type DecomposedSet32 = dataset::DecomposedSet<f32>;
pub type PcaModel64 = projection::PcaModel<f64>;
pub type PcaModel32 = projection::PcaModel<f32>;
pub type KMeansModel64 = decomposition::KMeansModel<f64>;
pub type KMeansModel32 = decomposition::KMeansModel<f32>;
pub type SoftmaxHead64 = classifier::SoftmaxHead<f64>;
pub type SoftmaxHead32 = classifier::SoftmaxHead<f32>;
