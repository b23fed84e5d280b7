//! Binary hyperdimensional (HDC) and low-dimensional computing (LDC)
//! classifiers.
//!
//! Both model families infer the same way: each feature level is bound to its
//! feature vector, the bindings are bundled by majority into a sample vector,
//! and the nearest class vector in Hamming distance wins. HDC models draw
//! their item memory at random in thousands of dimensions; LDC models learn a
//! few-bit value mapping, feature vectors, and class vectors by training an
//! equivalent binary network with straight-through gradients, then extract
//! them into the same bit-packed form.

pub mod bitvec;
pub mod data;
pub mod error;
pub mod eval;
pub mod hdc;
pub mod ldc;
pub mod model;
pub mod store;
pub mod train;

pub use bitvec::{Accumulator, BipolarVector, HammingDistance};
pub use data::{DatasetManifest, PreparedDataset, QuantizedDataset, RawDataset};
pub use error::{Error, Result};
pub use hdc::{AssociativeMemory, HdcClassifier, HdcConfig};
pub use ldc::{LdcConfig, LdcNetwork};
pub use model::{BinaryModel, Classifier, ItemMemory, ModelDescriptor, ModelKind};
pub use train::{Schedule, TrainConfig};
