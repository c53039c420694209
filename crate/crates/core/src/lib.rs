//! Tools for finding rare, small objects in aerial imagery: multi-scale
//! feature consistency losses, hard-example mining, context-guided copy-paste
//! augmentation and detection evaluation.

pub mod annotations;
pub mod augment;
pub mod context;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod mining;
pub mod placement;
pub mod poisson;
pub mod rng;
pub mod tensor;
pub mod tiling;
pub mod transform;

pub use annotations::{Annotation, AnnotationSource, BBox, ClassRegistry, Detection};
pub use error::{Error, Result};
pub use tensor::{FeatureMap, Level, PyramidSet, UpsampleMode};

/// Toolkit version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the binary tensor container.
pub const TENSOR_FORMAT_VERSION: u32 = tensor::TENSOR_VERSION;
