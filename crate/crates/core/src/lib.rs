//! Data-side toolkit for GUI grounding corpora: coordinate codec and metrics,
//! box-aware augmentation, web-corpus curation, loss-target generation,
//! rollout triage for post-training, and the evaluation harness.

pub mod augment;
pub mod curation;
pub mod error;
pub mod evalharness;
pub mod geometry;
pub mod losslab;
pub mod posttrain;
pub mod records;
pub mod rng;

pub use error::{
    AugmentError, CurationError, EvalError, GeometryError, LossLabError, PostTrainError,
};
pub use geometry::{CoordFormat, Geom, NormBox, NormPoint, PixelDims};
pub use records::{ElementKind, ElementRecord, ReferenceBundle, ScreenRecord};
pub use rng::RngStream;
