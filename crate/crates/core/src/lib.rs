//! Non-backbone machinery for a two-stage namecard character detector.
//!
//! The crate covers box geometry and anchor grids, anchor/proposal target
//! assignment with the detection losses, confidence filtering, NMS and RoI
//! pooling, dataset scoring (average IoU, mAP, F1), photometric augmentation,
//! a synthetic namecard generator and an fp16 tensor container.

pub mod dataset;
pub mod error;
pub mod fakegen;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod postprocess;
pub mod rng;
pub mod targets;
pub mod weights;

pub use dataset::{AnnotatedBox, Annotation, ClassId};
pub use error::{Error, Result};
pub use geometry::{AnchorSet, AnchorSpec, BBox, BoxDelta};
pub use imaging::ImageBuffer;
pub use postprocess::{Detection, FeatureMap};
