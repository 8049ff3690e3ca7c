//! Chest radiograph debiasing pipeline: ingest, preprocessing operators,
//! segmentation and rib-suppression models, the nodule classifier, evolutionary
//! pruning and the ablation protocol.

pub mod ablation;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod image;
pub mod imgops;
pub mod lungseg;
pub mod metrics;
pub mod phantom;
pub mod pruner;
pub mod ribsup;
pub mod train;

pub use error::{CoreError, Result};

/// Single-precision segmenter, the concrete type used by the pipeline.
pub type SegModel = lungseg::Segmenter<f32>;
/// Single-precision rib suppressor.
pub type SuppModel = ribsup::Suppressor<f32>;
/// Single-precision nodule classifier.
pub type ClsModel = classifier::Classifier<f32>;
