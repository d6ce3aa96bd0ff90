//! Crisis image classification toolkit.
//!
//! The crate covers the whole workflow for classifying disaster imagery into
//! four tasks (disaster types, informativeness, humanitarian categories and
//! damage severity): dataset manifests, duplicate-aware split curation,
//! multi-task dataset merging, RandAugment, metrics and significance tests,
//! and, behind the default `nn` feature, transfer-learning backbones, the
//! masked multi-task loss, Noisy Student self-training, Grad-CAM and a
//! streaming classification pipeline.

pub mod augment;
pub mod curation;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod merge;
pub mod multitask;
pub mod noisy_student;

#[cfg(feature = "nn")]
pub mod models;
#[cfg(feature = "nn")]
pub mod pipeline;
#[cfg(feature = "nn")]
pub mod train;

pub use data::{ImageRecord, LabelVector, Manifest, Split, TaskId, TaskSchema};
pub use error::{Error, Result};
