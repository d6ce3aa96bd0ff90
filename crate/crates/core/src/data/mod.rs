//! Task schemas, image records and the line-delimited manifest format.

mod manifest;
mod schema;

pub use manifest::{
    load_manifest, save_manifest, ImageRecord, LoadReport, Manifest, Split, MANIFEST_VERSION,
};
pub use schema::{label_vector, LabelVector, TaskId, TaskSchema, MISSING};
