//! Duplicate detection, stratified splitting, cross-split duplicate resolution,
//! multi-dataset consolidation and split statistics.

mod consolidate;
mod duplicates;
mod signature;
mod split;
mod stats;

pub use consolidate::{consolidate, Consolidated, LabelConflict, SplitDataset};
pub use duplicates::{find_duplicates, hamming, DuplicateGroup, DuplicateKind};
pub use signature::{compute_signature, signature_of_decoded, signatures_for, ImageSignature};
pub use split::{make_splits, resolve_cross_split_duplicates, SplitPlan, DEFAULT_RATIOS};
pub use stats::{split_stats, SplitStats, StatsRow};

/// Default near-duplicate Hamming threshold on 64-bit difference hashes.
pub const DEFAULT_HAMMING: u32 = 10;
