use std::path::Path;

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Manifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSignature {
    pub record_id: String,
    /// 64-bit difference hash of the 9x8 grayscale thumbnail.
    pub phash: u64,
    /// Hex SHA-256 of the raw bytes.
    pub exact_digest: String,
}

/// Hashes the encoded bytes and computes a difference hash over the decoded image.
pub fn compute_signature(record_id: &str, image_bytes: &[u8]) -> Result<ImageSignature> {
    let img = image::load_from_memory(image_bytes)?;
    Ok(signature_of_decoded(record_id, image_bytes, &img))
}

/// Same as [`compute_signature`] for bytes that are already decoded.
pub fn signature_of_decoded(record_id: &str, image_bytes: &[u8], image: &image::DynamicImage) -> ImageSignature {
    ImageSignature {
        record_id: record_id.to_string(),
        phash: dhash(image),
        exact_digest: hex::encode(Sha256::digest(image_bytes)),
    }
}

pub(crate) fn dhash(img: &image::DynamicImage) -> u64 {
    let thumb = image::imageops::resize(&img.to_luma8(), 9, 8, FilterType::Triangle);
    let mut hash = 0u64;
    for y in 0..8 {
        for x in 0..8 {
            if thumb.get_pixel(x, y)[0] < thumb.get_pixel(x + 1, y)[0] {
                hash |= 1 << (y * 8 + x);
            }
        }
    }
    hash
}

/// Signatures for every record whose image can be read and decoded. Failures are
/// returned separately and excluded from curation.
pub fn signatures_for(manifest: &Manifest) -> (Vec<ImageSignature>, Vec<(String, Error)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in &manifest.records {
        let path = manifest.image_path(r);
        match read(&path).and_then(|b| compute_signature(&r.record_id, &b)) {
            Ok(s) => ok.push(s),
            Err(e) => {
                log::warn!("{}: excluded from duplicate detection: {e}", r.record_id);
                failed.push((r.record_id.clone(), e));
            }
        }
    }
    (ok, failed)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
