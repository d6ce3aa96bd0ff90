use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::curation::{hamming, ImageSignature};
use crate::error::{Error, Result};

/// Signatures of every image admitted so far.
#[derive(Debug, Default)]
pub struct SignatureIndex {
    exact: HashMap<String, String>,
    hashes: Vec<(u64, String)>,
}

impl SignatureIndex {
    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Returns the record this signature duplicates, or admits it.
    pub fn check_and_insert(&mut self, sig: &ImageSignature, threshold: u32) -> Option<String> {
        if let Some(id) = self.exact.get(&sig.exact_digest) {
            return Some(id.clone());
        }
        if let Some((_, id)) = self.hashes.iter().find(|(h, _)| hamming(*h, sig.phash) <= threshold) {
            return Some(id.clone());
        }
        self.exact.insert(sig.exact_digest.clone(), sig.record_id.clone());
        self.hashes.push((sig.phash, sig.record_id.clone()));
        None
    }

    /// JSON lines of [`ImageSignature`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut by_id: HashMap<&str, &str> = HashMap::new();
        for (digest, id) in &self.exact {
            by_id.insert(id, digest);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (phash, id) in &self.hashes {
            let sig = ImageSignature { record_id: id.clone(), phash: *phash, exact_digest: by_id[id.as_str()].to_string() };
            writeln!(f, "{}", serde_json::to_string(&sig)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut index = SignatureIndex::default();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let sig: ImageSignature = serde_json::from_str(&line)?;
            index.exact.insert(sig.exact_digest.clone(), sig.record_id.clone());
            index.hashes.push((sig.phash, sig.record_id));
        }
        Ok(index)
    }
}
