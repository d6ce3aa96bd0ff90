use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cvtk_core::data::{load_manifest, save_manifest};
use cvtk_core::{Manifest, Split, TaskId};
use serde::Serialize;

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "dev.jsonl", "test.jsonl"];

/// Loads a manifest, failing on any rejected line.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let (m, report) = load_manifest(path).with_context(|| format!("reading {}", path.display()))?;
    if !report.rejected.is_empty() {
        bail!("{}: {} malformed record(s), first at line {}: {}", path.display(), report.rejected.len(),
            report.rejected[0].0, report.rejected[0].1);
    }
    Ok(m)
}

/// Rewrites relative image references so the manifest can be saved elsewhere.
pub fn absolutize(mut m: Manifest) -> Manifest {
    let resolved: Vec<String> = m
        .records
        .iter()
        .map(|r| {
            let p = m.image_path(r);
            std::fs::canonicalize(&p).unwrap_or(p).to_string_lossy().into_owned()
        })
        .collect();
    for (r, p) in m.records.iter_mut().zip(resolved) {
        r.image_ref = p;
    }
    m.base_dir = None;
    m
}

/// `train.jsonl`, `dev.jsonl` and `test.jsonl` of a split directory.
pub fn read_splits(dir: &Path) -> Result<[Manifest; 3]> {
    let load = |i: usize| read_manifest(&dir.join(SPLIT_FILES[i]));
    Ok([load(0)?, load(1)?, load(2)?])
}

pub fn write_splits(dir: &Path, splits: &[Manifest; 3]) -> Result<()> {
    for (i, m) in splits.iter().enumerate() {
        let mut m = m.clone();
        m.split = Some(Split::ALL[i]);
        save_manifest(&m, dir.join(SPLIT_FILES[i]))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

/// Parses `task=path` pairs.
pub fn task_paths(pairs: &[String]) -> Result<BTreeMap<TaskId, PathBuf>> {
    let mut out = BTreeMap::new();
    for p in pairs {
        let (t, path) = p.split_once('=').with_context(|| format!("expected TASK=PATH, got {p:?}"))?;
        let task: TaskId = t.parse()?;
        if out.insert(task, PathBuf::from(path)).is_some() {
            bail!("task {task} given twice");
        }
    }
    Ok(out)
}
