use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema::{LabelVector, TaskId, MISSING};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "val" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub record_id: String,
    pub source_dataset: String,
    pub image_ref: String,
    pub labels: LabelVector,
}

impl ImageRecord {
    pub fn new(
        record_id: impl Into<String>,
        source_dataset: impl Into<String>,
        image_ref: impl Into<String>,
        labels: LabelVector,
    ) -> Self {
        ImageRecord {
            record_id: record_id.into(),
            source_dataset: source_dataset.into(),
            image_ref: image_ref.into(),
            labels,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub schema_version: String,
    pub split: Option<Split>,
    pub records: Vec<ImageRecord>,
    /// Directory that relative `image_ref`s resolve against. Not serialized.
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>, split: Option<Split>) -> Self {
        Manifest {
            schema_version: MANIFEST_VERSION.to_string(),
            split,
            records,
            base_dir: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        let p = Path::new(&record.image_ref);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Keeps records labeled for `task`.
    pub fn labeled_for(&self, task: TaskId) -> Manifest {
        Manifest {
            records: self
                .records
                .iter()
                .filter(|r| r.labels.get(task).is_some())
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Per-task class histograms over the records.
    pub fn class_histograms(&self) -> BTreeMap<TaskId, Vec<usize>> {
        let mut out = BTreeMap::new();
        for task in TaskId::ALL {
            let mut counts = vec![0; task.schema().num_classes()];
            let mut any = false;
            for r in &self.records {
                if let Some(c) = r.labels.get(task) {
                    counts[c] += 1;
                    any = true;
                }
            }
            if any {
                out.insert(task, counts);
            }
        }
        out
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::invalid(format!("duplicate record_id {}", r.record_id)));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    record_id: String,
    #[serde(default)]
    source_dataset: String,
    image_ref: String,
    #[serde(default)]
    labels: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub loaded: usize,
    /// (1-based line number, reason)
    pub rejected: Vec<(usize, String)>,
}

fn parse_labels(raw: &BTreeMap<String, Value>) -> Result<LabelVector> {
    let mut labels = LabelVector::empty();
    for (key, value) in raw {
        let task: TaskId = key.parse()?;
        let schema = task.schema();
        match value {
            Value::Null => {}
            Value::Number(n) => {
                let idx = n
                    .as_i64()
                    .ok_or_else(|| Error::invalid(format!("non-integer label {n} for {task}")))?;
                if idx != MISSING {
                    schema.check_index(idx)?;
                    labels.set(task, Some(idx as usize));
                }
            }
            Value::String(name) => labels.set(task, Some(schema.encode_label(name)?)),
            other => return Err(Error::invalid(format!("bad label value {other} for {task}"))),
        }
    }
    Ok(labels)
}

/// Reads a manifest. Malformed lines are skipped, logged and listed in the report.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Manifest, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = Manifest::new(Vec::new(), None);
    manifest.base_dir = path.parent().map(Path::to_path_buf);
    let mut report = LoadReport::default();
    let mut ids = HashSet::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                reject(&mut report, path, line_no, e.to_string());
                continue;
            }
        };
        if value.get("record_id").is_none() && value.get("schema_version").is_some() {
            match serde_json::from_value::<Header>(value) {
                Ok(h) => {
                    manifest.schema_version = h.schema_version;
                    manifest.split = h.split;
                }
                Err(e) => reject(&mut report, path, line_no, e.to_string()),
            }
            continue;
        }
        let rec: RecordLine = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                reject(&mut report, path, line_no, e.to_string());
                continue;
            }
        };
        let labels = match parse_labels(&rec.labels) {
            Ok(l) => l,
            Err(e) => {
                reject(&mut report, path, line_no, e.to_string());
                continue;
            }
        };
        if let Some(s) = rec.split {
            match manifest.split {
                None if manifest.records.is_empty() => manifest.split = Some(s),
                Some(m) if m == s => {}
                _ => {
                    reject(&mut report, path, line_no, format!("split {s} inconsistent with file"));
                    continue;
                }
            }
        }
        if !ids.insert(rec.record_id.clone()) {
            reject(&mut report, path, line_no, format!("duplicate record_id {}", rec.record_id));
            continue;
        }
        manifest.records.push(ImageRecord {
            record_id: rec.record_id,
            source_dataset: rec.source_dataset,
            image_ref: rec.image_ref,
            labels,
        });
    }
    report.loaded = manifest.records.len();
    Ok((manifest, report))
}

fn reject(report: &mut LoadReport, path: &Path, line_no: usize, reason: String) {
    log::warn!("{}:{line_no}: skipping record: {reason}", path.display());
    report.rejected.push((line_no, reason));
}

/// Writes a header line followed by one JSON record per line. Every task key is
/// written, missing labels as -1.
pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema_version: manifest.schema_version.clone(),
        split: manifest.split,
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for r in &manifest.records {
        let labels = TaskId::ALL
            .iter()
            .map(|t| (t.as_str().to_string(), Value::from(r.labels.raw(*t))))
            .collect();
        let line = RecordLine {
            record_id: r.record_id.clone(),
            source_dataset: r.source_dataset.clone(),
            image_ref: r.image_ref.clone(),
            labels,
            split: None,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}
