//! Streaming classification: decode → duplicate filter → batched inference →
//! line-delimited output, with per-stage timing.
//!
//! Decoding runs on its own thread feeding a bounded queue. Every input
//! yields exactly one output record (prediction, duplicate or error), and
//! each record is flushed as soon as its batch is classified, so an
//! interrupted run leaves a valid prefix.

mod index;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::curation::{signature_of_decoded, DEFAULT_HAMMING};
use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::train::images::{resize_square, to_tensor};
use crate::train::Checkpoint;

pub use index::SignatureIndex;
pub use report::{throughput_report, LatencySummary, RunLog, StageTimings, ThroughputReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    SingleTaskChain,
    Multitask,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub dedup_enabled: bool,
    pub hamming_threshold: u32,
    pub batch_size: usize,
    /// Only informative images receive the remaining task predictions.
    pub filter_noninformative: bool,
    /// Load the duplicate index from / save it to this file.
    pub index_path: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: PipelineMode::Multitask,
            dedup_enabled: true,
            hamming_threshold: DEFAULT_HAMMING,
            batch_size: 128,
            filter_noninformative: false,
            index_path: None,
        }
    }
}

/// The models a run uses.
pub enum Classifiers {
    /// One single-task checkpoint per task, run in canonical task order.
    Chain(Vec<Checkpoint>),
    Multitask(Checkpoint),
}

impl Classifiers {
    fn validate(&self, mode: PipelineMode) -> Result<()> {
        match (self, mode) {
            (Classifiers::Chain(list), PipelineMode::SingleTaskChain) => {
                let mut covered: Vec<TaskId> = Vec::new();
                for c in list {
                    if c.layout().num_tasks() != 1 {
                        return Err(Error::invalid("chain mode needs single-task checkpoints"));
                    }
                    covered.push(c.layout().tasks()[0]);
                }
                covered.sort();
                if covered != TaskId::ALL {
                    return Err(Error::invalid(format!(
                        "chain mode needs one checkpoint for each of the four tasks, got {covered:?}"
                    )));
                }
                Ok(())
            }
            (Classifiers::Multitask(_), PipelineMode::Multitask) => Ok(()),
            _ => Err(Error::invalid("classifiers do not match the pipeline mode")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub label: String,
    pub class_index: usize,
    pub probs: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub record_id: String,
    pub image_ref: String,
    /// Keyed by task name; empty for duplicates and errors.
    pub predictions: BTreeMap<TaskId, TaskPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// True when later tasks were skipped because the image is not informative.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub filtered: bool,
    pub latency_ms: f64,
    pub timings: StageTimings,
}

/// One input: a file path or `file://` URI.
#[derive(Clone, Debug)]
pub struct SourceItem {
    pub record_id: String,
    pub image_ref: String,
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "gif", "webp"];

/// Items of a directory (image files, sorted by name) or of a text file with
/// one path or URI per line.
pub fn read_source(source: &Path) -> Result<Vec<SourceItem>> {
    if source.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(source)
            .map_err(|e| Error::io(source, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        paths.sort();
        Ok(paths
            .into_iter()
            .map(|p| SourceItem {
                record_id: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                image_ref: p.to_string_lossy().into_owned(),
            })
            .collect())
    } else {
        let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
        let base = source.parent().unwrap_or(Path::new("."));
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let path = l.strip_prefix("file://").unwrap_or(l);
                let resolved = if l.contains("://") && !l.starts_with("file://") {
                    l.to_string()
                } else if Path::new(path).is_absolute() {
                    path.to_string()
                } else {
                    base.join(path).to_string_lossy().into_owned()
                };
                SourceItem {
                    record_id: Path::new(path).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| l.into()),
                    image_ref: resolved,
                }
            })
            .collect())
    }
}

struct Decoded {
    item: SourceItem,
    started: Instant,
    decode_ms: f64,
    result: Result<(Vec<u8>, image::DynamicImage)>,
}

fn decode(item: &SourceItem) -> Result<(Vec<u8>, image::DynamicImage)> {
    if item.image_ref.contains("://") {
        return Err(Error::invalid(format!("unsupported URI scheme in {}", item.image_ref)));
    }
    let path = Path::new(&item.image_ref);
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)?;
    Ok((bytes, img))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

struct Pending {
    record: AnnotatedRecord,
    started: Instant,
    image: Option<RgbImage>,
}

/// Classifies a stream of images, writing one JSON line per input to `out`.
pub fn classify_stream<W: Write>(
    items: Vec<SourceItem>,
    classifiers: &Classifiers,
    config: &PipelineConfig,
    out: &mut W,
) -> Result<RunLog> {
    classifiers.validate(config.mode)?;
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let index = Mutex::new(match &config.index_path {
        Some(p) if p.exists() => SignatureIndex::load(p)?,
        _ => SignatureIndex::default(),
    });
    let run_start = Instant::now();
    let mut log = RunLog::default();
    let (tx, rx) = sync_channel::<Decoded>(config.batch_size * 2);

    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            for item in items {
                let started = Instant::now();
                let result = decode(&item);
                let msg = Decoded { item, started, decode_ms: ms(started), result };
                if tx.send(msg).is_err() {
                    break;
                }
            }
        });

        let mut pending: Vec<Pending> = Vec::new();
        let mut queued = 0usize;
        for d in rx {
            let mut record = AnnotatedRecord {
                record_id: d.item.record_id.clone(),
                image_ref: d.item.image_ref.clone(),
                predictions: BTreeMap::new(),
                duplicate_of: None,
                error: None,
                filtered: false,
                latency_ms: 0.0,
                timings: StageTimings { decode_ms: d.decode_ms, ..Default::default() },
            };
            let mut image = None;
            match d.result {
                Err(e) => record.error = Some(e.to_string()),
                Ok((bytes, img)) => {
                    if config.dedup_enabled {
                        let t = Instant::now();
                        let sig = signature_of_decoded(&record.record_id, &bytes, &img);
                        record.duplicate_of =
                            index.lock().expect("index lock").check_and_insert(&sig, config.hamming_threshold);
                        record.timings.dedup_ms = ms(t);
                    }
                    if record.duplicate_of.is_none() {
                        image = Some(img.to_rgb8());
                        queued += 1;
                    }
                }
            }
            pending.push(Pending { record, started: d.started, image });
            if queued >= config.batch_size {
                flush(&mut pending, classifiers, config, out, &mut log)?;
                queued = 0;
            }
        }
        flush(&mut pending, classifiers, config, out, &mut log)
    })?;

    log.wall_seconds = run_start.elapsed().as_secs_f64();
    if let Some(p) = &config.index_path {
        index.lock().expect("index lock").save(p)?;
    }
    Ok(log)
}

/// Classifies the queued images and writes all pending records in arrival order.
fn flush<W: Write>(
    pending: &mut Vec<Pending>,
    classifiers: &Classifiers,
    config: &PipelineConfig,
    out: &mut W,
    log: &mut RunLog,
) -> Result<()> {
    let slots: Vec<usize> = pending.iter().enumerate().filter(|(_, p)| p.image.is_some()).map(|(i, _)| i).collect();
    if !slots.is_empty() {
        let images: Vec<&RgbImage> = slots.iter().map(|&i| pending[i].image.as_ref().expect("queued image")).collect();
        let t = Instant::now();
        let results = infer(&images, classifiers, config.filter_noninformative)?;
        let per_image = ms(t) / slots.len() as f64;
        for (&i, (preds, filtered)) in slots.iter().zip(results) {
            let p = &mut pending[i];
            p.record.predictions = preds;
            p.record.filtered = filtered;
            p.record.timings.inference_ms = per_image;
        }
    }
    for mut p in pending.drain(..) {
        p.record.latency_ms = ms(p.started);
        let mut line = serde_json::to_string(&p.record)?;
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io("pipeline output", e))?;
        out.flush().map_err(|e| Error::io("pipeline output", e))?;
        log.records.push((p.record.timings.clone(), p.record.latency_ms));
    }
    Ok(())
}

impl TaskPrediction {
    /// Arg-max class of a task's probability vector.
    pub fn new(task: TaskId, probs: Vec<f32>) -> Self {
        let class_index = crate::train::fit::argmax(&probs);
        let label = task.schema().label_name(class_index).unwrap_or("?").to_string();
        TaskPrediction { label, class_index, probs }
    }
}

fn is_informative(p: &TaskPrediction) -> bool {
    p.class_index == 0
}

type Annotated = (BTreeMap<TaskId, TaskPrediction>, bool);

fn batch_probs(ckpt: &Checkpoint, images: &[&RgbImage]) -> Result<Vec<Vec<Vec<f32>>>> {
    let size = ckpt.model.image_size();
    let resized: Vec<RgbImage> = images.iter().map(|i| resize_square(i, size)).collect();
    Ok(ckpt.predict_tensor(&to_tensor(&resized)?)?.into_iter().map(|p| p.probs).collect())
}

fn infer(images: &[&RgbImage], classifiers: &Classifiers, filter: bool) -> Result<Vec<Annotated>> {
    let mut out: Vec<Annotated> = vec![(BTreeMap::new(), false); images.len()];
    match classifiers {
        Classifiers::Multitask(ckpt) => {
            let tasks = ckpt.layout().tasks().to_vec();
            for (slot, probs) in out.iter_mut().zip(batch_probs(ckpt, images)?) {
                for (&t, p) in tasks.iter().zip(probs) {
                    slot.0.insert(t, TaskPrediction::new(t, p));
                }
                if filter {
                    if let Some(info) = slot.0.get(&TaskId::Informativeness) {
                        if !is_informative(info) {
                            slot.0.retain(|&t, _| t == TaskId::Informativeness);
                            slot.1 = true;
                        }
                    }
                }
            }
        }
        Classifiers::Chain(list) => {
            let mut ordered: Vec<&Checkpoint> = list.iter().collect();
            // Informativeness first so filtering can skip the rest.
            ordered.sort_by_key(|c| (c.layout().tasks()[0] != TaskId::Informativeness, c.layout().tasks()[0]));
            for ckpt in ordered {
                let task = ckpt.layout().tasks()[0];
                let active: Vec<usize> = (0..images.len()).filter(|&i| !out[i].1).collect();
                if active.is_empty() {
                    break;
                }
                let subset: Vec<&RgbImage> = active.iter().map(|&i| images[i]).collect();
                for (&i, mut probs) in active.iter().zip(batch_probs(ckpt, &subset)?) {
                    let p = TaskPrediction::new(task, probs.remove(0));
                    if filter && task == TaskId::Informativeness && !is_informative(&p) {
                        out[i].1 = true;
                    }
                    out[i].0.insert(task, p);
                }
            }
        }
    }
    Ok(out)
}
