use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fit::{argmax, DevMetrics};
use super::images::{decode_file, resize_square, to_tensor};
use super::TrainConfig;
use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::models::{build_model, BuildOptions, Model};
use crate::multitask::{segment_softmax, HeadLayout};

pub const CHECKPOINT_FORMAT: &str = "1";
const WEIGHTS_FILE: &str = "model.safetensors";
const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    /// Content hash of the weights.
    pub id: String,
    /// Checkpoint that produced the pseudo-labels this one was trained on.
    pub parent: Option<String>,
    pub backbone: String,
    pub tasks: Vec<TaskId>,
    pub num_classes: Vec<usize>,
    pub class_labels: Vec<Vec<String>>,
    pub image_size: usize,
    pub epoch: usize,
    pub dev_metrics: Option<DevMetrics>,
    pub config: TrainConfig,
}

impl CheckpointMeta {
    pub fn new(model: &Model, config: &TrainConfig, epoch: usize, dev: DevMetrics, parent: Option<String>) -> Self {
        let layout = model.layout();
        CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            id: String::new(),
            parent,
            backbone: model.backbone().into(),
            tasks: layout.tasks().to_vec(),
            num_classes: layout.num_classes().to_vec(),
            class_labels: layout.tasks().iter().map(|t| t.schema().class_labels.clone()).collect(),
            image_size: model.image_size(),
            epoch,
            dev_metrics: Some(dev),
            config: config.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let layout = HeadLayout::new(self.tasks.clone(), self.num_classes.clone())?;
        for (&t, &n) in layout.tasks().iter().zip(layout.num_classes()) {
            if n != t.schema().num_classes() {
                return Err(Error::invalid(format!(
                    "checkpoint head has {n} classes for {t}, schema has {}",
                    t.schema().num_classes()
                )));
            }
        }
        Ok(())
    }
}

/// Per-task probability vectors for one image, in checkpoint task order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<Vec<f32>>,
}

impl Prediction {
    pub fn class(&self, task_index: usize) -> usize {
        argmax(&self.probs[task_index])
    }

    pub fn confidence(&self, task_index: usize) -> f32 {
        self.probs[task_index][self.class(task_index)]
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

fn weights_hash(model: &Model) -> Result<String> {
    let mut h = Sha256::new();
    for (name, t) in model.state_dict()? {
        h.update(name.as_bytes());
        for v in t.flatten_all()?.to_vec1::<f32>()? {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

impl Checkpoint {
    pub fn new(mut meta: CheckpointMeta, model: Model) -> Result<Self> {
        meta.validate()?;
        meta.id = weights_hash(&model)?;
        Ok(Checkpoint { meta, model })
    }

    pub fn layout(&self) -> &HeadLayout {
        self.model.layout()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save_weights(&dir.join(WEIGHTS_FILE))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        let path = dir.join(META_FILE);
        std::fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("unsupported checkpoint format {}", meta.format)));
        }
        meta.validate()?;
        let layout = HeadLayout::new(meta.tasks.clone(), meta.num_classes.clone())?;
        let opts = BuildOptions {
            pretrained: false,
            weights_dir: None,
            seed: meta.config.seed,
            dropout: meta.config.dropout,
            image_size: Some(meta.image_size),
        };
        let model = build_model(&meta.backbone, layout, &opts)?;
        model.load_weights(&dir.join(WEIGHTS_FILE))?;
        Ok(Checkpoint { meta, model })
    }

    /// Probabilities for already-decoded images of any size.
    pub fn predict_images(&self, images: &[RgbImage]) -> Result<Vec<Prediction>> {
        let size = self.model.image_size();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.meta.config.eval_batch_size.max(1)) {
            let resized: Vec<RgbImage> = chunk.iter().map(|i| resize_square(i, size)).collect();
            out.extend(self.predict_tensor(&to_tensor(&resized)?)?);
        }
        Ok(out)
    }

    /// Probabilities for a normalized `(N, 3, S, S)` batch.
    pub fn predict_tensor(&self, x: &candle_core::Tensor) -> Result<Vec<Prediction>> {
        let logits = self.model.forward_t(x, false)?.to_vec2::<f32>()?;
        Ok(logits.iter().map(|row| Prediction { probs: segment_softmax(row, self.layout()) }).collect())
    }

    /// Decodes and classifies files; failures are reported per image.
    pub fn predict_paths(&self, paths: &[&Path]) -> Vec<Result<Prediction>> {
        paths
            .iter()
            .map(|p| {
                let img = decode_file(p)?;
                Ok(self.predict_images(std::slice::from_ref(&img))?.remove(0))
            })
            .collect()
    }
}
