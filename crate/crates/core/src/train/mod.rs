//! Fine-tuning harness: Adam, plateau learning-rate decay on dev accuracy,
//! best-dev checkpointing and per-epoch history.

mod adam;
mod checkpoint;
pub(crate) mod fit;
pub mod images;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::data::{Manifest, TaskId};
use crate::error::{Error, Result};
use crate::models::{build_model, BuildOptions, Model};
use crate::multitask::HeadLayout;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointMeta, Prediction, CHECKPOINT_FORMAT};
pub use fit::{evaluate_samples, fit, write_history, DevMetrics, EpochRecord, FitOutcome, Sampler};
pub use images::{load_samples, to_tensor, Sample, IMAGENET_MEAN, IMAGENET_STD};

/// Weight decay used with augmentation when none is configured.
pub const AUGMENT_WEIGHT_DECAY: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    /// `None`: 0 without augmentation, 1e-3 with it.
    pub weight_decay: Option<f64>,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub backbone: String,
    pub pretrained: bool,
    pub weights_dir: Option<std::path::PathBuf>,
    /// Square input side; `None` uses the backbone's canonical resolution.
    pub image_size: Option<usize>,
    /// Dropout before the classification layer; `None` keeps the backbone default.
    pub dropout: Option<f32>,
    /// Stop as soon as dev accuracy reaches this value.
    pub stop_at_dev_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            plateau_factor: 0.1,
            plateau_patience: 10,
            max_epochs: 150,
            weight_decay: None,
            batch_size: 16,
            eval_batch_size: 64,
            seed: 0,
            backbone: "efficientnet_b1".into(),
            pretrained: true,
            weights_dir: None,
            image_size: None,
            dropout: None,
            stop_at_dev_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate), ("plateau_factor", self.plateau_factor)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::invalid("plateau_factor must be below 1"));
        }
        if let Some(wd) = self.weight_decay {
            if wd < 0.0 {
                return Err(Error::invalid("weight_decay must be non-negative"));
            }
        }
        if self.max_epochs == 0 || self.plateau_patience >= self.max_epochs {
            return Err(Error::invalid("need 0 < plateau_patience < max_epochs"));
        }
        if self.batch_size < 2 || self.eval_batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 2 (batch norm statistics)"));
        }
        Ok(())
    }

    pub fn effective_weight_decay(&self, augmenting: bool) -> f64 {
        self.weight_decay.unwrap_or(if augmenting { AUGMENT_WEIGHT_DECAY } else { 0.0 })
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            pretrained: self.pretrained,
            weights_dir: self.weights_dir.clone(),
            seed: self.seed,
            dropout: self.dropout,
            image_size: self.image_size,
        }
    }
}

/// Reduce-on-plateau schedule over dev accuracy. An epoch counts as an
/// improvement only if it strictly beats the best accuracy so far; after
/// `patience` consecutive non-improving epochs the rate is multiplied by
/// `factor` and the count restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler { lr, factor, patience, best: None, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's dev accuracy and returns the rate for the next epoch.
    pub fn step(&mut self, dev_accuracy: f64) -> f64 {
        match self.best {
            Some(b) if dev_accuracy <= b => self.bad_epochs += 1,
            _ => {
                self.best = Some(dev_accuracy);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
        }
        self.lr
    }

    /// Learning rate in effect at each epoch for a whole accuracy history.
    pub fn schedule(lr: f64, factor: f64, patience: usize, dev_accuracies: &[f64]) -> Vec<f64> {
        let mut s = PlateauScheduler::new(lr, factor, patience);
        dev_accuracies
            .iter()
            .map(|&a| {
                let current = s.lr();
                s.step(a);
                current
            })
            .collect()
    }
}

/// Builds a single-task model with a `num_classes`-way head.
pub fn build_single_task(backbone: &str, task: TaskId, num_classes: usize, opts: &BuildOptions) -> Result<Model> {
    let layout = HeadLayout::new(vec![task], vec![num_classes])?;
    build_model(backbone, layout, opts)
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Records skipped because their image could not be decoded.
    pub skipped: usize,
}

/// Trains `model` on the labeled records of its task(s) and returns the
/// best-dev checkpoint with the per-epoch history.
pub fn train(
    model: Model,
    train: &Manifest,
    dev: &Manifest,
    config: &TrainConfig,
    augment: Option<&AugmentPolicy>,
) -> Result<TrainRun> {
    config.validate()?;
    let size = model.image_size();
    let tasks = model.layout().tasks().to_vec();
    let relevant = |m: &Manifest| Manifest {
        records: m.records.iter().filter(|r| tasks.iter().any(|&t| r.labels.get(t).is_some())).cloned().collect(),
        ..m.clone()
    };
    let (train_samples, bad_train) = load_samples(&relevant(train), size);
    let (dev_samples, bad_dev) = load_samples(&relevant(dev), size);
    if train_samples.is_empty() {
        return Err(Error::invalid("training manifest has no decodable labeled images"));
    }
    let outcome = fit(&model, &train_samples, &[], &dev_samples, config, augment, Sampler::Plain, config.max_epochs)?;
    let meta = CheckpointMeta::new(&model, config, outcome.best_epoch, outcome.best_dev.clone(), None);
    Ok(TrainRun {
        checkpoint: Checkpoint::new(meta, model)?,
        history: outcome.history,
        skipped: bad_train.len() + bad_dev.len(),
    })
}

/// Per-image probability vectors (one per task) from a checkpoint.
pub fn predict(checkpoint: &Checkpoint, images: &[image::RgbImage]) -> Result<Vec<Prediction>> {
    checkpoint.predict_images(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_flat_epochs_drop_the_rate_once() {
        let lrs = PlateauScheduler::schedule(1e-5, 0.1, 10, &[0.5; 13]);
        // Epochs 1..=11 run at 1e-5; the drop happens after epoch 11.
        assert!(lrs[..11].iter().all(|&l| l == 1e-5));
        assert!((lrs[11] - 1e-6).abs() < 1e-18);
        let mut s = PlateauScheduler::new(1e-5, 0.1, 10);
        for _ in 0..10 {
            s.step(0.5);
        }
        assert_eq!(s.lr(), 1e-5);
        assert!((s.step(0.5) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 3);
        s.step(0.5);
        s.step(0.5);
        s.step(0.5);
        assert_eq!(s.step(0.6), 1.0);
        s.step(0.6);
        s.step(0.59);
        assert_eq!(s.step(0.6), 0.5);
        // Count restarts after a reduction.
        s.step(0.6);
        s.step(0.6);
        assert_eq!(s.lr(), 0.5);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.plateau_factor, c.plateau_patience, c.max_epochs), (1e-5, 0.1, 10, 150));
        assert_eq!(c.effective_weight_decay(false), 0.0);
        assert_eq!(c.effective_weight_decay(true), 1e-3);
        assert!(c.pretrained);
        c.validate().unwrap();
        let bad = TrainConfig { plateau_patience: 150, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"learning_rate": 0.001, "backbone": "resnet18"}"#).unwrap();
        assert_eq!(parsed.batch_size, 16);
        assert_eq!(parsed.backbone, "resnet18");
    }
}
