use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::train::{fit, load_samples, Checkpoint, CheckpointMeta, Sampler, TrainConfig, TrainRun};

/// Trains a multi-task model on merged train/dev manifests with the masked
/// loss. The best checkpoint maximizes the mean of per-task dev accuracies.
pub fn train_multitask(model: Model, train: &Manifest, dev: &Manifest, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    if model.layout().num_tasks() < 2 {
        log::warn!("multi-task training with a single task; this is plain fine-tuning");
    }
    let tasks = model.layout().tasks().to_vec();
    let keep = |m: &Manifest| Manifest {
        records: m.records.iter().filter(|r| tasks.iter().any(|&t| r.labels.get(t).is_some())).cloned().collect(),
        ..m.clone()
    };
    let (train_s, bad_train) = load_samples(&keep(train), model.image_size());
    let (dev_s, bad_dev) = load_samples(&keep(dev), model.image_size());
    if train_s.is_empty() {
        return Err(Error::invalid("no decodable training image carries a label for the configured tasks"));
    }
    let outcome = fit(&model, &train_s, &[], &dev_s, config, None, Sampler::Plain, config.max_epochs)?;
    let meta = CheckpointMeta::new(&model, config, outcome.best_epoch, outcome.best_dev, None);
    Ok(TrainRun { checkpoint: Checkpoint::new(meta, model)?, history: outcome.history, skipped: bad_train.len() + bad_dev.len() })
}
