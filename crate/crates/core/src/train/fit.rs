use std::path::Path;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::images::{to_tensor, Sample};
use super::{PlateauScheduler, TrainConfig};
use crate::augment::AugmentPolicy;
use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::multitask::{batch_loss, labels_tensor, HeadLayout};

/// How training batches are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    /// Shuffled passes over the training set.
    Plain,
    /// Every step concatenates `labeled` labeled and `pseudo` pseudo-labeled
    /// images; an epoch is enough steps to see the larger pool once.
    Mixed { labeled: usize, pseudo: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    /// Unweighted mean of per-task accuracies.
    pub accuracy: f64,
    pub loss: f64,
    pub per_task: Vec<(TaskId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
    pub task_dev_acc: Vec<(TaskId, f64)>,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub best_epoch: usize,
    pub best_dev: DevMetrics,
    pub history: Vec<EpochRecord>,
}

/// Per-task (correct, labeled) counts of argmax predictions.
fn count_correct(logits: &Tensor, samples: &[&Sample], layout: &HeadLayout, tally: &mut [(usize, usize)]) -> Result<()> {
    let rows = logits.to_vec2::<f32>()?;
    for (row, s) in rows.iter().zip(samples) {
        for (i, &task) in layout.tasks().iter().enumerate() {
            if let Some(gold) = s.labels.get(task) {
                let seg = &row[layout.range(i)?];
                let pred = argmax(seg);
                tally[i].1 += 1;
                tally[i].0 += usize::from(pred == gold);
            }
        }
    }
    Ok(())
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    v.iter().enumerate().fold((0, f32::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0
}

fn mean_accuracy(tally: &[(usize, usize)]) -> f64 {
    let accs: Vec<f64> = tally.iter().filter(|t| t.1 > 0).map(|&(c, n)| c as f64 / n as f64).collect();
    if accs.is_empty() {
        0.0
    } else {
        accs.iter().sum::<f64>() / accs.len() as f64
    }
}

/// Loss and per-task accuracy in evaluation mode.
pub fn evaluate_samples(model: &Model, samples: &[Sample], batch_size: usize) -> Result<DevMetrics> {
    let layout = model.layout();
    let mut tally = vec![(0, 0); layout.num_tasks()];
    let mut loss_sum = 0.0;
    let mut loss_rows = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let x = to_tensor(&chunk.iter().map(|s| s.image.as_ref()).collect::<Vec<_>>())?;
        let logits = model.forward_t(&x, false)?;
        let labels = labels_tensor(&chunk.iter().map(|s| s.labels).collect::<Vec<_>>(), layout, x.device())?;
        if chunk.iter().any(|s| layout.tasks().iter().any(|&t| s.labels.get(t).is_some())) {
            loss_sum += batch_loss(&logits, &labels, layout)?.to_scalar::<f32>()? as f64 * chunk.len() as f64;
            loss_rows += chunk.len();
        }
        count_correct(&logits, &refs, layout, &mut tally)?;
    }
    Ok(DevMetrics {
        accuracy: mean_accuracy(&tally),
        loss: if loss_rows > 0 { loss_sum / loss_rows as f64 } else { 0.0 },
        per_task: layout
            .tasks()
            .iter()
            .zip(&tally)
            .map(|(&t, &(c, n))| (t, if n > 0 { c as f64 / n as f64 } else { 0.0 }))
            .collect(),
    })
}

/// Index batches for one epoch. A trailing batch of one joins the previous
/// batch, since batch norm needs two samples.
fn plain_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// One epoch of (labeled, pseudo) index batches: enough steps for the larger
/// pool to be seen once.
fn mixed_batches(
    labeled: &mut Cycle,
    pseudo: &mut Cycle,
    (nl, np): (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let steps = labeled.order.len().div_ceil(nl).max(pseudo.order.len().div_ceil(np));
    (0..steps).map(|_| (labeled.take(nl, rng), pseudo.take(np, rng))).collect()
}

/// Endless reshuffled cycle over a pool.
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycle { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Shared optimization loop for single-task, multi-task and student training.
/// The model ends in its best-dev state (ties keep the earliest epoch).
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &Model,
    train: &[Sample],
    pseudo: &[Sample],
    dev: &[Sample],
    config: &TrainConfig,
    augment: Option<&AugmentPolicy>,
    sampler: Sampler,
    epochs: usize,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("empty dev set"));
    }
    if let Sampler::Mixed { labeled, pseudo: p } = sampler {
        if pseudo.is_empty() || labeled == 0 || p == 0 {
            return Err(Error::invalid("mixed sampling needs a non-empty pseudo set and positive batch sizes"));
        }
    } else if train.len() < 2 {
        return Err(Error::invalid("need at least two training images"));
    }
    let layout = model.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    model.reseed_noise(config.seed);
    let vars = model.trainable_vars().into_iter().map(|(_, v)| v).collect();
    let mut opt = Adam::new(vars, config.learning_rate, config.effective_weight_decay(augment.is_some()));
    let mut scheduler = PlateauScheduler::new(config.learning_rate, config.plateau_factor, config.plateau_patience);
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(usize, DevMetrics, std::collections::BTreeMap<String, Tensor>)> = None;
    let mut labeled_cycle = Cycle::new(train.len(), &mut rng);
    let mut pseudo_cycle = Cycle::new(pseudo.len(), &mut rng);

    for epoch in 1..=epochs {
        opt.lr = scheduler.lr();
        let steps: Vec<Vec<&Sample>> = match sampler {
            Sampler::Plain => plain_batches(train.len(), config.batch_size, &mut rng)
                .into_iter()
                .map(|b| b.into_iter().map(|i| &train[i]).collect())
                .collect(),
            Sampler::Mixed { labeled, pseudo: p } => {
                mixed_batches(&mut labeled_cycle, &mut pseudo_cycle, (labeled, p), &mut rng)
                    .into_iter()
                    .map(|(l, u)| l.into_iter().map(|i| &train[i]).chain(u.into_iter().map(|i| &pseudo[i])).collect())
                    .collect()
            }
        };
        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        let mut tally = vec![(0, 0); layout.num_tasks()];
        for batch in steps {
            let images: Vec<image::RgbImage> = batch
                .iter()
                .map(|s| match augment {
                    Some(p) => p.apply(&s.image, &mut rng),
                    None => (*s.image).clone(),
                })
                .collect();
            let x = to_tensor(&images)?;
            let labels = labels_tensor(&batch.iter().map(|s| s.labels).collect::<Vec<_>>(), &layout, x.device())?;
            let logits = model.forward_t(&x, true)?;
            let loss = match batch_loss(&logits, &labels, &layout) {
                Ok(l) => l,
                // A batch whose every label is missing carries no signal.
                Err(Error::Invalid(_)) => continue,
                Err(e) => return Err(e),
            };
            opt.step(&loss.backward()?)?;
            loss_sum += loss.to_scalar::<f32>()? as f64 * batch.len() as f64;
            rows += batch.len();
            count_correct(&logits.detach(), &batch, &layout, &mut tally)?;
        }
        let dev_metrics = evaluate_samples(model, dev, config.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            lr: opt.lr,
            train_loss: if rows > 0 { loss_sum / rows as f64 } else { f64::NAN },
            train_acc: mean_accuracy(&tally),
            dev_loss: dev_metrics.loss,
            dev_acc: dev_metrics.accuracy,
            task_dev_acc: dev_metrics.per_task.clone(),
        };
        log::info!(
            "epoch {epoch}: lr {:.2e} train loss {:.4} acc {:.4} | dev loss {:.4} acc {:.4}",
            record.lr,
            record.train_loss,
            record.train_acc,
            record.dev_loss,
            record.dev_acc
        );
        history.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| dev_metrics.accuracy > b.accuracy) {
            best = Some((epoch, dev_metrics.clone(), model.state_dict()?));
        }
        scheduler.step(dev_metrics.accuracy);
        if config.stop_at_dev_accuracy.is_some_and(|t| dev_metrics.accuracy >= t) {
            break;
        }
    }
    let (best_epoch, best_dev, state) = best.ok_or_else(|| Error::invalid("max_epochs must be positive"))?;
    model.load_state_dict(&state.into_iter().collect())?;
    Ok(FitOutcome { best_epoch, best_dev, history })
}

/// Writes the history as CSV: epoch, lr, train_loss, train_acc, dev_loss,
/// dev_acc, then one `dev_acc_<task>` column per task when there are several.
pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let tasks: Vec<TaskId> = history.first().map(|r| r.task_dev_acc.iter().map(|t| t.0).collect()).unwrap_or_default();
    let per_task = tasks.len() > 1;
    let mut header: Vec<String> = ["epoch", "lr", "train_loss", "train_acc", "dev_loss", "dev_acc"].map(String::from).to_vec();
    if per_task {
        header.extend(tasks.iter().map(|t| format!("dev_acc_{}", t.short())));
    }
    w.write_record(&header)?;
    for r in history {
        let mut row = vec![
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.dev_loss.to_string(),
            r.dev_acc.to_string(),
        ];
        if per_task {
            row.extend(r.task_dev_acc.iter().map(|(_, a)| a.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
