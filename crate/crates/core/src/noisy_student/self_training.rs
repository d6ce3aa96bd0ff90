use std::collections::BTreeMap;

use serde::Serialize;

use super::{filter_and_balance, NoisyStudentConfig, PseudoLabel};
use crate::data::{Manifest, TaskId};
use crate::error::{Error, Result};
use crate::models::count_parameters;
use crate::train::images::{decode_file, resize_square, to_tensor};
use crate::train::{
    build_single_task, evaluate_samples, fit, load_samples, train, Checkpoint, CheckpointMeta, EpochRecord, Sampler,
    TrainConfig, TrainRun,
};

/// Teacher predictions on the unlabeled pool. Returns the pseudo-labels and
/// the number of images that could not be decoded.
pub fn pseudo_label(teacher: &Checkpoint, task: TaskId, unlabeled: &Manifest) -> Result<(Vec<PseudoLabel>, usize)> {
    let ti = teacher
        .layout()
        .task_index(task)
        .ok_or_else(|| Error::invalid(format!("teacher was not trained for {task}")))?;
    let size = teacher.model.image_size();
    let batch = teacher.meta.config.eval_batch_size.max(1);
    let mut out = Vec::with_capacity(unlabeled.len());
    let mut skipped = 0;
    for chunk in unlabeled.records.chunks(batch) {
        let mut images = Vec::new();
        let mut kept = Vec::new();
        for r in chunk {
            match decode_file(&unlabeled.image_path(r)) {
                Ok(img) => {
                    images.push(resize_square(&img, size));
                    kept.push(r);
                }
                Err(e) => {
                    log::warn!("skipping unlabeled image {}: {e}", r.record_id);
                    skipped += 1;
                }
            }
        }
        if images.is_empty() {
            continue;
        }
        for (r, p) in kept.into_iter().zip(teacher.predict_tensor(&to_tensor(&images)?)?) {
            out.push(PseudoLabel::from_probs(&r.record_id, unlabeled.image_path(r).to_string_lossy(), &p.probs[ti])?);
        }
    }
    Ok((out, skipped))
}

/// Trains a noised student on labeled plus pseudo-labeled images. Each step
/// concatenates `labeled_batch` labeled and `unlabeled_batch` pseudo images,
/// augments all of them and averages the cross-entropy over the whole batch.
pub fn train_student(
    teacher: &Checkpoint,
    labeled: &Manifest,
    dev: &Manifest,
    pseudo: &Manifest,
    task: TaskId,
    config: &TrainConfig,
    ns: &NoisyStudentConfig,
) -> Result<TrainRun> {
    ns.validate()?;
    if pseudo.is_empty() {
        return Err(Error::invalid("pseudo-labeled set is empty"));
    }
    let backbone = ns.student_backbone.clone().unwrap_or_else(|| teacher.meta.backbone.clone());
    let n = task.schema().num_classes();
    let student_params = count_parameters(&backbone, n)?;
    let teacher_params = teacher.model.num_parameters();
    if student_params < teacher_params {
        return Err(Error::invalid(format!(
            "student {backbone} ({student_params} parameters) is smaller than the teacher ({teacher_params})"
        )));
    }
    let mut opts = config.build_options();
    opts.dropout = Some(ns.dropout_rate);
    opts.image_size = Some(teacher.model.image_size());
    let model = build_single_task(&backbone, task, n, &opts)?;
    let size = model.image_size();
    let (labeled_s, bad_l) = load_samples(&labeled.labeled_for(task), size);
    let (pseudo_s, bad_p) = load_samples(pseudo, size);
    let (dev_s, bad_d) = load_samples(&dev.labeled_for(task), size);
    if labeled_s.is_empty() {
        return Err(Error::invalid("no decodable labeled images"));
    }
    let sampler = Sampler::Mixed { labeled: ns.labeled_batch, pseudo: ns.unlabeled_batch };
    let outcome = fit(&model, &labeled_s, &pseudo_s, &dev_s, config, Some(&ns.augment), sampler, ns.student_epochs)?;
    let mut student_config = config.clone();
    student_config.backbone = backbone;
    student_config.dropout = Some(ns.dropout_rate);
    let meta = CheckpointMeta::new(&model, &student_config, outcome.best_epoch, outcome.best_dev, Some(teacher.meta.id.clone()));
    Ok(TrainRun {
        checkpoint: Checkpoint::new(meta, model)?,
        history: outcome.history,
        skipped: bad_l.len() + bad_p.len() + bad_d.len(),
    })
}

/// One teacher → student round.
#[derive(Clone, Debug, Serialize)]
pub struct Round {
    pub round: usize,
    pub teacher_id: String,
    pub student_id: String,
    pub threshold: f64,
    pub pseudo_labeled: usize,
    pub kept: usize,
    pub student_dev_accuracy: f64,
}

#[derive(Debug)]
pub struct SelfTrainingRun {
    pub student: Checkpoint,
    pub rounds: Vec<Round>,
    pub histories: Vec<Vec<EpochRecord>>,
}

/// Full self-training: trains a teacher on the labeled data unless one is
/// given, then repeats pseudo-labeling, filtering/balancing and student
/// training `ns.iterations` times, each student becoming the next teacher.
#[allow(clippy::too_many_arguments)]
pub fn iterate(
    teacher: Option<Checkpoint>,
    labeled: &Manifest,
    dev: &Manifest,
    unlabeled: &Manifest,
    task: TaskId,
    config: &TrainConfig,
    ns: &NoisyStudentConfig,
) -> Result<SelfTrainingRun> {
    ns.validate()?;
    let mut histories = Vec::new();
    let mut teacher = match teacher {
        Some(t) => t,
        None => {
            let model = build_single_task(&config.backbone, task, task.schema().num_classes(), &config.build_options())?;
            let run = train(model, &labeled.labeled_for(task), &dev.labeled_for(task), config, None)?;
            histories.push(run.history);
            run.checkpoint
        }
    };
    let mut rounds = Vec::new();
    for round in 1..=ns.iterations {
        let (pseudo, _) = pseudo_label(&teacher, task, unlabeled)?;
        let kept = filter_and_balance(&pseudo, ns.confidence_threshold, task)?;
        if kept.is_empty() {
            return Err(Error::invalid(format!(
                "round {round}: no class keeps a pseudo-label above {}",
                ns.confidence_threshold
            )));
        }
        let run = train_student(&teacher, labeled, dev, &kept, task, config, ns)?;
        rounds.push(Round {
            round,
            teacher_id: teacher.meta.id.clone(),
            student_id: run.checkpoint.meta.id.clone(),
            threshold: ns.confidence_threshold,
            pseudo_labeled: pseudo.len(),
            kept: kept.len(),
            student_dev_accuracy: run.checkpoint.meta.dev_metrics.as_ref().map_or(0.0, |d| d.accuracy),
        });
        histories.push(run.history);
        teacher = run.checkpoint;
    }
    Ok(SelfTrainingRun { student: teacher, rounds, histories })
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdSweep {
    /// `(threshold, kept pseudo-labels, student dev accuracy)`; accuracy is
    /// `None` when nothing survives the threshold.
    pub results: Vec<(f64, usize, Option<f64>)>,
    pub best: f64,
}

/// Picks the confidence threshold by student dev accuracy over `grid`.
/// Thresholds that keep the same pseudo set share one student.
#[allow(clippy::too_many_arguments)]
pub fn sweep_threshold(
    teacher: &Checkpoint,
    labeled: &Manifest,
    dev: &Manifest,
    unlabeled: &Manifest,
    task: TaskId,
    config: &TrainConfig,
    ns: &NoisyStudentConfig,
    grid: &[f64],
) -> Result<ThresholdSweep> {
    let (pseudo, _) = pseudo_label(teacher, task, unlabeled)?;
    let mut cache: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    let mut results = Vec::new();
    for &t in grid {
        let kept = filter_and_balance(&pseudo, t, task)?;
        if kept.is_empty() {
            results.push((t, 0, None));
            continue;
        }
        let key: Vec<String> = kept.records.iter().map(|r| r.record_id.clone()).collect();
        let acc = match cache.get(&key) {
            Some(&a) => a,
            None => {
                let run = train_student(teacher, labeled, dev, &kept, task, config, ns)?;
                let (dev_s, _) = load_samples(&dev.labeled_for(task), run.checkpoint.model.image_size());
                let a = evaluate_samples(&run.checkpoint.model, &dev_s, config.eval_batch_size)?.accuracy;
                cache.insert(key, a);
                a
            }
        };
        results.push((t, kept.len(), Some(acc)));
    }
    // Highest accuracy; the lowest threshold wins ties.
    let best = results
        .iter()
        .filter_map(|&(t, _, a)| a.map(|a| (t, a)))
        .fold(None, |b: Option<(f64, f64)>, (t, a)| match b {
            Some((_, ba)) if ba >= a => b,
            _ => Some((t, a)),
        })
        .map(|(t, _)| t)
        .ok_or_else(|| Error::invalid("no threshold in the grid keeps any pseudo-label"))?;
    Ok(ThresholdSweep { results, best })
}
