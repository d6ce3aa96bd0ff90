use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use cvtk_core::augment::AugmentPolicy;
use cvtk_core::data::{ImageRecord, LabelVector};
use cvtk_core::explain::{grad_cam, overlay};
use cvtk_core::models::{complexity_report, render_complexity};
use cvtk_core::multitask::{train_multitask as fit_multitask, HeadLayout};
use cvtk_core::noisy_student::{iterate, sweep_threshold, threshold_grid, NoisyStudentConfig};
use cvtk_core::pipeline::{read_source, TaskPrediction};
use cvtk_core::train::images::decode_file;
use cvtk_core::train::{build_single_task, load_samples, train as fit_single, write_history, Checkpoint, TrainConfig, TrainRun};
use cvtk_core::models::build_model;
use cvtk_core::{Manifest, TaskId};
use serde::{Deserialize, Serialize};

use crate::io::{read_json, read_manifest, write_json};

#[derive(Args)]
pub struct DataArgs {
    /// Training manifest.
    #[arg(long)]
    train: PathBuf,
    /// Dev manifest used for model selection and the LR schedule.
    #[arg(long)]
    dev: PathBuf,
    /// JSON training configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the checkpoint and history.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    task: TaskId,
    /// Overrides the configured backbone.
    #[arg(long)]
    backbone: Option<String>,
    /// RandAugment with the default policy (N=5, M=12).
    #[arg(long)]
    augment: bool,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
pub struct TrainMultitaskArgs {
    /// `all` or a comma-separated list such as `info,hum`.
    #[arg(long)]
    tasks: String,
    #[arg(long)]
    backbone: Option<String>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
pub struct NoisyStudentArgs {
    #[arg(long)]
    task: TaskId,
    /// Directory (or list file) of unlabeled images.
    #[arg(long)]
    unlabeled: PathBuf,
    /// `auto` searches the dev set over 0.05, 0.10, ..., 0.95.
    #[arg(long, default_value = "auto")]
    threshold: String,
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    /// Existing teacher checkpoint; trained from the labeled data when absent.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// JSON self-training configuration.
    #[arg(long)]
    ns_config: Option<PathBuf>,
    #[arg(long)]
    backbone: Option<String>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Class label name, or `predicted`.
    #[arg(long, default_value = "predicted")]
    class: String,
    /// Task to explain; required for multi-task checkpoints.
    #[arg(long)]
    task: Option<TaskId>,
    #[arg(long)]
    out: PathBuf,
}

/// One line of a predictions file.
#[derive(Serialize, Deserialize)]
pub struct PredictionLine {
    pub record_id: String,
    pub predictions: BTreeMap<TaskId, TaskPrediction>,
}

fn load_config(path: Option<&Path>, backbone: Option<String>) -> Result<TrainConfig> {
    let mut config: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(b) = backbone {
        config.backbone = b;
    }
    config.validate()?;
    Ok(config)
}

fn finish(run: &TrainRun, out: &Path) -> Result<ExitCode> {
    run.checkpoint.save(out)?;
    write_history(&run.history, &out.join("history.csv"))?;
    let dev = run.checkpoint.meta.dev_metrics.as_ref().map_or(0.0, |d| d.accuracy);
    println!(
        "checkpoint {} (epoch {}, dev accuracy {dev:.4}) written to {}",
        run.checkpoint.meta.id,
        run.checkpoint.meta.epoch,
        out.display()
    );
    if run.skipped > 0 {
        log::warn!("{} record(s) skipped: image could not be decoded", run.skipped);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let config = load_config(args.data.config.as_deref(), args.backbone)?;
    let train = read_manifest(&args.data.train)?.labeled_for(args.task);
    let dev = read_manifest(&args.data.dev)?.labeled_for(args.task);
    let model = build_single_task(&config.backbone, args.task, args.task.schema().num_classes(), &config.build_options())?;
    let policy = args.augment.then(AugmentPolicy::default);
    let run = fit_single(model, &train, &dev, &config, policy.as_ref())?;
    finish(&run, &args.data.out)
}

pub fn train_multitask(args: TrainMultitaskArgs) -> Result<ExitCode> {
    let config = load_config(args.data.config.as_deref(), args.backbone)?;
    let tasks = TaskId::parse_list(&args.tasks)?;
    let layout = HeadLayout::for_tasks(&tasks)?;
    let model = build_model(&config.backbone, layout, &config.build_options())?;
    let run = fit_multitask(model, &read_manifest(&args.data.train)?, &read_manifest(&args.data.dev)?, &config)?;
    finish(&run, &args.data.out)
}

fn unlabeled_manifest(source: &Path) -> Result<Manifest> {
    let records = read_source(source)?
        .into_iter()
        .map(|i| ImageRecord::new(i.record_id, "unlabeled", i.image_ref, LabelVector::empty()))
        .collect::<Vec<_>>();
    if records.is_empty() {
        bail!("no images found in {}", source.display());
    }
    Ok(Manifest::new(records, None))
}

pub fn noisy_student(args: NoisyStudentArgs) -> Result<ExitCode> {
    let task = args.task;
    let config = load_config(args.data.config.as_deref(), args.backbone)?;
    let mut ns: NoisyStudentConfig = match &args.ns_config {
        Some(p) => read_json(p)?,
        None => NoisyStudentConfig::for_task(task),
    };
    ns.iterations = args.iterations;
    let labeled = read_manifest(&args.data.train)?.labeled_for(task);
    let dev = read_manifest(&args.data.dev)?.labeled_for(task);
    let unlabeled = unlabeled_manifest(&args.unlabeled)?;
    let out = &args.data.out;

    let mut teacher = match &args.teacher {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    if args.threshold == "auto" {
        let t = match teacher.take() {
            Some(t) => t,
            None => {
                let model = build_single_task(&config.backbone, task, task.schema().num_classes(), &config.build_options())?;
                let run = fit_single(model, &labeled, &dev, &config, None)?;
                run.checkpoint.save(&out.join("teacher"))?;
                write_history(&run.history, &out.join("teacher").join("history.csv"))?;
                run.checkpoint
            }
        };
        let sweep = sweep_threshold(&t, &labeled, &dev, &unlabeled, task, &config, &ns, &threshold_grid())?;
        for (th, kept, acc) in &sweep.results {
            let acc = acc.map_or("-".to_string(), |a| format!("{a:.4}"));
            println!("threshold {th:.2}: {kept:>6} pseudo-labels, student dev accuracy {acc}");
        }
        println!("selected threshold {:.2}", sweep.best);
        write_json(&out.join("threshold_sweep.json"), &sweep)?;
        ns.confidence_threshold = sweep.best;
        teacher = Some(t);
    } else {
        ns.confidence_threshold = args.threshold.parse().context("--threshold must be `auto` or a number")?;
    }
    let run = iterate(teacher, &labeled, &dev, &unlabeled, task, &config, &ns)?;
    for r in &run.rounds {
        println!(
            "round {}: teacher {} -> student {}, {}/{} pseudo-labels kept, dev accuracy {:.4}",
            r.round, r.teacher_id, r.student_id, r.kept, r.pseudo_labeled, r.student_dev_accuracy
        );
    }
    run.student.save(out)?;
    if let Some(h) = run.histories.last() {
        write_history(h, &out.join("history.csv"))?;
    }
    write_json(&out.join("rounds.json"), &run.rounds)?;
    Ok(ExitCode::SUCCESS)
}

pub fn predict(args: PredictArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let manifest = read_manifest(&args.manifest)?;
    let (samples, bad) = load_samples(&manifest, ckpt.model.image_size());
    for (id, e) in &bad {
        log::warn!("{id}: skipped: {e}");
    }
    let tasks = ckpt.layout().tasks().to_vec();
    let mut w = BufWriter::new(std::fs::File::create(&args.out).with_context(|| args.out.display().to_string())?);
    for chunk in samples.chunks(64) {
        let images: Vec<_> = chunk.iter().map(|s| (*s.image).clone()).collect();
        for (s, p) in chunk.iter().zip(ckpt.predict_images(&images)?) {
            let predictions = tasks.iter().zip(p.probs).map(|(&t, probs)| (t, TaskPrediction::new(t, probs))).collect();
            serde_json::to_writer(&mut w, &PredictionLine { record_id: s.record_id.clone(), predictions })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    println!("{} prediction(s) written to {}", samples.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn explain(args: ExplainArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let tasks = ckpt.layout().tasks().to_vec();
    let task = match args.task {
        Some(t) => t,
        None if tasks.len() == 1 => tasks[0],
        None => bail!("checkpoint has several tasks; pass --task"),
    };
    let ti = ckpt.layout().task_index(task).with_context(|| format!("checkpoint has no {task} head"))?;
    let image = decode_file(&args.image)?;
    let probs = &ckpt.predict_images(std::slice::from_ref(&image))?[0];
    let class = if args.class == "predicted" {
        probs.class(ti)
    } else {
        task.schema().encode_label(&args.class)?
    };
    let cam = grad_cam(&ckpt.model, &image, ti, class)?;
    overlay(&cam, &image)?.save(&args.out).with_context(|| args.out.display().to_string())?;
    println!(
        "{task}: explained class {:?} (p = {:.3}) -> {}",
        task.schema().label_name(class).unwrap_or("?"),
        probs.probs[ti][class],
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn complexity(num_classes: usize, json: Option<PathBuf>) -> Result<ExitCode> {
    let rows = complexity_report(&[], num_classes)?;
    print!("{}", render_complexity(&rows));
    if let Some(p) = json {
        write_json(&p, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}
