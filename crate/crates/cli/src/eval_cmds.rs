use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use cvtk_core::eval::{evaluate, significance_matrix};
use cvtk_core::pipeline::TaskPrediction;
use cvtk_core::TaskId;
use serde::Deserialize;

use crate::io::{read_manifest, write_json};

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions (JSON lines from `cvtk predict` or `cvtk pipeline run`).
    #[arg(long)]
    preds: PathBuf,
    /// Gold manifest.
    #[arg(long)]
    gold: PathBuf,
    /// Task to score; inferred when the predictions cover a single task.
    #[arg(long)]
    task: Option<TaskId>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long, required = true, num_args = 2..)]
    preds: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    task: Option<TaskId>,
    /// Machine-readable matrix output.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Line {
    record_id: String,
    #[serde(default)]
    predictions: BTreeMap<TaskId, TaskPrediction>,
    /// Single-task shorthand.
    #[serde(default)]
    class_index: Option<usize>,
    #[serde(default)]
    label: Option<String>,
}

/// record_id → class index for `task`. Records without a prediction for the
/// task (duplicates, errors) are left out.
fn read_predictions(path: &Path, task: Option<TaskId>) -> Result<(TaskId, HashMap<String, usize>)> {
    let file = std::fs::File::open(path).with_context(|| path.display().to_string())?;
    let mut lines = Vec::new();
    for (i, l) in std::io::BufReader::new(file).lines().enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        lines.push(line);
    }
    let task = match task {
        Some(t) => t,
        None => {
            let mut seen: Vec<TaskId> = lines.iter().flat_map(|l| l.predictions.keys().copied()).collect();
            seen.sort();
            seen.dedup();
            match seen.as_slice() {
                [t] => *t,
                _ => bail!("{}: cannot infer the task; pass --task", path.display()),
            }
        }
    };
    let mut out = HashMap::new();
    for l in lines {
        let class = match (l.predictions.get(&task), l.class_index, &l.label) {
            (Some(p), _, _) => Some(p.class_index),
            (None, Some(c), _) => Some(c),
            (None, None, Some(name)) => Some(task.schema().encode_label(name)?),
            _ => None,
        };
        if let Some(c) = class {
            task.schema().check_index(c as i64)?;
            if out.insert(l.record_id.clone(), c).is_some() {
                bail!("{}: duplicate prediction for {}", path.display(), l.record_id);
            }
        }
    }
    Ok((task, out))
}

fn gold_labels(path: &Path, task: TaskId) -> Result<Vec<(String, usize)>> {
    Ok(read_manifest(path)?
        .records
        .iter()
        .filter_map(|r| r.labels.get(task).map(|c| (r.record_id.clone(), c)))
        .collect())
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let (task, preds) = read_predictions(&args.preds, args.task)?;
    let gold = gold_labels(&args.gold, task)?;
    let (mut p, mut g) = (Vec::new(), Vec::new());
    let mut missing = 0;
    for (id, c) in &gold {
        match preds.get(id) {
            Some(&x) => {
                p.push(x);
                g.push(*c);
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} gold record(s) have no prediction and are not scored");
    }
    let report = evaluate(&p, &g, task.schema())?;
    println!("{task}: {} scored record(s)\n{report}", p.len());
    if let Some(path) = args.json {
        write_json(&path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn compare(args: CompareArgs) -> Result<ExitCode> {
    let mut task = args.task;
    let mut sets = Vec::new();
    for path in &args.preds {
        let (t, preds) = read_predictions(path, task)?;
        task = Some(t);
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        sets.push((name, preds));
    }
    let task = task.expect("at least two prediction files");
    // Score only records every model predicted.
    let gold: Vec<(String, usize)> = gold_labels(&args.gold, task)?
        .into_iter()
        .filter(|(id, _)| sets.iter().all(|(_, p)| p.contains_key(id)))
        .collect();
    if gold.is_empty() {
        bail!("no gold record is predicted by every model");
    }
    let models: Vec<(String, Vec<usize>)> =
        sets.iter().map(|(n, p)| (n.clone(), gold.iter().map(|(id, _)| p[id]).collect())).collect();
    let g: Vec<usize> = gold.iter().map(|(_, c)| *c).collect();
    let matrix = significance_matrix(&models, &g, task.schema())?;
    println!("{task}: {} common record(s)\n{matrix}", g.len());
    if let Some(path) = args.json {
        write_json(&path, &matrix)?;
    }
    Ok(ExitCode::SUCCESS)
}
