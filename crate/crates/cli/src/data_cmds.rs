use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use cvtk_core::curation::{
    consolidate, find_duplicates, make_splits, resolve_cross_split_duplicates, signatures_for, split_stats,
    SplitDataset, SplitPlan, DEFAULT_HAMMING,
};
use cvtk_core::data::load_manifest;
use cvtk_core::merge::{complete_label_subset, merge_multitask};
use cvtk_core::{Manifest, TaskId};

use crate::io::{absolutize, read_manifest, read_splits, task_paths, write_json, write_splits};

#[derive(Subcommand)]
pub enum ManifestCmd {
    /// Exit 0 iff every record is valid; prints per-task class histograms.
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
pub enum CurateCmd {
    /// Stratified, duplicate-aware train/dev/test split of one manifest.
    Split {
        manifest: PathBuf,
        #[arg(long, default_value = "0.7,0.1,0.2")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stratify: TaskId,
        #[arg(long, default_value_t = DEFAULT_HAMMING)]
        hamming: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Consolidate split directories of several source datasets.
    Consolidate {
        /// Directories holding train.jsonl, dev.jsonl and test.jsonl; the
        /// directory name is the dataset name.
        #[arg(required = true, num_args = 1..)]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HAMMING)]
        hamming: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class split counts of a split directory.
    Stats {
        dir: PathBuf,
        /// Tasks to report (comma separated or `all`).
        #[arg(long, default_value = "all")]
        tasks: String,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct MergeArgs {
    /// Per-task split directories as TASK=DIR.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// Tasks to merge; with `--complete` only records labeled for all of them are kept.
    #[arg(long, default_value = "all")]
    tasks: String,
    #[arg(long)]
    complete: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SubsetArgs {
    /// Merged split directory.
    dir: PathBuf,
    #[arg(long)]
    tasks: String,
    #[arg(long)]
    out: PathBuf,
}

pub fn manifest(cmd: ManifestCmd) -> Result<ExitCode> {
    let ManifestCmd::Validate { path } = cmd;
    let (m, report) = load_manifest(&path)?;
    println!("{}: {} valid record(s), {} rejected", path.display(), report.loaded, report.rejected.len());
    for (line, reason) in &report.rejected {
        println!("  line {line}: {reason}");
    }
    for (task, counts) in m.class_histograms() {
        println!("{task}");
        let schema = task.schema();
        for (i, n) in counts.iter().enumerate() {
            println!("  {:<40}{n:>8}", schema.label_name(i).unwrap_or("?"));
        }
    }
    Ok(if report.rejected.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().context("ratios")?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("expected three comma-separated ratios, got {s:?}"),
    }
}

fn print_stats(manifest: &Manifest, plan: &SplitPlan, tasks: &[TaskId]) -> Vec<cvtk_core::curation::SplitStats> {
    tasks
        .iter()
        .map(|&t| {
            let s = split_stats(manifest, plan, t);
            println!("{s}");
            s
        })
        .collect()
}

pub fn curate(cmd: CurateCmd) -> Result<ExitCode> {
    match cmd {
        CurateCmd::Split { manifest, ratios, seed, stratify, hamming, out } => {
            let m = absolutize(read_manifest(&manifest)?);
            let (sigs, bad) = signatures_for(&m);
            for (id, e) in &bad {
                log::warn!("{id}: no signature: {e}");
            }
            let groups = find_duplicates(&sigs, hamming);
            let plan = make_splits(&m, parse_ratios(&ratios)?, seed, stratify)?;
            let (plan, moved) = resolve_cross_split_duplicates(&plan, &groups);
            log::info!("{} duplicate group(s); {moved} record(s) moved to train", groups.len());
            write_splits(&out, &plan.partition(&m))?;
            write_json(&out.join("duplicate_groups.json"), &groups)?;
            let stats = print_stats(&m, &plan, &[stratify]);
            write_json(&out.join("stats.json"), &stats)?;
        }
        CurateCmd::Consolidate { datasets, hamming, out } => {
            let mut inputs = Vec::new();
            for dir in &datasets {
                let [train, dev, test] = read_splits(dir)?;
                let plan = SplitPlan::from_manifests(&train, &dev, &test)?;
                let mut records = Vec::new();
                for m in [train, dev, test] {
                    records.extend(absolutize(m).records);
                }
                let manifest = Manifest::new(records, None);
                let (signatures, bad) = signatures_for(&manifest);
                for (id, e) in &bad {
                    log::warn!("{id}: no signature: {e}");
                }
                let name = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .with_context(|| format!("no dataset name in {}", dir.display()))?;
                inputs.push(SplitDataset { name, manifest, plan, signatures });
            }
            let c = consolidate(&inputs, hamming)?;
            log::info!(
                "{} record(s), {} duplicate group(s), {} label conflict(s), {} moved to train",
                c.manifest.len(),
                c.groups.len(),
                c.conflicts.len(),
                c.moved_to_train
            );
            write_splits(&out, &c.plan.partition(&c.manifest))?;
            write_json(&out.join("conflicts.json"), &c.conflicts)?;
            write_json(&out.join("duplicate_groups.json"), &c.groups)?;
        }
        CurateCmd::Stats { dir, tasks, json } => {
            let [train, dev, test] = read_splits(&dir)?;
            let plan = SplitPlan::from_manifests(&train, &dev, &test)?;
            let all = Manifest::new([train, dev, test].into_iter().flat_map(|m| m.records).collect(), None);
            let stats = print_stats(&all, &plan, &TaskId::parse_list(&tasks)?);
            if let Some(path) = json {
                write_json(&path, &stats)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_counts(splits: &[Manifest; 3], tasks: &[TaskId]) {
    println!("{:<24}{:>8}{:>8}{:>8}{:>8}", "task", "train", "dev", "test", "total");
    for &t in tasks {
        let n: Vec<usize> = splits.iter().map(|m| m.labeled_for(t).len()).collect();
        println!("{:<24}{:>8}{:>8}{:>8}{:>8}", t.as_str(), n[0], n[1], n[2], n.iter().sum::<usize>());
    }
    let n: Vec<usize> = splits.iter().map(Manifest::len).collect();
    println!("{:<24}{:>8}{:>8}{:>8}{:>8}", "images", n[0], n[1], n[2], n.iter().sum::<usize>());
}

pub fn merge(args: MergeArgs) -> Result<ExitCode> {
    let tasks = TaskId::parse_list(&args.tasks)?;
    let paths = task_paths(&args.inputs)?;
    let mut per_task = BTreeMap::new();
    for &t in &tasks {
        let dir = paths.get(&t).with_context(|| format!("no --input given for task {t}"))?;
        let splits = read_splits(dir)?;
        per_task.insert(t, splits.map(absolutize));
    }
    let mut merged = merge_multitask(&per_task)?;
    if args.complete {
        merged = complete_label_subset(&merged, &tasks);
    }
    report_counts(&merged, &tasks);
    write_splits(&args.out, &merged)?;
    Ok(ExitCode::SUCCESS)
}

pub fn subset(args: SubsetArgs) -> Result<ExitCode> {
    let tasks = TaskId::parse_list(&args.tasks)?;
    let merged = read_splits(&args.dir)?.map(absolutize);
    let out = complete_label_subset(&merged, &tasks);
    report_counts(&out, &tasks);
    write_splits(&args.out, &out)?;
    Ok(ExitCode::SUCCESS)
}
