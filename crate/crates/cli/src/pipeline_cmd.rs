use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Subcommand, ValueEnum};
use cvtk_core::curation::DEFAULT_HAMMING;
use cvtk_core::pipeline::{classify_stream, read_source, throughput_report, Classifiers, PipelineConfig, PipelineMode};
use cvtk_core::train::Checkpoint;

use crate::io::write_json;

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Multitask,
    SingleTaskChain,
}

#[derive(Subcommand)]
pub enum PipelineCmd {
    /// Classify a directory or list of images into line-delimited records.
    Run {
        #[arg(long, value_enum, default_value = "multitask")]
        mode: Mode,
        /// One multi-task checkpoint, or four single-task ones in chain mode.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Image directory or a file with one path per line.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the other tasks for images predicted not informative.
        #[arg(long)]
        filter_noninformative: bool,
        #[arg(long)]
        no_dedup: bool,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = DEFAULT_HAMMING)]
        hamming: u32,
        /// Persist the duplicate index here between runs.
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

pub fn run(cmd: PipelineCmd) -> Result<ExitCode> {
    let PipelineCmd::Run { mode, checkpoint, source, out, filter_noninformative, no_dedup, batch_size, hamming, index } =
        cmd;
    let mut ckpts = checkpoint.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>, _>>()?;
    let (mode, classifiers) = match mode {
        Mode::Multitask => {
            if ckpts.len() != 1 {
                bail!("multitask mode takes exactly one --checkpoint");
            }
            (PipelineMode::Multitask, Classifiers::Multitask(ckpts.remove(0)))
        }
        Mode::SingleTaskChain => (PipelineMode::SingleTaskChain, Classifiers::Chain(ckpts)),
    };
    let config = PipelineConfig {
        mode,
        dedup_enabled: !no_dedup,
        hamming_threshold: hamming,
        batch_size,
        filter_noninformative,
        index_path: index,
    };
    let items = read_source(&source)?;
    let mut writer = std::fs::File::create(&out).with_context(|| out.display().to_string())?;
    let log = classify_stream(items, &classifiers, &config, &mut writer)?;
    let report = throughput_report(&log)?;
    let summary = out.with_extension("summary.json");
    write_json(&summary, &report)?;
    println!(
        "{} image(s) in {:.2} s ({:.1} images/s); summary in {}",
        report.images,
        report.wall_seconds,
        report.images_per_second,
        summary.display()
    );
    for (stage, s) in &report.stages {
        println!("  {stage:<10} mean {:>9.2} ms   p95 {:>9.2} ms", s.mean_ms, s.p95_ms);
    }
    Ok(ExitCode::SUCCESS)
}
