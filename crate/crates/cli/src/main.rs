mod data_cmds;
mod eval_cmds;
mod io;
mod model_cmds;
mod pipeline_cmd;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cvtk", version, about = "Crisis image classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manifest utilities.
    #[command(subcommand)]
    Manifest(data_cmds::ManifestCmd),
    /// Duplicate-aware splitting, consolidation and split statistics.
    #[command(subcommand)]
    Curate(data_cmds::CurateCmd),
    /// Merge per-task splits into multi-task train/dev/test manifests.
    MergeMultitask(data_cmds::MergeArgs),
    /// Keep only records labeled for every listed task.
    CompleteSubset(data_cmds::SubsetArgs),
    /// Fine-tune a single-task classifier.
    Train(model_cmds::TrainArgs),
    /// Train one shared backbone with a head per task.
    TrainMultitask(model_cmds::TrainMultitaskArgs),
    /// Teacher/student self-training on unlabeled images.
    NoisyStudent(model_cmds::NoisyStudentArgs),
    /// Write per-record predictions for a manifest.
    Predict(model_cmds::PredictArgs),
    /// Weighted precision/recall/F1 of one prediction file.
    Eval(eval_cmds::EvalArgs),
    /// Pairwise significance tests between prediction files.
    Compare(eval_cmds::CompareArgs),
    /// Grad-CAM heat-map overlay for one image.
    Explain(model_cmds::ExplainArgs),
    /// Streaming classification.
    #[command(subcommand)]
    Pipeline(pipeline_cmd::PipelineCmd),
    /// Loss and accuracy curves from a training history CSV.
    Plot(plot::PlotArgs),
    /// Layer and parameter counts of the supported backbones.
    Complexity {
        /// Classes in the head.
        #[arg(long, default_value_t = 2)]
        num_classes: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Manifest(c) => data_cmds::manifest(c),
        Command::Curate(c) => data_cmds::curate(c),
        Command::MergeMultitask(a) => data_cmds::merge(a),
        Command::CompleteSubset(a) => data_cmds::subset(a),
        Command::Train(a) => model_cmds::train(a),
        Command::TrainMultitask(a) => model_cmds::train_multitask(a),
        Command::NoisyStudent(a) => model_cmds::noisy_student(a),
        Command::Predict(a) => model_cmds::predict(a),
        Command::Eval(a) => eval_cmds::eval(a),
        Command::Compare(a) => eval_cmds::compare(a),
        Command::Explain(a) => model_cmds::explain(a),
        Command::Pipeline(c) => pipeline_cmd::run(c),
        Command::Plot(a) => plot::plot(a),
        Command::Complexity { num_classes, json } => model_cmds::complexity(num_classes, json),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
