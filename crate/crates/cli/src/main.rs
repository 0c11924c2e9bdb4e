//! `robustcls`: degradation, denoising, training, evaluation and reporting
//! from the command line.
//!
//! Every subcommand resolves its settings as defaults, then `--config`
//! file, then flags, and prints the result as `key=value` lines on stderr
//! before doing any work.

mod settings;

use std::io::Write as _;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robustcls::degrade::PRESETS;
use robustcls::pipeline::ExperimentConfig;

use settings::{run, CliError};

#[derive(Parser, Debug)]
#[command(
    name = "robustcls",
    version,
    about = "Image degradation, denoising and dual-channel CNN classification workbench",
    after_long_help = long_help()
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Seed of the subcommand's random stream [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    /// Output file or directory
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<std::path::PathBuf>,
    /// Worker threads [default: number of cores]; results do not depend on it
    #[arg(long, short = 'j', global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic shapes dataset
    GenDataset(GenArgs),
    /// Apply one distortion to a PNM image
    Degrade(DegradeArgs),
    /// Preprocess a PNM image with a denoiser
    Denoise(DenoiseArgs),
    /// Train a model variant and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on the clean cell and a distortion grid
    Eval(EvalArgs),
    /// Combine evaluation CSVs into the ratio CSV, SVG charts and a table
    Report(ReportArgs),
    /// Compare analytic and finite-difference gradients
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of classes, 2..=16 [default: 8]
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Images per class, split 80/10/10 [default: 100]
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Image side in pixels, a multiple of 8 [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    /// Input PGM/PPM
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<std::path::PathBuf>,
    /// gaussian, speckle, salt_pepper, jpeg or none
    #[arg(long)]
    pub kind: Option<String>,
    /// Preset level 1..=4 [default: 1]
    #[arg(long)]
    pub intensity: Option<u8>,
    /// Explicit sigma, p or quality overriding the preset
    #[arg(long)]
    pub param: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    /// Input PGM/PPM
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<std::path::PathBuf>,
    /// nlm, bilateral or tv [default: bilateral]
    #[arg(long)]
    pub method: Option<String>,
    /// Method parameter override, e.g. `--set sigma_r=0.2`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root [default: data]
    #[arg(long)]
    pub dataset: Option<String>,
    /// single_baseline, single_preprocessed or dual [default: dual]
    #[arg(long)]
    pub variant: Option<String>,
    /// concat or sum [default: concat]
    #[arg(long)]
    pub merge: Option<String>,
    /// 1, 2 or 3 [default: 3]
    #[arg(long)]
    pub strategy: Option<String>,
    /// nlm, bilateral or tv [default: bilateral]
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Existing baseline checkpoint to build on instead of pretraining
    #[arg(long, value_name = "FILE")]
    pub baseline: Option<String>,
    /// Also write the pretrained baseline checkpoint here
    #[arg(long, value_name = "FILE")]
    pub baseline_out: Option<String>,
    /// Any experiment key, e.g. `--set lr0=0.01`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<String>,
    /// Dataset root [default: data]
    #[arg(long)]
    pub dataset: Option<String>,
    /// Model name used in reports [default: derived from the checkpoint]
    #[arg(long)]
    pub label: Option<String>,
    /// Distortion kinds joined with `+` [default: gaussian+speckle+salt_pepper+jpeg]
    #[arg(long)]
    pub kinds: Option<String>,
    /// Intensities joined with `+` [default: 1+2+3+4]
    #[arg(long)]
    pub intensities: Option<String>,
    /// Root of the per-image noise seeds [default: 1234]
    #[arg(long)]
    pub grid_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Evaluation CSVs; exactly one model must be a single_baseline
    #[arg(value_name = "EVAL_CSV")]
    pub inputs: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// concat or sum [default: concat]
    #[arg(long)]
    pub merge: Option<String>,
    /// Use pass-through kernels on monotone inputs (an exactly linear network)
    #[arg(long)]
    pub linear_only: bool,
    /// Input side in pixels, a multiple of 8 [default: 16]
    #[arg(long)]
    pub size: Option<usize>,
    /// Batch size, at most 4 [default: 2]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Number of classes [default: 4]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Central-difference step [default: 0.001]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Parameters sampled per tensor [default: 200]
    #[arg(long)]
    pub per_tensor: Option<usize>,
    /// Failure threshold on the maximum relative error [default: 0.01]
    #[arg(long)]
    pub tolerance: Option<f64>,
}

fn long_help() -> String {
    let mut s = String::from("Degradation presets:\n");
    s += &PRESETS.describe();
    s += "\nDenoiser defaults:\n";
    for method in ["nlm", "bilateral", "tv"] {
        let spec = robustcls::denoise::DenoiserSpec::default_for(method).expect("known method");
        s += &format!("  {spec}\n");
    }
    s += "\nExperiment keys for --config and `train --set` (defaults):\n";
    for line in ExperimentConfig::keys_help().lines() {
        s += &format!("  {line}\n");
    }
    s += "\nConfig files hold one key=value per line; `#` starts a comment.\n";
    s += "Exit status: 0 success, 1 usage error, 2 runtime error.\n";
    s
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.global, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "error: {err}");
            ExitCode::from(match err {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
