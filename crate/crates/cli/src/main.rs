//! `lact`: command-line front end for the limited-angle CT toolkit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "lact", version, about = "Limited-angle CT simulation, analysis and restoration")]
pub struct Cli {
    /// JSON config with flat dotted keys such as "train.epochs"; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 gives fully serial execution.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a Shepp-Logan or random ellipse phantom.
    Phantom(PhantomArgs),
    /// Parallel-beam forward projection of an image.
    Project(ProjectArgs),
    /// Filtered backprojection of a sinogram.
    Fbp(FbpArgs),
    /// POCS-TV reconstruction of a sinogram.
    Tv(TvArgs),
    /// Synthesize a training/validation corpus of limited/full FBP pairs.
    Dataset(DatasetArgs),
    /// Train a residual network on a dataset.
    Train(TrainArgs),
    /// Restore a limited-arc image with a trained checkpoint.
    Infer(InferArgs),
    /// Metrics table (PSNR, NRMSE, SSIM) over a dataset split.
    Eval(EvalArgs),
    /// Artifact spectrum and missing-wedge energy of a limited/full pair.
    Spectrum(SpectrumArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// "random" or "shepp-logan".
    #[arg(long, default_value = "random")]
    pub kind: String,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ellipses in a random phantom, body included.
    #[arg(long)]
    pub ellipses: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also export a windowed 16-bit PNG.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Views per 180 degrees.
    #[arg(long)]
    pub views: Option<usize>,
    /// Scan arc in degrees, starting at 0.
    #[arg(long)]
    pub arc: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FbpArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output image side.
    #[arg(long)]
    pub grid: Option<usize>,
    /// "ramlak" or "hann".
    #[arg(long)]
    pub window: Option<String>,
    /// Keep only views in [0, arc) before reconstructing.
    #[arg(long)]
    pub arc: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TvArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub arc: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Output directory (receives manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_images: Option<usize>,
    /// Validation images (taken from the end).
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub arc: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// wavelet_unet, image_unet or image_plain.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log (default: <out>.log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Limited-arc image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated: fbp, tv, plain, unet, proposed.
    #[arg(long, default_value = "fbp")]
    pub methods: String,
    #[arg(long)]
    pub plain: Option<PathBuf>,
    #[arg(long)]
    pub unet: Option<PathBuf>,
    #[arg(long)]
    pub proposed: Option<PathBuf>,
    /// "val" or "train".
    #[arg(long, default_value = "val")]
    pub split: String,
    /// CSV output (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub limited: PathBuf,
    #[arg(long)]
    pub full: PathBuf,
    /// Limited scan arc in degrees, starting at 0.
    #[arg(long)]
    pub arc: Option<f64>,
    /// Angular profile bins.
    #[arg(long, default_value_t = 36)]
    pub bins: usize,
    /// Log-magnitude spectrum output (tensor file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub png: Option<PathBuf>,
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
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
