//! `stformer` command line: mask generation, encoding, initialization,
//! training, reconstruction, evaluation and the complexity audit.
//!
//! Every failure exits nonzero after printing a single machine-readable JSON
//! line on stderr: `{"error": "..."}`.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Parser)]
#[command(name = "stformer", about = "Video snapshot compressive imaging toolkit", version)]
struct Cli {
    /// PRNG seed for any randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Floating-point compute type.
    #[arg(long, global = true, value_enum, default_value_t = DtypeArg::F32)]
    dtype: DtypeArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Bernoulli(p) binary mask cube (STF1, u8).
    Mask {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        /// Compression rate: frames per snapshot.
        #[arg(short = 'b', long, default_value_t = 8)]
        compression: usize,
        /// Bernoulli success probability.
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a video cube into one measurement per B consecutive frames.
    Encode {
        /// Input video cube [n_x, n_y, C, F] (STF1).
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Gaussian measurement-noise sigma.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Mosaic RGB input through the Bayer filter before integrating.
        #[arg(long)]
        color: bool,
        /// Output prefix; measurements land at {out}_NNN.stf.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the mask-normalized initialization estimate of a measurement.
    Init {
        #[arg(long)]
        meas: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Treat the measurement as a Bayer mosaic (four-phase estimate).
        #[arg(long)]
        color: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model per a JSON config; writes checkpoint and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint.stfc and manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct video from a measurement, masks and a checkpoint.
    Reconstruct {
        #[arg(long)]
        meas: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against ground truth (PSNR/SSIM JSON report).
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention complexity audit: closed forms, optional measured MACs, and
    /// whole-model cost for presets.
    Flops {
        /// Preset name (S, B or L) audited at --nx/--ny.
        #[arg(long, conflicts_with = "dims")]
        preset: Option<String>,
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 256)]
        ny: usize,
        /// Explicit dim tuple H,W,D,C,G_h,G_w,heads.
        #[arg(long)]
        dims: Option<String>,
        /// Run the instrumented kernels and include measured counts.
        #[arg(long)]
        measure: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.dtype {
        DtypeArg::F32 => commands::dispatch::<f32>(cli.command, cli.seed),
        DtypeArg::F64 => commands::dispatch::<f64>(cli.command, cli.seed),
    };
    if let Err(err) = result {
        let line = serde_json::json!({ "error": err.to_string() });
        eprintln!("{line}");
        std::process::exit(1);
    }
}
