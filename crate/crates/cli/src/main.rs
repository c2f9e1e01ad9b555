//! `mfd` — blur simulation, motion-flow estimation, and non-blind removal,
//! end to end, from one JSON config.

mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{exit_runtime, require_path, EvalFlows};
use config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "mfd",
    version,
    about = "Simulate heterogeneous motion blur, estimate dense motion flow, and deblur",
    after_help = "Set MFD_LOG=info (or debug) for progress logging."
)]
struct Cli {
    /// JSON pipeline config; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config's global seed; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads; 1 guarantees bit-identical reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random camera motion and write its dense flow map (plus a
    /// colorized PNG preview alongside).
    SimulateFlow {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Output MFLW path; the preview swaps the extension to .png.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Blur a sharp image with a stored flow map.
    RenderBlur {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        flow: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Build a training set of blurred/flow pairs from sharp images.
    GenDataset {
        /// Directory of sharp PNG images (default: paths.corpus_dir).
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Output dataset directory (default: paths.out_dir).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Blurred variants per image (default: config count_per_image).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the flow classifier on a generated dataset.
    Train {
        /// Dataset directory or manifest path (default: paths.data_dir).
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Checkpoint file to write (default: paths.model_path).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Estimate a motion-flow map from a blurred image.
    EstimateFlow {
        /// Trained checkpoint (default: paths.model_path).
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output MFLW path; a colorized .png lands alongside.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Remove blur from an image given its motion-flow map.
    Deblur {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        flow: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score flows and restorations against a dataset's ground truth.
    Evaluate {
        /// Dataset directory or manifest path (default: paths.data_dir).
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Directory of estimated MFLW files named like the records'.
        #[arg(long, value_name = "DIR", conflicts_with = "model")]
        flows: Option<PathBuf>,
        /// Estimate flows on the fly with this checkpoint instead.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Report directory (default: paths.out_dir).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the built-in correctness suites.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MFD_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help goes to stdout, usage errors to stderr, per convention.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli))
}

fn run(cli: Cli) -> u8 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return exit_runtime(mfd_core::Error::Param(format!(
                "thread pool setup failed: {e}"
            ))) as u8;
        }
    }
    let cfg = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    log::debug!("effective seed {seed}; config:\n{}", cfg.canonical());

    let result = match cli.command {
        Command::SimulateFlow { height, width, out } => {
            commands::simulate_flow_cmd(&cfg, seed, height, width, &out)
        }
        Command::RenderBlur { input, flow, out } => {
            commands::render_blur_cmd(&input, &flow, &out)
        }
        Command::GenDataset { corpus, out, count } => {
            let corpus = match require_path(corpus, &cfg.paths.corpus_dir, "--corpus") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            let out = match require_path(out, &cfg.paths.out_dir, "--out") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            commands::gen_dataset_cmd(
                &cfg,
                seed,
                &corpus,
                &out,
                count.unwrap_or(cfg.count_per_image),
            )
        }
        Command::Train { data, out } => {
            let data = match require_path(data, &cfg.paths.data_dir, "--data") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            let out = match require_path(out, &cfg.paths.model_path, "--out") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            commands::train_cmd(&cfg, seed, &data, &out)
        }
        Command::EstimateFlow { model, input, out } => {
            let model = match require_path(model, &cfg.paths.model_path, "--model") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            commands::estimate_flow_cmd(&cfg, &model, &input, &out)
        }
        Command::Deblur { input, flow, out } => {
            commands::deblur_cmd(&cfg, &input, &flow, &out)
        }
        Command::Evaluate {
            data,
            flows,
            model,
            out,
        } => {
            let data = match require_path(data, &cfg.paths.data_dir, "--data") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            let out = match require_path(out, &cfg.paths.out_dir, "--out") {
                Ok(p) => p,
                Err(msg) => return usage(&msg),
            };
            let source = match (flows, model, &cfg.paths.model_path) {
                (Some(dir), None, _) => EvalFlows::Directory(dir),
                (None, Some(path), _) => EvalFlows::Model(path),
                (None, None, Some(path)) => EvalFlows::Model(path.clone()),
                (None, None, None) => {
                    return usage("pass exactly one of --flows or --model");
                }
                (Some(_), Some(_), _) => unreachable!("clap rejects the conflict"),
            };
            commands::evaluate_cmd(&cfg, &data, &source, &out)
        }
        Command::Selftest => selftest::selftest_cmd(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => exit_runtime(e) as u8,
    }
}

fn usage(msg: &str) -> u8 {
    eprintln!("error: {msg}");
    1
}
