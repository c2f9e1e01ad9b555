//! Subcommand implementations. Each returns a core `Result`; exit-code
//! mapping lives in `main`.

use std::path::{Path, PathBuf};

use mfd_core::blur::apply_blur;
use mfd_core::dataset::{build_dataset, DatasetManifest, MANIFEST_NAME};
use mfd_core::deconv::deblur;
use mfd_core::flow::{read_flow, write_flow};
use mfd_core::image::{load_image, save_image};
use mfd_core::metrics::{colorize_flow, evaluate, FlowSource, REPORT_NAME};
use mfd_core::net::{
    estimate_flow, load_checkpoint, save_checkpoint, train, TrainSample,
};
use mfd_core::sim::simulate_flow;
use mfd_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;

/// Sibling path with the extension swapped, for colorized previews.
fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}

pub fn simulate_flow_cmd(
    cfg: &PipelineConfig,
    seed: u64,
    height: usize,
    width: usize,
    out: &Path,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (flow, draw) = simulate_flow(height, width, &cfg.dom, &cfg.sim, &mut rng)?;
    write_flow(&flow, out)?;
    let png = with_ext(out, "png");
    save_image(&colorize_flow(&flow, &cfg.dom), &png)?;
    log::info!(
        "flow {}x{} (rescale {:.3}) -> {} and {}",
        width,
        height,
        draw.rescale,
        out.display(),
        png.display()
    );
    Ok(())
}

pub fn render_blur_cmd(input: &Path, flow_path: &Path, out: &Path) -> Result<()> {
    let x = load_image(input)?;
    let flow = read_flow(flow_path)?;
    let y = apply_blur(&x, &flow)?;
    save_image(&y, out)
}

pub fn gen_dataset_cmd(
    cfg: &PipelineConfig,
    seed: u64,
    corpus: &Path,
    out: &Path,
    count: usize,
) -> Result<()> {
    let sim = mfd_core::sim::SimConfig { seed, ..cfg.sim.clone() };
    let manifest = build_dataset(corpus, out, count, &cfg.dom, &sim, cfg.noise_sigma)?;
    log::info!(
        "dataset: {} records -> {}",
        manifest.len(),
        out.join(MANIFEST_NAME).display()
    );
    println!("{} records written to {}", manifest.len(), out.display());
    Ok(())
}

fn manifest_at(data: &Path) -> Result<DatasetManifest> {
    let path = if data.is_dir() {
        data.join(MANIFEST_NAME)
    } else {
        data.to_path_buf()
    };
    DatasetManifest::load(&path)
}

pub fn train_cmd(cfg: &PipelineConfig, seed: u64, data: &Path, out: &Path) -> Result<()> {
    let manifest = manifest_at(data)?;
    let mut samples = Vec::with_capacity(manifest.len());
    for idx in 0..manifest.len() {
        let (image, flow) = manifest.load_record(idx)?;
        samples.push(TrainSample { image, flow });
    }
    let train_cfg = mfd_core::net::TrainConfig { seed, ..cfg.train.clone() };
    let report = train(cfg.arch_spec(), &samples, &train_cfg)?;
    if let Some(step) = report.diverged_at_step {
        log::warn!("training diverged at step {step}; keeping the last finite parameters");
    }
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {epoch}: mean loss {loss:.6}");
    }
    save_checkpoint(out, &report.params)?;
    let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps over {} samples, final epoch loss {last:.6}, model at {}",
        report.steps,
        samples.len(),
        out.display()
    );
    Ok(())
}

pub fn estimate_flow_cmd(
    cfg: &PipelineConfig,
    model: &Path,
    input: &Path,
    out: &Path,
) -> Result<()> {
    let params = load_checkpoint(model, cfg.arch_spec())?;
    let img = load_image(input)?;
    let flow = estimate_flow(&params, &img)?;
    write_flow(&flow, out)?;
    save_image(&colorize_flow(&flow, &cfg.dom), &with_ext(out, "png"))
}

pub fn deblur_cmd(cfg: &PipelineConfig, input: &Path, flow_path: &Path, out: &Path) -> Result<()> {
    let y = load_image(input)?;
    let flow = read_flow(flow_path)?;
    let outcome = deblur(&y, &flow, &cfg.deconv)?;
    for (ch, hist) in outcome.objectives.iter().enumerate() {
        log::info!(
            "channel {ch}: objective {:.6} -> {:.6} over {} outer iterations",
            hist.first().copied().unwrap_or(f64::NAN),
            hist.last().copied().unwrap_or(f64::NAN),
            hist.len().saturating_sub(1),
        );
    }
    save_image(&outcome.image, out)
}

pub enum EvalFlows {
    Directory(PathBuf),
    Model(PathBuf),
}

pub fn evaluate_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    flows: &EvalFlows,
    out: &Path,
) -> Result<()> {
    let manifest = manifest_at(data)?;
    let report = match flows {
        EvalFlows::Directory(dir) => {
            evaluate(&manifest, &FlowSource::Directory(dir), out, &cfg.deconv)?
        }
        EvalFlows::Model(path) => {
            let params = load_checkpoint(path, cfg.arch_spec())?;
            evaluate(&manifest, &FlowSource::Network(&params), out, &cfg.deconv)?
        }
    };
    if !report.skipped.is_empty() {
        log::warn!("{} records skipped", report.skipped.len());
    }
    println!(
        "{} records: flow MSE {:.4}, PSNR {:.2} dB (blurred {:.2}, reference {:.2}), SSIM {:.4}; report at {}",
        report.records.len(),
        report.mean_flow_mse,
        report.mean_psnr_db,
        report.mean_blurred_psnr_db,
        report.mean_ref_psnr_db,
        report.mean_ssim,
        out.join(REPORT_NAME).display()
    );
    Ok(())
}

/// Resolves a required path from a flag or the config's `paths` table.
pub fn require_path(
    flag: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    what: &str,
) -> std::result::Result<PathBuf, String> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| {
        format!("missing {what}: pass the flag or set it under \"paths\" in the config")
    })
}

/// Maps core errors onto the runtime exit code.
pub fn exit_runtime(e: Error) -> i32 {
    eprintln!("error: {e}");
    2
}
