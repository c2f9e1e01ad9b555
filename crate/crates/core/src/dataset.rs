//! Training-set generation: turn a directory of sharp images into
//! blurred-image / motion-flow pairs on disk, plus the manifest that lets
//! any record be re-derived from its seed.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blur::{add_noise, apply_blur, NoiseSpec};
use crate::error::{Error, Result};
use crate::flow::{read_flow, write_flow, FlowDomain, MotionFlow};
use crate::image::{load_image, save_image, Image};
use crate::sim::{simulate_flow, SimConfig};

/// Both classifier presets downsample by this factor; generation crops to a
/// multiple of it so training never needs runtime padding.
pub const CROP_MULTIPLE: usize = 16;

/// Default additive-noise level for training pairs (about 1.3/255).
pub const DEFAULT_NOISE_SIGMA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Paths are relative to the manifest's directory.
    pub blurred_path: String,
    pub flow_path: String,
    pub sharp_path: String,
    pub seed: u64,
    pub sim_params_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestHeader {
    dom: FlowDomain,
    noise_sigma: f64,
    config_digest: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub dom: FlowDomain,
    pub noise_sigma: f64,
    /// Hex SHA-256 of the canonicalized creation config.
    pub config_digest: String,
    pub records: Vec<DatasetRecord>,
    /// Directory the record paths are relative to.
    base: PathBuf,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl DatasetManifest {
    pub fn base_dir(&self) -> &Path {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    /// One JSON object per line: a header, then the records in order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ManifestHeader {
            dom: self.dom.clone(),
            noise_sigma: self.noise_sigma,
            config_digest: self.config_digest.clone(),
        };
        let mut out = serde_json::to_string(&header).map_err(|e| Error::Param(e.to_string()))?;
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).map_err(|e| Error::Param(e.to_string()))?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().ok_or_else(|| Error::Format {
            offset: 0,
            reason: "manifest is empty".into(),
        })?;
        let header: ManifestHeader =
            serde_json::from_str(header_line).map_err(|e| Error::Format {
                offset: 0,
                reason: format!("manifest header: {e}"),
            })?;
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Format {
                offset: (n + 1) as u64,
                reason: format!("manifest record line {}: {e}", n + 1),
            })?;
            records.push(rec);
        }
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(DatasetManifest {
            dom: header.dom,
            noise_sigma: header.noise_sigma,
            config_digest: header.config_digest,
            records,
            base,
        })
    }

    /// Structural checks: unique (sharp_path, seed) pairs, and every
    /// referenced file loads through the image/flow readers.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if !seen.insert((rec.sharp_path.as_str(), rec.seed)) {
                return Err(Error::Param(format!(
                    "duplicate record for sharp image {} with seed {}",
                    rec.sharp_path, rec.seed
                )));
            }
        }
        for rec in &self.records {
            load_image(&self.resolve(&rec.blurred_path))?;
            load_image(&self.resolve(&rec.sharp_path))?;
            let flow = read_flow(&self.resolve(&rec.flow_path))?;
            if !flow.in_domain(&self.dom) {
                return Err(Error::Param(format!(
                    "flow {} leaves the declared domain",
                    rec.flow_path
                )));
            }
        }
        Ok(())
    }

    /// The record visit order for one epoch: a seed-determined permutation.
    pub fn epoch_order(&self, epoch_seed: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        order.shuffle(&mut rng);
        order
    }

    pub fn load_record(&self, index: usize) -> Result<(Image, MotionFlow)> {
        let rec = &self.records[index];
        let image = load_image(&self.resolve(&rec.blurred_path))?;
        let flow = read_flow(&self.resolve(&rec.flow_path))?;
        Ok((image, flow))
    }

    /// Streams every record exactly once, in the epoch's permuted order.
    pub fn iterate(
        &self,
        epoch_seed: u64,
    ) -> impl Iterator<Item = Result<(Image, MotionFlow)>> + '_ {
        self.epoch_order(epoch_seed)
            .into_iter()
            .map(|idx| self.load_record(idx))
    }
}

/// Simulates a flow, blurs, and adds noise: one training pair, in memory.
/// The image's shorter side must cover the largest possible kernel support.
pub fn generate_pair(
    x: &Image,
    dom: &FlowDomain,
    cfg: &SimConfig,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<(Image, MotionFlow)> {
    check_pair_size(x, dom)?;
    let (flow, _draw) = simulate_flow(x.height(), x.width(), dom, cfg, rng)?;
    let blurred = apply_blur(x, &flow)?;
    Ok((add_noise(&blurred, noise), flow))
}

fn check_pair_size(x: &Image, dom: &FlowDomain) -> Result<()> {
    let need = 2 * (dom.u_max() as usize + dom.v_max() as usize);
    if x.height() < need || x.width() < need {
        return Err(Error::Shape(format!(
            "image {}x{} too small for domain ({},{}): kernel support needs {need} pixels per side",
            x.width(),
            x.height(),
            dom.u_max(),
            dom.v_max()
        )));
    }
    Ok(())
}

/// Records for `n` corpus images at `per_image` flows each, counting the
/// one zero-flow (sharp) record added per image.
pub fn expected_record_count(images: usize, per_image: usize) -> usize {
    images * (per_image + 1)
}

/// Distinct by construction: an odd multiplier is a bijection on u64.
fn record_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// The full derivation of one record from its seed. `force_zero` marks the
/// per-image sharp record; everything downstream (blur, noise draw) is
/// identical, so a record can be reproduced bit-for-bit later.
fn derive_record(
    x: &Image,
    dom: &FlowDomain,
    cfg: &SimConfig,
    sigma: f64,
    seed: u64,
    force_zero: bool,
) -> Result<(Image, MotionFlow, String)> {
    check_pair_size(x, dom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let effective = if force_zero {
        SimConfig {
            zero_flow_prob: 1.0,
            ..cfg.clone()
        }
    } else {
        cfg.clone()
    };
    let (flow, draw) = simulate_flow(x.height(), x.width(), dom, &effective, &mut rng)?;
    let blurred = apply_blur(x, &flow)?;
    let noise_seed: u64 = rng.gen();
    let noisy = add_noise(&blurred, &NoiseSpec::new(sigma, noise_seed)?);
    let digest = sha256_hex(
        serde_json::to_string(&draw)
            .map_err(|e| Error::Param(e.to_string()))?
            .as_bytes(),
    );
    Ok((noisy, flow, digest))
}

#[derive(Serialize)]
struct CreationConfig<'a> {
    dom: &'a FlowDomain,
    sim: &'a SimConfig,
    noise_sigma: f64,
    count_per_image: usize,
}

struct RecordPlan {
    index: usize,
    sharp_name: String,
    seed: u64,
    force_zero: bool,
}

/// Reads every decodable image under `corpus_dir` (sorted by filename),
/// center-crops each to a multiple of [`CROP_MULTIPLE`], and writes
/// `count_per_image` blurred/flow pairs plus one zero-flow pair per image,
/// all seeded from `cfg.seed`. Ten randomly chosen records are re-derived
/// from their seeds and compared byte-for-byte against the files on disk
/// before the manifest is returned.
pub fn build_dataset(
    corpus_dir: &Path,
    out_dir: &Path,
    count_per_image: usize,
    dom: &FlowDomain,
    cfg: &SimConfig,
    noise_sigma: f64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut names: Vec<String> = std::fs::read_dir(corpus_dir)
        .map_err(|e| Error::io(corpus_dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_file())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| {
            let lower = name.to_ascii_lowercase();
            lower.ends_with(".png")
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Param(format!(
            "corpus directory {} contains no PNG images",
            corpus_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Crop each sharp image once and persist it; records reference the copy.
    let mut sharps: Vec<(String, Image)> = Vec::with_capacity(names.len());
    for (n, name) in names.iter().enumerate() {
        let img = load_image(&corpus_dir.join(name))?;
        let ch = img.height() / CROP_MULTIPLE * CROP_MULTIPLE;
        let cw = img.width() / CROP_MULTIPLE * CROP_MULTIPLE;
        if ch == 0 || cw == 0 {
            return Err(Error::Shape(format!(
                "corpus image {name} is {}x{}, smaller than the {CROP_MULTIPLE}-pixel crop unit",
                img.width(),
                img.height()
            )));
        }
        let cropped = img.center_crop(ch, cw)?;
        check_pair_size(&cropped, dom)?;
        let sharp_name = format!("sharp_{n:04}.png");
        save_image(&cropped, &out_dir.join(&sharp_name))?;
        // Work from the quantized copy so disk and memory agree exactly.
        sharps.push((sharp_name, cropped.quantized()));
    }

    let plans: Vec<RecordPlan> = sharps
        .iter()
        .enumerate()
        .flat_map(|(n, (sharp_name, _))| {
            (0..=count_per_image).map(move |k| {
                let index = n * (count_per_image + 1) + k;
                RecordPlan {
                    index,
                    sharp_name: sharp_name.clone(),
                    seed: record_seed(cfg.seed, index as u64),
                    force_zero: k == 0,
                }
            })
        })
        .collect();

    // Independent seeded streams: records generate in parallel, the
    // manifest is assembled afterwards in index order.
    let records: Vec<DatasetRecord> = plans
        .par_iter()
        .map(|plan| -> Result<DatasetRecord> {
            let sharp = &sharps
                .iter()
                .find(|(name, _)| *name == plan.sharp_name)
                .expect("plan references a loaded sharp image")
                .1;
            let (noisy, flow, digest) =
                derive_record(sharp, dom, cfg, noise_sigma, plan.seed, plan.force_zero)?;
            let blurred_path = format!("blur_{:05}.png", plan.index);
            let flow_path = format!("flow_{:05}.mflw", plan.index);
            save_image(&noisy, &out_dir.join(&blurred_path))?;
            write_flow(&flow, &out_dir.join(&flow_path))?;
            Ok(DatasetRecord {
                blurred_path,
                flow_path,
                sharp_path: plan.sharp_name.clone(),
                seed: plan.seed,
                sim_params_digest: digest,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let creation = CreationConfig {
        dom,
        sim: cfg,
        noise_sigma,
        count_per_image,
    };
    let config_digest = sha256_hex(
        serde_json::to_string(&creation)
            .map_err(|e| Error::Param(e.to_string()))?
            .as_bytes(),
    );
    let manifest = DatasetManifest {
        dom: dom.clone(),
        noise_sigma,
        config_digest,
        records,
        base: out_dir.to_path_buf(),
    };
    spot_check(&manifest, &plans, cfg)?;
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Re-derives up to ten seed-chosen records and demands the files on disk
/// match bit for bit (flow) and byte for byte after quantization (image).
fn spot_check(manifest: &DatasetManifest, plans: &[RecordPlan], cfg: &SimConfig) -> Result<()> {
    let n = manifest.records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xda7a);
    let mut picks: Vec<usize> = (0..n).collect();
    if n > 10 {
        use rand::seq::SliceRandom;
        picks.shuffle(&mut rng);
        picks.truncate(10);
    }
    for idx in picks {
        let rec = &manifest.records[idx];
        let plan = &plans[idx];
        debug_assert_eq!(plan.index, idx);
        let sharp = load_image(&manifest.resolve(&rec.sharp_path))?;
        let (noisy, flow, digest) = derive_record(
            &sharp,
            &manifest.dom,
            cfg,
            manifest.noise_sigma,
            rec.seed,
            plan.force_zero,
        )?;
        let stored_flow = read_flow(&manifest.resolve(&rec.flow_path))?;
        let stored_blur = load_image(&manifest.resolve(&rec.blurred_path))?;
        let mismatch = |what: &str| {
            Err(Error::Param(format!(
                "self-check failed for record {idx} ({}): regenerated {what} differs from disk",
                rec.blurred_path
            )))
        };
        if stored_flow.u_plane() != flow.u_plane() || stored_flow.v_plane() != flow.v_plane() {
            return mismatch("flow");
        }
        if stored_blur.data() != noisy.quantized().data() {
            return mismatch("blurred image");
        }
        if digest != rec.sim_params_digest {
            return mismatch("simulation-parameter digest");
        }
    }
    Ok(())
}
