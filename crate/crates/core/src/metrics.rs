//! Quantitative metrics — flow MSE, PSNR, SSIM — flow-map visualization,
//! and whole-dataset evaluation against ground truth.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, DatasetRecord};
use crate::deconv::{deblur, DeconvConfig};
use crate::error::{Error, Result};
use crate::flow::{read_flow, FlowDomain, MotionFlow};
use crate::image::{load_image, Image};
use crate::net::{estimate_flow, NetworkParams};

/// PSNR values above this are reported as the cap itself (identical images
/// would otherwise be +inf).
pub const PSNR_CAP_DB: f64 = 99.0;

// ---------------------------------------------------------------------------
// Flow accuracy
// ---------------------------------------------------------------------------

/// Mean squared error between flow maps: (1/(2|M|))·Σ[(U−Û)² + (V−V̂)²].
pub fn flow_mse(est: &MotionFlow, gt: &MotionFlow) -> Result<f64> {
    if est.height() != gt.height() || est.width() != gt.width() {
        return Err(Error::Shape(format!(
            "flow maps {}x{} and {}x{} differ",
            est.height(),
            est.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut acc = 0.0;
    for k in 0..est.len() {
        let du = (est.u_plane()[k] - gt.u_plane()[k]) as f64;
        let dv = (est.v_plane()[k] - gt.v_plane()[k]) as f64;
        acc += du * du + dv * dv;
    }
    Ok(acc / (2.0 * est.len() as f64))
}

// ---------------------------------------------------------------------------
// Image fidelity
// ---------------------------------------------------------------------------

fn check_same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "images {}x{}x{} and {}x{}x{} differ",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all samples, with peak value 1.0.
/// Capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window_weights() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (k, item) in w.iter_mut().enumerate() {
        let dy = (k / SSIM_WINDOW) as f64 - c;
        let dx = (k % SSIM_WINDOW) as f64 - c;
        *item = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *item;
    }
    for item in &mut w {
        *item /= total;
    }
    w
}

fn ssim_plane(a: &[f64], b: &[f64], height: usize, width: usize) -> f64 {
    let weights = ssim_window_weights();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut acc = 0.0;
    let mut windows = 0usize;
    for j0 in 0..=height - SSIM_WINDOW {
        for i0 in 0..=width - SSIM_WINDOW {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (j0 + dy) * width + i0;
                for dx in 0..SSIM_WINDOW {
                    let w = weights[dy * SSIM_WINDOW + dx];
                    let x = a[row + dx];
                    let y = b[row + dx];
                    mu_a += w * x;
                    mu_b += w * y;
                    aa += w * x * x;
                    bb += w * y * y;
                    ab += w * x * y;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            windows += 1;
        }
    }
    acc / windows as f64
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K₁ = 0.01,
/// K₂ = 0.03, dynamic range 1.0, averaged over fully valid windows.
/// Multi-channel images average the per-channel scores.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let ch = a.channels();
    let n = a.height() * a.width();
    let mut total = 0.0;
    for c in 0..ch {
        let mut pa = Vec::with_capacity(n);
        let mut pb = Vec::with_capacity(n);
        for k in 0..n {
            pa.push(a.data()[k * ch + c]);
            pb.push(b.data()[k * ch + c]);
        }
        total += ssim_plane(&pa, &pb, a.height(), a.width());
    }
    Ok(total / ch as f64)
}

// ---------------------------------------------------------------------------
// Flow visualization
// ---------------------------------------------------------------------------

fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Renders a flow map on the HSV color wheel: hue = atan2(v, u),
/// saturation = ‖m‖ relative to the domain's largest magnitude, value = 1.
/// Zero motion renders white.
///
/// Accepts pre-fold flows too (hue then distinguishes m from −m); saturation
/// saturates at 1 for out-of-domain magnitudes.
pub fn colorize_flow(flow: &MotionFlow, domain: &FlowDomain) -> Image {
    let max_mag = (domain.u_max() as f64).hypot(domain.v_max() as f64);
    let mut data = Vec::with_capacity(flow.len() * 3);
    for j in 0..flow.height() {
        for i in 0..flow.width() {
            let (u, v) = flow.get(i, j);
            let (uf, vf) = (u as f64, v as f64);
            let sat = (uf.hypot(vf) / max_mag).min(1.0);
            let hue = vf.atan2(uf).to_degrees();
            data.extend_from_slice(&hsv_to_rgb(hue, sat, 1.0));
        }
    }
    Image::from_raw(flow.height(), flow.width(), 3, data)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Metrics for one evaluated record. `psnr_db`/`ssim` score the restoration
/// driven by the flow under test; the `blurred_*` pair scores the untouched
/// blurred input (the improvement baseline), and the `ref_*` pair scores
/// deblurring with the ground-truth flow (the upper-bound reference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub record: String,
    pub flow_mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub blurred_psnr_db: f64,
    pub blurred_ssim: f64,
    pub ref_psnr_db: f64,
    pub ref_ssim: f64,
}

/// Aggregate evaluation report; means are plain arithmetic means of the
/// per-record values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub records: Vec<RecordMetrics>,
    pub skipped: Vec<String>,
    pub mean_flow_mse: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_blurred_psnr_db: f64,
    pub mean_blurred_ssim: f64,
    pub mean_ref_psnr_db: f64,
    pub mean_ref_ssim: f64,
}

impl EvalReport {
    /// Assembles a report from record metrics, recomputing the means.
    pub fn from_records(
        config_digest: String,
        records: Vec<RecordMetrics>,
        skipped: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Manifest("no records to evaluate".into()));
        }
        let mean = |f: fn(&RecordMetrics) -> f64| {
            records.iter().map(f).sum::<f64>() / records.len() as f64
        };
        Ok(EvalReport {
            mean_flow_mse: mean(|r| r.flow_mse),
            mean_psnr_db: mean(|r| r.psnr_db),
            mean_ssim: mean(|r| r.ssim),
            mean_blurred_psnr_db: mean(|r| r.blurred_psnr_db),
            mean_blurred_ssim: mean(|r| r.blurred_ssim),
            mean_ref_psnr_db: mean(|r| r.ref_psnr_db),
            mean_ref_ssim: mean(|r| r.ref_ssim),
            config_digest,
            records,
            skipped,
        })
    }
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation
// ---------------------------------------------------------------------------

/// Where the flows under evaluation come from.
pub enum FlowSource<'a> {
    /// A directory holding one MFLW file per record, named like the
    /// record's own flow file.
    Directory(&'a Path),
    /// Estimate each record's flow from its blurred image with a trained
    /// classifier.
    Network(&'a NetworkParams),
}

/// File name of the JSON report [`evaluate`] writes into its output
/// directory.
pub const REPORT_NAME: &str = "report.json";

/// Scores every record of a dataset: flow accuracy against the stored
/// ground truth, restoration quality when deblurring with the flow under
/// test, the blurred baseline, and the ground-truth-flow restoration as the
/// reference upper bound. Records that cannot be evaluated are listed as
/// skipped (with the reason) rather than failing the run.
pub fn evaluate(
    manifest: &DatasetManifest,
    source: &FlowSource,
    outputs_dir: &Path,
    deconv_cfg: &DeconvConfig,
) -> Result<EvalReport> {
    deconv_cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::Manifest("no records to evaluate".into()));
    }
    std::fs::create_dir_all(outputs_dir).map_err(|e| Error::io(outputs_dir, e))?;

    let outcomes: Vec<std::result::Result<RecordMetrics, String>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            evaluate_record(manifest, rec, source, deconv_cfg)
                .map_err(|e| format!("{}: {e}", rec.blurred_path))
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(m) => records.push(m),
            Err(reason) => skipped.push(reason),
        }
    }
    let report = EvalReport::from_records(manifest.config_digest.clone(), records, skipped)?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Param(e.to_string()))?;
    let path = outputs_dir.join(REPORT_NAME);
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn evaluate_record(
    manifest: &DatasetManifest,
    rec: &DatasetRecord,
    source: &FlowSource,
    deconv_cfg: &DeconvConfig,
) -> Result<RecordMetrics> {
    let base = manifest.base_dir();
    let blurred = load_image(&base.join(&rec.blurred_path))?;
    let sharp = load_image(&base.join(&rec.sharp_path))?;
    let gt = read_flow(&base.join(&rec.flow_path))?;
    let est = match source {
        FlowSource::Directory(dir) => {
            let name = Path::new(&rec.flow_path)
                .file_name()
                .ok_or_else(|| Error::Param(format!("record flow path {} has no file name", rec.flow_path)))?
                .to_owned();
            read_flow(&dir.join(name))?
        }
        FlowSource::Network(params) => estimate_flow(params, &blurred)?,
    };

    let restored = deblur(&blurred, &est, deconv_cfg)?.image;
    let reference = deblur(&blurred, &gt, deconv_cfg)?.image;
    Ok(RecordMetrics {
        record: rec.blurred_path.clone(),
        flow_mse: flow_mse(&est, &gt)?,
        psnr_db: psnr(&restored, &sharp)?,
        ssim: ssim(&restored, &sharp)?,
        blurred_psnr_db: psnr(&blurred, &sharp)?,
        blurred_ssim: ssim(&blurred, &sharp)?,
        ref_psnr_db: psnr(&reference, &sharp)?,
        ref_ssim: ssim(&reference, &sharp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn flow_mse_pins() {
        let a = MotionFlow::constant(4, 4, 3, 4).unwrap();
        assert_eq!(flow_mse(&a, &a).unwrap(), 0.0);
        let zero = MotionFlow::constant(4, 4, 0, 0).unwrap();
        assert!((flow_mse(&zero, &a).unwrap() - 12.5).abs() < 1e-12);
        assert_eq!(
            flow_mse(&zero, &a).unwrap(),
            flow_mse(&a, &zero).unwrap()
        );
        let b = MotionFlow::constant(4, 5, 0, 0).unwrap();
        assert!(flow_mse(&a, &b).is_err());
    }

    #[test]
    fn flow_mse_zero_iff_equal() {
        let mut a = MotionFlow::constant(3, 3, 1, 1).unwrap();
        let b = a.clone();
        a.set(2, 2, 1, 2);
        assert!(flow_mse(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn psnr_pins() {
        let zero = Image::filled(8, 8, 1, 0.0).unwrap();
        let one = Image::filled(8, 8, 1, 1.0).unwrap();
        assert_eq!(psnr(&zero, &zero).unwrap(), 99.0);
        assert!((psnr(&zero, &one).unwrap() - 0.0).abs() < 1e-9);

        let a = Image::filled(8, 8, 1, 0.5).unwrap();
        let b = Image::filled(8, 8, 1, 0.5 + 16.0 / 255.0).unwrap();
        let expected = 20.0 * (255.0f64 / 16.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-6);
        assert!((expected - 24.048).abs() < 1e-3);
    }

    #[test]
    fn psnr_is_strictly_decreasing_in_mse() {
        let base = Image::filled(8, 8, 1, 0.2).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let off = Image::filled(8, 8, 1, 0.2 + k as f64 * 0.05).unwrap();
            let p = psnr(&base, &off).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    fn noise_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, 1, |_, _, _| rng.gen_range(0.3..0.7)).unwrap()
    }

    #[test]
    fn ssim_pins() {
        let a = noise_image(1, 24, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);

        let c1 = Image::filled(16, 16, 1, 0.42).unwrap();
        let c2 = Image::filled(16, 16, 1, 0.42).unwrap();
        assert!((ssim(&c1, &c2).unwrap() - 1.0).abs() < 1e-9);

        // Inverting a mid-gray noise image anticorrelates structure.
        let inv = Image::from_fn(24, 24, 1, |i, j, c| 1.0 - a.get(i, j, c)).unwrap();
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.3, "anticorrelated SSIM {s}");

        assert!(ssim(&Image::filled(8, 8, 1, 0.5).unwrap(), &Image::filled(8, 8, 1, 0.5).unwrap()).is_err());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let a = noise_image(2, 20, 20);
        let b = noise_image(3, 20, 20);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&s1));
    }

    #[test]
    fn ssim_averages_channels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = Image::from_fn(16, 16, 3, |_, _, _| rng.gen_range(0.0..=1.0)).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_flow_renders_white() {
        let d = FlowDomain::new(8, 8).unwrap();
        let flow = MotionFlow::constant(4, 4, 0, 0).unwrap();
        let img = colorize_flow(&flow, &d);
        assert!(img.data().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn antipodal_motions_get_complementary_hues() {
        let d = FlowDomain::new(8, 8).unwrap();
        let mut flow = MotionFlow::constant(1, 2, 0, 0).unwrap();
        flow.set(0, 0, 3, 0);
        flow.set(1, 0, -3, 0); // pre-fold antipode
        let img = colorize_flow(&flow, &d);
        // Hue 0 (red-max) vs hue 180 (cyan: red-min), equal saturation.
        let px0 = [img.get(0, 0, 0), img.get(0, 0, 1), img.get(0, 0, 2)];
        let px1 = [img.get(1, 0, 0), img.get(1, 0, 1), img.get(1, 0, 2)];
        assert!(px0[0] > px0[1] && px0[1] == px0[2]);
        assert!(px1[0] < px1[1] && px1[1] == px1[2]);
        let sat = |p: [f64; 3]| {
            let max = p.iter().cloned().fold(f64::MIN, f64::max);
            let min = p.iter().cloned().fold(f64::MAX, f64::min);
            (max - min) / max
        };
        assert!((sat(px0) - sat(px1)).abs() < 1e-12);
    }

    #[test]
    fn saturation_grows_with_magnitude() {
        let d = FlowDomain::new(8, 8).unwrap();
        let mut flow = MotionFlow::constant(1, 9, 0, 0).unwrap();
        for k in 0..9 {
            flow.set(k, 0, k as i16, k as i16);
        }
        let img = colorize_flow(&flow, &d);
        let mut last = -1.0;
        for k in 0..9 {
            let p = [img.get(k, 0, 0), img.get(k, 0, 1), img.get(k, 0, 2)];
            let max = p.iter().cloned().fold(f64::MIN, f64::max);
            let min = p.iter().cloned().fold(f64::MAX, f64::min);
            let sat = if max > 0.0 { (max - min) / max } else { 0.0 };
            assert!(sat > last, "saturation not monotone at k={k}");
            last = sat;
        }
    }

    #[test]
    fn report_means_match_records() {
        let rec = |name: &str, mse: f64, p: f64, s: f64| RecordMetrics {
            record: name.into(),
            flow_mse: mse,
            psnr_db: p,
            ssim: s,
            blurred_psnr_db: p - 4.0,
            blurred_ssim: s - 0.1,
            ref_psnr_db: p + 1.0,
            ref_ssim: s + 0.02,
        };
        let records = vec![rec("a", 1.0, 20.0, 0.5), rec("b", 3.0, 30.0, 0.9)];
        let report = EvalReport::from_records("digest".into(), records, vec![]).unwrap();
        assert!((report.mean_flow_mse - 2.0).abs() < 1e-12);
        assert!((report.mean_psnr_db - 25.0).abs() < 1e-12);
        assert!((report.mean_ssim - 0.7).abs() < 1e-12);
        assert!((report.mean_blurred_psnr_db - 21.0).abs() < 1e-12);
        assert!((report.mean_blurred_ssim - 0.6).abs() < 1e-12);
        assert!((report.mean_ref_psnr_db - 26.0).abs() < 1e-12);
        assert!((report.mean_ref_ssim - 0.72).abs() < 1e-12);
        assert!(EvalReport::from_records("d".into(), vec![], vec![]).is_err());
    }

    fn desk_dataset(root: &Path, seed: u64) -> DatasetManifest {
        use crate::dataset::build_dataset;
        use crate::image::save_image;
        use crate::sim::SimConfig;
        use crate::synth::synth_image;
        let corpus = root.join("corpus");
        std::fs::create_dir(&corpus).unwrap();
        save_image(&synth_image(48, 48, 55), &corpus.join("a.png")).unwrap();
        let dom = FlowDomain::new(2, 2).unwrap();
        let cfg = SimConfig {
            seed,
            zero_flow_prob: 0.0,
            ..SimConfig::for_domain(&dom)
        };
        build_dataset(&corpus, &root.join("out"), 2, &dom, &cfg, 0.0).unwrap()
    }

    #[test]
    fn evaluating_the_ground_truth_scores_perfect_flow() {
        let tmp = tempfile::TempDir::new().unwrap();
        let manifest = desk_dataset(tmp.path(), 5);
        // The dataset directory itself holds the ground-truth flows under
        // the record names, so it doubles as a perfect estimate source.
        let source = FlowSource::Directory(manifest.base_dir());
        let reports_dir = tmp.path().join("reports");
        let report = evaluate(
            &manifest,
            &source,
            &reports_dir,
            &DeconvConfig::default(),
        )
        .unwrap();

        assert_eq!(report.records.len(), manifest.len());
        assert!(report.skipped.is_empty());
        assert_eq!(report.mean_flow_mse, 0.0);
        for r in &report.records {
            assert_eq!(r.flow_mse, 0.0);
            assert_eq!(r.psnr_db, r.ref_psnr_db);
            assert_eq!(r.ssim, r.ref_ssim);
        }
        // Means recompute from the records.
        let n = report.records.len() as f64;
        let mean_psnr = report.records.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        assert!((report.mean_psnr_db - mean_psnr).abs() < 1e-12);

        // The JSON document round-trips.
        let text = std::fs::read_to_string(reports_dir.join(REPORT_NAME)).unwrap();
        let parsed: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn network_flows_never_beat_the_ground_truth_reference() {
        use crate::net::ArchSpec;
        let tmp = tempfile::TempDir::new().unwrap();
        let manifest = desk_dataset(tmp.path(), 9);
        // An all-zero classifier emits a uniform posterior everywhere, so
        // its argmax flow is a constant worst-case guess.
        let mut params =
            NetworkParams::init(ArchSpec::toy(manifest.dom.clone()), 0).unwrap();
        for layer in &mut params.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let report = evaluate(
            &manifest,
            &FlowSource::Network(&params),
            &tmp.path().join("reports"),
            &DeconvConfig::default(),
        )
        .unwrap();
        assert!(report.mean_flow_mse > 0.0);
        assert!(
            report.mean_ref_psnr_db >= report.mean_psnr_db,
            "reference {} dB vs estimated {} dB",
            report.mean_ref_psnr_db,
            report.mean_psnr_db
        );
    }

    #[test]
    fn unreadable_records_are_skipped_not_fatal() {
        let tmp = tempfile::TempDir::new().unwrap();
        let manifest = desk_dataset(tmp.path(), 13);
        let victim = &manifest.records[1].blurred_path;
        std::fs::remove_file(manifest.base_dir().join(victim)).unwrap();

        let report = evaluate(
            &manifest,
            &FlowSource::Directory(manifest.base_dir()),
            &tmp.path().join("reports"),
            &DeconvConfig::default(),
        )
        .unwrap();
        assert_eq!(report.records.len(), manifest.len() - 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].contains(victim));
    }

    #[test]
    fn empty_manifests_are_rejected() {
        let tmp = tempfile::TempDir::new().unwrap();
        let mut manifest = desk_dataset(tmp.path(), 21);
        manifest.records.clear();
        let err = evaluate(
            &manifest,
            &FlowSource::Directory(manifest.base_dir()),
            &tmp.path().join("reports"),
            &DeconvConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Manifest(_)));
    }
}
