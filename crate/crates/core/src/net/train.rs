//! SGD-with-momentum training loop over (blurred image, flow) pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::MotionFlow;
use crate::image::Image;
use crate::net::{loss_and_grad, ArchSpec, LayerTensors, NetworkParams};

/// How the per-pixel cross-entropy is reduced over an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Mean over pixels: loss scale is independent of image size.
    PerPixel,
    /// Raw sum over pixels; pair with a learning rate ~1e-9 at typical
    /// image sizes.
    Sum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_norm: LossNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 8,
            batch_size: 1,
            seed: 0,
            loss_norm: LossNorm::PerPixel,
        }
    }
}

impl TrainConfig {
    /// Sum-reduced variant: same schedule the mean-mode default approximates,
    /// with the learning rate shrunk by a typical pixel count.
    pub fn sum_mode() -> Self {
        TrainConfig {
            learning_rate: 1e-9,
            loss_norm: LossNorm::Sum,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Param(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Param(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One training example. The flow must be canonical and inside the
/// architecture's domain, and the image sides multiples of the network
/// stride.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Image,
    pub flow: MotionFlow,
}

#[derive(Debug)]
pub struct TrainReport {
    pub params: NetworkParams,
    /// Mean per-sample loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Optimizer steps actually applied.
    pub steps: u64,
    /// Set if training hit a non-finite loss or parameter; `params` then
    /// holds the last finite state.
    pub diverged_at_step: Option<u64>,
}

/// One momentum update: v <- momentum*v - lr*g; p <- p + v.
pub fn sgd_step(
    params: &mut NetworkParams,
    velocity: &mut [LayerTensors],
    grads: &[LayerTensors],
    learning_rate: f64,
    momentum: f64,
) {
    for ((p, v), g) in params.layers.iter_mut().zip(velocity).zip(grads) {
        for ((pw, vw), gw) in p.w.iter_mut().zip(&mut v.w).zip(&g.w) {
            *vw = momentum * *vw - learning_rate * gw;
            *pw += *vw;
        }
        for ((pb, vb), gb) in p.b.iter_mut().zip(&mut v.b).zip(&g.b) {
            *vb = momentum * *vb - learning_rate * gb;
            *pb += *vb;
        }
    }
}

fn accumulate(acc: &mut [LayerTensors], grads: &[LayerTensors]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (aw, gw) in a.w.iter_mut().zip(&g.w) {
            *aw += gw;
        }
        for (ab, gb) in a.b.iter_mut().zip(&g.b) {
            *ab += gb;
        }
    }
}

fn scale(acc: &mut [LayerTensors], s: f64) {
    for a in acc.iter_mut() {
        for v in a.w.iter_mut().chain(a.b.iter_mut()) {
            *v *= s;
        }
    }
}

fn zero(acc: &mut [LayerTensors]) {
    for a in acc.iter_mut() {
        a.w.fill(0.0);
        a.b.fill(0.0);
    }
}

/// Trains a freshly initialized network. Samples are visited once per epoch
/// in a seeded random order; gradients are averaged over `batch_size`
/// consecutive samples per optimizer step. Fully deterministic for a given
/// config and sample list.
///
/// A non-finite loss or parameter aborts the loop; the report then carries
/// the last finite parameters and the step at which divergence was detected.
pub fn train(arch: ArchSpec, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Param("training set is empty".into()));
    }
    let mut params = NetworkParams::init(arch, cfg.seed)?;
    let mut velocity = params.zeros_like();
    let mut acc = params.zeros_like();
    // Stream 1 keeps the shuffle order independent of the draws used by
    // parameter initialization (stream 0).
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps: u64 = 0;
    let mut sample_counter: u64 = 0;
    let mut diverged_at_step = None;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut order_rng);

        let mut epoch_loss = 0.0;
        let mut in_batch = 0usize;
        zero(&mut acc);

        for (visited, &idx) in order.iter().enumerate() {
            let sample = &samples[idx];
            let (loss, grads) = loss_and_grad(&params, &sample.image, &sample.flow, cfg.loss_norm)?;
            sample_counter += 1;
            if !loss.is_finite() {
                diverged_at_step = Some(sample_counter);
                break 'epochs;
            }
            epoch_loss += loss;
            accumulate(&mut acc, &grads);
            in_batch += 1;

            if in_batch == cfg.batch_size || visited + 1 == order.len() {
                scale(&mut acc, 1.0 / in_batch as f64);
                let snapshot = params.clone();
                sgd_step(&mut params, &mut velocity, &acc, cfg.learning_rate, cfg.momentum);
                steps += 1;
                if !params.is_finite() {
                    params = snapshot;
                    diverged_at_step = Some(sample_counter);
                    break 'epochs;
                }
                zero(&mut acc);
                in_batch = 0;
            }
        }

        let mean = epoch_loss / order.len() as f64;
        epoch_losses.push(mean);
        log::info!("epoch {epoch}: mean loss {mean:.6}");
    }

    Ok(TrainReport {
        params,
        epoch_losses,
        steps,
        diverged_at_step,
    })
}
