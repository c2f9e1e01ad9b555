//! Fully convolutional per-pixel motion classifier.
//!
//! The network maps an RGB blurred image to two per-pixel label
//! distributions: one over horizontal motions u in [0, u_max], one over
//! vertical motions v in [-v_max, v_max] (the folded domain from
//! [`crate::flow`]). It is a downsample/upsample FCN: a convolutional
//! backbone pools the input down by 16x, a 1x1 head scores labels at the
//! coarse scale, and learnable bilinear-initialized upsampling layers fused
//! with 1x1-projected skip connections restore full resolution.
//!
//! Everything is plain f64 on the CPU. Forward and backward passes
//! parallelize over channel planes with fixed reduction order, so outputs
//! are bit-identical regardless of thread count.

mod checkpoint;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use tensor::Tensor;
pub use train::{sgd_step, train, LossNorm, TrainConfig, TrainReport, TrainSample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{FlowDomain, MotionFlow};
use crate::image::Image;
use tensor::{
    bilinear_kernel, conv_backward, conv_forward, maxpool_backward, maxpool_forward,
    skip_add_backward, skip_add_forward, softmax_slice, upconv_backward, upconv_forward,
};

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

/// One layer of the network. Activation indices: the network input is
/// activation 0 and layer `l` produces activation `l + 1`; `SkipAdd.source`
/// refers to an earlier activation by that numbering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride-1 convolution with zero 'same' padding and an odd kernel.
    Conv {
        size: usize,
        c_in: usize,
        c_out: usize,
        relu: bool,
    },
    /// 2x2 max pooling, stride 2.
    MaxPool,
    /// Learnable upsampling by `factor`: transposed convolution with kernel
    /// 2*factor, stride `factor`, padding `factor / 2`.
    Upconv { factor: usize, channels: usize },
    /// Adds a 1x1-projected earlier activation to the current one.
    SkipAdd {
        source: usize,
        c_src: usize,
        c_main: usize,
    },
}

/// Full architecture: enough to rebuild the parameter layout exactly, and
/// hashed into a digest that ties checkpoints to the shape they were trained
/// with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_channels: usize,
    pub domain: FlowDomain,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Reference architecture: 7 convolutions, 4 pooling stages (16x
    /// downsampling), then three upsampling stages with two skip fusions.
    pub fn full(domain: FlowDomain) -> Self {
        Self::backbone(domain, [64, 128, 256, 256, 512, 512])
    }

    /// Same topology at half width everywhere; small enough to train on a
    /// CPU in minutes.
    pub fn toy(domain: FlowDomain) -> Self {
        Self::backbone(domain, [32, 64, 128, 128, 256, 256])
    }

    fn backbone(domain: FlowDomain, w: [usize; 6]) -> Self {
        let d = domain.label_count();
        let layers = vec![
            LayerSpec::Conv { size: 7, c_in: 3, c_out: w[0], relu: true },
            LayerSpec::Conv { size: 5, c_in: w[0], c_out: w[1], relu: true },
            LayerSpec::MaxPool,
            LayerSpec::Conv { size: 5, c_in: w[1], c_out: w[2], relu: true },
            LayerSpec::MaxPool, // activation 5: quarter scale, used as skip source
            LayerSpec::Conv { size: 3, c_in: w[2], c_out: w[3], relu: true },
            LayerSpec::MaxPool, // activation 7: eighth scale, used as skip source
            LayerSpec::Conv { size: 3, c_in: w[3], c_out: w[4], relu: true },
            LayerSpec::Conv { size: 3, c_in: w[4], c_out: w[5], relu: true },
            LayerSpec::MaxPool,
            LayerSpec::Conv { size: 1, c_in: w[5], c_out: d, relu: false },
            LayerSpec::Upconv { factor: 2, channels: d },
            LayerSpec::SkipAdd { source: 7, c_src: w[3], c_main: d },
            LayerSpec::Upconv { factor: 2, channels: d },
            LayerSpec::SkipAdd { source: 5, c_src: w[2], c_main: d },
            LayerSpec::Upconv { factor: 4, channels: d },
        ];
        ArchSpec {
            input_channels: 3,
            domain,
            layers,
        }
    }

    /// Channel count and scale (as a reduced fraction of input resolution)
    /// of every activation, input included. Errors describe the first
    /// inconsistent layer.
    fn layout(&self) -> Result<Vec<(usize, (u64, u64))>> {
        fn reduce(mut n: u64, mut d: u64) -> (u64, u64) {
            let (mut a, mut b) = (n, d);
            while b != 0 {
                let t = a % b;
                a = b;
                b = t;
            }
            n /= a;
            d /= a;
            (n, d)
        }
        if self.input_channels == 0 {
            return Err(Error::Param("network input_channels must be positive".into()));
        }
        let mut acts = vec![(self.input_channels, (1u64, 1u64))];
        for (l, layer) in self.layers.iter().enumerate() {
            let (cur_c, (num, den)) = *acts.last().expect("non-empty");
            let next = match layer {
                LayerSpec::Conv { size, c_in, c_out, .. } => {
                    if *size == 0 || size % 2 == 0 {
                        return Err(Error::Param(format!(
                            "layer {l}: convolution kernel must be odd, got {size}"
                        )));
                    }
                    if *c_in != cur_c {
                        return Err(Error::Param(format!(
                            "layer {l}: convolution expects {c_in} channels but receives {cur_c}"
                        )));
                    }
                    if *c_out == 0 {
                        return Err(Error::Param(format!("layer {l}: c_out must be positive")));
                    }
                    (*c_out, (num, den))
                }
                LayerSpec::MaxPool => (cur_c, reduce(num, den * 2)),
                LayerSpec::Upconv { factor, channels } => {
                    if *factor < 2 || factor % 2 != 0 {
                        return Err(Error::Param(format!(
                            "layer {l}: upsampling factor must be a positive even number, got {factor}"
                        )));
                    }
                    if *channels != cur_c {
                        return Err(Error::Param(format!(
                            "layer {l}: upsampling declares {channels} channels but receives {cur_c}"
                        )));
                    }
                    (cur_c, reduce(num * *factor as u64, den))
                }
                LayerSpec::SkipAdd { source, c_src, c_main } => {
                    if *c_main != cur_c {
                        return Err(Error::Param(format!(
                            "layer {l}: skip declares {c_main} main channels but receives {cur_c}"
                        )));
                    }
                    let Some(&(src_c, src_scale)) = acts.get(*source) else {
                        return Err(Error::Param(format!(
                            "layer {l}: skip source {source} does not precede it"
                        )));
                    };
                    if *source > l {
                        return Err(Error::Param(format!(
                            "layer {l}: skip source {source} does not precede it"
                        )));
                    }
                    if src_c != *c_src {
                        return Err(Error::Param(format!(
                            "layer {l}: skip declares {c_src} source channels but activation {source} has {src_c}"
                        )));
                    }
                    if src_scale != (num, den) {
                        return Err(Error::Param(format!(
                            "layer {l}: skip source {source} is at scale {}/{} but the main path is at {num}/{den}",
                            src_scale.0, src_scale.1
                        )));
                    }
                    (cur_c, (num, den))
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Param("network has no layers".into()));
        }
        let acts = self.layout()?;
        let &(out_c, scale) = acts.last().expect("non-empty");
        if scale != (1, 1) {
            return Err(Error::Param(format!(
                "network output is at {}/{} of input resolution; must be 1/1",
                scale.0, scale.1
            )));
        }
        let d = self.domain.label_count();
        if out_c != d {
            return Err(Error::Param(format!(
                "network emits {out_c} channels but the flow domain needs {d} ({} + {})",
                self.domain.du(),
                self.domain.dv()
            )));
        }
        self.stride()?;
        Ok(())
    }

    /// Smallest input-size multiple every spatial dimension must satisfy so
    /// that all pooling stages see even sizes.
    pub fn stride(&self) -> Result<usize> {
        'candidate: for m in [1usize, 2, 4, 8, 16, 32, 64, 128, 256] {
            let mut size = m;
            for layer in &self.layers {
                match layer {
                    LayerSpec::MaxPool => {
                        if size % 2 != 0 {
                            continue 'candidate;
                        }
                        size /= 2;
                    }
                    LayerSpec::Upconv { factor, .. } => size *= factor,
                    _ => {}
                }
            }
            return Ok(m);
        }
        Err(Error::Param(
            "network downsamples by more than 256; no usable input stride".into(),
        ))
    }

    /// Hex SHA-256 of the canonical JSON encoding; stored in checkpoints so
    /// weights can never be loaded into a different shape.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("architecture serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// (weight_len, bias_len) for every layer; zero-sized for layers without
    /// parameters.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|layer| match layer {
                LayerSpec::Conv { size, c_in, c_out, .. } => {
                    (c_out * c_in * size * size, *c_out)
                }
                LayerSpec::MaxPool => (0, 0),
                LayerSpec::Upconv { factor, channels } => {
                    let k = 2 * factor;
                    (channels * channels * k * k, *channels)
                }
                LayerSpec::SkipAdd { c_src, c_main, .. } => (c_main * c_src, *c_main),
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(w, b)| w + b).sum()
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Weights and biases of one layer; empty for layers without parameters.
/// The same type carries gradients and optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchSpec,
    pub layers: Vec<LayerTensors>,
}

impl NetworkParams {
    /// Fresh parameters: convolution and projection weights drawn from the
    /// fan-in-scaled uniform U(-sqrt(6/fan_in), sqrt(6/fan_in)), upsampling
    /// weights set to the exact bilinear kernel on the channel diagonal, all
    /// biases zero. Draws happen in layer order from a ChaCha8 stream, so a
    /// seed fully determines the initialization.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layers.len());
        for layer in &arch.layers {
            let lt = match layer {
                LayerSpec::Conv { size, c_in, c_out, .. } => {
                    let fan_in = (c_in * size * size) as f64;
                    let limit = (6.0 / fan_in).sqrt();
                    let w = (0..c_out * c_in * size * size)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    LayerTensors { w, b: vec![0.0; *c_out] }
                }
                LayerSpec::MaxPool => LayerTensors { w: vec![], b: vec![] },
                LayerSpec::Upconv { factor, channels } => {
                    let k = 2 * factor;
                    let bk = bilinear_kernel(*factor);
                    let mut w = vec![0.0; channels * channels * k * k];
                    for o in 0..*channels {
                        let base = (o * channels + o) * k * k;
                        w[base..base + k * k].copy_from_slice(&bk);
                    }
                    LayerTensors { w, b: vec![0.0; *channels] }
                }
                LayerSpec::SkipAdd { c_src, c_main, .. } => {
                    let limit = (6.0 / *c_src as f64).sqrt();
                    let w = (0..c_main * c_src)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    LayerTensors { w, b: vec![0.0; *c_main] }
                }
            };
            layers.push(lt);
        }
        Ok(NetworkParams { arch, layers })
    }

    /// Zero tensors with this network's shapes (gradient / velocity buffers).
    pub fn zeros_like(&self) -> Vec<LayerTensors> {
        self.layers
            .iter()
            .map(|lt| LayerTensors {
                w: vec![0.0; lt.w.len()],
                b: vec![0.0; lt.b.len()],
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|lt| lt.w.iter().all(|v| v.is_finite()) && lt.b.iter().all(|v| v.is_finite()))
    }

    /// Per-pixel label distributions (P_u, P_v) for an image whose sides are
    /// multiples of the network stride. Outputs are CHW tensors with
    /// `domain.du()` and `domain.dv()` channels.
    pub fn forward(&self, img: &Image) -> Result<(Tensor, Tensor)> {
        let input = self.image_tensor(img)?;
        let trace = self.forward_trace(input);
        let logits = trace.acts.last().expect("non-empty");
        let (du, dv) = (self.arch.domain.du(), self.arch.domain.dv());
        let mut probs = Tensor::zeros(logits.c, logits.h, logits.w);
        softmax_slice(logits, 0, du, &mut probs);
        softmax_slice(logits, du, dv, &mut probs);
        let n = logits.h * logits.w;
        let pu = Tensor {
            c: du,
            h: logits.h,
            w: logits.w,
            data: probs.data[..du * n].to_vec(),
        };
        let pv = Tensor {
            c: dv,
            h: logits.h,
            w: logits.w,
            data: probs.data[du * n..].to_vec(),
        };
        Ok((pu, pv))
    }

    fn image_tensor(&self, img: &Image) -> Result<Tensor> {
        let stride = self.arch.stride()?;
        if img.height() % stride != 0 || img.width() % stride != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} not divisible by the network stride; both sides must be multiples of {stride}",
                img.width(),
                img.height()
            )));
        }
        let img = match (img.channels(), self.arch.input_channels) {
            (c, want) if c == want => img.clone(),
            (1, 3) => img.to_rgb(),
            (3, 1) => img.to_gray(),
            (c, want) => {
                return Err(Error::Shape(format!(
                    "image has {c} channels but the network expects {want}"
                )))
            }
        };
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let mut t = Tensor::zeros(c, h, w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    t.set(ch, y, x, img.get(x, y, ch));
                }
            }
        }
        Ok(t)
    }

    fn forward_trace(&self, input: Tensor) -> Trace {
        let mut acts = Vec::with_capacity(self.arch.layers.len() + 1);
        let mut pool_codes = Vec::with_capacity(self.arch.layers.len());
        acts.push(input);
        for (l, layer) in self.arch.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let lt = &self.layers[l];
            let (out, codes) = match layer {
                LayerSpec::Conv { size, c_out, relu, .. } => {
                    (conv_forward(x, &lt.w, &lt.b, *size, *c_out, *relu), None)
                }
                LayerSpec::MaxPool => {
                    let (out, codes) = maxpool_forward(x);
                    (out, Some(codes))
                }
                LayerSpec::Upconv { factor, .. } => {
                    (upconv_forward(x, &lt.w, &lt.b, *factor), None)
                }
                LayerSpec::SkipAdd { source, .. } => {
                    (skip_add_forward(x, &acts[*source], &lt.w, &lt.b), None)
                }
            };
            acts.push(out);
            pool_codes.push(codes);
        }
        Trace { acts, pool_codes }
    }
}

struct Trace {
    acts: Vec<Tensor>,
    pool_codes: Vec<Option<Vec<u8>>>,
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

fn add_into(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        None => *slot = Some(t),
        Some(acc) => {
            for (a, v) in acc.data.iter_mut().zip(&t.data) {
                *a += v;
            }
        }
    }
}

/// Cross-entropy of both heads against the folded ground-truth flow, plus
/// the gradient of that loss with respect to the logits, both already scaled
/// for the chosen normalization.
fn ce_loss_and_dlogits(
    logits: &Tensor,
    flow: &MotionFlow,
    domain: &FlowDomain,
    scale: f64,
) -> Result<(f64, Tensor)> {
    let (du, dv) = (domain.du(), domain.dv());
    let (h, w) = (logits.h, logits.w);
    let n = h * w;
    let mut probs = Tensor::zeros(logits.c, h, w);
    softmax_slice(logits, 0, du, &mut probs);
    softmax_slice(logits, du, dv, &mut probs);

    let mut loss = 0.0;
    let mut dlogits = probs;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let (u, v) = FlowDomain::fold(u, v);
            let (lu, lv) = domain.label_of(u, v)?;
            let px = y * w + x;
            loss -= dlogits.data[lu * n + px].ln();
            loss -= dlogits.data[(du + lv) * n + px].ln();
            dlogits.data[lu * n + px] -= 1.0;
            dlogits.data[(du + lv) * n + px] -= 1.0;
        }
    }
    for v in &mut dlogits.data {
        *v *= scale;
    }
    Ok((loss * scale, dlogits))
}

fn loss_scale(norm: LossNorm, h: usize, w: usize) -> f64 {
    match norm {
        LossNorm::PerPixel => 1.0 / (h * w) as f64,
        LossNorm::Sum => 1.0,
    }
}

/// Loss of one (image, flow) pair without gradients.
pub fn loss_only(
    params: &NetworkParams,
    img: &Image,
    flow: &MotionFlow,
    norm: LossNorm,
) -> Result<f64> {
    check_pair(params, img, flow)?;
    let input = params.image_tensor(img)?;
    let trace = params.forward_trace(input);
    let logits = trace.acts.last().expect("non-empty");
    let scale = loss_scale(norm, logits.h, logits.w);
    let (loss, _) = ce_loss_and_dlogits(logits, flow, &params.arch.domain, scale)?;
    Ok(loss)
}

/// Loss and parameter gradients of one (image, flow) pair, by reverse-mode
/// differentiation through the stored activations.
pub fn loss_and_grad(
    params: &NetworkParams,
    img: &Image,
    flow: &MotionFlow,
    norm: LossNorm,
) -> Result<(f64, Vec<LayerTensors>)> {
    check_pair(params, img, flow)?;
    let input = params.image_tensor(img)?;
    let trace = params.forward_trace(input);
    let logits = trace.acts.last().expect("non-empty");
    let scale = loss_scale(norm, logits.h, logits.w);
    let (loss, dlogits) = ce_loss_and_dlogits(logits, flow, &params.arch.domain, scale)?;

    let nl = params.arch.layers.len();
    let mut grads = params.zeros_like();
    let mut dacts: Vec<Option<Tensor>> = (0..=nl).map(|_| None).collect();
    dacts[nl] = Some(dlogits);

    for l in (0..nl).rev() {
        let dout = dacts[l + 1].take().expect("gradient flows to every layer");
        let x = &trace.acts[l];
        match &params.arch.layers[l] {
            LayerSpec::Conv { size, c_out, relu, .. } => {
                let (dx, dw, db) = conv_backward(
                    x,
                    &trace.acts[l + 1],
                    &dout,
                    &params.layers[l].w,
                    *size,
                    *c_out,
                    *relu,
                );
                grads[l].w = dw;
                grads[l].b = db;
                add_into(&mut dacts[l], dx);
            }
            LayerSpec::MaxPool => {
                let codes = trace.pool_codes[l].as_ref().expect("pool stores argmax");
                let dx = maxpool_backward(&dout, codes, x.h, x.w);
                add_into(&mut dacts[l], dx);
            }
            LayerSpec::Upconv { factor, .. } => {
                let (dx, dw, db) = upconv_backward(x, &dout, &params.layers[l].w, *factor);
                grads[l].w = dw;
                grads[l].b = db;
                add_into(&mut dacts[l], dx);
            }
            LayerSpec::SkipAdd { source, c_main, .. } => {
                let (dmain, dsrc, dw, db) =
                    skip_add_backward(&trace.acts[*source], &dout, &params.layers[l].w, *c_main);
                grads[l].w = dw;
                grads[l].b = db;
                add_into(&mut dacts[l], dmain);
                add_into(&mut dacts[*source], dsrc);
            }
        }
    }
    Ok((loss, grads))
}

fn check_pair(params: &NetworkParams, img: &Image, flow: &MotionFlow) -> Result<()> {
    if flow.height() != img.height() || flow.width() != img.width() {
        return Err(Error::Shape(format!(
            "flow {}x{} does not match image {}x{}",
            flow.width(),
            flow.height(),
            img.width(),
            img.height()
        )));
    }
    let d = params.arch.domain;
    for j in 0..flow.height() {
        for i in 0..flow.width() {
            let (u, v) = flow.get(i, j);
            let (u, v) = FlowDomain::fold(u, v);
            if !d.contains(u, v) {
                return Err(Error::Domain(format!(
                    "flow vector ({u},{v}) at ({i},{j}) outside training domain"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Per-pixel argmax decode of both heads into a canonical motion-flow map.
///
/// Inputs of arbitrary size are replicate-padded on the bottom/right up to
/// the next stride multiple and the result is cropped back. Ties inside a
/// head resolve to the lowest label.
pub fn estimate_flow(params: &NetworkParams, img: &Image) -> Result<MotionFlow> {
    let stride = params.arch.stride()?;
    let (h, w) = (img.height(), img.width());
    let ph = h.div_ceil(stride) * stride;
    let pw = w.div_ceil(stride) * stride;
    let padded = if ph == h && pw == w {
        img.clone()
    } else {
        Image::from_fn(ph, pw, img.channels(), |i, j, c| {
            img.get(i.min(w - 1), j.min(h - 1), c)
        })?
    };
    let (pu, pv) = params.forward(&padded)?;
    let domain = params.arch.domain;
    let mut flow = MotionFlow::constant(h, w, 0, 0)?;
    let n = pu.h * pu.w;
    for y in 0..h {
        for x in 0..w {
            let px = y * pu.w + x;
            let lu = argmax_channel(&pu.data, n, px, pu.c);
            let lv = argmax_channel(&pv.data, n, px, pv.c);
            let (u, v) = domain.motion_of(lu, lv)?;
            flow.set(x, y, u, v);
        }
    }
    Ok(flow)
}

fn argmax_channel(data: &[f64], n: usize, px: usize, c: usize) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for ch in 0..c {
        let v = data[ch * n + px];
        if v > best {
            best = v;
            arg = ch;
        }
    }
    arg
}
