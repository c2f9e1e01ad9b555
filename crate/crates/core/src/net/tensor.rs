//! Dense CHW tensors and the layer primitives (forward + backward) the
//! classifier is built from.
//!
//! Every backward pass here is exact reverse-mode differentiation of its
//! forward counterpart. Parallel loops split over disjoint output planes
//! with a fixed inner summation order, so results are bit-identical at any
//! thread count.

use rayon::prelude::*;

/// Channel-major feature map: index (c, y, x) at `(c*h + y)*w + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let k = self.idx(c, y, x);
        self.data[k] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

// ---------------------------------------------------------------------------
// Convolution (stride 1, zero 'same' padding, odd kernel)
// ---------------------------------------------------------------------------

fn pad_planes(x: &Tensor, pad: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (x.h + 2 * pad, x.w + 2 * pad);
    let mut buf = vec![0.0; x.c * ph * pw];
    for c in 0..x.c {
        for y in 0..x.h {
            let src = (c * x.h + y) * x.w;
            let dst = (c * ph + y + pad) * pw + pad;
            buf[dst..dst + x.w].copy_from_slice(&x.data[src..src + x.w]);
        }
    }
    (buf, ph, pw)
}

/// weight layout: [c_out][c_in][k][k].
pub fn conv_forward(
    x: &Tensor,
    weight: &[f64],
    bias: &[f64],
    k: usize,
    c_out: usize,
    relu: bool,
) -> Tensor {
    let c_in = x.c;
    let pad = k / 2;
    let (padded, _ph, pw) = pad_planes(x, pad);
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(c_out, h, w);
    out.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(bias[o]);
            for i in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((o * c_in + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let src = (i * (h + 2 * pad) + y + ky) * pw + kx;
                            let row = &padded[src..src + w];
                            let dst = &mut plane[y * w..(y + 1) * w];
                            for (d, s) in dst.iter_mut().zip(row) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
            if relu {
                for v in plane.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        });
    out
}

/// Returns (dx, dweight, dbias). `out` is the forward output (post-ReLU),
/// used to mask the incoming gradient when `relu` is set.
pub fn conv_backward(
    x: &Tensor,
    out: &Tensor,
    dout: &Tensor,
    weight: &[f64],
    k: usize,
    c_out: usize,
    relu: bool,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c_in = x.c;
    let pad = k / 2;
    let (h, w) = (x.h, x.w);
    let (padded, ph, pw) = pad_planes(x, pad);

    // Gradient w.r.t. pre-activation.
    let dz: Vec<f64> = if relu {
        dout.data
            .iter()
            .zip(&out.data)
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect()
    } else {
        dout.data.clone()
    };

    let mut dbias = vec![0.0; c_out];
    for (o, db) in dbias.iter_mut().enumerate() {
        *db = dz[o * h * w..(o + 1) * h * w].iter().sum();
    }

    let mut dweight = vec![0.0; c_out * c_in * k * k];
    dweight
        .par_chunks_mut(c_in * k * k)
        .enumerate()
        .for_each(|(o, dw_o)| {
            let dz_o = &dz[o * h * w..(o + 1) * h * w];
            for i in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let src = (i * ph + y + ky) * pw + kx;
                            let row = &padded[src..src + w];
                            let g = &dz_o[y * w..(y + 1) * w];
                            for (rv, gv) in row.iter().zip(g) {
                                acc += rv * gv;
                            }
                        }
                        dw_o[(i * k + ky) * k + kx] = acc;
                    }
                }
            }
        });

    let mut dx = Tensor::zeros(c_in, h, w);
    dx.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(i, dplane)| {
            let mut padded_grad = vec![0.0; ph * pw];
            for o in 0..c_out {
                let dz_o = &dz[o * h * w..(o + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((o * c_in + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let dst = (y + ky) * pw + kx;
                            let g = &dz_o[y * w..(y + 1) * w];
                            let acc = &mut padded_grad[dst..dst + w];
                            for (a, gv) in acc.iter_mut().zip(g) {
                                *a += wv * gv;
                            }
                        }
                    }
                }
            }
            for y in 0..h {
                let src = (y + pad) * pw + pad;
                dplane[y * w..(y + 1) * w].copy_from_slice(&padded_grad[src..src + w]);
            }
        });

    (dx, dweight, dbias)
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

/// Forward pass plus the in-window argmax (0..4, row-major; first max wins)
/// needed to route gradients back.
pub fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<u8>) {
    debug_assert!(x.h % 2 == 0 && x.w % 2 == 0);
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    let mut which = vec![0u8; x.c * oh * ow];
    let planes: Vec<(&mut [f64], &mut [u8])> = out
        .data
        .chunks_mut(oh * ow)
        .zip(which.chunks_mut(oh * ow))
        .collect();
    planes.into_par_iter().enumerate().for_each(|(c, (plane, codes))| {
        for y in 0..oh {
            for xw in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut code = 0u8;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = x.get(c, 2 * y + dy, 2 * xw + dx);
                        if v > best {
                            best = v;
                            code = (dy * 2 + dx) as u8;
                        }
                    }
                }
                plane[y * ow + xw] = best;
                codes[y * ow + xw] = code;
            }
        }
    });
    (out, which)
}

pub fn maxpool_backward(dout: &Tensor, which: &[u8], in_h: usize, in_w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dout.c, in_h, in_w);
    let (oh, ow) = (dout.h, dout.w);
    dx.data
        .par_chunks_mut(in_h * in_w)
        .enumerate()
        .for_each(|(c, dplane)| {
            for y in 0..oh {
                for xw in 0..ow {
                    let k = (c * oh + y) * ow + xw;
                    let code = which[k] as usize;
                    let (dy, dx_off) = (code / 2, code % 2);
                    dplane[(2 * y + dy) * in_w + 2 * xw + dx_off] += dout.data[k];
                }
            }
        });
    dx
}

// ---------------------------------------------------------------------------
// Transposed convolution (upsampling by integer factor f)
// ---------------------------------------------------------------------------
//
// Kernel 2f x 2f, stride f, padding f/2: output is exactly f times the input
// in each spatial dimension. weight layout: [c_out][c_in][2f][2f] with
// c_out == c_in == channels.

pub fn upconv_forward(x: &Tensor, weight: &[f64], bias: &[f64], f: usize) -> Tensor {
    let c = x.c;
    let k = 2 * f;
    let pad = f / 2;
    let (oh, ow) = (x.h * f, x.w * f);
    let mut out = Tensor::zeros(c, oh, ow);
    out.data
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(bias[o]);
            for i in 0..c {
                let wbase = (o * c + i) * k * k;
                for yi in 0..x.h {
                    for xi in 0..x.w {
                        let v = x.get(i, yi, xi);
                        if v == 0.0 {
                            continue;
                        }
                        let by = (yi * f) as isize - pad as isize;
                        let bx = (xi * f) as isize - pad as isize;
                        let ky0 = (-by).max(0) as usize;
                        let ky1 = k.min((oh as isize - by) as usize);
                        let kx0 = (-bx).max(0) as usize;
                        let kx1 = k.min((ow as isize - bx) as usize);
                        for ky in ky0..ky1 {
                            let dst = ((by + ky as isize) as usize) * ow + (bx + kx0 as isize) as usize;
                            let wrow = &weight[wbase + ky * k + kx0..wbase + ky * k + kx1];
                            let orow = &mut plane[dst..dst + (kx1 - kx0)];
                            for (os, ws) in orow.iter_mut().zip(wrow) {
                                *os += v * ws;
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Returns (dx, dweight, dbias).
pub fn upconv_backward(
    x: &Tensor,
    dout: &Tensor,
    weight: &[f64],
    f: usize,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c = x.c;
    let k = 2 * f;
    let pad = f / 2;
    let (oh, ow) = (dout.h, dout.w);

    let mut dbias = vec![0.0; c];
    for (o, db) in dbias.iter_mut().enumerate() {
        *db = dout.plane(o).iter().sum();
    }

    let mut dx = Tensor::zeros(c, x.h, x.w);
    dx.data
        .par_chunks_mut(x.h * x.w)
        .enumerate()
        .for_each(|(i, dplane)| {
            for o in 0..c {
                let wbase = (o * c + i) * k * k;
                let dplane_o = dout.plane(o);
                for yi in 0..x.h {
                    for xi in 0..x.w {
                        let by = (yi * f) as isize - pad as isize;
                        let bx = (xi * f) as isize - pad as isize;
                        let ky0 = (-by).max(0) as usize;
                        let ky1 = k.min((oh as isize - by) as usize);
                        let kx0 = (-bx).max(0) as usize;
                        let kx1 = k.min((ow as isize - bx) as usize);
                        let mut acc = 0.0;
                        for ky in ky0..ky1 {
                            let src = ((by + ky as isize) as usize) * ow + (bx + kx0 as isize) as usize;
                            let wrow = &weight[wbase + ky * k + kx0..wbase + ky * k + kx1];
                            let grow = &dplane_o[src..src + (kx1 - kx0)];
                            for (ws, gs) in wrow.iter().zip(grow) {
                                acc += ws * gs;
                            }
                        }
                        dplane[yi * x.w + xi] += acc;
                    }
                }
            }
        });

    let mut dweight = vec![0.0; c * c * k * k];
    dweight
        .par_chunks_mut(c * k * k)
        .enumerate()
        .for_each(|(o, dw_o)| {
            let dplane_o = dout.plane(o);
            for i in 0..c {
                for yi in 0..x.h {
                    for xi in 0..x.w {
                        let v = x.get(i, yi, xi);
                        if v == 0.0 {
                            continue;
                        }
                        let by = (yi * f) as isize - pad as isize;
                        let bx = (xi * f) as isize - pad as isize;
                        let ky0 = (-by).max(0) as usize;
                        let ky1 = k.min((oh as isize - by) as usize);
                        let kx0 = (-bx).max(0) as usize;
                        let kx1 = k.min((ow as isize - bx) as usize);
                        for ky in ky0..ky1 {
                            let src = ((by + ky as isize) as usize) * ow + (bx + kx0 as isize) as usize;
                            let grow = &dplane_o[src..src + (kx1 - kx0)];
                            let wrow = &mut dw_o[(i * k + ky) * k + kx0..(i * k + ky) * k + kx1];
                            for (ws, gs) in wrow.iter_mut().zip(grow) {
                                *ws += v * gs;
                            }
                        }
                    }
                }
            }
        });

    (dx, dweight, dbias)
}

/// The bilinear interpolation kernel used to initialize upsampling weights:
/// w(a,b) = (1 - |a-c|/f)(1 - |b-c|/f) with c = (2f-1)/2.
pub fn bilinear_kernel(f: usize) -> Vec<f64> {
    let k = 2 * f;
    let c = (k - 1) as f64 / 2.0;
    let mut w = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            w[a * k + b] = (1.0 - (a as f64 - c).abs() / f as f64)
                * (1.0 - (b as f64 - c).abs() / f as f64);
        }
    }
    w
}

// ---------------------------------------------------------------------------
// Skip fusion: add a 1x1-projected earlier feature map
// ---------------------------------------------------------------------------

/// out[o] = main[o] + bias[o] + Σ_i proj[o][i] · src[i]; proj layout
/// [c_main][c_src].
pub fn skip_add_forward(main: &Tensor, src: &Tensor, proj: &[f64], bias: &[f64]) -> Tensor {
    debug_assert_eq!(main.h, src.h);
    debug_assert_eq!(main.w, src.w);
    let n = main.h * main.w;
    let c_src = src.c;
    let mut out = main.clone();
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(o, plane)| {
            for v in plane.iter_mut() {
                *v += bias[o];
            }
            for i in 0..c_src {
                let p = proj[o * c_src + i];
                if p == 0.0 {
                    continue;
                }
                let srow = src.plane(i);
                for (d, s) in plane.iter_mut().zip(srow) {
                    *d += p * s;
                }
            }
        });
    out
}

/// Returns (dmain, dsrc, dproj, dbias).
pub fn skip_add_backward(
    src: &Tensor,
    dout: &Tensor,
    proj: &[f64],
    c_main: usize,
) -> (Tensor, Tensor, Vec<f64>, Vec<f64>) {
    let n = dout.h * dout.w;
    let c_src = src.c;
    let dmain = dout.clone();

    let mut dbias = vec![0.0; c_main];
    for (o, db) in dbias.iter_mut().enumerate() {
        *db = dout.plane(o).iter().sum();
    }

    let mut dproj = vec![0.0; c_main * c_src];
    dproj
        .par_chunks_mut(c_src)
        .enumerate()
        .for_each(|(o, row)| {
            let g = dout.plane(o);
            for (i, cell) in row.iter_mut().enumerate() {
                let s = src.plane(i);
                *cell = g.iter().zip(s).map(|(gv, sv)| gv * sv).sum();
            }
        });

    let mut dsrc = Tensor::zeros(c_src, dout.h, dout.w);
    dsrc.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, plane)| {
            for o in 0..c_main {
                let p = proj[o * c_src + i];
                if p == 0.0 {
                    continue;
                }
                let g = dout.plane(o);
                for (d, gv) in plane.iter_mut().zip(g) {
                    *d += p * gv;
                }
            }
        });

    (dmain, dsrc, dproj, dbias)
}

// ---------------------------------------------------------------------------
// Per-pixel softmax over a channel slice
// ---------------------------------------------------------------------------

/// Softmax over channels [c0, c0+len) at every pixel, written into `probs`
/// over the same channel range (max-subtracted for stability).
pub fn softmax_slice(logits: &Tensor, c0: usize, len: usize, probs: &mut Tensor) {
    let n = logits.h * logits.w;
    for px in 0..n {
        let mut max = f64::NEG_INFINITY;
        for c in c0..c0 + len {
            max = max.max(logits.data[c * n + px]);
        }
        let mut total = 0.0;
        for c in c0..c0 + len {
            let e = (logits.data[c * n + px] - max).exp();
            probs.data[c * n + px] = e;
            total += e;
        }
        for c in c0..c0 + len {
            probs.data[c * n + px] /= total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(c, h, w);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, 2, 5, 6);
        // 3x3 kernels: channel o copies channel o.
        let mut w = vec![0.0; 2 * 2 * 9];
        w[(0 * 2 + 0) * 9 + 4] = 1.0;
        w[(1 * 2 + 1) * 9 + 4] = 1.0;
        let out = conv_forward(&x, &w, &[0.0, 0.0], 3, 2, false);
        assert_eq!(out.data, x.data);
    }

    #[test]
    fn conv_uses_zero_padding() {
        let mut x = Tensor::zeros(1, 3, 3);
        x.data.fill(1.0);
        let w = vec![1.0; 9]; // 3x3 box sum
        let out = conv_forward(&x, &w, &[0.0], 3, 1, false);
        assert_eq!(out.get(0, 1, 1), 9.0);
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(out.get(0, 0, 1), 6.0);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut x = Tensor::zeros(1, 1, 2);
        x.data = vec![-2.0, 3.0];
        let w = vec![1.0]; // 1x1 identity
        let out = conv_forward(&x, &w, &[0.0], 1, 1, true);
        assert_eq!(out.data, vec![0.0, 3.0]);
    }

    #[test]
    fn maxpool_picks_window_maxima_and_routes_gradient() {
        let mut x = Tensor::zeros(1, 2, 4);
        x.data = vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 2.0];
        let (out, which) = maxpool_forward(&x);
        assert_eq!(out.data, vec![5.0, 2.0]);
        assert_eq!(which[0], 1); // top-right of first window
        assert_eq!(which[1], 0); // tie in second window: first scanned wins

        let mut dout = Tensor::zeros(1, 1, 2);
        dout.data = vec![10.0, 20.0];
        let dx = maxpool_backward(&dout, &which, 2, 4);
        assert_eq!(dx.data, vec![0.0, 10.0, 20.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bilinear_kernel_factor_two_pin() {
        let w = bilinear_kernel(2);
        // 4x4 kernel; center 2x2 block all 0.5625 = 9/16.
        assert_eq!(w.len(), 16);
        for (a, b) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert!((w[a * 4 + b] - 0.5625).abs() < 1e-12);
        }
        assert!((w[0] - 0.0625).abs() < 1e-12);
        // Mass: Σw = f² so that constant inputs stay constant after stride-f
        // scattering.
        let total: f64 = w.iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_upconv_preserves_constants() {
        for f in [2usize, 4] {
            let c = 3;
            let mut w = vec![0.0; c * c * 4 * f * f];
            let bk = bilinear_kernel(f);
            for o in 0..c {
                let base = (o * c + o) * 4 * f * f;
                w[base..base + 4 * f * f].copy_from_slice(&bk);
            }
            let mut x = Tensor::zeros(c, 4, 6);
            x.data.fill(0.7);
            let out = upconv_forward(&x, &w, &vec![0.0; c], f);
            assert_eq!(out.h, 4 * f);
            assert_eq!(out.w, 6 * f);
            // Interior pixels are exact; borders lose mass to the crop.
            let margin = f;
            for y in margin..out.h - margin {
                for xx in margin..out.w - margin {
                    for o in 0..c {
                        assert!(
                            (out.get(o, y, xx) - 0.7).abs() < 1e-12,
                            "f={f} at ({o},{y},{xx})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn upconv_adjoint_consistency() {
        // <upconv(x), g> must equal <x, dx(g)> since the operation is linear
        // in x (zero bias).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, f) = (3, 2);
        let x = rand_tensor(&mut rng, c, 5, 4);
        let w: Vec<f64> = (0..c * c * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = rand_tensor(&mut rng, c, 10, 8);
        let out = upconv_forward(&x, &w, &vec![0.0; c], f);
        let (dx, _, _) = upconv_backward(&x, &g, &w, f);
        let lhs: f64 = out.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn skip_add_projects_and_adds() {
        let mut main = Tensor::zeros(2, 1, 2);
        main.data = vec![1.0, 2.0, 3.0, 4.0];
        let mut src = Tensor::zeros(1, 1, 2);
        src.data = vec![10.0, 20.0];
        let proj = vec![0.5, -1.0]; // [c_main=2][c_src=1]
        let out = skip_add_forward(&main, &src, &proj, &[0.0, 1.0]);
        assert_eq!(out.data, vec![6.0, 12.0, -6.0, -15.0]);
    }

    #[test]
    fn softmax_slices_normalize_independently() {
        let mut logits = Tensor::zeros(5, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in &mut logits.data {
            *v = rng.gen_range(-3.0..3.0);
        }
        let mut probs = Tensor::zeros(5, 2, 2);
        softmax_slice(&logits, 0, 2, &mut probs);
        softmax_slice(&logits, 2, 3, &mut probs);
        for px in 0..4 {
            let s1: f64 = (0..2).map(|c| probs.data[c * 4 + px]).sum();
            let s2: f64 = (2..5).map(|c| probs.data[c * 4 + px]).sum();
            assert!((s1 - 1.0).abs() < 1e-12);
            assert!((s2 - 1.0).abs() < 1e-12);
            assert!(probs.data.iter().all(|&p| p >= 0.0));
        }
    }
}
