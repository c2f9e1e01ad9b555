//! Procedural test scenes: deterministic stand-ins for natural photographs.
//!
//! Real-world frames mix smooth shading, hard occlusion edges, and
//! mid-frequency texture; those are the statistics both the gradient prior
//! and the motion classifier feed on. Each scene is built from a seeded
//! ChaCha8 stream, so a (seed, size) pair always reproduces the same pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Renders an RGB scene: a tilted background gradient, a handful of
/// soft-edged disks and rectangles, band-limited sinusoidal texture, and a
/// sprinkle of per-pixel grain.
pub fn synth_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);

    // Background: affine ramp in a random direction per channel, around a
    // random mid tone.
    let base: [(f64, f64, f64); 3] = std::array::from_fn(|_| {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let slope = rng.gen_range(0.1..0.35);
        let mid = rng.gen_range(0.35..0.65);
        (angle, slope, mid)
    });

    struct Shape {
        cx: f64,
        cy: f64,
        half_x: f64,
        half_y: f64,
        round: bool,
        color: [f64; 3],
        edge: f64,
    }
    let diag = h.hypot(w);
    let shapes: Vec<Shape> = (0..8)
        .map(|_| Shape {
            cx: rng.gen_range(0.0..w),
            cy: rng.gen_range(0.0..h),
            half_x: rng.gen_range(0.06..0.22) * diag,
            half_y: rng.gen_range(0.06..0.22) * diag,
            round: rng.gen_bool(0.5),
            color: std::array::from_fn(|_| rng.gen_range(0.1..0.9)),
            edge: rng.gen_range(0.6..2.0),
        })
        .collect();

    // Texture: a fixed bank of random plane waves, amplitude falling with
    // frequency.
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            let freq = rng.gen_range(0.05..0.45);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = 0.05 / (0.3 + freq);
            (freq * angle.cos(), freq * angle.sin(), phase, amp)
        })
        .collect();

    let mut img = Image::filled(height, width, 3, 0.5).expect("valid dims");
    let mut grain = vec![0.0; height * width];
    for g in &mut grain {
        *g = rng.gen_range(-0.015..0.015);
    }

    for j in 0..height {
        for i in 0..width {
            let (x, y) = (i as f64, j as f64);
            let mut tex = 0.0;
            for &(kx, ky, phase, amp) in &waves {
                tex += amp * (kx * x + ky * y + phase).sin();
            }
            for c in 0..3 {
                let (angle, slope, mid) = base[c];
                let t = (x * angle.cos() + y * angle.sin()) / diag;
                let mut v = mid + slope * (t - 0.5);
                for s in &shapes {
                    let dx = (x - s.cx) / s.half_x;
                    let dy = (y - s.cy) / s.half_y;
                    let d = if s.round {
                        dx.hypot(dy)
                    } else {
                        dx.abs().max(dy.abs())
                    };
                    // Soft coverage: 1 inside, 0 outside, ramp of ~`edge` px.
                    let ramp = (1.0 - d) * s.half_x.min(s.half_y) / s.edge;
                    let cover = ramp.clamp(0.0, 1.0);
                    v = v * (1.0 - cover) + s.color[c] * cover;
                }
                v += tex + grain[j * width + i];
                img.set(i, j, c, v.clamp(0.02, 0.98));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_per_seed() {
        let a = synth_image(48, 64, 9);
        let b = synth_image(48, 64, 9);
        assert_eq!(a.data(), b.data());
        let c = synth_image(48, 64, 10);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn scenes_span_a_wide_tonal_range_with_edges() {
        for seed in 0..6 {
            let img = synth_image(64, 64, seed);
            let lo = img.data().iter().cloned().fold(1.0, f64::min);
            let hi = img.data().iter().cloned().fold(0.0, f64::max);
            assert!(hi - lo > 0.3, "seed {seed}: flat scene ({lo}..{hi})");

            // Gradient energy: some strong edges, mostly smooth area.
            let gray = img.to_gray();
            let mut strong = 0usize;
            let mut total = 0usize;
            for j in 0..63 {
                for i in 0..63 {
                    let gx = gray.get(i + 1, j, 0) - gray.get(i, j, 0);
                    let gy = gray.get(i, j + 1, 0) - gray.get(i, j, 0);
                    if gx.hypot(gy) > 0.12 {
                        strong += 1;
                    }
                    total += 1;
                }
            }
            let frac = strong as f64 / total as f64;
            assert!(
                frac > 0.002 && frac < 0.5,
                "seed {seed}: edge fraction {frac}"
            );
        }
    }

    #[test]
    fn values_stay_inside_unit_range() {
        let img = synth_image(33, 57, 1234);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
