//! Heterogeneous blur operator: per-pixel linear kernels applied as a single
//! linear map, plus its exact adjoint and seeded additive noise.
//!
//! Gather form per output pixel: Y(i,j) = Σ_taps w · X(i+di, j+dj), with
//! replicate-edge padding. The adjoint scatters with the same clamped
//! indexing, making the pair exact transposes of one another.

use rand::SeedableRng;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::MotionFlow;
use crate::image::{Image, Raster};
use crate::kernel::{kernel_for, LinearKernel};

// ---------------------------------------------------------------------------
// Operator
// ---------------------------------------------------------------------------

/// The blur map H induced by one motion flow, with kernels memoized per
/// distinct motion vector.
///
/// Construction resolves every pixel to an index into the kernel table, so
/// `apply`/`adjoint` are pure reads and safe to share across threads.
pub struct BlurOperator {
    height: usize,
    width: usize,
    kernels: Vec<LinearKernel>,
    index: Vec<u32>,
}

impl BlurOperator {
    pub fn new(flow: &MotionFlow) -> Self {
        let mut table = std::collections::HashMap::new();
        let mut kernels = Vec::new();
        let mut index = Vec::with_capacity(flow.len());
        for j in 0..flow.height() {
            for i in 0..flow.width() {
                let m = flow.get(i, j);
                let id = *table.entry(m).or_insert_with(|| {
                    kernels.push(kernel_for(m.0, m.1));
                    kernels.len() - 1
                });
                index.push(id as u32);
            }
        }
        BlurOperator {
            height: flow.height(),
            width: flow.width(),
            kernels,
            index,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of distinct kernels backing this operator.
    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    #[inline]
    fn kernel_at(&self, i: usize, j: usize) -> &LinearKernel {
        &self.kernels[self.index[j * self.width + i] as usize]
    }

    fn check_shape(&self, h: usize, w: usize) -> Result<()> {
        if h != self.height || w != self.width {
            return Err(Error::Shape(format!(
                "operator built for {}x{}, got image {h}x{w}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// H x on an unconstrained raster.
    ///
    /// Rows are computed independently in fixed tap order, so the output is
    /// bit-identical at any thread count.
    pub fn apply_raster(&self, x: &Raster) -> Result<Raster> {
        self.check_shape(x.height(), x.width())?;
        let ch = x.channels();
        let w = self.width;
        let mut out = Raster::zeros(self.height, w, ch);
        out.data_mut()
            .par_chunks_mut(w * ch)
            .enumerate()
            .for_each(|(j, row)| {
                for i in 0..w {
                    let kernel = self.kernel_at(i, j);
                    let acc = &mut row[i * ch..(i + 1) * ch];
                    for t in kernel.taps() {
                        let si = i as isize + t.di as isize;
                        let sj = j as isize + t.dj as isize;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += t.w * x.get_clamped(si, sj, c);
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Hᵀ y on an unconstrained raster (scatter with clamped targets).
    pub fn adjoint_raster(&self, y: &Raster) -> Result<Raster> {
        self.check_shape(y.height(), y.width())?;
        let ch = y.channels();
        let mut out = Raster::zeros(self.height, self.width, ch);
        for j in 0..self.height {
            for i in 0..self.width {
                let kernel = self.kernel_at(i, j);
                for t in kernel.taps() {
                    let ti = (i as isize + t.di as isize).clamp(0, self.width as isize - 1)
                        as usize;
                    let tj = (j as isize + t.dj as isize).clamp(0, self.height as isize - 1)
                        as usize;
                    for c in 0..ch {
                        let k = out.idx(ti, tj, c);
                        out.data_mut()[k] += t.w * y.get(i, j, c);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Blurs an image; convex tap weights keep samples in `[0,1]` up to
    /// float dust, which is clamped away.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        Ok(self.apply_raster(&Raster::from_image(x))?.to_image_clamped())
    }
}

/// One-shot blur of `x` under `flow`.
pub fn apply_blur(x: &Image, flow: &MotionFlow) -> Result<Image> {
    check_flow_shape(x, flow)?;
    BlurOperator::new(flow).apply(x)
}

/// One-shot adjoint Hᵀ y under `flow`; values may leave `[0,1]` where
/// boundary clamping piles mass, so the result is an unconstrained raster.
pub fn apply_adjoint(y: &Image, flow: &MotionFlow) -> Result<Raster> {
    check_flow_shape(y, flow)?;
    BlurOperator::new(flow).adjoint_raster(&Raster::from_image(y))
}

fn check_flow_shape(img: &Image, flow: &MotionFlow) -> Result<()> {
    if img.height() != flow.height() || img.width() != flow.width() {
        return Err(Error::Shape(format!(
            "image {}x{} and flow {}x{} differ",
            img.height(),
            img.width(),
            flow.height(),
            flow.width()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Additive Gaussian noise: standard deviation in sample units plus the seed
/// that makes it reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !sigma.is_finite() || !(0.0..=1.0).contains(&sigma) {
            return Err(Error::Param(format!(
                "noise sigma must lie in [0,1], got {sigma}"
            )));
        }
        Ok(NoiseSpec { sigma, seed })
    }
}

/// Adds i.i.d. Gaussian noise and clamps back into `[0,1]`. Deterministic
/// for a given seed.
pub fn add_noise(y: &Image, spec: &NoiseSpec) -> Image {
    if spec.sigma == 0.0 {
        return y.clone();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = rand_distr::Normal::new(0.0, spec.sigma).expect("sigma validated finite");
    let data = y
        .data()
        .iter()
        .map(|&s| (s + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Image::from_raw(y.height(), y.width(), y.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowDomain;
    use rand::Rng;

    fn random_image(rng: &mut impl Rng, h: usize, w: usize, ch: usize) -> Image {
        Image::from_fn(h, w, ch, |_, _, _| rng.gen_range(0.0..=1.0)).unwrap()
    }

    fn random_flow(rng: &mut impl Rng, d: &FlowDomain, h: usize, w: usize) -> MotionFlow {
        let mut flow = MotionFlow::constant(h, w, 0, 0).unwrap();
        for j in 0..h {
            for i in 0..w {
                let u = rng.gen_range(0..=d.u_max());
                let v = rng.gen_range(-d.v_max()..=d.v_max());
                let (u, v) = FlowDomain::fold(u, v);
                flow.set(i, j, u, v);
            }
        }
        flow
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    #[test]
    fn zero_flow_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 9, 11, 3);
        let flow = MotionFlow::constant(9, 11, 0, 0).unwrap();
        assert_eq!(apply_blur(&x, &flow).unwrap(), x);
        let adj = apply_adjoint(&x, &flow).unwrap();
        assert_eq!(adj.data(), x.data());
    }

    #[test]
    fn constant_image_is_a_fixed_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = FlowDomain::new(8, 8).unwrap();
        let x = Image::filled(14, 14, 1, 0.375).unwrap();
        let flow = random_flow(&mut rng, &d, 14, 14);
        let y = apply_blur(&x, &flow).unwrap();
        for &s in y.data() {
            assert!((s - 0.375).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut x = Image::filled(7, 7, 1, 0.0).unwrap();
        x.set(3, 3, 0, 1.0);
        let flow = MotionFlow::constant(7, 7, 2, 0).unwrap();
        let y = apply_blur(&x, &flow).unwrap();
        for j in 0..7 {
            for i in 0..7 {
                let expected = match (i, j) {
                    (2, 3) | (4, 3) => 0.25,
                    (3, 3) => 0.5,
                    _ => 0.0,
                };
                assert!((y.get(i, j, 0) - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn blur_is_linear() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = FlowDomain::new(8, 8).unwrap();
        let flow = random_flow(&mut rng, &d, 16, 16);
        let op = BlurOperator::new(&flow);
        let x1 = Raster::from_image(&random_image(&mut rng, 16, 16, 1));
        let x2 = Raster::from_image(&random_image(&mut rng, 16, 16, 1));
        let (a, b) = (0.3, 0.6);
        let mut combo = Raster::zeros(16, 16, 1);
        for k in 0..combo.data().len() {
            combo.data_mut()[k] = a * x1.data()[k] + b * x2.data()[k];
        }
        let lhs = op.apply_raster(&combo).unwrap();
        let y1 = op.apply_raster(&x1).unwrap();
        let y2 = op.apply_raster(&x2).unwrap();
        for k in 0..lhs.data().len() {
            let rhs = a * y1.data()[k] + b * y2.data()[k];
            assert!((lhs.data()[k] - rhs).abs() < 1e-10);
        }
    }

    // Materializes H row by row from the kernel taps — an independent dense
    // route to the same operator.
    fn dense_matrix(flow: &MotionFlow) -> Vec<Vec<f64>> {
        let (h, w) = (flow.height(), flow.width());
        let n = h * w;
        let mut mat = vec![vec![0.0; n]; n];
        for j in 0..h {
            for i in 0..w {
                let kernel = kernel_for(flow.get(i, j).0, flow.get(i, j).1);
                let row = j * w + i;
                for t in kernel.taps() {
                    let si = (i as isize + t.di as isize).clamp(0, w as isize - 1) as usize;
                    let sj = (j as isize + t.dj as isize).clamp(0, h as isize - 1) as usize;
                    mat[row][sj * w + si] += t.w;
                }
            }
        }
        mat
    }

    #[test]
    fn dense_matrix_equivalence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = FlowDomain::new(8, 8).unwrap();
        let flow = random_flow(&mut rng, &d, 12, 12);
        let op = BlurOperator::new(&flow);
        let mat = dense_matrix(&flow);

        let x = Raster::from_image(&random_image(&mut rng, 12, 12, 1));
        let hx = op.apply_raster(&x).unwrap();
        for (row, out) in mat.iter().zip(hx.data()) {
            let dense: f64 = dot(row, x.data());
            assert!((dense - out).abs() < 1e-10);
        }

        let y = Raster::from_image(&random_image(&mut rng, 12, 12, 1));
        let hty = op.adjoint_raster(&y).unwrap();
        for (col, out) in hty.data().iter().enumerate() {
            let dense: f64 = (0..mat.len()).map(|r| mat[r][col] * y.data()[r]).sum();
            assert!((dense - out).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_identity_holds_over_random_trials() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let d = FlowDomain::new(8, 8).unwrap();
        for _ in 0..100 {
            let flow = random_flow(&mut rng, &d, 16, 16);
            let op = BlurOperator::new(&flow);
            let x = Raster::from_image(&random_image(&mut rng, 16, 16, 1));
            let y = Raster::from_image(&random_image(&mut rng, 16, 16, 1));
            let hx = op.apply_raster(&x).unwrap();
            let hty = op.adjoint_raster(&y).unwrap();
            let gap = (dot(hx.data(), y.data()) - dot(x.data(), hty.data())).abs();
            assert!(gap <= 1e-6 * norm(x.data()) * norm(y.data()));
        }
    }

    #[test]
    fn uniform_flow_adjoint_matches_blur_in_interior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let y = random_image(&mut rng, 20, 20, 1);
        for &(u, v) in &[(3i16, 0i16), (2, 2), (0, 4), (5, -3)] {
            let flow = MotionFlow::constant(20, 20, u, v).unwrap();
            let op = BlurOperator::new(&flow);
            let blurred = op.apply_raster(&Raster::from_image(&y)).unwrap();
            let adj = op.adjoint_raster(&Raster::from_image(&y)).unwrap();
            let margin = kernel_for(u, v).extent() as usize + 1;
            for j in margin..20 - margin {
                for i in margin..20 - margin {
                    assert!((blurred.get(i, j, 0) - adj.get(i, j, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_cache_deduplicates() {
        let mut flow = MotionFlow::constant(10, 10, 1, 1).unwrap();
        flow.set(0, 0, 3, 0);
        flow.set(5, 5, 3, 0);
        let op = BlurOperator::new(&flow);
        assert_eq!(op.kernel_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Image::filled(8, 8, 1, 0.5).unwrap();
        let flow = MotionFlow::constant(8, 9, 0, 0).unwrap();
        assert!(apply_blur(&x, &flow).is_err());
    }

    #[test]
    fn noise_is_seeded_and_sized() {
        let y = Image::filled(256, 256, 1, 0.5).unwrap();
        let spec = NoiseSpec::new(0.01, 42).unwrap();
        let n1 = add_noise(&y, &spec);
        let n2 = add_noise(&y, &spec);
        assert_eq!(n1, n2);
        assert_ne!(n1, add_noise(&y, &NoiseSpec::new(0.01, 43).unwrap()));

        let silent = add_noise(&y, &NoiseSpec::new(0.0, 42).unwrap());
        assert_eq!(silent, y);

        let mean: f64 = n1.data().iter().sum::<f64>() / n1.data().len() as f64;
        let var: f64 = n1.data().iter().map(|&s| (s - mean).powi(2)).sum::<f64>()
            / (n1.data().len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.009..=0.011).contains(&std), "sample std {std}");
    }

    #[test]
    fn noise_sigma_is_validated() {
        assert!(NoiseSpec::new(-0.1, 0).is_err());
        assert!(NoiseSpec::new(1.5, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }
}
