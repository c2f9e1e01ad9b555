//! Non-blind deblurring: given the blurred frame and a motion-flow map,
//! recover the sharp frame by minimizing
//!
//! ```text
//!   J(x) = ‖y − H x‖² + λ Σ (|∇x x| ^ α + |∇y x| ^ α)
//! ```
//!
//! via half-quadratic splitting: auxiliaries z ≈ ∇x decouple the non-smooth
//! hyper-Laplacian prior (z-step: generalized shrinkage, closed form for
//! α ∈ {1, 2/3, 1/2}) from a quadratic image update (x-step: conjugate
//! gradients on (HᵀH + λβ∇ᵀ∇) x = Hᵀy + λβ∇ᵀz), with the coupling weight β
//! annealed upward. The true objective J is recorded per outer iteration and
//! a candidate update is only accepted if it does not increase J.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blur::BlurOperator;
use crate::error::{Error, Result};
use crate::flow::MotionFlow;
use crate::image::{Image, Raster};

/// How color inputs are deconvolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStrategy {
    /// Each channel solved independently (the flow is shared).
    PerChannel,
    /// Convert to luminance, solve once, return a gray image.
    Luminance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeconvConfig {
    /// Hyper-Laplacian exponent in (0, 1].
    pub alpha: f64,
    /// Prior weight.
    pub lambda: f64,
    pub beta0: f64,
    pub beta_mult: f64,
    pub beta_max: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub channels: ChannelStrategy,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        DeconvConfig {
            alpha: 2.0 / 3.0,
            lambda: 2e-3,
            beta0: 1.0,
            beta_mult: 2.0 * std::f64::consts::SQRT_2,
            beta_max: 256.0,
            cg_tol: 1e-6,
            cg_max_iters: 200,
            channels: ChannelStrategy::PerChannel,
        }
    }
}

impl DeconvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Param(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.beta0.is_finite() && self.beta0 > 0.0) {
            return bad(format!("beta0 must be positive, got {}", self.beta0));
        }
        if !(self.beta_mult.is_finite() && self.beta_mult > 1.0) {
            return bad(format!("beta multiplier must exceed 1, got {}", self.beta_mult));
        }
        if !(self.beta_max >= self.beta0) {
            return bad(format!(
                "beta_max {} below beta0 {}",
                self.beta_max, self.beta0
            ));
        }
        if !(self.cg_tol.is_finite() && self.cg_tol > 0.0) {
            return bad(format!("cg_tol must be positive, got {}", self.cg_tol));
        }
        if self.cg_max_iters == 0 {
            return bad("cg_max_iters must be at least 1".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    /// ‖r‖ after each iteration, starting with the initial residual.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Conjugate gradients for a symmetric positive-definite map, started from
/// `x0`. Stops when ‖b − Ax‖ ≤ tol·‖b‖ or after `max_iters` iterations,
/// whichever comes first; `converged` reports which.
pub fn cg_solve(
    op: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    assert_eq!(b.len(), x0.len());
    let dot = |a: &[f64], c: &[f64]| -> f64 { a.iter().zip(c).map(|(x, y)| x * y).sum() };
    let b_norm = dot(b, b).sqrt();
    let target = tol * b_norm;

    let mut x = x0.to_vec();
    let ax = op(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bv, av)| bv - av).collect();
    let mut rs = dot(&r, &r);
    let mut residual_norms = vec![rs.sqrt()];
    if !rs.is_finite() {
        return Err(Error::Numerical("conjugate gradients: non-finite initial residual".into()));
    }
    if rs.sqrt() <= target {
        return Ok(CgOutcome { x, residual_norms, converged: true, iterations: 0 });
    }

    let mut p = r.clone();
    for k in 0..max_iters {
        let ap = op(&p);
        let p_ap = dot(&p, &ap);
        if !(p_ap.is_finite() && p_ap > 0.0) {
            return Err(Error::Numerical(format!(
                "conjugate gradients: curvature {p_ap:e} at iteration {k}; operator not positive-definite"
            )));
        }
        let step = rs / p_ap;
        for (xv, pv) in x.iter_mut().zip(&p) {
            *xv += step * pv;
        }
        for (rv, av) in r.iter_mut().zip(&ap) {
            *rv -= step * av;
        }
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(Error::Numerical(format!(
                "conjugate gradients: non-finite residual at iteration {k}"
            )));
        }
        residual_norms.push(rs_next.sqrt());
        if rs_next.sqrt() <= target {
            return Ok(CgOutcome {
                x,
                residual_norms,
                converged: true,
                iterations: k + 1,
            });
        }
        let ratio = rs_next / rs;
        rs = rs_next;
        for (pv, rv) in p.iter_mut().zip(&r) {
            *pv = rv + ratio * *pv;
        }
    }
    let iterations = max_iters;
    Ok(CgOutcome { x, residual_norms, converged: false, iterations })
}

// ---------------------------------------------------------------------------
// Generalized shrinkage (z-step)
// ---------------------------------------------------------------------------

fn penalty(z: f64, alpha: f64, beta: f64, g: f64) -> f64 {
    z.abs().powf(alpha) + beta * (z - g) * (z - g)
}

/// Stationarity residual of the positive branch: F'(z) = α z^(α−1) + 2β(z−g).
fn stat(z: f64, alpha: f64, beta: f64, g: f64) -> f64 {
    alpha * z.powf(alpha - 1.0) + 2.0 * beta * (z - g)
}

/// argmin_z |z|^α + β (z − g)², the proximal map of the hyper-Laplacian
/// penalty. Odd in g. Closed-form root finding for α ∈ {1, 2/3, 1/2};
/// safeguarded Newton bisection otherwise.
pub fn shrink(g: f64, alpha: f64, beta: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    let a = g.abs();
    let sign = g.signum();

    if alpha == 1.0 {
        // Convex case: soft threshold at 1/(2β).
        return sign * (a - 0.5 / beta).max(0.0);
    }

    // Candidate stationary points of the positive branch, z ∈ (0, a).
    let candidates: Vec<f64> = if (alpha - 2.0 / 3.0).abs() < 1e-12 {
        // Substituting z = t³ turns α z^(α−1) + 2β(z−a) = 0 into the
        // depressed quartic t⁴ − a·t + 1/(3β) = 0.
        quartic_roots(a, 1.0 / (3.0 * beta))
            .into_iter()
            .filter(|&t| t > 0.0)
            .map(|t| t * t * t)
            .collect()
    } else if (alpha - 0.5).abs() < 1e-12 {
        // Substituting z = t² gives the depressed cubic t³ − a·t + 1/(4β) = 0.
        cubic_roots(-a, 1.0 / (4.0 * beta))
            .into_iter()
            .filter(|&t| t > 0.0)
            .map(|t| t * t)
            .collect()
    } else {
        newton_candidates(a, alpha, beta)
    };

    // Global minimum: best stationary point against the z = 0 spike.
    let mut best_z = 0.0;
    let mut best_f = penalty(0.0, alpha, beta, a);
    for z0 in candidates {
        let z = polish(z0.min(a), alpha, beta, a);
        let f = penalty(z, alpha, beta, a);
        if f < best_f {
            best_f = f;
            best_z = z;
        }
    }
    sign * best_z
}

/// A couple of Newton steps on F'(z) = 0 to strip root-finder roundoff.
fn polish(mut z: f64, alpha: f64, beta: f64, a: f64) -> f64 {
    for _ in 0..3 {
        if z <= 0.0 {
            return z.max(0.0);
        }
        let f1 = stat(z, alpha, beta, a);
        let f2 = alpha * (alpha - 1.0) * z.powf(alpha - 2.0) + 2.0 * beta;
        if f2 == 0.0 {
            break;
        }
        let next = z - f1 / f2;
        if !next.is_finite() {
            break;
        }
        z = next.clamp(0.0, a);
    }
    z
}

/// Real roots of t³ + p·t + q = 0.
fn cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let disc = -4.0 * p * p * p - 27.0 * q * q;
    if disc > 0.0 {
        // Three real roots (requires p < 0): trigonometric form.
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    } else {
        // One real root: Cardano with a stable cube-root pairing.
        let half_q = q / 2.0;
        let s = (half_q * half_q + p * p * p / 27.0).max(0.0).sqrt();
        let u = (-half_q + s).cbrt();
        let v = (-half_q - s).cbrt();
        vec![u + v]
    }
}

/// Real roots of the depressed quartic t⁴ − a·t + r = 0 via the resolvent
/// cubic s³ − r·s − a²/8 = 0 and factorization into two quadratics.
fn quartic_roots(a: f64, r: f64) -> Vec<f64> {
    // Any real root s with s > 0 works; the resolvent always has one because
    // the cubic is negative at 0 (−a²/8) and grows unboundedly.
    let s = cubic_roots(-r, -a * a / 8.0)
        .into_iter()
        .filter(|s| *s > 0.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if !s.is_finite() {
        return vec![];
    }
    let gamma = (2.0 * s).sqrt();
    // t⁴ − a t + r = (t² + γt + δ)(t² − γt + ε) with δ+ε = 2s, ε−δ = −a/γ.
    let delta = s + a / (2.0 * gamma);
    let eps = s - a / (2.0 * gamma);
    let mut roots = Vec::with_capacity(4);
    for (lin, con) in [(gamma, delta), (-gamma, eps)] {
        let disc = lin * lin - 4.0 * con;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-lin + sq) / 2.0);
            roots.push((-lin - sq) / 2.0);
        }
    }
    roots
}

/// Interior minimum bracket for general α: F' is +∞ at 0⁺ and positive at a,
/// convex beyond the inflection of z^(α−1), so the local minimum (if any)
/// lies where F' crosses zero right of the inflection point.
fn newton_candidates(a: f64, alpha: f64, beta: f64) -> Vec<f64> {
    let inflection = (alpha * (1.0 - alpha) / (2.0 * beta)).powf(1.0 / (2.0 - alpha));
    let lo = inflection.min(a);
    if stat(lo, alpha, beta, a) >= 0.0 {
        return vec![]; // no descent anywhere: spike at zero wins
    }
    let (mut lo, mut hi) = (lo, a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if stat(mid, alpha, beta, a) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    vec![0.5 * (lo + hi)]
}

// ---------------------------------------------------------------------------
// Forward-difference gradients on a plane
// ---------------------------------------------------------------------------

/// Forward differences with replicate boundary (last row/column of each
/// direction is zero).
fn grad_plane(x: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            gx[k] = if i + 1 < w { x[k + 1] - x[k] } else { 0.0 };
            gy[k] = if j + 1 < h { x[k + w] - x[k] } else { 0.0 };
        }
    }
}

/// Exact adjoint of [`grad_plane`]: out = ∇xᵀ gx + ∇yᵀ gy.
fn grad_adjoint_plane(gx: &[f64], gy: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            let mut v = 0.0;
            if i + 1 < w {
                v -= gx[k];
            }
            if i >= 1 {
                v += gx[k - 1];
            }
            if j + 1 < h {
                v -= gy[k];
            }
            if j >= 1 {
                v += gy[k - w];
            }
            out[k] = v;
        }
    }
}

// ---------------------------------------------------------------------------
// HQS deblurring
// ---------------------------------------------------------------------------

fn plane_raster(plane: &[f64], h: usize, w: usize) -> Raster {
    let mut r = Raster::zeros(h, w, 1);
    r.data_mut().copy_from_slice(plane);
    r
}

struct ChannelSolver<'a> {
    op: &'a BlurOperator,
    h: usize,
    w: usize,
    lambda: f64,
    alpha: f64,
}

impl ChannelSolver<'_> {
    fn apply_h(&self, plane: &[f64]) -> Vec<f64> {
        let r = plane_raster(plane, self.h, self.w);
        self.op.apply_raster(&r).expect("shape fixed").data().to_vec()
    }

    fn apply_ht(&self, plane: &[f64]) -> Vec<f64> {
        let r = plane_raster(plane, self.h, self.w);
        self.op.adjoint_raster(&r).expect("shape fixed").data().to_vec()
    }

    /// True objective ‖y − Hx‖² + λ Σ |∇x|^α.
    fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        let hx = self.apply_h(x);
        let data: f64 = hx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = x.len();
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        grad_plane(x, self.h, self.w, &mut gx, &mut gy);
        let prior: f64 = gx
            .iter()
            .chain(gy.iter())
            .map(|&g| g.abs().powf(self.alpha))
            .sum();
        data + self.lambda * prior
    }

    /// x-step normal operator A = HᵀH + λβ ∇ᵀ∇.
    fn normal_op(&self, beta: f64, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut out = self.apply_ht(&self.apply_h(x));
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        grad_plane(x, self.h, self.w, &mut gx, &mut gy);
        let mut lap = vec![0.0; n];
        grad_adjoint_plane(&gx, &gy, self.h, self.w, &mut lap);
        let s = self.lambda * beta;
        for (o, l) in out.iter_mut().zip(&lap) {
            *o += s * l;
        }
        out
    }

    fn solve(&self, y: &[f64], cfg: &DeconvConfig) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = y.len();
        let hty = self.apply_ht(y);
        let mut x = y.to_vec();
        let mut objectives = vec![self.objective(&x, y)];

        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        let (mut zx, mut zy) = (vec![0.0; n], vec![0.0; n]);
        let mut beta = cfg.beta0;
        while beta <= cfg.beta_max {
            // z-step: per-component shrinkage toward the current gradients.
            grad_plane(&x, self.h, self.w, &mut gx, &mut gy);
            for (z, &g) in zx.iter_mut().zip(&gx) {
                *z = shrink(g, cfg.alpha, beta);
            }
            for (z, &g) in zy.iter_mut().zip(&gy) {
                *z = shrink(g, cfg.alpha, beta);
            }

            // x-step: CG on the normal equations, warm-started at x.
            let mut b = vec![0.0; n];
            grad_adjoint_plane(&zx, &zy, self.h, self.w, &mut b);
            let s = self.lambda * beta;
            for (bv, &h) in b.iter_mut().zip(&hty) {
                *bv = s * *bv + h;
            }
            let outcome = cg_solve(
                |v| self.normal_op(beta, v),
                &b,
                &x,
                cfg.cg_tol,
                cfg.cg_max_iters,
            )?;

            // Safeguard: the annealed surrogate usually lowers the true
            // objective; refuse the rare update that would not.
            let candidate = self.objective(&outcome.x, y);
            let current = *objectives.last().expect("seeded");
            if candidate <= current {
                x = outcome.x;
                objectives.push(candidate);
            } else {
                objectives.push(current);
            }
            beta *= cfg.beta_mult;
        }
        Ok((x, objectives))
    }
}

/// Outcome of [`deblur`]: the restored image plus the recorded true
/// objective per channel and outer iteration (index 0 = the blurred input).
#[derive(Debug, Clone)]
pub struct DeblurOutcome {
    pub image: Image,
    pub objectives: Vec<Vec<f64>>,
}

pub fn deblur(y: &Image, flow: &MotionFlow, cfg: &DeconvConfig) -> Result<DeblurOutcome> {
    cfg.validate()?;
    if y.height() != flow.height() || y.width() != flow.width() {
        return Err(Error::Shape(format!(
            "blurred image {}x{} does not match flow {}x{}",
            y.width(),
            y.height(),
            flow.width(),
            flow.height()
        )));
    }
    let y = match cfg.channels {
        ChannelStrategy::PerChannel => y.clone(),
        ChannelStrategy::Luminance => y.to_gray(),
    };
    let (h, w, c) = (y.height(), y.width(), y.channels());
    let op = BlurOperator::new(flow);

    // Channels are independent problems sharing the read-only operator.
    let planes: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            (0..h * w)
                .map(|k| y.data()[k * c + ch])
                .collect()
        })
        .collect();
    let solver = ChannelSolver {
        op: &op,
        h,
        w,
        lambda: cfg.lambda,
        alpha: cfg.alpha,
    };
    let solved: Vec<Result<(Vec<f64>, Vec<f64>)>> = planes
        .par_iter()
        .map(|plane| solver.solve(plane, cfg))
        .collect();

    let mut out = Raster::zeros(h, w, c);
    let mut objectives = Vec::with_capacity(c);
    for (ch, res) in solved.into_iter().enumerate() {
        let (x, obj) = res?;
        for (k, v) in x.into_iter().enumerate() {
            out.data_mut()[k * c + ch] = v;
        }
        objectives.push(obj);
    }
    Ok(DeblurOutcome {
        image: out.to_image_clamped(),
        objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::apply_blur;
    use crate::metrics::psnr;
    use crate::synth::synth_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // ---- conjugate gradients -------------------------------------------

    #[test]
    fn cg_identity_converges_immediately() {
        let b = vec![3.0, -1.0, 2.5];
        let out = cg_solve(|v| v.to_vec(), &b, &[0.0; 3], 1e-12, 10).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn cg_diagonal_pin() {
        let b = vec![1.0, 2.0, 3.0];
        let out = cg_solve(
            |v| vec![v[0], 2.0 * v[1], 3.0 * v[2]],
            &b,
            &[0.0; 3],
            1e-12,
            3,
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 3);
        for v in &out.x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_matches_dense_solver_on_random_spd() {
        // A = MᵀM + I, 8x8; direct Gaussian elimination as oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 8;
        let m: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    s += m[k * n + i] * m[k * n + j];
                }
                a[i * n + j] = s;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Dense solve with partial pivoting.
        let mut aug = vec![0.0; n * (n + 1)];
        for i in 0..n {
            aug[i * (n + 1)..i * (n + 1) + n].copy_from_slice(&a[i * n..(i + 1) * n]);
            aug[i * (n + 1) + n] = b[i];
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| {
                    aug[p * (n + 1) + col]
                        .abs()
                        .total_cmp(&aug[q * (n + 1) + col].abs())
                })
                .unwrap();
            for k in 0..=n {
                aug.swap(col * (n + 1) + k, piv * (n + 1) + k);
            }
            for row in col + 1..n {
                let f = aug[row * (n + 1) + col] / aug[col * (n + 1) + col];
                for k in col..=n {
                    aug[row * (n + 1) + k] -= f * aug[col * (n + 1) + k];
                }
            }
        }
        let mut reference = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = aug[row * (n + 1) + n];
            for k in row + 1..n {
                s -= aug[row * (n + 1) + k] * reference[k];
            }
            reference[row] = s / aug[row * (n + 1) + row];
        }

        let out = cg_solve(
            |v| {
                (0..n)
                    .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
                    .collect()
            },
            &b,
            &vec![0.0; n],
            1e-14,
            100,
        )
        .unwrap();
        for (x, r) in out.x.iter().zip(&reference) {
            assert!((x - r).abs() < 1e-8, "{x} vs {r}");
        }
        // Residual history ends below where it starts.
        assert!(out.residual_norms.last().unwrap() <= out.residual_norms.first().unwrap());
    }

    #[test]
    fn cg_rejects_indefinite_operators() {
        let b = vec![1.0, 1.0];
        let err = cg_solve(|v| vec![-v[0], -v[1]], &b, &[0.0; 2], 1e-10, 5).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    // ---- shrinkage ------------------------------------------------------

    /// Dense scan + ternary refinement: slow, assumption-free minimizer.
    fn shrink_oracle(g: f64, alpha: f64, beta: f64) -> f64 {
        let a = g.abs();
        let n = 40_000;
        let mut best = (penalty(0.0, alpha, beta, a), 0.0);
        for k in 0..=n {
            let z = a * k as f64 / n as f64;
            let f = penalty(z, alpha, beta, a);
            if f < best.0 {
                best = (f, z);
            }
        }
        let (mut lo, mut hi) = ((best.1 - a / n as f64).max(0.0), best.1 + a / n as f64);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if penalty(m1, alpha, beta, a) < penalty(m2, alpha, beta, a) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        g.signum() * 0.5 * (lo + hi)
    }

    #[test]
    fn soft_threshold_closed_form() {
        for (g, beta, want) in [
            (1.0, 1.0, 0.5),
            (0.4, 1.0, 0.0),
            (-1.0, 1.0, -0.5),
            (2.0, 4.0, 2.0 - 0.125),
            (0.1, 100.0, 0.1 - 0.005),
        ] {
            assert!((shrink(g, 1.0, beta) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shrinkage_attains_the_oracle_minimum() {
        for alpha in [1.0, 2.0 / 3.0, 0.5, 0.8] {
            for g in [1e-3, 0.01, 0.05, 0.2, 1.0, 3.0, 10.0] {
                for beta in [0.5, 1.0, 8.0, 64.0, 256.0, 2048.0] {
                    let mine = shrink(g, alpha, beta);
                    let oracle = shrink_oracle(g, alpha, beta);
                    let f_mine = penalty(mine, alpha, beta, g);
                    let f_oracle = penalty(oracle, alpha, beta, g);
                    assert!(
                        f_mine <= f_oracle + 1e-9,
                        "alpha={alpha} g={g} beta={beta}: F({mine})={f_mine} vs oracle F({oracle})={f_oracle}"
                    );
                    // Odd symmetry, bit-exact.
                    assert_eq!(shrink(-g, alpha, beta), -mine);
                    // Never overshoots the input.
                    assert!((0.0..=g).contains(&mine));
                }
            }
        }
    }

    #[test]
    fn shrinkage_limits() {
        // Huge beta: quadratic dominates, z -> g.
        assert!((shrink(0.7, 2.0 / 3.0, 1e9) - 0.7).abs() < 1e-3);
        // Tiny beta: spike at zero wins.
        assert_eq!(shrink(0.7, 2.0 / 3.0, 1e-9), 0.0);
        assert_eq!(shrink(0.0, 0.5, 10.0), 0.0);
    }

    // ---- gradients ------------------------------------------------------

    #[test]
    fn gradient_adjoint_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (7, 9);
        let x: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zx: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zy: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut gx, mut gy) = (vec![0.0; h * w], vec![0.0; h * w]);
        grad_plane(&x, h, w, &mut gx, &mut gy);
        let mut adj = vec![0.0; h * w];
        grad_adjoint_plane(&zx, &zy, h, w, &mut adj);
        let lhs: f64 = gx.iter().zip(&zx).chain(gy.iter().zip(&zy)).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn normal_operator_is_symmetric_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (10, 12);
        let mut flow = MotionFlow::constant(h, w, 0, 0).unwrap();
        for j in 0..h {
            for i in 0..w {
                let u = rng.gen_range(-3..=3);
                let v = rng.gen_range(-3..=3);
                let (u, v) = crate::flow::FlowDomain::fold(u, v);
                flow.set(i, j, u, v);
            }
        }
        let op = BlurOperator::new(&flow);
        let solver = ChannelSolver { op: &op, h, w, lambda: 2e-3, alpha: 2.0 / 3.0 };
        let beta = 8.0;
        for _ in 0..5 {
            let x1: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax1 = solver.normal_op(beta, &x1);
            let ax2 = solver.normal_op(beta, &x2);
            let lhs: f64 = ax1.iter().zip(&x2).map(|(a, b)| a * b).sum();
            let rhs: f64 = x1.iter().zip(&ax2).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
            let quad: f64 = ax1.iter().zip(&x1).map(|(a, b)| a * b).sum();
            assert!(quad > 0.0);
        }
    }

    // ---- end-to-end deblurring -----------------------------------------

    #[test]
    fn zero_flow_with_negligible_prior_returns_the_input() {
        let img = synth_image(24, 24, 2);
        let flow = MotionFlow::constant(24, 24, 0, 0).unwrap();
        let cfg = DeconvConfig { lambda: 1e-6, ..DeconvConfig::default() };
        let out = deblur(&img, &flow, &cfg).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(out.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "max deviation {worst}");
    }

    #[test]
    fn uniform_streak_recovery_gains_psnr() {
        let sharp = synth_image(64, 64, 7);
        let flow = MotionFlow::constant(64, 64, 6, 0).unwrap();
        let blurred = apply_blur(&sharp, &flow).unwrap();
        let out = deblur(&blurred, &flow, &DeconvConfig::default()).unwrap();
        let before = psnr(&blurred, &sharp).unwrap();
        let after = psnr(&out.image, &sharp).unwrap();
        assert!(
            after >= before + 4.0,
            "PSNR {before:.2} dB -> {after:.2} dB"
        );
    }

    #[test]
    fn objective_history_is_monotone() {
        let sharp = synth_image(16, 16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut flow = MotionFlow::constant(16, 16, 0, 0).unwrap();
        for j in 0..16 {
            for i in 0..16 {
                let (u, v) = crate::flow::FlowDomain::fold(rng.gen_range(-4..=4), rng.gen_range(-4..=4));
                flow.set(i, j, u, v);
            }
        }
        let blurred = apply_blur(&sharp, &flow).unwrap();
        let out = deblur(&blurred, &flow, &DeconvConfig::default()).unwrap();
        for channel in &out.objectives {
            assert!(channel.len() >= 2);
            for pair in channel.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-8,
                    "objective rose: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
            // And it actually improves on the blurred initializer.
            assert!(channel.last().unwrap() < channel.first().unwrap());
        }
    }

    #[test]
    fn luminance_strategy_returns_gray() {
        let sharp = synth_image(16, 16, 3);
        let flow = MotionFlow::constant(16, 16, 2, 0).unwrap();
        let blurred = apply_blur(&sharp, &flow).unwrap();
        let cfg = DeconvConfig { channels: ChannelStrategy::Luminance, ..DeconvConfig::default() };
        let out = deblur(&blurred, &flow, &cfg).unwrap();
        assert_eq!(out.image.channels(), 1);
        assert_eq!(out.objectives.len(), 1);
    }

    #[test]
    fn deblurring_is_deterministic() {
        let sharp = synth_image(20, 20, 31);
        let flow = MotionFlow::constant(20, 20, 3, -2).unwrap();
        let blurred = apply_blur(&sharp, &flow).unwrap();
        let a = deblur(&blurred, &flow, &DeconvConfig::default()).unwrap();
        let b = deblur(&blurred, &flow, &DeconvConfig::default()).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.objectives, b.objectives);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = DeconvConfig::default();
        ok.validate().unwrap();
        assert!(DeconvConfig { alpha: 0.0, ..ok.clone() }.validate().is_err());
        assert!(DeconvConfig { alpha: 1.5, ..ok.clone() }.validate().is_err());
        assert!(DeconvConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(DeconvConfig { beta_mult: 1.0, ..ok.clone() }.validate().is_err());
        assert!(DeconvConfig { beta_max: 0.5, ..ok.clone() }.validate().is_err());
        assert!(DeconvConfig { cg_max_iters: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let img = synth_image(16, 16, 1);
        let flow = MotionFlow::constant(8, 8, 1, 0).unwrap();
        assert!(matches!(
            deblur(&img, &flow, &DeconvConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}
