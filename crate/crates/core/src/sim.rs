//! Parametric camera-motion flow simulation.
//!
//! A flow map is the sum of four component fields — translation along x, y,
//! and z (toward a vanishing point) and rotation about the optical axis —
//! each with parameters drawn from uniform priors. The continuous sum is
//! rescaled into the label domain if needed, rounded to integer pixel
//! motion, clamped, and folded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowDomain, FlowFieldF, MotionFlow};

// ---------------------------------------------------------------------------
// Component generators
// ---------------------------------------------------------------------------

/// Translation along x: U(i,j) = (i - i_c)·r + t, V = 0.
///
/// t is the base motion at the anchor column i_c; r accelerates it linearly
/// with horizontal distance from the anchor.
pub fn sim_translation_x(height: usize, width: usize, i_c: f64, t: f64, r: f64) -> FlowFieldF {
    let mut f = FlowFieldF::zeros(height, width);
    for j in 0..height {
        for i in 0..width {
            f.add(i, j, (i as f64 - i_c) * r + t, 0.0);
        }
    }
    f
}

/// Translation along y: V(i,j) = (j - j_c)·r + t, U = 0.
pub fn sim_translation_y(height: usize, width: usize, j_c: f64, t: f64, r: f64) -> FlowFieldF {
    let mut f = FlowFieldF::zeros(height, width);
    for j in 0..height {
        for i in 0..width {
            f.add(i, j, 0.0, (j as f64 - j_c) * r + t);
        }
    }
    f
}

/// Translation along z: a radial pattern about the vanishing point p.
///
/// U(i,j) = t·d^ζ·(i - p.0), V(i,j) = t·d^ζ·(j - p.1), with d the Euclidean
/// distance from (i,j) to p. ζ shapes how the magnitude grows with d.
pub fn sim_translation_z(
    height: usize,
    width: usize,
    p: (f64, f64),
    t: f64,
    zeta: f64,
) -> FlowFieldF {
    let mut f = FlowFieldF::zeros(height, width);
    for j in 0..height {
        for i in 0..width {
            let dx = i as f64 - p.0;
            let dy = j as f64 - p.1;
            let scale = t * dx.hypot(dy).powf(zeta);
            f.add(i, j, scale * dx, scale * dy);
        }
    }
    f
}

/// Rotation about the optical axis through center p with angular step ω.
///
/// Magnitude s(i,j) = 2·d·tan(ω/2); direction perpendicular to the radius,
/// via θ(i,j) = atan2(j - p.1, i - p.0) and (U,V) = s·(cos(θ-π/2),
/// sin(θ-π/2)), i.e. (U,V) = s·(dy, -dx)/d. ω > 0 turns clockwise when the
/// vertical axis points up.
pub fn sim_rotation_z(height: usize, width: usize, p: (f64, f64), omega: f64) -> Result<FlowFieldF> {
    if !omega.is_finite() || omega.abs() >= std::f64::consts::PI {
        return Err(Error::Param(format!(
            "rotation step must satisfy |omega| < pi, got {omega}"
        )));
    }
    let half_tan = (omega / 2.0).tan();
    let mut f = FlowFieldF::zeros(height, width);
    for j in 0..height {
        for i in 0..width {
            let dx = i as f64 - p.0;
            let dy = j as f64 - p.1;
            let d = dx.hypot(dy);
            if d > 0.0 {
                let s = 2.0 * d * half_tan;
                f.add(i, j, s * dy / d, s * (-dx) / d);
            }
        }
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Sampling configuration
// ---------------------------------------------------------------------------

/// Closed interval for a uniformly sampled parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::Param(format!(
                "range {name} must satisfy lo <= hi with finite bounds, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Uniform priors for the four motion components.
///
/// Any sampled sum whose motion exceeds the label domain is rescaled
/// multiplicatively to fit (rejection would bias toward small motions), so
/// the ranges control the shape of the prior rather than hard caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub t_tx: Range,
    pub r_tx: Range,
    pub t_ty: Range,
    pub r_ty: Range,
    pub t_tz: Range,
    pub zeta: Range,
    pub omega: Range,
    /// Fraction of each image side excluded when sampling anchor points;
    /// 0.2 keeps centers in the middle 60%.
    pub center_margin: f64,
    pub enable_tx: bool,
    pub enable_ty: bool,
    pub enable_tz: bool,
    pub enable_rz: bool,
    /// Probability of emitting an all-zero flow (sharp training pairs).
    pub zero_flow_prob: f64,
    /// Base seed consumed by CLI entry points; library calls pass their own
    /// generator.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        // Translation ranges below assume the paper-scale domain; prefer
        // defaults_for to match a specific domain.
        SimConfig::defaults_for(18.0)
    }
}

impl SimConfig {
    /// Default priors given half the horizontal domain bound (u_max / 2).
    fn defaults_for(half_span: f64) -> Self {
        SimConfig {
            t_tx: Range::new(-half_span, half_span),
            r_tx: Range::new(-0.005, 0.005),
            t_ty: Range::new(-half_span, half_span),
            r_ty: Range::new(-0.005, 0.005),
            t_tz: Range::new(-0.005, 0.005),
            zeta: Range::new(0.8, 1.2),
            omega: Range::new(-0.05, 0.05),
            center_margin: 0.2,
            enable_tx: true,
            enable_ty: true,
            enable_tz: true,
            enable_rz: true,
            zero_flow_prob: 0.02,
            seed: 0,
        }
    }

    /// Default priors scaled to a label domain.
    pub fn for_domain(domain: &FlowDomain) -> Self {
        SimConfig::defaults_for(domain.u_max() as f64 / 2.0)
    }

    /// Checks well-formedness. Domain closure itself is enforced per draw by
    /// the multiplicative rescale, not by range arithmetic.
    pub fn validate(&self) -> Result<()> {
        self.t_tx.validate("t_tx")?;
        self.r_tx.validate("r_tx")?;
        self.t_ty.validate("t_ty")?;
        self.r_ty.validate("r_ty")?;
        self.t_tz.validate("t_tz")?;
        self.zeta.validate("zeta")?;
        self.omega.validate("omega")?;
        if self.zeta.lo <= 0.0 {
            return Err(Error::Param(format!(
                "zeta must be positive, got lo {}",
                self.zeta.lo
            )));
        }
        if self.omega.lo <= -std::f64::consts::PI || self.omega.hi >= std::f64::consts::PI {
            return Err(Error::Param(format!(
                "omega range must lie inside (-pi, pi), got [{}, {}]",
                self.omega.lo, self.omega.hi
            )));
        }
        if !(0.0..0.5).contains(&self.center_margin) {
            return Err(Error::Param(format!(
                "center margin must lie in [0, 0.5), got {}",
                self.center_margin
            )));
        }
        if !(0.0..=1.0).contains(&self.zero_flow_prob) {
            return Err(Error::Param(format!(
                "zero-flow probability must lie in [0,1], got {}",
                self.zero_flow_prob
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Draws
// ---------------------------------------------------------------------------

/// The parameters actually sampled for one flow map; serialized into dataset
/// manifests so any record can be re-derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDraw {
    pub zero_flow: bool,
    pub t_tx: f64,
    pub r_tx: f64,
    pub i_tx: f64,
    pub t_ty: f64,
    pub r_ty: f64,
    pub j_ty: f64,
    pub t_tz: f64,
    pub zeta: f64,
    pub p_tz: (f64, f64),
    pub omega: f64,
    pub p_rz: (f64, f64),
    /// Multiplicative factor (≤ 1) applied to fit the label domain.
    pub rescale: f64,
}

impl SimDraw {
    fn zero() -> Self {
        SimDraw {
            zero_flow: true,
            t_tx: 0.0,
            r_tx: 0.0,
            i_tx: 0.0,
            t_ty: 0.0,
            r_ty: 0.0,
            j_ty: 0.0,
            t_tz: 0.0,
            zeta: 1.0,
            p_tz: (0.0, 0.0),
            omega: 0.0,
            p_rz: (0.0, 0.0),
            rescale: 1.0,
        }
    }

    /// Samples one draw. Disabled components keep zero parameters and
    /// consume no generator output.
    pub fn sample(cfg: &SimConfig, height: usize, width: usize, rng: &mut impl Rng) -> SimDraw {
        if cfg.zero_flow_prob > 0.0 && rng.gen_bool(cfg.zero_flow_prob) {
            return SimDraw::zero();
        }
        fn anchor<R: Rng>(rng: &mut R, margin: f64, extent: usize) -> f64 {
            let span = (extent - 1) as f64;
            Range::new(margin * span, (1.0 - margin) * span).sample(rng)
        }
        let mut draw = SimDraw::zero();
        draw.zero_flow = false;
        let m = cfg.center_margin;
        if cfg.enable_tx {
            draw.t_tx = cfg.t_tx.sample(rng);
            draw.r_tx = cfg.r_tx.sample(rng);
            draw.i_tx = anchor(rng, m, width);
        }
        if cfg.enable_ty {
            draw.t_ty = cfg.t_ty.sample(rng);
            draw.r_ty = cfg.r_ty.sample(rng);
            draw.j_ty = anchor(rng, m, height);
        }
        if cfg.enable_tz {
            draw.t_tz = cfg.t_tz.sample(rng);
            draw.zeta = cfg.zeta.sample(rng);
            draw.p_tz = (anchor(rng, m, width), anchor(rng, m, height));
        }
        if cfg.enable_rz {
            draw.omega = cfg.omega.sample(rng);
            draw.p_rz = (anchor(rng, m, width), anchor(rng, m, height));
        }
        draw
    }

    /// Sums the component fields in the continuous domain (before rescale
    /// and quantization).
    pub fn continuous_field(&self, height: usize, width: usize) -> Result<FlowFieldF> {
        let mut field = FlowFieldF::zeros(height, width);
        if self.zero_flow {
            return Ok(field);
        }
        let add = |field: &mut FlowFieldF, other: FlowFieldF| {
            for k in 0..field.u_plane().len() {
                field.u_plane_mut()[k] += other.u_plane()[k];
                field.v_plane_mut()[k] += other.v_plane()[k];
            }
        };
        if self.t_tx != 0.0 || self.r_tx != 0.0 {
            add(
                &mut field,
                sim_translation_x(height, width, self.i_tx, self.t_tx, self.r_tx),
            );
        }
        if self.t_ty != 0.0 || self.r_ty != 0.0 {
            add(
                &mut field,
                sim_translation_y(height, width, self.j_ty, self.t_ty, self.r_ty),
            );
        }
        if self.t_tz != 0.0 {
            add(
                &mut field,
                sim_translation_z(height, width, self.p_tz, self.t_tz, self.zeta),
            );
        }
        if self.omega != 0.0 {
            add(&mut field, sim_rotation_z(height, width, self.p_rz, self.omega)?);
        }
        Ok(field)
    }
}

/// Factor (≤ 1) that shrinks `field` until both axes fit the domain.
fn rescale_factor(field: &FlowFieldF, domain: &FlowDomain) -> f64 {
    let max_u = field.u_plane().iter().fold(0.0f64, |m, &u| m.max(u.abs()));
    let max_v = field.v_plane().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut s = 1.0f64;
    if max_u > domain.u_max() as f64 {
        s = s.min(domain.u_max() as f64 / max_u);
    }
    if max_v > domain.v_max() as f64 {
        s = s.min(domain.v_max() as f64 / max_v);
    }
    s
}

/// Draws one motion-flow map: sample parameters, sum the component fields,
/// rescale into the domain, then round, clamp, and fold.
///
/// Deterministic given the generator state; returns the draw alongside the
/// flow so callers can digest or replay it.
pub fn simulate_flow(
    height: usize,
    width: usize,
    domain: &FlowDomain,
    cfg: &SimConfig,
    rng: &mut impl Rng,
) -> Result<(MotionFlow, SimDraw)> {
    if height < 2 || width < 2 {
        return Err(Error::Shape(format!(
            "flow simulation needs at least 2x2 pixels, got {height}x{width}"
        )));
    }
    cfg.validate()?;
    let mut draw = SimDraw::sample(cfg, height, width, rng);
    let mut field = draw.continuous_field(height, width)?;
    draw.rescale = rescale_factor(&field, domain);
    if draw.rescale < 1.0 {
        field.scale(draw.rescale);
    }
    let flow = field.quantize(domain)?;
    debug_assert!(flow.in_domain(domain));
    Ok((flow, draw))
}
