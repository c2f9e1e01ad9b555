//! Dense integer motion-flow maps, the folded label domain, and the MFLW
//! binary container.
//!
//! A motion vector m = (u, v) gives the horizontal (u, rightward) and
//! vertical (v, downward) displacement in pixels that a scene point travels
//! during the exposure. Blur is symmetric under m -> -m, so every vector is
//! folded into a canonical half-plane before labeling: u >= 0 always, and
//! v >= 0 whenever u == 0.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FLOW_MAGIC: [u8; 4] = *b"MFLW";
pub const FLOW_VERSION: u16 = 1;

// ---------------------------------------------------------------------------
// Label domain
// ---------------------------------------------------------------------------

/// Discrete domain of folded motion vectors: u in [0, u_max],
/// v in [-v_max, v_max].
///
/// The two classifier heads predict u and v independently, so the label
/// space has u_max + 1 horizontal classes and 2 * v_max + 1 vertical ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "RawFlowDomain", into = "RawFlowDomain")]
pub struct FlowDomain {
    u_max: i16,
    v_max: i16,
}

/// Unvalidated mirror used for (de)serialization so stored configs cannot
/// smuggle in non-positive bounds.
#[derive(serde::Serialize, serde::Deserialize, Clone, Copy)]
struct RawFlowDomain {
    u_max: i16,
    v_max: i16,
}

impl TryFrom<RawFlowDomain> for FlowDomain {
    type Error = Error;

    fn try_from(raw: RawFlowDomain) -> Result<Self> {
        FlowDomain::new(raw.u_max, raw.v_max)
    }
}

impl From<FlowDomain> for RawFlowDomain {
    fn from(d: FlowDomain) -> Self {
        RawFlowDomain {
            u_max: d.u_max,
            v_max: d.v_max,
        }
    }
}

impl FlowDomain {
    pub fn new(u_max: i16, v_max: i16) -> Result<Self> {
        if u_max <= 0 || v_max <= 0 {
            return Err(Error::Domain(format!(
                "flow domain bounds must be positive, got u_max={u_max} v_max={v_max}"
            )));
        }
        Ok(FlowDomain { u_max, v_max })
    }

    pub fn u_max(&self) -> i16 {
        self.u_max
    }

    pub fn v_max(&self) -> i16 {
        self.v_max
    }

    /// Number of horizontal labels.
    pub fn du(&self) -> usize {
        self.u_max as usize + 1
    }

    /// Number of vertical labels.
    pub fn dv(&self) -> usize {
        2 * self.v_max as usize + 1
    }

    /// Total label count across both heads.
    pub fn label_count(&self) -> usize {
        self.du() + self.dv()
    }

    /// Whether (u, v) lies in the canonical folded domain.
    pub fn contains(&self, u: i16, v: i16) -> bool {
        (0..=self.u_max).contains(&u)
            && (-self.v_max..=self.v_max).contains(&v)
            && !(u == 0 && v < 0)
    }

    /// Folds an arbitrary motion vector into the canonical half-plane.
    ///
    /// m and -m produce the same blur kernel, so (u, v) with u < 0 maps to
    /// (-u, -v), and (0, v) with v < 0 maps to (0, -v).
    pub fn fold(u: i16, v: i16) -> (i16, i16) {
        if u < 0 || (u == 0 && v < 0) {
            (-u, -v)
        } else {
            (u, v)
        }
    }

    /// Clamps a raw (pre-fold) vector to |u| <= u_max, |v| <= v_max.
    pub fn clamp(&self, u: i16, v: i16) -> (i16, i16) {
        (u.clamp(-self.u_max, self.u_max), v.clamp(-self.v_max, self.v_max))
    }

    /// Maps a canonical vector to its pair of head labels.
    pub fn label_of(&self, u: i16, v: i16) -> Result<(usize, usize)> {
        if !self.contains(u, v) {
            return Err(Error::Domain(format!(
                "motion ({u},{v}) outside folded domain u:[0,{}] v:[-{},{}]",
                self.u_max, self.v_max, self.v_max
            )));
        }
        Ok((u as usize, (v + self.v_max) as usize))
    }

    /// Inverse of [`label_of`](Self::label_of) on canonical vectors.
    ///
    /// The two heads are decoded independently, so u_label = 0 can pair with
    /// a negative-v label; the result is folded to keep the output canonical.
    pub fn motion_of(&self, u_label: usize, v_label: usize) -> Result<(i16, i16)> {
        if u_label >= self.du() || v_label >= self.dv() {
            return Err(Error::Domain(format!(
                "labels ({u_label},{v_label}) outside domain {}x{}",
                self.du(),
                self.dv()
            )));
        }
        Ok(FlowDomain::fold(u_label as i16, v_label as i16 - self.v_max))
    }
}

// ---------------------------------------------------------------------------
// Integer flow maps
// ---------------------------------------------------------------------------

/// Per-pixel integer motion vectors, stored as separate u and v planes in
/// row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionFlow {
    height: usize,
    width: usize,
    u: Vec<i16>,
    v: Vec<i16>,
}

impl MotionFlow {
    pub fn new(height: usize, width: usize, u: Vec<i16>, v: Vec<i16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "flow dimensions must be positive, got {height}x{width}"
            )));
        }
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::Shape(format!(
                "flow planes hold {}/{} values, expected {}",
                u.len(),
                v.len(),
                height * width
            )));
        }
        Ok(MotionFlow {
            height,
            width,
            u,
            v,
        })
    }

    /// Flow with the same vector at every pixel.
    pub fn constant(height: usize, width: usize, u: i16, v: i16) -> Result<Self> {
        MotionFlow::new(height, width, vec![u; height * width], vec![v; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects zero dimensions
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (i16, i16) {
        let k = self.idx(i, j);
        (self.u[k], self.v[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, u: i16, v: i16) {
        let k = self.idx(i, j);
        self.u[k] = u;
        self.v[k] = v;
    }

    pub fn u_plane(&self) -> &[i16] {
        &self.u
    }

    pub fn v_plane(&self) -> &[i16] {
        &self.v
    }

    /// Folds every vector into the canonical half-plane in place.
    pub fn fold(&mut self) {
        for k in 0..self.u.len() {
            let (fu, fv) = FlowDomain::fold(self.u[k], self.v[k]);
            self.u[k] = fu;
            self.v[k] = fv;
        }
    }

    /// True when every vector lies in `domain`'s canonical folded set.
    pub fn in_domain(&self, domain: &FlowDomain) -> bool {
        self.u
            .iter()
            .zip(&self.v)
            .all(|(&u, &v)| domain.contains(u, v))
    }

    /// Center crop to exactly `new_h` x `new_w`, mirroring
    /// [`Image::center_crop`](crate::image::Image::center_crop) so image and
    /// flow stay aligned.
    pub fn center_crop(&self, new_h: usize, new_w: usize) -> Result<MotionFlow> {
        if new_h == 0 || new_w == 0 || new_h > self.height || new_w > self.width {
            return Err(Error::Shape(format!(
                "cannot crop {}x{} to {new_h}x{new_w}",
                self.height, self.width
            )));
        }
        let j0 = (self.height - new_h) / 2;
        let i0 = (self.width - new_w) / 2;
        let mut u = Vec::with_capacity(new_h * new_w);
        let mut v = Vec::with_capacity(new_h * new_w);
        for j in 0..new_h {
            let start = (j0 + j) * self.width + i0;
            u.extend_from_slice(&self.u[start..start + new_w]);
            v.extend_from_slice(&self.v[start..start + new_w]);
        }
        MotionFlow::new(new_h, new_w, u, v)
    }
}

// ---------------------------------------------------------------------------
// Continuous flow fields
// ---------------------------------------------------------------------------

/// Real-valued flow field produced by summing parametric motion generators,
/// before quantization to pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFieldF {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowFieldF {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowFieldF {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.idx(i, j);
        (self.u[k], self.v[k])
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, du: f64, dv: f64) {
        let k = self.idx(i, j);
        self.u[k] += du;
        self.v[k] += dv;
    }

    pub fn u_plane(&self) -> &[f64] {
        &self.u
    }

    pub fn v_plane(&self) -> &[f64] {
        &self.v
    }

    pub fn u_plane_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub fn v_plane_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    /// Largest vector magnitude over the field.
    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(&u, &v)| u.hypot(v))
            .fold(0.0, f64::max)
    }

    /// Scales both components uniformly.
    pub fn scale(&mut self, factor: f64) {
        for u in &mut self.u {
            *u *= factor;
        }
        for v in &mut self.v {
            *v *= factor;
        }
    }

    /// Rounds to integer pixel motion (half away from zero), clamps each
    /// component into `domain`'s raw range, then folds into the canonical
    /// half-plane.
    pub fn quantize(&self, domain: &FlowDomain) -> Result<MotionFlow> {
        let mut u = Vec::with_capacity(self.u.len());
        let mut v = Vec::with_capacity(self.v.len());
        for k in 0..self.u.len() {
            let ru = clamp_round_i16(self.u[k]);
            let rv = clamp_round_i16(self.v[k]);
            let (cu, cv) = domain.clamp(ru, rv);
            let (fu, fv) = FlowDomain::fold(cu, cv);
            u.push(fu);
            v.push(fv);
        }
        MotionFlow::new(self.height, self.width, u, v)
    }
}

#[inline]
fn clamp_round_i16(x: f64) -> i16 {
    x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

// ---------------------------------------------------------------------------
// MFLW container
// ---------------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   bytes 0..4   magic "MFLW"
//   bytes 4..6   u16 format version (currently 1)
//   bytes 6..10  u32 width
//   bytes 10..14 u32 height
//   bytes 14..   height*width records of (i16 u, i16 v), row-major

const FLOW_HEADER_LEN: usize = 14;

/// Serializes a flow map in MFLW format.
pub fn write_flow(flow: &MotionFlow, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(FLOW_HEADER_LEN + 4 * flow.len());
    buf.extend_from_slice(&FLOW_MAGIC);
    buf.extend_from_slice(&FLOW_VERSION.to_le_bytes());
    buf.extend_from_slice(&(flow.width as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for k in 0..flow.len() {
        buf.extend_from_slice(&flow.u[k].to_le_bytes());
        buf.extend_from_slice(&flow.v[k].to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Deserializes an MFLW flow map, reporting the byte offset of any
/// malformed field.
pub fn read_flow(path: &Path) -> Result<MotionFlow> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    parse_flow(&buf)
}

fn parse_flow(buf: &[u8]) -> Result<MotionFlow> {
    if buf.len() < FLOW_HEADER_LEN {
        return Err(Error::Format {
            offset: buf.len() as u64,
            reason: format!("header truncated at {} of {FLOW_HEADER_LEN} bytes", buf.len()),
        });
    }
    if buf[0..4] != FLOW_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {:02x?}, expected \"MFLW\"", &buf[0..4]),
        });
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != FLOW_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}, expected {FLOW_VERSION}"),
        });
    }
    let width = u32::from_le_bytes(buf[6..10].try_into().unwrap());
    if width == 0 {
        return Err(Error::Format {
            offset: 6,
            reason: "width must be positive".into(),
        });
    }
    let height = u32::from_le_bytes(buf[10..14].try_into().unwrap());
    if height == 0 {
        return Err(Error::Format {
            offset: 10,
            reason: "height must be positive".into(),
        });
    }
    let count = height as u64 * width as u64;
    let expected = FLOW_HEADER_LEN as u64 + 4 * count;
    if (buf.len() as u64) != expected {
        return Err(Error::Format {
            offset: buf.len().min(expected as usize) as u64,
            reason: format!(
                "payload holds {} bytes, expected {expected} for {height}x{width}",
                buf.len()
            ),
        });
    }
    let count = count as usize;
    let mut u = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for rec in buf[FLOW_HEADER_LEN..].chunks_exact(4) {
        u.push(i16::from_le_bytes([rec[0], rec[1]]));
        v.push(i16::from_le_bytes([rec[2], rec[3]]));
    }
    MotionFlow::new(height as usize, width as usize, u, v)
}
