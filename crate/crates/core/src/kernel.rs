//! Linear motion-blur kernels: the point-spread function of a straight
//! camera-motion trace.
//!
//! A motion vector m = (u, v) smears each scene point uniformly along the
//! segment from -m/2 to +m/2. The discrete kernel weight of pixel cell
//! (di, dj) is the fraction of the segment's length falling inside that
//! cell, computed in closed form by intersecting parameter intervals.

use crate::flow::FlowDomain;

/// One kernel tap: offset (di horizontal, dj vertical) and weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub di: i32,
    pub dj: i32,
    pub w: f64,
}

/// Unit-mass, centrally symmetric line-trace kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearKernel {
    taps: Vec<Tap>,
}

// Taps carrying less mass than this are numerical slivers, not trace cells.
const TAP_PRUNE_THRESHOLD: f64 = 1e-8;

impl LinearKernel {
    /// The identity impulse: a single unit tap at the origin.
    pub fn identity() -> Self {
        LinearKernel {
            taps: vec![Tap {
                di: 0,
                dj: 0,
                w: 1.0,
            }],
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// Largest |offset| along either axis.
    pub fn extent(&self) -> i32 {
        self.taps
            .iter()
            .map(|t| t.di.abs().max(t.dj.abs()))
            .max()
            .unwrap_or(0)
    }
}

/// Parameter interval (over t in [-1/2, 1/2] along the segment t*m) during
/// which one coordinate stays inside cell index `a`.
#[inline]
fn axis_interval(component: f64, a: i32) -> Option<(f64, f64)> {
    if component == 0.0 {
        // The coordinate is identically zero: inside cell 0 for all t.
        return (a == 0).then_some((-0.5, 0.5));
    }
    let t1 = (a as f64 - 0.5) / component;
    let t2 = (a as f64 + 0.5) / component;
    Some(if t1 <= t2 { (t1, t2) } else { (t2, t1) })
}

/// Builds the line-trace kernel for motion (u, v), integer or fractional.
///
/// Antipodal motions describe the same segment, so the vector is folded to
/// the canonical half-plane first; kernel(m), kernel(-m), and
/// kernel(fold(m)) are therefore identical tap-for-tap.
pub fn rasterize_kernel(u: f64, v: f64) -> LinearKernel {
    // Continuous fold: mirrors FlowDomain::fold on the integer lattice.
    let (u, v) = if u < 0.0 || (u == 0.0 && v < 0.0) {
        (-u, -v)
    } else {
        (u, v)
    };
    if u == 0.0 && v == 0.0 {
        return LinearKernel::identity();
    }

    let a_max = (u.abs() / 2.0 + 0.5).ceil() as i32;
    let b_max = (v.abs() / 2.0 + 0.5).ceil() as i32;
    let mut taps = Vec::new();
    for dj in -b_max..=b_max {
        let Some((lo_v, hi_v)) = axis_interval(v, dj) else {
            continue;
        };
        for di in -a_max..=a_max {
            let Some((lo_u, hi_u)) = axis_interval(u, di) else {
                continue;
            };
            let lo = lo_u.max(lo_v).max(-0.5);
            let hi = hi_u.min(hi_v).min(0.5);
            let w = hi - lo;
            if w > TAP_PRUNE_THRESHOLD {
                taps.push(Tap { di, dj, w });
            }
        }
    }

    // The t-intervals partition [-1/2, 1/2], so the mass is already 1 up to
    // rounding; renormalize to pin the invariant exactly.
    let total: f64 = taps.iter().map(|t| t.w).sum();
    for t in &mut taps {
        t.w /= total;
    }
    LinearKernel { taps }
}

/// Kernel for an integer motion vector.
pub fn kernel_for(u: i16, v: i16) -> LinearKernel {
    rasterize_kernel(u as f64, v as f64)
}

/// Largest tap offset any motion in `domain` can produce.
pub fn max_kernel_extent(domain: &FlowDomain) -> usize {
    let m = domain.u_max().max(domain.v_max()) as f64;
    (m / 2.0 + 0.5).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tap_weight(k: &LinearKernel, di: i32, dj: i32) -> f64 {
        k.taps()
            .iter()
            .find(|t| t.di == di && t.dj == dj)
            .map_or(0.0, |t| t.w)
    }

    // Independent route: sample the segment at S midpoints and deposit each
    // sample on its nearest pixel cell. Converges to the per-cell segment
    // length at rate O(1/S).
    fn subsampled_kernel(u: f64, v: f64, samples: usize) -> Vec<Tap> {
        let (u, v) = if u < 0.0 || (u == 0.0 && v < 0.0) {
            (-u, -v)
        } else {
            (u, v)
        };
        if u == 0.0 && v == 0.0 {
            return vec![Tap {
                di: 0,
                dj: 0,
                w: 1.0,
            }];
        }
        let mut acc = std::collections::HashMap::new();
        for k in 0..samples {
            let t = (k as f64 + 0.5) / samples as f64 - 0.5;
            let di = (t * u).round() as i32;
            let dj = (t * v).round() as i32;
            *acc.entry((di, dj)).or_insert(0.0) += 1.0 / samples as f64;
        }
        acc.into_iter()
            .map(|((di, dj), w)| Tap { di, dj, w })
            .collect()
    }

    #[test]
    fn zero_motion_is_identity() {
        let k = rasterize_kernel(0.0, 0.0);
        assert_eq!(k.taps(), &[Tap { di: 0, dj: 0, w: 1.0 }]);
        // Sub-pixel motion never leaves the center cell either.
        let k = rasterize_kernel(0.4, -0.3);
        assert_eq!(k.taps().len(), 1);
        assert!((tap_weight(&k, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_pins() {
        let k = rasterize_kernel(2.0, 0.0);
        assert_eq!(k.taps().len(), 3);
        assert!((tap_weight(&k, -1, 0) - 0.25).abs() < 1e-12);
        assert!((tap_weight(&k, 0, 0) - 0.5).abs() < 1e-12);
        assert!((tap_weight(&k, 1, 0) - 0.25).abs() < 1e-12);

        let k = rasterize_kernel(3.0, 0.0);
        assert_eq!(k.taps().len(), 3);
        for di in -1..=1 {
            assert!((tap_weight(&k, di, 0) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_mirror_of_horizontal() {
        let k = rasterize_kernel(0.0, 3.0);
        assert_eq!(k.taps().len(), 3);
        for dj in -1..=1 {
            assert!((tap_weight(&k, 0, dj) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fractional_motion_pin() {
        // Segment [-0.75, 0.75]: center cell holds 2/3 of it, each neighbor 1/6.
        let k = rasterize_kernel(1.5, 0.0);
        assert!((tap_weight(&k, 0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((tap_weight(&k, -1, 0) - 1.0 / 6.0).abs() < 1e-12);
        assert!((tap_weight(&k, 1, 0) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_and_folded_motions_share_kernels_exactly() {
        for u in -8..=8i16 {
            for v in -8..=8i16 {
                let k = kernel_for(u, v);
                assert_eq!(k, kernel_for(-u, -v), "m=({u},{v})");
                let (fu, fv) = FlowDomain::fold(u, v);
                assert_eq!(k, kernel_for(fu, fv), "m=({u},{v})");
            }
        }
    }

    #[test]
    fn exhaustive_domain_invariants() {
        let max_err_vs_oracle = 2.0 / 100_000.0;
        for u in 0..=8i16 {
            for v in -8..=8i16 {
                let k = kernel_for(u, v);
                let mass: f64 = k.taps().iter().map(|t| t.w).sum();
                assert!((mass - 1.0).abs() < 1e-12, "mass for m=({u},{v})");

                let bound = (((u as f64).hypot(v as f64)) / 2.0).ceil() as i32 + 1;
                for t in k.taps() {
                    assert!(t.w > 0.0);
                    assert!(
                        t.di.abs().max(t.dj.abs()) <= bound,
                        "support of m=({u},{v})"
                    );
                    // Central symmetry, exact at the bit level.
                    assert_eq!(
                        tap_weight(&k, -t.di, -t.dj).to_bits(),
                        t.w.to_bits(),
                        "symmetry of m=({u},{v})"
                    );
                }

                for s in subsampled_kernel(u as f64, v as f64, 100_000) {
                    assert!(
                        (tap_weight(&k, s.di, s.dj) - s.w).abs() <= max_err_vs_oracle,
                        "m=({u},{v}) tap ({},{}): {} vs oracle {}",
                        s.di,
                        s.dj,
                        tap_weight(&k, s.di, s.dj),
                        s.w
                    );
                }
            }
        }
    }

    #[test]
    fn diagonal_kernel_matches_oracle_tightly() {
        for &(u, v) in &[(5.0, 3.0), (7.0, -2.0), (1.0, 1.0), (36.0, 36.0)] {
            let k = rasterize_kernel(u, v);
            for s in subsampled_kernel(u, v, 400_000) {
                assert!((tap_weight(&k, s.di, s.dj) - s.w).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn extent_covers_domain() {
        let d = FlowDomain::new(8, 8).unwrap();
        let bound = max_kernel_extent(&d) as i32;
        for u in 0..=8i16 {
            for v in -8..=8i16 {
                assert!(kernel_for(u, v).extent() <= bound);
            }
        }
    }
}
