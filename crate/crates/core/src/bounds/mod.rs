//! Consensus objective and the interval bounds used by the branch-and-bound search.
//!
//! Both transferred coordinates are sums of three terms: a coefficient times
//! `cos(2phi)` or `sin(2phi)`, and the baseline term `k * rho * sin(phi)` or
//! `k * rho * cos(phi)`. On an interval that does not straddle `phi = 0` each
//! trigonometric factor has a known range, so every term is bounded
//! independently. This single routine covers both turn directions and all
//! four image quadrants, including points lying on the quadrant axes.

mod range_index;

pub use range_index::RangeIndex;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{transfer_point, CameraModel, MotionParams, Pixel};

/// Axis-aligned box in motion space, one node of the search tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionInterval {
    pub phi_min: f64,
    pub phi_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Branching level, 0 for a root.
    pub depth: u32,
}

impl MotionInterval {
    pub fn new(phi_min: f64, phi_max: f64, rho_min: f64, rho_max: f64, depth: u32) -> Self {
        debug_assert!(phi_min <= phi_max && rho_min <= rho_max);
        debug_assert!(phi_min >= 0.0 || phi_max <= 0.0, "interval straddles phi = 0");
        Self {
            phi_min,
            phi_max,
            rho_min,
            rho_max,
            depth,
        }
    }

    /// Degenerate interval holding a single motion.
    pub fn point(m: &MotionParams) -> Self {
        Self::new(m.phi, m.phi, m.rho, m.rho, 0)
    }

    pub fn centre(&self) -> MotionParams {
        MotionParams {
            phi: 0.5 * (self.phi_min + self.phi_max),
            rho: 0.5 * (self.rho_min + self.rho_max),
        }
    }

    pub fn phi_width(&self) -> f64 {
        self.phi_max - self.phi_min
    }

    pub fn rho_width(&self) -> f64 {
        self.rho_max - self.rho_min
    }

    pub fn contains(&self, m: &MotionParams) -> bool {
        m.phi >= self.phi_min && m.phi <= self.phi_max && m.rho >= self.rho_min && m.rho <= self.rho_max
    }

    pub fn is_valid(&self) -> bool {
        self.phi_min <= self.phi_max
            && self.rho_min <= self.rho_max
            && (self.phi_min >= 0.0 || self.phi_max <= 0.0)
            && self.phi_min >= -FRAC_PI_2
            && self.phi_max <= FRAC_PI_2
            && self.rho_min >= 0.0
    }
}

/// Pixel box guaranteed to hold the transfer of a point for every motion in an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferBox {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl TransferBox {
    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= self.x_lo && p.x <= self.x_hi && p.y >= self.y_lo && p.y <= self.y_hi
    }

    pub fn contains_box(&self, other: &TransferBox) -> bool {
        other.x_lo >= self.x_lo && other.x_hi <= self.x_hi && other.y_lo >= self.y_lo && other.y_hi <= self.y_hi
    }
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    #[inline]
    fn scaled(&self, coeff: f64) -> Range {
        let (a, b) = (coeff * self.lo, coeff * self.hi);
        Range {
            lo: a.min(b),
            hi: a.max(b),
        }
    }
}

/// Range of cos over an angle interval inside [-pi, pi].
fn cos_range(a: f64, b: f64) -> Range {
    let (ca, cb) = (a.cos(), b.cos());
    let hi = if a <= 0.0 && b >= 0.0 { 1.0 } else { ca.max(cb) };
    // -1 is only reached at +-pi, which can only be an endpoint here
    Range { lo: ca.min(cb), hi }
}

/// Range of sin over an angle interval inside [-pi, pi].
fn sin_range(a: f64, b: f64) -> Range {
    let (sa, sb) = (a.sin(), b.sin());
    let hi = if a <= FRAC_PI_2 && b >= FRAC_PI_2 { 1.0 } else { sa.max(sb) };
    let lo = if a <= -FRAC_PI_2 && b >= -FRAC_PI_2 { -1.0 } else { sa.min(sb) };
    Range { lo, hi }
}

/// Per-interval constants shared by every transfer box of that interval.
#[derive(Debug, Clone, Copy)]
pub struct IntervalTrig {
    cos_2phi: Range,
    sin_2phi: Range,
    /// `k * rho * sin(phi)` over the interval.
    rho_sin: Range,
    /// `k * rho * cos(phi)` over the interval.
    rho_cos: Range,
    u0: f64,
    v0: f64,
}

impl IntervalTrig {
    pub fn new(iv: &MotionInterval, cam: &CameraModel) -> Self {
        debug_assert!(iv.is_valid() || iv.phi_min == iv.phi_max);
        debug_assert!(iv.phi_min >= -FRAC_PI_2 && iv.phi_max <= FRAC_PI_2);
        let (a2, b2) = ((2.0 * iv.phi_min).max(-PI), (2.0 * iv.phi_max).min(PI));
        let cos_2phi = cos_range(a2, b2);
        let sin_2phi = sin_range(a2, b2);
        // sin is monotone on [-pi/2, pi/2]
        let sin_phi = Range {
            lo: iv.phi_min.sin(),
            hi: iv.phi_max.sin(),
        };
        let cos_phi = cos_range(iv.phi_min, iv.phi_max);
        let k = cam.scale();
        let (kp_lo, kp_hi) = (k * iv.rho_min, k * iv.rho_max);
        Self {
            cos_2phi,
            sin_2phi,
            rho_sin: bilinear_range(kp_lo, kp_hi, sin_phi),
            rho_cos: bilinear_range(kp_lo, kp_hi, cos_phi),
            u0: cam.principal_u,
            v0: cam.principal_v,
        }
    }

    #[inline]
    pub fn transfer_box(&self, p2: &Pixel) -> TransferBox {
        let dx = p2.x - self.u0;
        let x_a = self.cos_2phi.scaled(dx);
        let x_b = self.sin_2phi.scaled(self.v0 - p2.y);
        let y_a = self.sin_2phi.scaled(dx);
        let y_b = self.cos_2phi.scaled(p2.y - self.v0);
        TransferBox {
            x_lo: x_a.lo + x_b.lo + self.rho_sin.lo + self.u0,
            x_hi: x_a.hi + x_b.hi + self.rho_sin.hi + self.u0,
            y_lo: y_a.lo + y_b.lo - self.rho_cos.hi + self.v0,
            y_hi: y_a.hi + y_b.hi - self.rho_cos.lo + self.v0,
        }
    }
}

/// Range of `kp * t` for `kp` in `[kp_lo, kp_hi]` and `t` in `trig`.
///
/// The extremes of a bilinear term sit on the corners; evaluating all four
/// keeps the exact products that appear in the pointwise transfer.
fn bilinear_range(kp_lo: f64, kp_hi: f64, trig: Range) -> Range {
    let c = [kp_lo * trig.lo, kp_lo * trig.hi, kp_hi * trig.lo, kp_hi * trig.hi];
    Range {
        lo: c.iter().copied().fold(f64::INFINITY, f64::min),
        hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Bounding box of `transfer_point(p2, m, cam)` over all `m` in `iv`.
pub fn transfer_box(p2: &Pixel, iv: &MotionInterval, cam: &CameraModel) -> TransferBox {
    IntervalTrig::new(iv, cam).transfer_box(p2)
}

/// Lower and upper consensus bounds of one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub lower: usize,
    pub upper: usize,
    pub converged: bool,
    /// Inlier pairs `(index into P1, index into P2)` at the interval centre.
    pub center_correspondences: Vec<(usize, usize)>,
}

/// Inlier-count objective between two unmatched keypoint sets.
#[derive(Debug, Clone)]
pub struct ConsensusObjective<'a> {
    pub epsilon: f64,
    pub p1: &'a [Pixel],
    pub p2: &'a [Pixel],
    pub cam: &'a CameraModel,
    index: RangeIndex,
}

impl<'a> ConsensusObjective<'a> {
    /// Builds the objective with a range index over `p1` using cells of `2 * epsilon`.
    pub fn new(p1: &'a [Pixel], p2: &'a [Pixel], cam: &'a CameraModel, epsilon: f64) -> Self {
        Self::with_cell_size(p1, p2, cam, epsilon, 2.0 * epsilon)
    }

    pub fn with_cell_size(
        p1: &'a [Pixel],
        p2: &'a [Pixel],
        cam: &'a CameraModel,
        epsilon: f64,
        cell_size: f64,
    ) -> Self {
        assert!(epsilon > 0.0, "inlier threshold must be positive");
        Self {
            epsilon,
            p1,
            p2,
            cam,
            index: build_range_index(p1, cell_size),
        }
    }

    pub fn index(&self) -> &RangeIndex {
        &self.index
    }

    /// Number of ordered pairs `(i, j)` with `|p1[i] - H(m) p2[j]| < epsilon`.
    pub fn objective(&self, m: &MotionParams) -> usize {
        self.p2
            .iter()
            .map(|p| self.index.count_within(&transfer_point(p, m, self.cam), self.epsilon))
            .sum()
    }

    /// All inlier pairs at `m`, sorted by `(i, j)`.
    pub fn inlier_pairs(&self, m: &MotionParams) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (j, p) in self.p2.iter().enumerate() {
            let t = transfer_point(p, m, self.cam);
            self.index.for_each_within(&t, self.epsilon, |i, _| pairs.push((i, j)));
        }
        pairs.sort_unstable();
        pairs
    }

    /// Objective sampled at the interval centre, with its inlier pairs.
    pub fn lower_bound(&self, iv: &MotionInterval) -> (usize, Vec<(usize, usize)>) {
        let pairs = self.inlier_pairs(&iv.centre());
        (pairs.len(), pairs)
    }

    /// Sum over P2 of the P1 points closer than epsilon to the transfer boxes.
    ///
    /// Rounding is monotone, so the computed distance to a box never exceeds
    /// the computed distance to any transfer inside it. On a single motion
    /// the bound reproduces the objective exactly.
    pub fn upper_bound(&self, iv: &MotionInterval) -> usize {
        if self.index.is_empty() {
            return 0;
        }
        let trig = IntervalTrig::new(iv, self.cam);
        self.p2
            .iter()
            .map(|p| {
                let b = trig.transfer_box(p);
                self.index.count_near_rect(b.x_lo, b.x_hi, b.y_lo, b.y_hi, self.epsilon)
            })
            .sum()
    }

    pub fn bound(&self, iv: &MotionInterval) -> BoundResult {
        let (lower, center_correspondences) = self.lower_bound(iv);
        let upper = self.upper_bound(iv);
        BoundResult {
            lower,
            upper,
            converged: lower == upper,
            center_correspondences,
        }
    }
}

pub fn build_range_index(p1: &[Pixel], cell_size: f64) -> RangeIndex {
    RangeIndex::build(p1, cell_size)
}
