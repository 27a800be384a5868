//! Exhaustive grid evaluation of the consensus objective, used as an
//! independent check on the branch-and-bound optimum.
//!
//! For a fixed half-angle the transfer of a point moves along a straight
//! line as the baseline grows, so each inlier pair holds on one run of
//! consecutive baseline nodes. A row is evaluated by solving for those runs
//! and summing them. Nodes within a hair of a run boundary are decided with
//! the pointwise inlier test, which keeps every count identical to
//! [`ConsensusObjective::objective`].

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Estimate, EstimateFlags, TerminalLattice};
use crate::bounds::ConsensusObjective;
use crate::geometry::{transfer_with, CameraModel, MotionParams, Pixel};

const MAX_GRID_NODES: u64 = 1 << 34;

/// Squared-pixel guard band around each run boundary.
const BOUNDARY_BAND: f64 = 1e-6;

/// Rectangular motion domain `[phi.0, phi.1] x [rho.0, rho.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchDomain {
    pub phi: (f64, f64),
    pub rho: (f64, f64),
}

#[inline]
fn node(lo: f64, hi: f64, m: usize, n: usize) -> f64 {
    if n <= 1 {
        lo
    } else {
        lo + (hi - lo) * (m as f64 / (n - 1) as f64)
    }
}

/// Objective at `(phi, rhos[m])` for every `m`. `rhos` must be non-decreasing.
fn row_objective(obj: &ConsensusObjective, phi: f64, rhos: &[f64]) -> Vec<usize> {
    let n = rhos.len();
    let mut diff = vec![0i64; n + 1];
    let (Some(&first), Some(&last)) = (rhos.first(), rhos.last()) else {
        return Vec::new();
    };
    let cam = obj.cam;
    let (s2, c2) = (2.0 * phi).sin_cos();
    let (s1, c1) = phi.sin_cos();
    let (u0, v0, k) = (cam.principal_u, cam.principal_v, cam.scale());
    let (vx, vy) = (k * s1, -k * c1);
    let vv = vx * vx + vy * vy;
    let eps2 = obj.epsilon * obj.epsilon;
    let reach = (eps2 + BOUNDARY_BAND).sqrt() + 1e-9;

    for p2 in obj.p2 {
        let dx = p2.x - u0;
        let ax = dx * c2 + (v0 - p2.y) * s2 + u0;
        let ay = dx * s2 + (p2.y - v0) * c2 + v0;
        let (xa, xb) = (ax + first * vx, ax + last * vx);
        let (ya, yb) = (ay + first * vy, ay + last * vy);
        obj.index().for_each_in_rect(
            xa.min(xb) - reach,
            xa.max(xb) + reach,
            ya.min(yb) - reach,
            ya.max(yb) + reach,
            |_, x, y| {
                let (wx, wy) = (x - ax, y - ay);
                let centre = (wx * vx + wy * vy) / vv;
                let cross = wx * vy - wy * vx;
                let perp2 = cross * cross / vv;
                let outer = eps2 + BOUNDARY_BAND - perp2;
                if outer <= 0.0 {
                    return;
                }
                let ho = (outer / vv).sqrt();
                let lo_o = rhos.partition_point(|&r| r <= centre - ho);
                let hi_o = rhos.partition_point(|&r| r < centre + ho);
                let inner = eps2 - BOUNDARY_BAND - perp2;
                let (lo_i, hi_i) = if inner > 0.0 {
                    let hi = (inner / vv).sqrt();
                    let a = rhos.partition_point(|&r| r <= centre - hi).max(lo_o);
                    let b = rhos.partition_point(|&r| r < centre + hi).min(hi_o);
                    (a, b.max(a))
                } else {
                    (lo_o, lo_o)
                };
                if hi_i > lo_i {
                    diff[lo_i] += 1;
                    diff[hi_i] -= 1;
                }
                for m in (lo_o..lo_i).chain(hi_i..hi_o) {
                    let t = transfer_with(p2, cam, c2, s2, s1, c1, rhos[m]);
                    let (ex, ey) = (x - t.x, y - t.y);
                    if ex * ex + ey * ey < eps2 {
                        diff[m] += 1;
                        diff[m + 1] -= 1;
                    }
                }
            },
        );
    }

    let mut out = Vec::with_capacity(n);
    let mut acc = 0i64;
    for d in &diff[..n] {
        acc += d;
        out.push(acc as usize);
    }
    out
}

/// Evaluates the objective on `resolution.0 x resolution.1` evenly spaced
/// nodes including the domain corners. Returns the first maximiser in
/// row-major (phi-major) order.
pub fn grid_search(
    p1: &[Pixel],
    p2: &[Pixel],
    cam: &CameraModel,
    domain: &SearchDomain,
    epsilon: f64,
    resolution: (usize, usize),
) -> Estimate {
    let (n_phi, n_rho) = resolution;
    assert!(n_phi >= 1 && n_rho >= 1, "grid needs at least one node per axis");
    assert!((n_phi as u64).saturating_mul(n_rho as u64) <= MAX_GRID_NODES, "grid too large");
    let start = Instant::now();
    let obj = ConsensusObjective::new(p1, p2, cam, epsilon);
    let rhos: Vec<f64> = (0..n_rho).map(|b| node(domain.rho.0, domain.rho.1, b, n_rho)).collect();

    let row_best: Vec<(usize, MotionParams)> = (0..n_phi)
        .into_par_iter()
        .map(|a| {
            let phi = node(domain.phi.0, domain.phi.1, a, n_phi);
            let values = row_objective(&obj, phi, &rhos);
            let mut best = 0;
            for (b, &v) in values.iter().enumerate() {
                if v > values[best] {
                    best = b;
                }
            }
            (values[best], MotionParams { phi, rho: rhos[best] })
        })
        .collect();

    let mut best = row_best[0];
    for &rb in &row_best[1..] {
        if rb.0 > best.0 {
            best = rb;
        }
    }

    Estimate {
        motion: best.1,
        raw_motion: best.1,
        objective_value: best.0,
        correspondences: obj.inlier_pairs(&best.1),
        refinement_pairs: Vec::new(),
        levels_used: 0,
        intervals_expanded: 0,
        intervals_pruned: 0,
        intervals_evaluated: n_phi * n_rho,
        intervals_unresolved: 0,
        max_discarded_upper: None,
        cluster_centres: vec![best.1],
        terminal_lattice: Vec::new(),
        flags: EstimateFlags {
            degenerate: best.0 == 0,
            refinement_skipped: true,
            ..Default::default()
        },
        solve_time: start.elapsed().as_secs_f64(),
        trace: None,
    }
}

/// Maximum of the objective over the solver's terminal lattices.
///
/// The lattice nodes coincide bit-for-bit with every motion the branch and
/// bound can sample, so this equals the solver optimum when the search is sound.
pub fn lattice_grid_max(
    p1: &[Pixel],
    p2: &[Pixel],
    cam: &CameraModel,
    lattices: &[TerminalLattice],
    epsilon: f64,
) -> usize {
    lattices
        .iter()
        .map(|l| grid_search(p1, p2, cam, &l.domain, epsilon, (l.phi_nodes, l.rho_nodes)).objective_value)
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transfer_point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_match_pointwise_objective() {
        let cam = CameraModel::vga();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let truth = MotionParams {
                phi: rng.random_range(-0.05..0.05),
                rho: rng.random_range(0.0..0.04),
            };
            let p2: Vec<Pixel> = (0..120)
                .map(|_| Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
                .collect();
            let mut p1: Vec<Pixel> = p2[..90]
                .iter()
                .map(|p| {
                    let t = transfer_point(p, &truth, &cam);
                    Pixel::new(t.x + rng.random_range(-2.5..2.5), t.y + rng.random_range(-2.5..2.5))
                })
                .collect();
            p1.extend((0..30).map(|_| Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))));
            let obj = ConsensusObjective::new(&p1, &p2, &cam, 2.5);
            let (lo, hi) = (truth.rho - 0.003, truth.rho + 0.003);
            let rhos: Vec<f64> = (0..301).map(|b| node(lo, hi, b, 301)).collect();
            for a in 0..15 {
                let phi = truth.phi - 0.006 + 0.012 * a as f64 / 14.0;
                let row = row_objective(&obj, phi, &rhos);
                for (b, &rho) in rhos.iter().enumerate() {
                    assert_eq!(row[b], obj.objective(&MotionParams { phi, rho }), "phi {phi} rho {rho}");
                }
            }
        }
    }

    #[test]
    fn boundary_nodes_are_decided_pointwise() {
        let cam = CameraModel::vga();
        let m = MotionParams { phi: 0.01, rho: 0.02 };
        let p2 = [Pixel::new(100.0, 100.0)];
        let t = transfer_point(&p2[0], &m, &cam);
        // one first-view point exactly epsilon from the transfer along x
        let p1 = [Pixel::new(t.x + 2.5, t.y)];
        let obj = ConsensusObjective::new(&p1, &p2, &cam, 2.5);
        let rhos = [m.rho];
        assert_eq!(row_objective(&obj, m.phi, &rhos)[0], obj.objective(&m));
    }

    #[test]
    fn single_node_grid() {
        let cam = CameraModel::vga();
        let p = [Pixel::new(300.0, 200.0)];
        let d = SearchDomain { phi: (0.0, 0.0), rho: (0.0, 0.0) };
        let g = grid_search(&p, &p, &cam, &d, 2.5, (1, 1));
        assert_eq!(g.objective_value, 1);
    }
}
