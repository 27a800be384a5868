//! Correspondence-based 1-point RANSAC under the same Ackermann model.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{transfer_point, CameraModel, MotionParams, Pixel};
use crate::solver::{refine, Estimate, EstimateFlags, RefineStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("degenerate match")]
    DegenerateMatch,
    #[error("backwards motion")]
    BackwardsMotion,
    #[error("no matches")]
    NoMatches,
    #[error("no valid hypothesis")]
    NoValidHypothesis,
}

/// Putative correspondences `(p1[k], p2[k])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    pub p1: Vec<Pixel>,
    pub p2: Vec<Pixel>,
    /// Ground-truth outlier labels when the matches come from simulation.
    pub outlier: Option<Vec<bool>>,
}

impl MatchSet {
    pub fn new(p1: Vec<Pixel>, p2: Vec<Pixel>) -> Self {
        assert_eq!(p1.len(), p2.len(), "match lists must align");
        Self { p1, p2, outlier: None }
    }

    pub fn len(&self) -> usize {
        self.p1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p1.is_empty()
    }
}

/// Closed-form motion from one correspondence.
///
/// With centred coordinates `z = (x - u0) + i (y - v0)` the transfer reads
/// `z1 = e^{2i phi} z2 - i k rho e^{i phi}`, so `e^{i phi} z2 - e^{-i phi} z1`
/// is purely imaginary and equal to `i k rho`. The real part vanishing fixes
/// `phi`, the imaginary part then gives `rho`.
pub fn motion_from_one_match(p1: &Pixel, p2: &Pixel, cam: &CameraModel) -> Result<MotionParams, BaselineError> {
    let (x1, y1) = (p1.x - cam.principal_u, p1.y - cam.principal_v);
    let (x2, y2) = (p2.x - cam.principal_u, p2.y - cam.principal_v);
    let num = x2 - x1;
    let den = y1 + y2;
    if num == 0.0 && den == 0.0 {
        return Err(BaselineError::DegenerateMatch);
    }
    let mut phi = num.atan2(den);
    // phi and phi + pi solve the same equation; keep the branch in [-pi/2, pi/2]
    if phi > FRAC_PI_2 {
        phi -= PI;
    } else if phi < -FRAC_PI_2 {
        phi += PI;
    }
    let (s, c) = phi.sin_cos();
    let rho = (s * (x2 + x1) + c * (y2 - y1)) / cam.scale();
    if rho < 0.0 {
        return Err(BaselineError::BackwardsMotion);
    }
    Ok(MotionParams { phi, rho })
}

fn inliers(matches: &MatchSet, m: &MotionParams, cam: &CameraModel, epsilon: f64) -> Vec<usize> {
    (0..matches.len())
        .filter(|&k| (matches.p1[k] - transfer_point(&matches.p2[k], m, cam)).norm() < epsilon)
        .collect()
}

/// Samples single matches, keeps the hypothesis with the most inliers
/// (earliest iteration on ties) and refines it on those inliers.
///
/// Correspondences in the returned estimate are `(k, k)` match indices.
pub fn one_point_ransac(
    matches: &MatchSet,
    cam: &CameraModel,
    epsilon: f64,
    max_iters: usize,
    seed: u64,
) -> Result<Estimate, BaselineError> {
    if matches.is_empty() {
        return Err(BaselineError::NoMatches);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(MotionParams, Vec<usize>)> = None;
    let mut valid = 0usize;
    for _ in 0..max_iters {
        let k = rng.random_range(0..matches.len());
        let Ok(m) = motion_from_one_match(&matches.p1[k], &matches.p2[k], cam) else {
            continue;
        };
        valid += 1;
        let inl = inliers(matches, &m, cam, epsilon);
        if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
            best = Some((m, inl));
        }
    }
    let (raw, inl) = best.ok_or(BaselineError::NoValidHypothesis)?;
    let pairs: Vec<(usize, usize)> = inl.iter().map(|&k| (k, k)).collect();
    let r = refine(&pairs, &raw, cam, &matches.p1, &matches.p2);
    Ok(Estimate {
        motion: r.motion,
        raw_motion: raw,
        objective_value: pairs.len(),
        correspondences: pairs.clone(),
        refinement_pairs: pairs,
        levels_used: 0,
        intervals_expanded: valid,
        intervals_pruned: 0,
        intervals_evaluated: max_iters,
        intervals_unresolved: 0,
        max_discarded_upper: None,
        cluster_centres: vec![raw],
        terminal_lattice: Vec::new(),
        flags: EstimateFlags {
            refinement_skipped: r.status == RefineStatus::NoCorrespondences,
            ..Default::default()
        },
        solve_time: start.elapsed().as_secs_f64(),
        trace: None,
    })
}
