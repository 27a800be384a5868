//! Relative pose error and absolute trajectory error for planar trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Pose2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("frame ids must be strictly increasing (frame {0})")]
    NonIncreasing(usize),
    #[error("trajectories do not share frame ids")]
    MismatchedFrames,
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("delta must be positive")]
    ZeroDelta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    frames: Vec<usize>,
    poses: Vec<Pose2D>,
}

impl Trajectory {
    pub fn new(entries: Vec<(usize, Pose2D)>) -> Result<Self, MetricsError> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(MetricsError::NonIncreasing(w[1].0));
            }
        }
        let (frames, poses) = entries.into_iter().unzip();
        Ok(Self { frames, poses })
    }

    /// Frames numbered `0..poses.len()`.
    pub fn from_poses(poses: Vec<Pose2D>) -> Self {
        Self {
            frames: (0..poses.len()).collect(),
            poses,
        }
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn poses(&self) -> &[Pose2D] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Pose2D)> {
        self.frames.iter().copied().zip(self.poses.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpeResult {
    pub delta: usize,
    pub mean: f64,
    pub rmse: f64,
    /// Translational error of each step, keyed by its first frame.
    pub per_frame: Vec<(usize, f64)>,
    pub rot_mean: f64,
    pub rot_rmse: f64,
    pub per_frame_rot: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub mean: f64,
    pub rmse: f64,
    /// Rotation (radians) and translation mapping the estimate onto ground truth.
    pub rotation: f64,
    pub translation: (f64, f64),
}

/// `a^-1 * b` in SE(2).
fn between(a: &Pose2D, b: &Pose2D) -> (f64, f64, f64) {
    let (s, c) = a.heading.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (c * dx + s * dy, -s * dx + c * dy, normalize_angle(b.heading - a.heading))
}

fn check_frames(est: &Trajectory, gt: &Trajectory) -> Result<(), MetricsError> {
    if est.frames != gt.frames {
        return Err(MetricsError::MismatchedFrames);
    }
    Ok(())
}

fn mean_and_rmse(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let rmse = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    (mean, rmse)
}

/// Discrepancy between relative motions over `delta` frames.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<RpeResult, MetricsError> {
    if delta == 0 {
        return Err(MetricsError::ZeroDelta);
    }
    check_frames(est, gt)?;
    if est.len() <= delta {
        return Err(MetricsError::TooFewPoses {
            needed: delta + 1,
            got: est.len(),
        });
    }
    let mut per_frame = Vec::with_capacity(est.len() - delta);
    let mut per_frame_rot = Vec::with_capacity(est.len() - delta);
    for i in 0..est.len() - delta {
        let q = between(&gt.poses[i], &gt.poses[i + delta]);
        let p = between(&est.poses[i], &est.poses[i + delta]);
        // error = q^-1 * p
        let (s, c) = q.2.sin_cos();
        let (dx, dy) = (p.0 - q.0, p.1 - q.1);
        let ex = c * dx + s * dy;
        let ey = -s * dx + c * dy;
        per_frame.push((est.frames[i], ex.hypot(ey)));
        per_frame_rot.push((est.frames[i], normalize_angle(p.2 - q.2).abs()));
    }
    let trans: Vec<f64> = per_frame.iter().map(|e| e.1).collect();
    let rot: Vec<f64> = per_frame_rot.iter().map(|e| e.1).collect();
    let (mean, rmse) = mean_and_rmse(&trans);
    let (rot_mean, rot_rmse) = mean_and_rmse(&rot);
    Ok(RpeResult {
        delta,
        mean,
        rmse,
        per_frame,
        rot_mean,
        rot_rmse,
        per_frame_rot,
    })
}

/// Position error after the least-squares rigid alignment of `est` onto `gt`.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<AteResult, MetricsError> {
    check_frames(est, gt)?;
    if est.len() < 2 {
        return Err(MetricsError::TooFewPoses { needed: 2, got: est.len() });
    }
    let n = est.len() as f64;
    let centroid = |t: &Trajectory| {
        let (sx, sy) = t.poses.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
        (sx / n, sy / n)
    };
    let (ex, ey) = centroid(est);
    let (gx, gy) = centroid(gt);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (e, g) in est.poses.iter().zip(&gt.poses) {
        let (ax, ay) = (e.x - ex, e.y - ey);
        let (bx, by) = (g.x - gx, g.y - gy);
        dot += ax * bx + ay * by;
        cross += ax * by - ay * bx;
    }
    let angle = cross.atan2(dot);
    let (s, c) = angle.sin_cos();
    let t = (gx - (c * ex - s * ey), gy - (s * ex + c * ey));
    let errors: Vec<f64> = est
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(e, g)| {
            let x = c * e.x - s * e.y + t.0;
            let y = s * e.x + c * e.y + t.1;
            (x - g.x).hypot(y - g.y)
        })
        .collect();
    let (mean, rmse) = mean_and_rmse(&errors);
    Ok(AteResult {
        mean,
        rmse,
        rotation: angle,
        translation: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Matrix3, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let mut p = Pose2D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
        let mut poses = vec![p];
        for _ in 1..n {
            let step = rng.random_range(0.0..0.2);
            let (s, c) = p.heading.sin_cos();
            p = Pose2D::new(p.x + step * c, p.y + step * s, p.heading + rng.random_range(-0.3..0.3));
            poses.push(p);
        }
        Trajectory::from_poses(poses)
    }

    fn transformed(t: &Trajectory, angle: f64, dx: f64, dy: f64) -> Trajectory {
        let (s, c) = angle.sin_cos();
        Trajectory::from_poses(
            t.poses()
                .iter()
                .map(|p| Pose2D::new(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy, p.heading + angle))
                .collect(),
        )
    }

    fn homogeneous(p: &Pose2D) -> Matrix3<f64> {
        let (s, c) = p.heading.sin_cos();
        Matrix3::new(c, -s, p.x, s, c, p.y, 0.0, 0.0, 1.0)
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_walk(&mut rng, 30);
        let r = rpe(&t, &t, 1).unwrap();
        assert_eq!((r.mean, r.rmse), (0.0, 0.0));
        let a = ate(&t, &t).unwrap();
        assert!(a.rmse < 1e-12);
    }

    #[test]
    fn inflated_steps_give_one_millimetre() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_walk(&mut rng, 40);
        let mut est = vec![gt.poses()[0]];
        for w in gt.poses().windows(2) {
            let (dx, dy, dh) = between(&w[0], &w[1]);
            let norm = dx.hypot(dy);
            let scale = (norm + 1e-3) / norm;
            let prev = *est.last().unwrap();
            let (s, c) = prev.heading.sin_cos();
            let (lx, ly) = (dx * scale, dy * scale);
            est.push(Pose2D::new(prev.x + c * lx - s * ly, prev.y + s * lx + c * ly, prev.heading + dh));
        }
        let r = rpe(&Trajectory::from_poses(est), &gt, 1).unwrap();
        assert!((r.mean - 1e-3).abs() < 1e-12, "{}", r.mean);
        assert!(r.rot_mean < 1e-12);
    }

    #[test]
    fn rpe_matches_matrix_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for delta in [1, 3] {
            let gt = random_walk(&mut rng, 25);
            let est = random_walk(&mut rng, 25);
            let r = rpe(&est, &gt, delta).unwrap();
            let mut sum = 0.0;
            for i in 0..25 - delta {
                let q = homogeneous(&gt.poses()[i]).try_inverse().unwrap() * homogeneous(&gt.poses()[i + delta]);
                let p = homogeneous(&est.poses()[i]).try_inverse().unwrap() * homogeneous(&est.poses()[i + delta]);
                let e = q.try_inverse().unwrap() * p;
                let err = Vector2::new(e[(0, 2)], e[(1, 2)]).norm();
                assert!((r.per_frame[i].1 - err).abs() < 1e-12);
                assert!((r.per_frame_rot[i].1 - e[(1, 0)].atan2(e[(0, 0)]).abs()).abs() < 1e-12);
                sum += err;
            }
            assert!((r.mean - sum / (25 - delta) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ate_matches_svd_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let gt = random_walk(&mut rng, 30);
            let est = random_walk(&mut rng, 30);
            let a = ate(&est, &gt).unwrap();
            let mean = |t: &Trajectory| t.poses().iter().map(|p| Vector2::new(p.x, p.y)).sum::<Vector2<f64>>() / 30.0;
            let (me, mg) = (mean(&est), mean(&gt));
            let mut h = Matrix2::zeros();
            for (e, g) in est.poses().iter().zip(gt.poses()) {
                h += (Vector2::new(e.x, e.y) - me) * (Vector2::new(g.x, g.y) - mg).transpose();
            }
            let svd = h.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let d = (vt.transpose() * u.transpose()).determinant().signum();
            let r = vt.transpose() * Matrix2::new(1.0, 0.0, 0.0, d) * u.transpose();
            let sq: f64 = est
                .poses()
                .iter()
                .zip(gt.poses())
                .map(|(e, g)| (r * (Vector2::new(e.x, e.y) - me) + mg - Vector2::new(g.x, g.y)).norm_squared())
                .sum();
            assert!((a.rmse - (sq / 30.0).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_outlier_alignment() {
        let gt = Trajectory::from_poses(
            (0..100)
                .map(|k| {
                    let t = TAU * k as f64 / 100.0;
                    Pose2D::new(t.cos(), t.sin(), t)
                })
                .collect(),
        );
        let mut est = gt.poses().to_vec();
        est[0].x += 0.1;
        let a = ate(&Trajectory::from_poses(est), &gt).unwrap();
        // values from an independent numpy Kabsch alignment
        assert!((a.rmse - 0.009949874371066213).abs() < 1e-12);
        assert!((a.mean - 0.001979999999999989).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_walk(&mut rng, 20);
        let est = random_walk(&mut rng, 20);
        let moved = transformed(&est, 0.7, 3.0, -1.0);
        let moved_gt = transformed(&gt, -1.2, 0.5, 0.25);
        let a0 = ate(&est, &gt).unwrap();
        assert!((ate(&moved, &gt).unwrap().rmse - a0.rmse).abs() < 1e-12);
        let r0 = rpe(&est, &gt, 1).unwrap();
        let r1 = rpe(&moved, &moved_gt, 1).unwrap();
        assert!((r0.mean - r1.mean).abs() < 1e-12);
        // an estimate that differs only by a rigid transform aligns exactly
        assert!(ate(&moved_gt, &gt).unwrap().rmse < 1e-12);
    }

    #[test]
    fn errors() {
        let t = Trajectory::from_poses(vec![Pose2D::origin()]);
        assert!(matches!(ate(&t, &t), Err(MetricsError::TooFewPoses { .. })));
        let a = Trajectory::from_poses(vec![Pose2D::origin(); 3]);
        let b = Trajectory::new(vec![(0, Pose2D::origin()), (1, Pose2D::origin()), (5, Pose2D::origin())]).unwrap();
        assert_eq!(rpe(&a, &b, 1).unwrap_err(), MetricsError::MismatchedFrames);
        assert!(Trajectory::new(vec![(2, Pose2D::origin()), (2, Pose2D::origin())]).is_err());
        assert_eq!(rpe(&a, &a, 0).unwrap_err(), MetricsError::ZeroDelta);
    }
}
