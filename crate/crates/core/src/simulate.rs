//! Synthetic planar scenes: a random point canvas, a downward pinhole camera
//! driven along closed or open trajectories, and per-pair ground-truth motion.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha).
//! The canvas uses stream 0 and frame `k` uses stream `k + 1`, so frames can
//! be generated in any order and still reproduce bit-for-bit.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, CameraModel, MotionParams, Pixel, Pose2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid canvas: {0}")]
    InvalidCanvas(String),
    #[error("noise half-width must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
}

/// Uniformly sampled ground points, centred on the world origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub extent: (f64, f64),
    pub points: Vec<Point2<f64>>,
    pub seed: u64,
}

pub fn generate_canvas(n: usize, extent: (f64, f64), seed: u64) -> Result<Canvas, SimulationError> {
    if n == 0 {
        return Err(SimulationError::InvalidCanvas("point count must be positive".into()));
    }
    if !(extent.0 > 0.0 && extent.1 > 0.0 && extent.0.is_finite() && extent.1.is_finite()) {
        return Err(SimulationError::InvalidCanvas(format!("bad extent {extent:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let (hx, hy) = (extent.0 / 2.0, extent.1 / 2.0);
    let points = (0..n)
        .map(|_| Point2::new(rng.random_range(-hx..hx), rng.random_range(-hy..hy)))
        .collect();
    Ok(Canvas { extent, points, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Circle of radius `a`.
    Circle,
    /// Ellipse with semi-axes `a` (x) and `b` (y), equal steps in parameter angle.
    Ellipse,
    /// Straight line with spacing `a * step`.
    Straight,
    /// Stadium: straights of length `2a` joined by half circles of radius `a`.
    Combined,
}

/// Trajectories are driven clockwise seen from above, so turns are to the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub a: f64,
    pub b: f64,
    /// Degrees of parameter angle between frames; sets the arc spacing `a * step`
    /// for the straight and combined kinds.
    pub step_deg: f64,
}

impl TrajectorySpec {
    pub fn circle(radius: f64, step_deg: f64) -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            a: radius,
            b: radius,
            step_deg,
        }
    }

    pub fn ellipse(a: f64, b: f64, step_deg: f64) -> Self {
        Self {
            kind: TrajectoryKind::Ellipse,
            a,
            b,
            step_deg,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidTrajectory(m));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad(format!("a must be positive, got {}", self.a));
        }
        if self.kind == TrajectoryKind::Ellipse && !(self.b > 0.0 && self.b <= self.a) {
            return bad(format!("need a >= b > 0, got a = {}, b = {}", self.a, self.b));
        }
        if !(self.step_deg > 0.0 && self.step_deg <= 180.0) {
            return bad(format!("step must lie in (0, 180] degrees, got {}", self.step_deg));
        }
        if matches!(self.kind, TrajectoryKind::Circle | TrajectoryKind::Ellipse) {
            let n = 360.0 / self.step_deg;
            if (n - n.round()).abs() > 1e-9 {
                return bad(format!("step {} does not divide 360", self.step_deg));
            }
        }
        Ok(())
    }

    /// Whether the last frame connects back to the first.
    pub fn closed(&self) -> bool {
        self.kind != TrajectoryKind::Straight
    }

    pub fn eccentricity(&self) -> f64 {
        match self.kind {
            TrajectoryKind::Ellipse => (1.0 - (self.b * self.b) / (self.a * self.a)).sqrt(),
            _ => 0.0,
        }
    }

    pub fn frames(&self) -> usize {
        let step = self.step_deg.to_radians();
        match self.kind {
            TrajectoryKind::Circle | TrajectoryKind::Ellipse | TrajectoryKind::Straight => {
                (360.0 / self.step_deg).round() as usize
            }
            TrajectoryKind::Combined => ((stadium_length(self.a) / (self.a * step)).round() as usize).max(2),
        }
    }
}

fn stadium_length(r: f64) -> f64 {
    4.0 * r + TAU * r
}

/// Pose on a clockwise stadium at arc length `s` from the start of the top straight.
fn stadium_pose(r: f64, s: f64) -> Pose2D {
    let l = 2.0 * r;
    let arc = PI * r;
    if s < l {
        Pose2D::new(-r + s, r, 0.0)
    } else if s < l + arc {
        let alpha = FRAC_PI_2 - (s - l) / r;
        Pose2D::new(r + r * alpha.cos(), r * alpha.sin(), alpha - FRAC_PI_2)
    } else if s < 2.0 * l + arc {
        Pose2D::new(r - (s - l - arc), -r, PI)
    } else {
        let alpha = -FRAC_PI_2 - (s - 2.0 * l - arc) / r;
        Pose2D::new(-r + r * alpha.cos(), r * alpha.sin(), alpha - FRAC_PI_2)
    }
}

pub fn trajectory_poses(spec: &TrajectorySpec) -> Result<Vec<Pose2D>, SimulationError> {
    spec.validate()?;
    let n = spec.frames();
    let step = spec.step_deg.to_radians();
    let poses = match spec.kind {
        TrajectoryKind::Circle | TrajectoryKind::Ellipse => {
            let (a, b) = if spec.kind == TrajectoryKind::Circle {
                (spec.a, spec.a)
            } else {
                (spec.a, spec.b)
            };
            (0..n)
                .map(|k| {
                    let t = TAU * k as f64 / n as f64;
                    let (s, c) = t.sin_cos();
                    Pose2D::new(a * c, -b * s, (-b * c).atan2(-a * s))
                })
                .collect()
        }
        TrajectoryKind::Straight => {
            let spacing = spec.a * step;
            let x0 = -spacing * (n as f64 - 1.0) / 2.0;
            (0..n).map(|k| Pose2D::new(x0 + spacing * k as f64, 0.0, 0.0)).collect()
        }
        TrajectoryKind::Combined => {
            let ds = stadium_length(spec.a) / n as f64;
            (0..n).map(|k| stadium_pose(spec.a, ds * k as f64)).collect()
        }
    };
    Ok(poses)
}

/// Motion taking `from` to `to` under the Ackermann model, plus the angle by
/// which the true chord deviates from the model's chord direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthMotion {
    pub motion: MotionParams,
    pub residual: f64,
}

pub fn ground_truth_motion(from: &Pose2D, to: &Pose2D) -> GroundTruthMotion {
    // world headings grow counter-clockwise while positive phi turns right
    let phi = -normalize_angle(to.heading - from.heading) / 2.0;
    let chord = Vector2::new(to.x - from.x, to.y - from.y);
    let rho = chord.norm();
    let residual = if rho == 0.0 {
        0.0
    } else {
        normalize_angle(chord.y.atan2(chord.x) - (from.heading - phi)).abs()
    };
    GroundTruthMotion {
        motion: MotionParams { phi, rho },
        residual,
    }
}

/// Ground-truth motions between consecutive poses, including the closing
/// pair when `closed`.
pub fn ground_truth_motions(poses: &[Pose2D], closed: bool) -> Vec<GroundTruthMotion> {
    let mut out: Vec<_> = poses.windows(2).map(|w| ground_truth_motion(&w[0], &w[1])).collect();
    if closed && poses.len() > 1 {
        out.push(ground_truth_motion(&poses[poses.len() - 1], &poses[0]));
    }
    out
}

/// Pinhole projection of a ground point seen from `pose`, without noise.
pub fn project(point: &Point2<f64>, pose: &Pose2D, cam: &CameraModel) -> Pixel {
    let (s, c) = pose.heading.sin_cos();
    let dx = point.x - pose.x;
    let dy = point.y - pose.y;
    let right = dx * s - dy * c;
    let back = -(dx * c + dy * s);
    let k = cam.scale();
    Pixel::new(k * right + cam.principal_u, k * back + cam.principal_v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: usize,
    /// Canvas index of each keypoint.
    pub ids: Vec<usize>,
    pub points: Vec<Pixel>,
    pub pose: Pose2D,
}

/// Projects the canvas, keeps points whose noise-free projection lies at least
/// `noise_half_width` inside the image, then perturbs each coordinate with
/// uniform noise in `[-noise_half_width, noise_half_width]`.
pub fn observe(
    canvas: &Canvas,
    pose: &Pose2D,
    cam: &CameraModel,
    noise_half_width: f64,
    seed: u64,
    frame: usize,
) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    let margin = noise_half_width;
    let (w, h) = (cam.image_width as f64, cam.image_height as f64);
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for (id, p) in canvas.points.iter().enumerate() {
        let q = project(p, pose, cam);
        if q.x < margin || q.x > w - margin || q.y < margin || q.y > h - margin {
            continue;
        }
        let q = if noise_half_width > 0.0 {
            Pixel::new(
                q.x + rng.random_range(-noise_half_width..=noise_half_width),
                q.y + rng.random_range(-noise_half_width..=noise_half_width),
            )
        } else {
            q
        };
        ids.push(id);
        points.push(q);
    }
    Observation {
        frame,
        ids,
        points,
        pose: *pose,
    }
}

/// Everything needed to regenerate a synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub camera: CameraModel,
    pub trajectory: TrajectorySpec,
    pub points: usize,
    pub extent: (f64, f64),
    pub noise: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::vga(),
            trajectory: TrajectorySpec::circle(0.5, 10.0),
            points: 6000,
            extent: (4.0, 4.0),
            noise: 2.5,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        self.trajectory.validate()?;
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(SimulationError::InvalidNoise(self.noise));
        }
        self.camera
            .validate()
            .map_err(|e| SimulationError::InvalidCanvas(format!("camera: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub config: SimulationConfig,
    pub canvas: Canvas,
    pub observations: Vec<Observation>,
    /// Motion from frame `k` to frame `k + 1`, wrapping to frame 0 on closed trajectories.
    pub motions: Vec<GroundTruthMotion>,
}

impl SyntheticSequence {
    pub fn poses(&self) -> Vec<Pose2D> {
        self.observations.iter().map(|o| o.pose).collect()
    }
}

pub fn simulate(cfg: &SimulationConfig) -> Result<SyntheticSequence, SimulationError> {
    cfg.validate()?;
    let canvas = generate_canvas(cfg.points, cfg.extent, cfg.seed)?;
    let poses = trajectory_poses(&cfg.trajectory)?;
    let observations = poses
        .par_iter()
        .enumerate()
        .map(|(k, pose)| observe(&canvas, pose, &cfg.camera, cfg.noise, cfg.seed, k))
        .collect();
    let motions = ground_truth_motions(&poses, cfg.trajectory.closed());
    Ok(SyntheticSequence {
        config: *cfg,
        canvas,
        observations,
        motions,
    })
}
