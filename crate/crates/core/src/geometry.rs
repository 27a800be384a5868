//! Ackermann motion parametrisation and the induced 2-DoF ground-plane homography.
//!
//! Frame convention (camera and vehicle coincide): `x` points right, `y`
//! points backwards and `z` points down towards the ground plane. A positive
//! half-angle is a right turn, a negative one a left turn.
//!
//! World poses are expressed in a z-up plane frame with the heading measured
//! counter-clockwise from the world `x` axis, so a right turn *decreases* the
//! heading by `2 * phi`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pixel coordinates of an image keypoint.
pub type Pixel = Point2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("half angle {0} outside [-pi/2, pi/2]")]
    HalfAngleOutOfRange(f64),
    #[error("baseline {0} is negative or not finite")]
    InvalidBaseline(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}

/// Frame-to-frame Ackermann motion: half rotation angle and chord length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Half of the heading change, radians.
    pub phi: f64,
    /// Chord length between successive camera centres, metres.
    pub rho: f64,
}

impl MotionParams {
    pub fn new(phi: f64, rho: f64) -> Result<Self, GeometryError> {
        if !(phi.is_finite() && (-FRAC_PI_2..=FRAC_PI_2).contains(&phi)) {
            return Err(GeometryError::HalfAngleOutOfRange(phi));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(GeometryError::InvalidBaseline(rho));
        }
        Ok(Self { phi, rho })
    }

    pub const fn identity() -> Self {
        Self { phi: 0.0, rho: 0.0 }
    }

    /// Full heading change `2 * phi`.
    pub fn theta(&self) -> f64 {
        2.0 * self.phi
    }

    /// Radius of the arc about the instantaneous centre of rotation.
    ///
    /// `None` for straight motion, where the radius is unbounded.
    pub fn radius(&self) -> Option<f64> {
        if self.phi == 0.0 {
            None
        } else {
            Some(self.rho / (2.0 * self.phi.sin().abs()))
        }
    }
}

/// Pinhole intrinsics of a downward-facing camera plus its height above the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal: f64,
    pub principal_u: f64,
    pub principal_v: f64,
    /// Distance between the optical centre and the ground plane, metres.
    pub depth: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraModel {
    pub fn new(
        focal: f64,
        principal_u: f64,
        principal_v: f64,
        depth: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            focal,
            principal_u,
            principal_v,
            depth,
            image_width,
            image_height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// VGA camera with a 500 pix focal length, 0.2 m above the ground and
    /// the principal point at the image centre.
    pub fn vga() -> Self {
        Self {
            focal: 500.0,
            principal_u: 320.0,
            principal_v: 240.0,
            depth: 0.2,
            image_width: 640,
            image_height: 480,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(GeometryError::InvalidCamera("focal length must be positive"));
        }
        if !(self.depth.is_finite() && self.depth > 0.0) {
            return Err(GeometryError::InvalidCamera("plane depth must be positive"));
        }
        if !(self.principal_u.is_finite() && self.principal_v.is_finite()) {
            return Err(GeometryError::InvalidCamera("principal point must be finite"));
        }
        let s = self.scale();
        if !(s.is_finite() && s > 0.0) {
            return Err(GeometryError::InvalidCamera("focal/depth must be finite"));
        }
        Ok(())
    }

    /// Pixels per metre on the ground plane, `a / d`.
    pub fn scale(&self) -> f64 {
        self.focal / self.depth
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal,
            0.0,
            self.principal_u,
            0.0,
            self.focal,
            self.principal_v,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.image_width as f64 && p.y < self.image_height as f64
    }
}

/// Planar vehicle pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Forward direction, counter-clockwise from world `x`, in (-pi, pi].
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// The Euclidean-form homography mapping second-view pixels into the first view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography2DoF {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub h5: f64,
    pub h6: f64,
    pub cos_2phi: f64,
    pub sin_2phi: f64,
    pub sin_phi: f64,
    pub cos_phi: f64,
}

impl Homography2DoF {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.h1, self.h2, self.h3, self.h4, self.h5, self.h6, 0.0, 0.0, 1.0)
    }

    pub fn apply(&self, p: &Pixel) -> Pixel {
        Pixel::new(
            self.h1 * p.x + self.h2 * p.y + self.h3,
            self.h4 * p.x + self.h5 * p.y + self.h6,
        )
    }

    /// Inverse map (first view into second), still Euclidean.
    pub fn inverse(&self) -> Homography2DoF {
        // [R t]^-1 = [R^T, -R^T t]
        let (c, s) = (self.h1, self.h4);
        let h3 = -(c * self.h3 + s * self.h6);
        let h6 = -(-s * self.h3 + c * self.h6);
        Homography2DoF {
            h1: c,
            h2: s,
            h3,
            h4: -s,
            h5: c,
            h6,
            cos_2phi: c,
            sin_2phi: -s,
            sin_phi: -self.sin_phi,
            cos_phi: self.cos_phi,
        }
    }
}

/// Relative rotation and translation of the second camera in the first camera frame.
pub fn pose_from_motion(m: &MotionParams) -> (Matrix3<f64>, Vector3<f64>) {
    let (s2, c2) = (2.0 * m.phi).sin_cos();
    let (s1, c1) = m.phi.sin_cos();
    let rotation = Matrix3::new(c2, -s2, 0.0, s2, c2, 0.0, 0.0, 0.0, 1.0);
    let translation = Vector3::new(m.rho * s1, -m.rho * c1, 0.0);
    (rotation, translation)
}

pub fn homography_from_motion(m: &MotionParams, cam: &CameraModel) -> Homography2DoF {
    let (s2, c2) = (2.0 * m.phi).sin_cos();
    let (s1, c1) = m.phi.sin_cos();
    let (u0, v0) = (cam.principal_u, cam.principal_v);
    let k = cam.scale();
    Homography2DoF {
        h1: c2,
        h2: -s2,
        h3: u0 - u0 * c2 + v0 * s2 + k * m.rho * s1,
        h4: s2,
        h5: c2,
        h6: v0 - v0 * c2 - u0 * s2 - k * m.rho * c1,
        cos_2phi: c2,
        sin_2phi: s2,
        sin_phi: s1,
        cos_phi: c1,
    }
}

/// Maps a second-view pixel into the first view under motion `m`.
///
/// The term order here is mirrored by the interval bounds so that the
/// transfer of any motion inside an interval rounds into its bounding box.
pub fn transfer_point(p2: &Pixel, m: &MotionParams, cam: &CameraModel) -> Pixel {
    let (s2, c2) = (2.0 * m.phi).sin_cos();
    let (s1, c1) = m.phi.sin_cos();
    transfer_with(p2, cam, c2, s2, s1, c1, m.rho)
}

#[inline]
pub(crate) fn transfer_with(
    p2: &Pixel,
    cam: &CameraModel,
    cos_2phi: f64,
    sin_2phi: f64,
    sin_phi: f64,
    cos_phi: f64,
    rho: f64,
) -> Pixel {
    let (u0, v0) = (cam.principal_u, cam.principal_v);
    let k = cam.scale();
    let dx = p2.x - u0;
    let x1 = dx * cos_2phi + (v0 - p2.y) * sin_2phi + k * rho * sin_phi + u0;
    let y1 = dx * sin_2phi + (p2.y - v0) * cos_2phi - k * rho * cos_phi + v0;
    Pixel::new(x1, y1)
}

/// Dead-reckoning step: move along the chord, then turn by the full angle.
pub fn integrate_motion(pose: &Pose2D, m: &MotionParams) -> Pose2D {
    let chord_dir = pose.heading - m.phi;
    Pose2D::new(
        pose.x + m.rho * chord_dir.cos(),
        pose.y + m.rho * chord_dir.sin(),
        pose.heading - 2.0 * m.phi,
    )
}
