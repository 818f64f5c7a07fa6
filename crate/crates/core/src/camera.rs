//! Object-centric pinhole cameras on a sphere around the origin.
//!
//! A camera sits at `r (sin th cos ph, sin th sin ph, cos th)` and looks at
//! the origin with `+z` as the up direction. `fov` is the full vertical
//! field of view. Pixel `(row, col)` of an `h x w` image has its center at
//! `((row + 0.5), (col + 0.5))`; row 0 is the top of the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot3(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Full vertical field of view in radians.
    pub fov: f64,
    pub radius: f64,
    /// Polar angle from +z in `[0, pi]`.
    pub theta: f64,
    /// Azimuth in `[0, 2 pi)`.
    pub phi: f64,
}

/// Orthonormal camera frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

impl Camera {
    pub fn new(fov: f64, radius: f64, theta: f64, phi: f64) -> Result<Self> {
        let cam = Self {
            fov,
            radius,
            theta,
            phi,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::PI;
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err(Error::Config(format!("fov {} outside (0, pi)", self.fov)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("camera radius {} must be > 0", self.radius)));
        }
        if !(0.0..=PI).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [0, pi]", self.theta)));
        }
        if !(0.0..2.0 * PI).contains(&self.phi) {
            return Err(Error::Config(format!("phi {} outside [0, 2 pi)", self.phi)));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [self.radius * st * cp, self.radius * st * sp, self.radius * ct]
    }

    pub fn frame(&self) -> Frame {
        let origin = self.position();
        let forward = normalize([-origin[0], -origin[1], -origin[2]]);
        let mut right = cross(forward, [0.0, 0.0, 1.0]);
        if dot3(right, right) < 1e-20 {
            // Looking straight along z: fall back to +y as the up hint.
            right = cross(forward, [0.0, 1.0, 0.0]);
        }
        let right = normalize(right);
        let up = cross(right, forward);
        Frame {
            origin,
            forward,
            right,
            up,
        }
    }

    /// Unnormalized ray direction through the center of pixel `(row, col)`.
    pub fn ray_direction(&self, frame: &Frame, row: usize, col: usize, h: usize, w: usize) -> Vec3 {
        let tan_half = (0.5 * self.fov).tan();
        let aspect = w as f64 / h as f64;
        let u = (2.0 * (col as f64 + 0.5) / w as f64 - 1.0) * tan_half * aspect;
        let v = (1.0 - 2.0 * (row as f64 + 0.5) / h as f64) * tan_half;
        [
            frame.forward[0] + u * frame.right[0] + v * frame.up[0],
            frame.forward[1] + u * frame.right[1] + v * frame.up[1],
            frame.forward[2] + u * frame.right[2] + v * frame.up[2],
        ]
    }

    /// Continuous pixel coordinates `(row, col)` of a world point, or `None`
    /// if it lies behind the camera.
    pub fn project(&self, p: Vec3, h: usize, w: usize) -> Option<(f64, f64)> {
        let f = self.frame();
        let d = sub(p, f.origin);
        let z = dot3(d, f.forward);
        if z <= 0.0 {
            return None;
        }
        let tan_half = (0.5 * self.fov).tan();
        let aspect = w as f64 / h as f64;
        let u = dot3(d, f.right) / z / (tan_half * aspect);
        let v = dot3(d, f.up) / z / tan_half;
        Some((
            (1.0 - v) * 0.5 * h as f64,
            (u + 1.0) * 0.5 * w as f64,
        ))
    }
}

/// Random object-centric viewpoints: polar angle uniform in a band, azimuth
/// uniform on the full circle, fixed field of view and distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSampler {
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub fov_deg: f64,
    pub radius: f64,
}

impl Default for CameraSampler {
    fn default() -> Self {
        Self {
            theta_min_deg: 60.0,
            theta_max_deg: 120.0,
            fov_deg: 40.0,
            radius: 2.5,
        }
    }
}

impl CameraSampler {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.theta_min_deg
            && self.theta_min_deg <= self.theta_max_deg
            && self.theta_max_deg <= 180.0)
        {
            return Err(Error::Config(format!(
                "camera theta band [{}, {}] must lie in [0, 180]",
                self.theta_min_deg, self.theta_max_deg
            )));
        }
        Camera::new(self.fov_deg.to_radians(), self.radius, 0.0, 0.0).map(|_| ())
    }

    pub fn sample(&self, rng: &mut Stream) -> Camera {
        let theta = rng
            .uniform_range(self.theta_min_deg, self.theta_max_deg)
            .to_radians();
        let phi = rng.uniform() * 2.0 * std::f64::consts::PI;
        Camera {
            fov: self.fov_deg.to_radians(),
            radius: self.radius,
            theta,
            phi,
        }
    }

    /// Camera at explicit angles (radians) with this sampler's fov and radius.
    pub fn at(&self, theta: f64, phi: f64) -> Camera {
        Camera {
            fov: self.fov_deg.to_radians(),
            radius: self.radius,
            theta,
            phi: phi.rem_euclid(2.0 * std::f64::consts::PI),
        }
    }
}
