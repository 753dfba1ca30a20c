use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

/// Pinhole camera. `rotation`/`translation` map world to camera coordinates
/// (`p_c = R p_w + t`); the camera looks along +z with +y pointing down the
/// image. Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
    pub near: f32,
    pub far: f32,
}

impl Camera {
    /// Camera at `eye` looking at `target` with world up `+z`, square pixels,
    /// horizontal field of view `fov_x` (radians) and centered principal point.
    pub fn look_at(eye: Vec3, target: Vec3, fov_x: f32, width: u32, height: u32) -> Result<Self> {
        let forward = math::sub(target, eye);
        if math::norm(forward) == 0.0 {
            return Err(Error::InvalidCamera("eye and target coincide".into()));
        }
        let z = math::normalize(forward);
        let side = math::cross(z, [0.0, 0.0, 1.0]);
        if math::norm(side) < 1e-6 {
            return Err(Error::InvalidCamera("view direction parallel to world up".into()));
        }
        let x = math::normalize(side);
        let y = math::cross(z, x);
        let rotation = [x, y, z];
        let translation = math::scale(math::mat_vec(&rotation, eye), -1.0);
        let f = 0.5 * width as f32 / (0.5 * fov_x).tan();
        let cam = Self {
            rotation,
            translation,
            fx: f,
            fy: f,
            cx: 0.5 * width as f32,
            cy: 0.5 * height as f32,
            width,
            height,
            near: 0.01,
            far: 100.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.near < self.far) || self.near <= 0.0 {
            return Err(Error::InvalidCamera(format!("need 0 < near < far, got {} {}", self.near, self.far)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidCamera(format!("image must be at least 8x8, got {}x{}", self.width, self.height)));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        math::add(math::mat_vec(&self.rotation, p), self.translation)
    }

    /// World-space camera center `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        math::scale(math::mat_t_vec(&self.rotation, self.translation), -1.0)
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
