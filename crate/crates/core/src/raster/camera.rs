use crate::error::{Error, Result};
use crate::mathkit::{Direction, Vec3};

/// Pinhole camera. Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`,
/// with `j` growing downwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub lookat: Vec3,
    pub up: Direction,
    /// Vertical field of view in radians.
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal camera frame plus the image-plane half extents at unit depth.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub half_w: f64,
    pub half_h: f64,
}

impl Camera {
    pub fn new(eye: Vec3, lookat: Vec3, up: Vec3, vertical_fov: f64, width: usize, height: usize) -> Result<Self> {
        let up = Direction::try_new(up).ok_or_else(|| Error::Validation("camera up vector is zero".into()))?;
        let cam = Camera { eye, lookat, up, vertical_fov, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::Validation(format!("field of view {} rad outside (0, π)", self.vertical_fov)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera resolution must be at least 1×1".into()));
        }
        let view = self.lookat - self.eye;
        if view.length() < 1e-12 {
            return Err(Error::Validation("camera eye and lookat coincide".into()));
        }
        if view.normalized().cross(*self.up).length() < 1e-9 {
            return Err(Error::Validation("camera up is parallel to the view direction".into()));
        }
        Ok(())
    }

    /// Looks at `target` from `distance` along the spherical direction
    /// (azimuth, elevation) in degrees, with +y up.
    pub fn orbit(target: Vec3, distance: f64, azimuth_deg: f64, elevation_deg: f64, fov_deg: f64, size: usize) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let offset = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * distance;
        Camera {
            eye: target + offset,
            lookat: target,
            up: Direction::UP,
            vertical_fov: fov_deg.to_radians(),
            width: size,
            height: size,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub(crate) fn frame(&self) -> Frame {
        let forward = (self.lookat - self.eye).normalized();
        let right = forward.cross(*self.up).normalized();
        let up = right.cross(forward);
        let half_h = (0.5 * self.vertical_fov).tan();
        let half_w = half_h * self.width as f64 / self.height as f64;
        Frame { right, up, forward, half_w, half_h }
    }

    /// Normalized device coordinates of a pixel center, x right and y up,
    /// both in `[-1, 1]` across the image.
    #[inline]
    pub fn pixel_ndc(&self, i: usize, j: usize) -> (f64, f64) {
        (2.0 * (i as f64 + 0.5) / self.width as f64 - 1.0, 1.0 - 2.0 * (j as f64 + 0.5) / self.height as f64)
    }

    /// Primary ray direction through a pixel center, scaled so its
    /// component along the view axis is one.
    #[inline]
    pub(crate) fn ray_dir(&self, f: &Frame, i: usize, j: usize) -> Vec3 {
        let (x, y) = self.pixel_ndc(i, j);
        f.forward + f.right * (x * f.half_w) + f.up * (y * f.half_h)
    }

    /// Unit direction from the pixel's surface point back to the camera.
    pub fn view_dir(&self, i: usize, j: usize) -> Direction {
        Direction::new(-self.ray_dir(&self.frame(), i, j))
    }

    /// Projects a world point to `(ndc_x, ndc_y, depth)`. Depth is measured
    /// along the view axis and is not checked here.
    #[inline]
    pub(crate) fn project(&self, f: &Frame, p: Vec3) -> (f64, f64, f64) {
        let q = p - self.eye;
        let z = q.dot(f.forward);
        (q.dot(f.right) / (z * f.half_w), q.dot(f.up) / (z * f.half_h), z)
    }

    /// Gradients of `ndc_x` and `ndc_y` with respect to the world point.
    #[inline]
    pub(crate) fn project_jacobian(&self, f: &Frame, p: Vec3) -> (Vec3, Vec3) {
        let (x, y, z) = self.project(f, p);
        ((f.right / f.half_w - f.forward * x) / z, (f.up / f.half_h - f.forward * y) / z)
    }
}
