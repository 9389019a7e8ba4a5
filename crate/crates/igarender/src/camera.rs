//! Pinhole camera, per-pixel view rays, screen projection and the
//! pixel-accuracy measure.

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("point lies behind the eye (view depth {0})")]
    BehindEye(f64),
    #[error("camera view direction and up vector are degenerate")]
    DegenerateBasis,
    #[error("image must be at least 1x1, got {0}x{1}")]
    EmptyImage(u32, u32),
    #[error("near plane distance must be positive, got {0}")]
    BadNear(f64),
    #[error("vertical field of view must lie in (0, pi), got {0}")]
    BadFov(f64),
}

/// Perspective camera with an orthonormal right/up/forward basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    eye: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    fov_y: f64,
    width: u32,
    height: u32,
    near: f64,
    tan_half: f64,
}

/// A view ray through the center of pixel `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (u32, u32),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Distance of the orthogonal projection of `g` onto the ray from its origin.
    pub fn depth(&self, g: &Vec3) -> f64 {
        (g - self.origin).dot(&self.direction)
    }
}

/// Straight piece of a view ray between an entry and an exit point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub front: Vec3,
    pub back: Vec3,
    /// Unit direction from `front` to `back`.
    pub dir: Vec3,
    pub length: f64,
}

impl RaySegment {
    /// `None` when the endpoints coincide.
    pub fn new(front: Vec3, back: Vec3) -> Option<Self> {
        let d = back - front;
        let length = d.norm();
        if !(length > 0.0) || !length.is_finite() {
            return None;
        }
        Some(RaySegment { front, back, dir: d / length, length })
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.front + self.dir * s
    }

    /// Distance from `g` to the infinite line through the segment.
    pub fn distance_to_line(&self, g: &Vec3) -> f64 {
        let r = self.front - g;
        (r - self.dir * r.dot(&self.dir)).norm()
    }
}

impl Camera {
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: u32,
        height: u32,
        near: f64,
    ) -> Result<Self, CameraError> {
        if width == 0 || height == 0 {
            return Err(CameraError::EmptyImage(width, height));
        }
        if !(near > 0.0) {
            return Err(CameraError::BadNear(near));
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(CameraError::BadFov(fov_y));
        }
        let forward = (target - eye).try_normalize(1e-300).ok_or(CameraError::DegenerateBasis)?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or(CameraError::DegenerateBasis)?;
        let up = right.cross(&forward);
        Ok(Camera { eye, forward, right, up, fov_y, width, height, near, tan_half: (fov_y / 2.0).tan() })
    }

    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    pub fn right(&self) -> Vec3 {
        self.right
    }

    pub fn up(&self) -> Vec3 {
        self.up
    }

    pub fn fov_y(&self) -> f64 {
        self.fov_y
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Screen units per unit of tangent-space offset (`x/z`, `y/z`).
    fn focal_pixels(&self) -> f64 {
        self.height as f64 / (2.0 * self.tan_half)
    }

    /// Ray through the center of pixel `(x, y)`; row 0 is the top row.
    pub fn primary_ray(&self, x: u32, y: u32) -> Ray {
        let sx = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * self.aspect() * self.tan_half;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * self.tan_half;
        let d = (self.forward + self.right * sx + self.up * sy).normalize();
        Ray { origin: self.eye, direction: d, pixel: (x, y) }
    }

    /// Continuous screen position in pixel units; pixel `(i, j)` has its
    /// center at `(i + 0.5, j + 0.5)`.
    pub fn project_to_screen(&self, g: &Vec3) -> Result<(f64, f64), CameraError> {
        let v = g - self.eye;
        let z = v.dot(&self.forward);
        if !(z > 0.0) {
            return Err(CameraError::BehindEye(z));
        }
        let f = self.focal_pixels();
        let x = self.width as f64 / 2.0 + f * v.dot(&self.right) / z;
        let y = self.height as f64 / 2.0 - f * v.dot(&self.up) / z;
        Ok((x, y))
    }

    /// Pixel-accuracy `ΔP = 2‖π_s(g) − center‖_∞`; at most 1 iff `g`
    /// projects into the pixel square.
    pub fn delta_p(&self, pixel: (u32, u32), g: &Vec3) -> Result<f64, CameraError> {
        let (x, y) = self.project_to_screen(g)?;
        let cx = pixel.0 as f64 + 0.5;
        let cy = pixel.1 as f64 + 0.5;
        Ok(2.0 * (x - cx).abs().max((y - cy).abs()))
    }

    /// Depth of `g` along the view axis.
    pub fn view_depth(&self, g: &Vec3) -> f64 {
        (g - self.eye).dot(&self.forward)
    }

    /// World-space width of one pixel at view depth `z`.
    pub fn pixel_footprint(&self, z: f64) -> f64 {
        2.0 * z * self.tan_half / self.height as f64
    }

    /// Distance from a point on a pixel's center ray to the side planes of
    /// that pixel's frustum (to first order). Shrinks towards the image
    /// border, where a world offset moves the projection faster.
    pub fn frustum_tolerance(&self, g: &Vec3) -> f64 {
        let v = g - self.eye;
        let z = v.dot(&self.forward);
        if !(z > 0.0) {
            return 0.0;
        }
        let a = v.dot(&self.right) / z;
        let b = v.dot(&self.up) / z;
        let slope = 1.0 + a.abs().max(b.abs()).powi(2);
        0.5 * z / (self.focal_pixels() * slope.sqrt())
    }

    /// Ray parameter at which `ray` crosses the near plane.
    pub fn near_plane_t(&self, ray: &Ray) -> f64 {
        self.near / ray.direction.dot(&self.forward)
    }
}
