//! Pinhole camera with world-to-camera rotation and centre.

use nalgebra::{Matrix2x3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::so3::Rotation;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    /// Focal length, pixels.
    pub f: f64,
    /// Principal point, pixels.
    pub c: Vector2<f64>,
}

impl Intrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Config(format!("focal length must be > 0, got {f}")));
        }
        Ok(Intrinsics { f, c: Vector2::new(cx, cy) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Rotation,
    /// Centre in world coordinates.
    pub center: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl Camera {
    /// Point in the camera frame, `R·(X − C)`.
    pub fn to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        &self.rotation * (point - self.center)
    }
}

/// Pixel coordinates of a camera-frame point; `camera` only labels errors.
pub fn project(intr: &Intrinsics, p: &Vector3<f64>, camera: usize) -> Result<Vector2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::Cheirality { camera, depth: p.z });
    }
    Ok(intr.f * Vector2::new(p.x / p.z, p.y / p.z) + intr.c)
}

/// `∂u/∂p` of the pinhole projection.
pub fn projection_jacobian(intr: &Intrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let f = intr.f;
    Matrix2x3::new(f * iz, 0.0, -f * p.x * iz * iz, 0.0, f * iz, -f * p.y * iz * iz)
}

pub fn reproject(cam: &Camera, point: &Vector3<f64>, camera: usize) -> Result<Vector2<f64>> {
    project(&cam.intrinsics, &cam.to_camera(point), camera)
}
