//! Robust reprojection and known-rotation terms, their Jacobians, and the
//! gauge-fixed parameterisation.
//!
//! Every camera carries a local update `[δθ, δc]`: `R ← R·exp(δθ)` and
//! `C ← C + T·δc`. Camera 0 is frozen. Camera 1 moves on the sphere around
//! `C_0` through its radius: `T = [b₁ b₂ u]` with the radial coordinate fixed.

use nalgebra::{DVector, Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use super::camera::{project, projection_jacobian};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::so3::{exp_map, hat, log_map, right_jacobian_inverse, Rotation, Tangent};

pub type Matrix2x6 = SMatrix<f64, 2, 6>;
pub type Matrix3x6 = SMatrix<f64, 3, 6>;
pub type Matrix6x3 = SMatrix<f64, 6, 3>;

/// Local camera parameters.
pub const CAM_DOF: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct BaConfig {
    /// Known-rotation weight, pixel²/radian².
    pub weight: f64,
    /// Scale of the robust reprojection loss, pixels.
    pub loss_sigma_px: f64,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub func_tol: f64,
    /// Stop once the largest free gradient entry falls below this.
    pub grad_tol: f64,
}

impl Default for BaConfig {
    fn default() -> Self {
        BaConfig { weight: 100.0, loss_sigma_px: 2.0, max_iterations: 500, initial_lambda: 1e-4, func_tol: 1e-12, grad_tol: 1e-9 }
    }
}

impl BaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::Config(format!("weight must be >= 0, got {}", self.weight)));
        }
        if !(self.loss_sigma_px.is_finite() && self.loss_sigma_px > 0.0) {
            return Err(Error::Config(format!("loss scale must be > 0, got {}", self.loss_sigma_px)));
        }
        if !(self.initial_lambda > 0.0) {
            return Err(Error::Config("initial damping must be > 0".into()));
        }
        Ok(())
    }
}

/// `ρ_v(s) = σ²·s/(s+σ²)` on the squared residual norm `s`; `≈ s` for small
/// residuals and bounded by `σ²`.
pub fn visual_loss(s: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 * s / (s + s2)
}

/// `dρ_v/ds = σ⁴/(s+σ²)²`.
pub fn visual_loss_derivative(s: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let d = s + s2;
    s2 * s2 / (d * d)
}

/// Observed minus reprojected pixel position.
pub fn visual_residual(scene: &Scene, obs: usize) -> Result<Vector2<f64>> {
    let o = &scene.observations[obs];
    let cam = &scene.cameras[o.camera];
    Ok(o.uv - project(&cam.intrinsics, &cam.to_camera(&scene.points[o.point]), o.camera)?)
}

/// `log(R̂_i·R̂_jᵀ·R_j·R_iᵀ)` for world-to-camera rotations: zero iff
/// `R_j·R_iᵀ = R̂_j·R̂_iᵀ`, unchanged by a common world rotation `R ← R·G`.
pub fn known_rotation_residual(r_i: &Rotation, r_j: &Rotation, rh_i: &Rotation, rh_j: &Rotation) -> Tangent {
    log_map(&(*rh_i * rh_j.transpose() * *r_j * r_i.transpose()))
}

/// Which of the six local parameters of each camera are free.
#[derive(Clone, Debug, PartialEq)]
pub struct Gauge {
    pub free: Vec<[bool; CAM_DOF]>,
    /// Centre update basis per camera.
    pub center_basis: Vec<Matrix3<f64>>,
}

impl Gauge {
    pub fn new(scene: &Scene) -> Result<Self> {
        let n = scene.cameras.len();
        let mut free = vec![[true; CAM_DOF]; n];
        let mut center_basis = vec![Matrix3::identity(); n];
        if n > 0 {
            free[0] = [false; CAM_DOF];
        }
        if n > 1 {
            let v = scene.cameras[1].center - scene.cameras[0].center;
            let norm = v.norm();
            if !(norm > 1e-12) {
                return Err(Error::Degenerate("cameras 0 and 1 share a centre; scale gauge undefined".into()));
            }
            let u = v / norm;
            let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let b1 = u.cross(&helper).normalize();
            let b2 = u.cross(&b1);
            center_basis[1] = Matrix3::from_columns(&[b1, b2, u]);
            free[1][5] = false;
        }
        Ok(Gauge { free, center_basis })
    }

    pub fn num_params(&self, scene: &Scene) -> usize {
        CAM_DOF * scene.cameras.len() + 3 * scene.points.len()
    }

    pub fn is_free(&self, index: usize) -> bool {
        let cams = self.free.len() * CAM_DOF;
        index >= cams || self.free[index / CAM_DOF][index % CAM_DOF]
    }
}

/// Applies a full update vector (`6` per camera, then `3` per point);
/// entries of frozen parameters are ignored.
pub fn apply_update(scene: &Scene, gauge: &Gauge, delta: &DVector<f64>) -> Scene {
    let mut out = scene.clone();
    let nc = scene.cameras.len();
    for k in 0..nc {
        let mut d = [0.0; CAM_DOF];
        for (c, v) in d.iter_mut().enumerate() {
            if gauge.free[k][c] {
                *v = delta[CAM_DOF * k + c];
            }
        }
        let cam = &mut out.cameras[k];
        let dr = Vector3::new(d[0], d[1], d[2]);
        if dr != Vector3::zeros() {
            cam.rotation = cam.rotation * exp_map(&dr);
        }
        let step = gauge.center_basis[k] * Vector3::new(d[3], d[4], d[5]);
        if k == 1 {
            // retract onto the sphere around camera 0
            let c0 = scene.cameras[0].center;
            let v = scene.cameras[1].center - c0;
            cam.center = c0 + v.norm() * (v + step).normalize();
        } else {
            cam.center += step;
        }
    }
    for (l, p) in out.points.iter_mut().enumerate() {
        let o = CAM_DOF * nc + 3 * l;
        *p += Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
    }
    out
}

/// Residual of one observation with its Jacobians w.r.t. the camera's local
/// parameters and the point.
pub fn visual_jacobians(scene: &Scene, gauge: &Gauge, obs: usize) -> Result<(Vector2<f64>, Matrix2x6, Matrix2x3<f64>)> {
    let o = &scene.observations[obs];
    let cam = &scene.cameras[o.camera];
    let x = scene.points[o.point] - cam.center;
    let p = cam.rotation * x;
    let r = o.uv - project(&cam.intrinsics, &p, o.camera)?;
    let jpi = projection_jacobian(&cam.intrinsics, &p);
    let jr = jpi * cam.rotation.matrix();
    let mut jc = Matrix2x6::zeros();
    jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jr * hat(&x)));
    jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jr * gauge.center_basis[o.camera]));
    Ok((r, jc, -jr))
}

/// Known-rotation residual of pair `(i, j)` with Jacobians w.r.t. the
/// rotation parts of cameras `i` and `j`.
pub fn rotation_jacobians(scene: &Scene, pair: (usize, usize)) -> (Tangent, Matrix3<f64>, Matrix3<f64>) {
    let (i, j) = pair;
    let (ri, rj) = (scene.cameras[i].rotation, scene.cameras[j].rotation);
    let (hi, hj) = (scene.priors[i].expect("validated"), scene.priors[j].expect("validated"));
    let r = known_rotation_residual(&ri, &rj, &hi, &hj);
    let jj = right_jacobian_inverse(&r) * ri.matrix();
    (r, -jj, jj)
}

/// `Σ ρ_v(‖r_v‖²) + w·Σ ‖r_R‖²`; rotation terms are skipped when `w = 0`.
pub fn total_cost(scene: &Scene, cfg: &BaConfig) -> Result<f64> {
    let mut cost = 0.0;
    for k in 0..scene.observations.len() {
        cost += visual_loss(visual_residual(scene, k)?.norm_squared(), cfg.loss_sigma_px);
    }
    if cfg.weight > 0.0 {
        for &(i, j) in &scene.pairs {
            let (ri, rj) = (scene.cameras[i].rotation, scene.cameras[j].rotation);
            let r = known_rotation_residual(&ri, &rj, &scene.priors[i].expect("validated"), &scene.priors[j].expect("validated"));
            cost += cfg.weight * r.norm_squared();
        }
    }
    Ok(cost)
}

fn add_at<const D: usize>(g: &mut DVector<f64>, offset: usize, v: &SMatrix<f64, D, 1>) {
    for k in 0..D {
        g[offset + k] += v[k];
    }
}

/// Analytic gradient of [`total_cost`] in the layout of [`apply_update`],
/// with frozen entries zeroed.
pub fn gradient(scene: &Scene, gauge: &Gauge, cfg: &BaConfig) -> Result<DVector<f64>> {
    let nc = scene.cameras.len();
    let mut g = DVector::zeros(gauge.num_params(scene));
    for k in 0..scene.observations.len() {
        let (r, jc, jp) = visual_jacobians(scene, gauge, k)?;
        let scale = 2.0 * visual_loss_derivative(r.norm_squared(), cfg.loss_sigma_px);
        let o = &scene.observations[k];
        let gc = scale * jc.transpose() * r;
        let gp = scale * jp.transpose() * r;
        add_at(&mut g, CAM_DOF * o.camera, &gc);
        add_at(&mut g, CAM_DOF * nc + 3 * o.point, &gp);
    }
    if cfg.weight > 0.0 {
        for &pair in &scene.pairs {
            let (r, ji, jj) = rotation_jacobians(scene, pair);
            let s = 2.0 * cfg.weight;
            add_at(&mut g, CAM_DOF * pair.0, &(s * ji.transpose() * r));
            add_at(&mut g, CAM_DOF * pair.1, &(s * jj.transpose() * r));
        }
    }
    for idx in 0..CAM_DOF * nc {
        if !gauge.is_free(idx) {
            g[idx] = 0.0;
        }
    }
    Ok(g)
}
