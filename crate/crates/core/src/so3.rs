//! Rotation group primitives.
//!
//! [`Rotation`] wraps a 3×3 special orthogonal matrix. Tangent vectors are
//! plain [`Vector3`]s holding `angle * axis` in radians. The wire format for
//! rotations is a Hamilton, scalar-first unit quaternion ([`UnitQuat`]) with
//! a non-negative scalar part.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::error::{Error, Result};

/// Axis-angle vector (radians · unit axis).
pub type Tangent = Vector3<f64>;

/// Tolerance on `‖MᵀM − I‖_F` and `|det M − 1|` accepted by [`Rotation::from_matrix`].
pub const ROTATION_TOL: f64 = 1e-12;

/// Below this angle `exp_map` and `log_map` switch to their Taylor branches.
const SMALL_ANGLE: f64 = 1e-8;

/// `log_map` switches to the symmetric-part axis extraction once
/// `tr(R) <= -1 + NEAR_PI_TRACE`.
const NEAR_PI_TRACE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validating constructor.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation(m);
        r.validate(ROTATION_TOL)?;
        Ok(r)
    }

    /// Wraps `m` without checking it. Use for products and other values that
    /// are rotations by construction.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let m = &self.0;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        if ortho > tol {
            return Err(Error::InvalidRotation(format!(
                "‖RᵀR − I‖_F = {ortho:e} exceeds {tol:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidRotation(format!("det = {det}")));
        }
        Ok(())
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn into_matrix(self) -> Matrix3<f64> {
        self.0
    }

    #[inline]
    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Inverse; identical to the transpose.
    #[inline]
    pub fn inverse(&self) -> Rotation {
        self.transpose()
    }

    pub fn angle(&self) -> f64 {
        log_map(self).norm()
    }

    pub fn to_quat(&self) -> UnitQuat {
        UnitQuat::from_rotation(self)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

#[inline]
pub fn hat(w: &Tangent) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp_map(w: &Tangent) -> Rotation {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        return Rotation(Matrix3::identity() + k + 0.5 * k * k);
    }
    let a = theta.sin() / theta;
    // (1 - cos θ) / θ², written to avoid cancellation
    let half = 0.5 * theta;
    let s = half.sin() / half;
    let b = 0.5 * s * s;
    Rotation(Matrix3::identity() + a * k + b * k * k)
}

/// Principal logarithm, `‖w‖ ∈ [0, π]`.
pub fn log_map(r: &Rotation) -> Tangent {
    let m = &r.0;
    let trace = m.trace();
    let cos = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    // sin θ · axis
    let s = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = s.norm();
    let theta = sin.atan2(cos);

    if trace <= -1.0 + NEAR_PI_TRACE {
        // Sym(R) − cos θ·I = (1 − cos θ)·a·aᵀ
        let b = 0.5 * (m + m.transpose()) - cos * Matrix3::identity();
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let col = b.column(k).into_owned();
        let mut axis = col / (b[(k, k)].max(0.0) * (1.0 - cos)).sqrt();
        let n = axis.norm();
        if n > 0.0 && n.is_finite() {
            axis /= n;
        } else {
            axis = Vector3::x();
        }
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
        return theta * axis;
    }

    if theta < SMALL_ANGLE {
        return s;
    }
    (theta / sin) * s
}

/// Inverse right Jacobian: `log(exp(φ)·exp(δ)) ≈ φ + J_r⁻¹(φ)·δ`.
pub fn right_jacobian_inverse(phi: &Tangent) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let c = if theta2 < 1e-8 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * k + c * k * k
}

pub fn chordal_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    (r1.0 - r2.0).norm()
}

/// Geodesic (angle) distance in radians, in `[0, π]`.
pub fn geodesic_angle(r1: &Rotation, r2: &Rotation) -> f64 {
    log_map(&Rotation(r1.0.transpose() * r2.0)).norm()
}

/// Nearest rotation in Frobenius norm: `U·diag(1, 1, det(UVᵀ))·Vᵀ`, with the
/// sign correction applied to the direction of the smallest singular value.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    polar_factor(m, true).map(Rotation)
}

/// Orthogonal polar factor `UVᵀ` of `m`. With `special` set the factor is
/// det-corrected into SO(3).
pub(crate) fn polar_factor(m: &Matrix3<f64>, special: bool) -> Result<Matrix3<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite entry".into()));
    }
    let svd = m.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Degenerate("SVD failed".into()));
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (s_max, s_mid, s_min) = (sv[order[0]], sv[order[1]], sv[order[2]]);
    if s_max <= 0.0 || s_mid <= 1e-12 * s_max {
        return Err(Error::Degenerate(format!(
            "rank < 2 (singular values {s_max:e}, {s_mid:e}, {s_min:e})"
        )));
    }
    if s_min < 1e-9 * s_max {
        log::warn!("nearly rank-deficient matrix in polar factor: sigma_min = {s_min:e}");
    }
    let mut r = u * v_t;
    if special && r.determinant() < 0.0 {
        let k = order[2];
        u.column_mut(k).neg_mut();
        r = u * v_t;
    }
    Ok(r)
}

/// Haar-uniform rotation via a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            let quat = UnitQuat { w: q[0] / n, x: q[1] / n, y: q[2] / n, z: q[3] / n };
            return quat.to_rotation();
        }
    }
}

pub fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let a: [f64; 3] = UnitSphere.sample(rng);
    Vector3::new(a[0], a[1], a[2])
}

/// Rotation about a uniform random axis with angle uniform in `[lo, hi]` radians.
pub fn random_rotation_with_angle<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> Result<Rotation> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi && hi <= PI) {
        return Err(Error::InvalidAngleRange { lo, hi });
    }
    let angle = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    Ok(exp_map(&(angle * random_axis(rng))))
}

/// Hamilton scalar-first unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Flip to `w >= 0` and clear negative zeros.
    pub fn canonical(self) -> UnitQuat {
        let s = if self.w < 0.0 { -1.0 } else { 1.0 };
        UnitQuat {
            w: s * self.w + 0.0,
            x: s * self.x + 0.0,
            y: s * self.y + 0.0,
            z: s * self.z + 0.0,
        }
    }

    pub fn conjugate(self) -> UnitQuat {
        UnitQuat { w: self.w, x: -self.x + 0.0, y: -self.y + 0.0, z: -self.z + 0.0 }
    }

    /// Shepperd's method, output canonicalized.
    pub fn from_rotation(r: &Rotation) -> UnitQuat {
        let m = &r.0;
        let t = m.trace();
        let q = if t > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
            let s = 2.0 * (1.0 + t).sqrt();
            UnitQuat {
                w: 0.25 * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            UnitQuat {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: 0.25 * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            UnitQuat {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: 0.25 * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            UnitQuat {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        let n = q.norm();
        UnitQuat { w: q.w / n, x: q.x / n, y: q.y / n, z: q.z / n }.canonical()
    }

    /// Assumes `self` has unit norm.
    pub fn to_rotation(&self) -> Rotation {
        let UnitQuat { w, x, y, z } = *self;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        Rotation(Matrix3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        ))
    }
}
