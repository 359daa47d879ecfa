//! Unit quaternions and the SO(3) maps used by integration and the losses.
//!
//! Quaternions are Hamilton, scalar-first `[w, x, y, z]`. As an attitude,
//! `q` maps IMU-frame vectors into the global frame: `v_G = R(q) v_I`.
//! A JPL-convention quaternion `q_jpl` for the same attitude is the
//! conjugate of the Hamilton one with components reordered, so a
//! JPL `^I_G q` equals the Hamilton `^G_I q` written here.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this rotation angle (rad) exp/log switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Below this angle the SO(3) Jacobians use their series form.
const JACOBIAN_SMALL_ANGLE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl From<[f64; 4]> for UnitQuaternion {
    fn from(c: [f64; 4]) -> Self {
        UnitQuaternion::from_wxyz(c[0], c[1], c[2], c[3])
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Builds a quaternion from raw components, normalizing. A zero input
    /// yields the identity.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_so3(&(axis * (angle / n)))
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::identity();
        }
        if n == 1.0 {
            return self;
        }
        Self { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn vec(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(&self) -> Self {
        quat_inv(self)
    }

    pub fn to_rotation_matrix(&self) -> Mat3 {
        quat_to_rot(self)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        quat_to_rot(self) * v
    }

    pub fn log(&self) -> Vec3 {
        log_so3(self)
    }

    pub fn angle_to(&self, other: &Self) -> f64 {
        log_so3(&quat_mul(&quat_inv(self), other)).norm()
    }
}

impl std::ops::Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        quat_mul(&self, &rhs)
    }
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_mul(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        // paired so that q ⊗ q⁻¹ cancels exactly
        x: (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
        y: (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
        z: (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
    }
    .normalized()
}

pub fn quat_inv(q: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion { w: q.w, x: -q.x, y: -q.y, z: -q.z }
}

/// Exponential map from a rotation vector (rad) to a unit quaternion.
pub fn exp_so3(v: &Vec3) -> UnitQuaternion {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (w, s) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion { w, x: s * v.x, y: s * v.y, z: s * v.z }.normalized()
}

/// Logarithm map, canonicalized to the `w >= 0` hemisphere so the returned
/// angle lies in `[0, π]`.
pub fn log_so3(q: &UnitQuaternion) -> Vec3 {
    let q = if q.w < 0.0 { q.neg() } else { *q };
    let v = q.vec();
    let n = v.norm();
    let scale = if n < SMALL_ANGLE * 0.5 {
        // θ/n = 2 atan(n/w)/n ≈ (2/w)(1 - (n/w)²/3)
        let r = n / q.w;
        2.0 / q.w * (1.0 - r * r / 3.0)
    } else {
        2.0 * n.atan2(q.w) / n
    };
    v * scale
}

pub fn quat_to_rot(q: &UnitQuaternion) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Mat3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ) Exp(J_r(φ) δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let t2 = phi.norm_squared();
    let t = t2.sqrt();
    let k = skew(phi);
    let (a, b) = if t < JACOBIAN_SMALL_ANGLE {
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        ((1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
    };
    Mat3::identity() - k * a + k * k * b
}

/// Inverse of [`right_jacobian`]; singular as `|φ| → 2π`.
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let t2 = phi.norm_squared();
    let t = t2.sqrt();
    let k = skew(phi);
    let c = if t < JACOBIAN_SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0
    } else {
        1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin())
    };
    Mat3::identity() + k * 0.5 + k * k * c
}

/// Shortest-arc spherical interpolation. `alpha = 0` and `alpha = 1`
/// return the endpoints exactly.
pub fn slerp(q0: &UnitQuaternion, q1: &UnitQuaternion, alpha: f64) -> UnitQuaternion {
    if alpha == 0.0 {
        return *q0;
    }
    if alpha == 1.0 {
        return *q1;
    }
    let rel = quat_mul(&quat_inv(q0), q1);
    quat_mul(q0, &exp_so3(&(log_so3(&rel) * alpha)))
}
