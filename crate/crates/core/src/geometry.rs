//! Poses, quaternions, rigid transforms, and tangent-space math.
//!
//! Conventions used across the crate:
//!
//! - Quaternions store `[x, y, z, w]` (vector part first, scalar last) and
//!   are kept unit-norm and sign-canonical (`w >= 0`) by construction.
//! - Pose tangents are 6-D world-frame left perturbations: translation delta
//!   first, rotation vector second. `apply_tangent` realizes `p' = p + v`,
//!   `r' = exp(w) * r`.
//! - Rotation matrices are world-from-body.

use crate::{cast, Error, Real, Result};
use nalgebra::{Matrix3, Unit, Vector3, Vector6};

/// Input gate: quaternions and rotation matrices further than this from
/// unit/orthonormal are rejected as invalid input.
pub const UNIT_INPUT_TOL: f64 = 1e-6;

pub(crate) fn skew<S: Real>(v: &Vector3<S>) -> Matrix3<S> {
    Matrix3::new(
        S::zero(),
        -v.z,
        v.y,
        v.z,
        S::zero(),
        -v.x,
        -v.y,
        v.x,
        S::zero(),
    )
}

/// Unit quaternion, `[x, y, z, w]` storage, `w >= 0` canonical sign.
///
/// Fields are private so every reachable value went through normalization;
/// constructors reject inputs more than [`UNIT_INPUT_TOL`] from unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat<S> {
    x: S,
    y: S,
    z: S,
    w: S,
}

impl<S: Real> Quat<S> {
    pub fn identity() -> Self {
        Quat {
            x: S::zero(),
            y: S::zero(),
            z: S::zero(),
            w: S::one(),
        }
    }

    /// Builds from raw `[x, y, z, w]` components, which must already be unit
    /// within [`UNIT_INPUT_TOL`]; the stored value is renormalized and sign
    /// canonicalized.
    pub fn from_coeffs(x: S, y: S, z: S, w: S) -> Result<Self> {
        let n2 = x * x + y * y + z * z + w * w;
        let dev = (n2.sqrt() - S::one()).abs();
        if dev > cast(UNIT_INPUT_TOL) {
            return Err(Error::InvalidInput(format!(
                "quaternion norm deviates from 1 by {dev:?}"
            )));
        }
        Ok(Quat { x, y, z, w }.renormalized())
    }

    /// Exponential map: rotation by `|v|` radians about `v / |v|`.
    pub fn from_rotvec(v: &Vector3<S>) -> Self {
        let angle = v.norm();
        let half = angle * cast(0.5);
        // sin(angle/2)/angle, continuous through angle = 0.
        let s = if angle < cast(1e-8) {
            cast::<S>(0.5) - angle * angle * cast(1.0 / 48.0)
        } else {
            half.sin() / angle
        };
        Quat {
            x: v.x * s,
            y: v.y * s,
            z: v.z * s,
            w: half.cos(),
        }
        .renormalized()
    }

    /// Log map: rotation vector with angle in `[0, pi]`.
    pub fn to_rotvec(&self) -> Vector3<S> {
        let q = self.canonicalized();
        let vec = Vector3::new(q.x, q.y, q.z);
        let vn = vec.norm();
        if vn < cast(1e-9) {
            // angle ~ 2*vn; axis*angle ~ 2*vec for w ~ 1.
            return vec * cast::<S>(2.0);
        }
        let angle = cast::<S>(2.0) * vn.atan2(q.w);
        vec * (angle / vn)
    }

    pub fn x(&self) -> S {
        self.x
    }
    pub fn y(&self) -> S {
        self.y
    }
    pub fn z(&self) -> S {
        self.z
    }
    pub fn w(&self) -> S {
        self.w
    }

    /// `[x, y, z, w]` components.
    pub fn coeffs(&self) -> [S; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn vector_part(&self) -> Vector3<S> {
        Vector3::new(self.x, self.y, self.z)
    }

    fn renormalized(&self) -> Self {
        let n = (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt();
        let q = Quat {
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
            w: self.w / n,
        };
        q.canonicalized()
    }

    fn canonicalized(&self) -> Self {
        // w > 0 wins; at w == 0 (180-degree rotations, where q and -q both
        // have w >= 0) the first nonzero vector component is made positive
        // so the representation stays unique.
        let flip = if self.w != S::zero() {
            self.w < S::zero()
        } else {
            let lead = if self.x != S::zero() {
                self.x
            } else if self.y != S::zero() {
                self.y
            } else {
                self.z
            };
            lead < S::zero()
        };
        if flip {
            Quat {
                x: -self.x,
                y: -self.y,
                z: -self.z,
                w: -self.w,
            }
        } else {
            *self
        }
    }

    /// Inverse rotation (conjugate of a unit quaternion).
    pub fn conjugate(&self) -> Self {
        Quat {
            x: -self.x,
            y: -self.y,
            z: -self.z,
            w: self.w,
        }
        .canonicalized()
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &Quat<S>) -> Self {
        let (av, aw) = (self.vector_part(), self.w);
        let (bv, bw) = (rhs.vector_part(), rhs.w);
        let v = bv * aw + av * bw + av.cross(&bv);
        let w = aw * bw - av.dot(&bv);
        Quat {
            x: v.x,
            y: v.y,
            z: v.z,
            w,
        }
        .renormalized()
    }

    pub fn rotate_vector(&self, v: &Vector3<S>) -> Vector3<S> {
        let qv = self.vector_part();
        let t: Vector3<S> = qv.cross(v) * cast::<S>(2.0);
        *v + t * self.w + qv.cross(&t)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<S> {
        let (x, y, z, w) = (self.x, self.y, self.z, self.w);
        let two = cast::<S>(2.0);
        Matrix3::new(
            S::one() - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            S::one() - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            S::one() - two * (x * x + y * y),
        )
    }

    /// Shepperd's method; `m` must be orthonormal within [`UNIT_INPUT_TOL`]
    /// with determinant +1.
    pub fn from_rotation_matrix(m: &Matrix3<S>) -> Result<Self> {
        check_rotation(m)?;
        let trace = m.trace();
        let q = if trace > S::zero() {
            let s = (trace + S::one()).sqrt() * cast(2.0);
            Quat {
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
                w: s * cast(0.25),
            }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (S::one() + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * cast(2.0);
            Quat {
                x: s * cast(0.25),
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
                w: (m[(2, 1)] - m[(1, 2)]) / s,
            }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (S::one() + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * cast(2.0);
            Quat {
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: s * cast(0.25),
                z: (m[(1, 2)] + m[(2, 1)]) / s,
                w: (m[(0, 2)] - m[(2, 0)]) / s,
            }
        } else {
            let s = (S::one() + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * cast(2.0);
            Quat {
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: s * cast(0.25),
                w: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        };
        Ok(q.renormalized())
    }
}

fn check_rotation<S: Real>(m: &Matrix3<S>) -> Result<()> {
    let gram = m.transpose() * m;
    let mut dev = S::zero();
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { S::one() } else { S::zero() };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    if dev > cast(UNIT_INPUT_TOL) {
        return Err(Error::InvalidInput(format!(
            "rotation matrix deviates from orthonormal by {dev:?}"
        )));
    }
    if m.determinant() < S::zero() {
        return Err(Error::InvalidInput(
            "rotation matrix has negative determinant (reflection)".into(),
        ));
    }
    Ok(())
}

/// Position plus orientation of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPose<S> {
    pub p: Vector3<S>,
    pub r: Quat<S>,
}

impl<S: Real> LinkPose<S> {
    pub fn identity() -> Self {
        LinkPose {
            p: Vector3::zeros(),
            r: Quat::identity(),
        }
    }

    pub fn new(p: Vector3<S>, r: Quat<S>) -> Self {
        LinkPose { p, r }
    }

    pub fn from_translation(p: Vector3<S>) -> Self {
        LinkPose {
            p,
            r: Quat::identity(),
        }
    }

    /// `T(q)`: the homogeneous transform of this pose.
    pub fn to_transform(&self) -> Transform<S> {
        Transform {
            rot: self.r.to_rotation_matrix(),
            trans: self.p,
        }
    }
}

impl<S: Real> Default for LinkPose<S> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid transform (rotation matrix plus translation), kept orthonormal by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform<S> {
    rot: Matrix3<S>,
    trans: Vector3<S>,
}

impl<S: Real> Transform<S> {
    pub fn identity() -> Self {
        Transform {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    /// Validates orthonormality (within [`UNIT_INPUT_TOL`]) and handedness.
    pub fn from_parts(rot: Matrix3<S>, trans: Vector3<S>) -> Result<Self> {
        check_rotation(&rot)?;
        Ok(Transform { rot, trans })
    }

    pub fn from_translation(v: Vector3<S>) -> Self {
        Transform {
            rot: Matrix3::identity(),
            trans: v,
        }
    }

    pub fn from_rotation(axis: &Unit<Vector3<S>>, angle: S) -> Self {
        Transform {
            rot: Quat::from_rotvec(&(axis.into_inner() * angle)).to_rotation_matrix(),
            trans: Vector3::zeros(),
        }
    }

    pub fn rot(&self) -> &Matrix3<S> {
        &self.rot
    }

    pub fn trans(&self) -> &Vector3<S> {
        &self.trans
    }

    /// `self` then... no: applies `rhs` in `self`'s frame: `self * rhs`.
    pub fn compose(&self, rhs: &Transform<S>) -> Transform<S> {
        Transform {
            rot: self.rot * rhs.rot,
            trans: self.rot * rhs.trans + self.trans,
        }
    }

    pub fn inverse(&self) -> Transform<S> {
        let rt = self.rot.transpose();
        Transform {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    pub fn apply(&self, p: &Vector3<S>) -> Vector3<S> {
        self.rot * p + self.trans
    }

    /// `M(T)`: back to a pose, renormalizing the rotation through the
    /// quaternion round trip.
    pub fn to_pose(&self) -> LinkPose<S> {
        let r = Quat::from_rotation_matrix(&self.rot)
            .expect("transform rotation is orthonormal by construction");
        LinkPose { p: self.trans, r }
    }
}

impl<S: Real> Default for Transform<S> {
    fn default() -> Self {
        Self::identity()
    }
}

/// `T(a)^-1 * T(b)`: the transform of `b` expressed in `a`'s frame, so that
/// `T(a) * relative_transform(a, b) = T(b)`.
pub fn relative_transform<S: Real>(a: &LinkPose<S>, b: &LinkPose<S>) -> Transform<S> {
    a.to_transform().inverse().compose(&b.to_transform())
}

/// Orientation error of `r` relative to the desired `r_hat`:
/// `e = r_w * v_hat - r_hat_w * v + v_hat x v` with `v = [r_x, r_y, r_z]`.
///
/// Zero iff the rotations agree; smooth in both arguments. Inputs are used
/// with their stored (canonical) signs, so the result is not antisymmetric
/// under argument swap.
pub fn quat_error<S: Real>(r: &Quat<S>, r_hat: &Quat<S>) -> Vector3<S> {
    let v = r.vector_part();
    let v_hat = r_hat.vector_part();
    v_hat * r.w() - v * r_hat.w() + v_hat.cross(&v)
}

/// Jacobian of [`quat_error`] in the first argument with respect to a
/// world-frame left rotation perturbation (`r <- exp(dw) * r`).
pub fn quat_error_jacobian<S: Real>(r: &Quat<S>, r_hat: &Quat<S>) -> Matrix3<S> {
    let v = r.vector_part();
    let v_hat = r_hat.vector_part();
    // e depends on r through (v, w): de/dv = -w_hat*I + skew(v_hat),
    // de/dw = v_hat; left perturbation moves them by dv = (w*I - skew(v))/2,
    // dw = -v^T/2.
    let de_dv = skew(&v_hat) - Matrix3::identity() * r_hat.w();
    let dv = (Matrix3::identity() * r.w() - skew(&v)) * cast::<S>(0.5);
    de_dv * dv - v_hat * (v * cast::<S>(0.5)).transpose()
}

/// 6-D pose tangent: world-frame translation delta `v`, rotation vector `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTangent<S> {
    pub v: Vector3<S>,
    pub w: Vector3<S>,
}

impl<S: Real> PoseTangent<S> {
    pub fn zero() -> Self {
        PoseTangent {
            v: Vector3::zeros(),
            w: Vector3::zeros(),
        }
    }

    pub fn from_vector(t: &Vector6<S>) -> Self {
        PoseTangent {
            v: Vector3::new(t[0], t[1], t[2]),
            w: Vector3::new(t[3], t[4], t[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<S> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }
}

/// Left/world tangent step: `p' = p + v`, `r' = exp(w) * r`.
pub fn apply_tangent<S: Real>(pose: &LinkPose<S>, d: &PoseTangent<S>) -> LinkPose<S> {
    LinkPose {
        p: pose.p + d.v,
        r: Quat::from_rotvec(&d.w).mul(&pose.r),
    }
}

/// Tangent `d` with `apply_tangent(b, d) = a` (up to normalization).
pub fn pose_difference<S: Real>(a: &LinkPose<S>, b: &LinkPose<S>) -> PoseTangent<S> {
    PoseTangent {
        v: a.p - b.p,
        w: a.r.mul(&b.r.conjugate()).to_rotvec(),
    }
}
