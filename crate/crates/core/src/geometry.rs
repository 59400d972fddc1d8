//! Rotations and rigid transforms on SO(3) / SE(3).
//!
//! Rotations are stored as 3x3 matrices. Tangent vectors of SE(3) are ordered
//! `(angular, linear)` everywhere in this crate; the same ordering is used by
//! adjoints and the left/right Jacobians below.
//!
//! Perturbation conventions:
//! - `Exp(ξ + δ) ≈ Exp(ξ) · Exp(Jr(ξ) δ)` and `Exp(ξ + δ) ≈ Exp(Jl(ξ) δ) · Exp(ξ)`
//! - `Log(Exp(ξ) · Exp(ε)) ≈ ξ + Jr⁻¹(ξ) ε`
//! - `T · Exp(ξ) · T⁻¹ = Exp(Ad(T) ξ)`

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;

/// Angles below this use a truncated Taylor expansion in exp/log/V.
pub const SMALL_ANGLE: f64 = 1e-8;
/// SO(3) Jacobian coefficients switch to their series below this angle.
const SO3_SERIES_ANGLE: f64 = 1e-4;
/// The SE(3) coupling coefficients have 1/θ⁴ and 1/θ⁵ denominators and
/// switch to series much earlier.
const SE3_SERIES_ANGLE: f64 = 0.1;
/// Orthonormality tolerance accepted from callers.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew-symmetric part of `m`.
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn try_from_matrix(m: Mat3) -> Result<Self> {
        let r = Rotation(m);
        if !r.is_valid(ROTATION_TOLERANCE) {
            return Err(Error::invalid("matrix is not a proper rotation"));
        }
        Ok(r)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(q.to_rotation_matrix().into_inner())
    }

    /// Unit quaternion with non-negative scalar part.
    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        if !self.0.iter().all(|x| x.is_finite()) {
            return false;
        }
        let orth = (self.0.transpose() * self.0 - Mat3::identity()).abs().max();
        orth <= tol && (self.0.determinant() - 1.0).abs() <= tol
    }

    /// Projects onto SO(3) through the quaternion chart.
    pub fn renormalized(&self) -> Self {
        Self::from_quaternion(&self.to_quaternion())
    }

    /// Rodrigues formula. `v` must be finite.
    pub fn exp(v: &Vec3) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        let k = hat(v);
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let half = 0.5 * theta;
            (theta.sin() / theta, 2.0 * (half.sin() / theta).powi(2))
        };
        Rotation(Mat3::identity() + k * a + k * k * b)
    }

    /// Principal logarithm; the angle lies in `[0, π]`. Near π the axis sign is
    /// not meaningful.
    pub fn log(&self) -> Vec3 {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let w = vee(m);
        let sin = w.norm();
        let theta = sin.atan2(cos);
        if theta < SMALL_ANGLE {
            return w * (1.0 + theta * theta / 6.0);
        }
        if cos > -0.99999 {
            return w * (theta / sin);
        }
        // θ ≈ π: (R + Rᵀ)/2 − cos·I = (1 − cos)·a·aᵀ
        let s = (m + m.transpose()) * 0.5 - Mat3::identity() * cos;
        let j = (0..3)
            .max_by(|&i, &k| s[(i, i)].partial_cmp(&s[(k, k)]).unwrap())
            .unwrap();
        let mut axis: Vec3 = s.column(j).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Element of se(3), ordered `(angular, linear)` when flattened.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    pub angular: Vec3,
    pub linear: Vec3,
}

impl Twist {
    pub fn new(angular: Vec3, linear: Vec3) -> Self {
        Twist { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Twist {
            angular: v.fixed_rows::<3>(0).into(),
            linear: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn to_vector(&self) -> Vec6 {
        let mut v = Vec6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        v.fixed_rows_mut::<3>(3).copy_from(&self.linear);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist::new(self.angular * s, self.linear * s)
    }

    /// 4x4 matrix representation.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&self.angular));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.linear);
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Pose::new(r, Vec3::zeros())
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.is_valid(ROTATION_TOLERANCE) && self.translation.iter().all(|x| x.is_finite())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    pub fn exp(xi: &Twist) -> Self {
        let r = Rotation::exp(&xi.angular);
        let v = so3_left_jacobian(&xi.angular);
        Pose::new(r, v * xi.linear)
    }

    pub fn log(&self) -> Twist {
        let w = self.rotation.log();
        Twist::new(w, so3_left_jacobian_inv(&w) * self.translation)
    }

    /// Adjoint in `(angular, linear)` ordering: `[[R, 0], [t^ R, R]]`.
    pub fn adjoint(&self) -> Mat6 {
        let r = self.rotation.matrix();
        let mut ad = Mat6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix_unchecked(m: &Matrix4<f64>) -> Self {
        Pose::new(
            Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into()),
            m.fixed_view::<3, 1>(0, 3).into(),
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

fn check_finite3(v: &Vec3, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be finite")))
    }
}

pub fn rot_exp(v: &Vec3) -> Result<Rotation> {
    check_finite3(v, "axis-angle vector")?;
    Ok(Rotation::exp(v))
}

pub fn rot_log(r: &Rotation) -> Result<Vec3> {
    if !r.is_valid(ROTATION_TOLERANCE) {
        return Err(Error::invalid("rotation is not orthonormal"));
    }
    Ok(r.log())
}

pub fn se3_exp(xi: &Twist) -> Result<Pose> {
    if !xi.is_finite() {
        return Err(Error::invalid("twist must be finite"));
    }
    Ok(Pose::exp(xi))
}

pub fn se3_log(t: &Pose) -> Result<Twist> {
    if !t.is_valid() {
        return Err(Error::invalid("pose is not a valid rigid transform"));
    }
    Ok(t.log())
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a * b
}

pub fn inverse(a: &Pose) -> Pose {
    a.inverse()
}

// --- Jacobians ---------------------------------------------------------------

struct Coeffs {
    /// (1 − cos θ)/θ²
    a: f64,
    /// (θ − sin θ)/θ³
    b: f64,
    /// (1 − (θ/2)·cot(θ/2))/θ²
    e: f64,
}

fn so3_coeffs(theta: f64) -> Coeffs {
    let t2 = theta * theta;
    if theta < SO3_SERIES_ANGLE {
        let t4 = t2 * t2;
        Coeffs {
            a: 0.5 - t2 / 24.0 + t4 / 720.0,
            b: 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            e: 1.0 / 12.0 + t2 / 720.0 + t4 / 30240.0,
        }
    } else {
        let half = 0.5 * theta;
        Coeffs {
            a: 2.0 * (half.sin() / theta).powi(2),
            b: (theta - theta.sin()) / (t2 * theta),
            e: (1.0 - half / half.tan()) / t2,
        }
    }
}

/// SO(3) left Jacobian; equals the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(w: &Vec3) -> Mat3 {
    let c = so3_coeffs(w.norm());
    let k = hat(w);
    Mat3::identity() + k * c.a + k * k * c.b
}

pub fn so3_left_jacobian_inv(w: &Vec3) -> Mat3 {
    let c = so3_coeffs(w.norm());
    let k = hat(w);
    Mat3::identity() - k * 0.5 + k * k * c.e
}

pub fn so3_right_jacobian(w: &Vec3) -> Mat3 {
    so3_left_jacobian(&-w)
}

pub fn so3_right_jacobian_inv(w: &Vec3) -> Mat3 {
    so3_left_jacobian_inv(&-w)
}

fn se3_coeffs_series(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let t4 = t2 * t2;
    let t6 = t4 * t2;
    (
        1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362_880.0,
        1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0 - t6 / 3_628_800.0,
        1.0 / 120.0 - t2 / 2520.0 + t4 / 120_960.0 - t6 / 9_979_200.0,
    )
}

fn se3_coeffs_closed(theta: f64) -> (f64, f64, f64) {
    let (s, c) = theta.sin_cos();
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let t4 = t2 * t2;
    let t5 = t4 * theta;
    let c1 = (theta - s) / t3;
    let c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t4);
    let c3 = -0.5 * ((1.0 - 0.5 * t2 - c) / t4 - 3.0 * (theta - s - t3 / 6.0) / t5);
    (c1, c2, c3)
}

/// Coupling block of the SE(3) left Jacobian.
fn se3_q(w: &Vec3, v: &Vec3) -> Mat3 {
    let theta = w.norm();
    let (c1, c2, c3) = if theta < SE3_SERIES_ANGLE {
        se3_coeffs_series(theta)
    } else {
        se3_coeffs_closed(theta)
    };
    let p = hat(w);
    let r = hat(v);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5
        + (pr + rp + prp) * c1
        + (p * pr + rp * p - prp * 3.0) * c2
        + (prp * p + p * prp) * c3
}

fn block_lower(a: &Mat3, q: &Mat3) -> Mat6 {
    let mut j = Mat6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(a);
    j.fixed_view_mut::<3, 3>(3, 0).copy_from(q);
    j
}

pub fn se3_left_jacobian(xi: &Twist) -> Mat6 {
    block_lower(&so3_left_jacobian(&xi.angular), &se3_q(&xi.angular, &xi.linear))
}

pub fn se3_right_jacobian(xi: &Twist) -> Mat6 {
    se3_left_jacobian(&xi.scaled(-1.0))
}

pub fn se3_left_jacobian_inv(xi: &Twist) -> Mat6 {
    let a = so3_left_jacobian_inv(&xi.angular);
    let q = se3_q(&xi.angular, &xi.linear);
    block_lower(&a, &(-(a * q * a)))
}

pub fn se3_right_jacobian_inv(xi: &Twist) -> Mat6 {
    se3_left_jacobian_inv(&xi.scaled(-1.0))
}

/// Minimal rotation taking direction `from` onto direction `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Rotation {
    let a = from.normalize();
    let b = to.normalize();
    let axis = a.cross(&b);
    let s = axis.norm();
    let c = a.dot(&b);
    if s < 1e-12 {
        if c > 0.0 {
            return Rotation::identity();
        }
        // antiparallel: any perpendicular axis
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let perp = a.cross(&helper).normalize();
        return Rotation::exp(&(perp * std::f64::consts::PI));
    }
    Rotation::exp(&(axis / s * s.atan2(c)))
}
