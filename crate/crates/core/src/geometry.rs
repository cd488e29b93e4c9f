//! Rigid-body primitives: skew operators, rotations, poses, velocities,
//! bearings and the exponential maps used for on-group integration.
//!
//! Rotations are stored as 3x3 matrices. Integration steps leave the group
//! through rounding, so [`Rotation::orthonormalized`] (nearest rotation via
//! polar factorisation) is applied after every integrator step. All types are
//! immutable values and safe to copy between threads.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Tolerance for orthonormality and antisymmetry validation.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;
/// Tolerance for unit-norm validation of bearings.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Below this angle the exponential maps switch to their Taylor branches.
const SMALL_ANGLE: f64 = 1e-6;

/// Cross-product matrix: `skew(w) * v == w.cross(&v)` for all `v`.
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew`]. Rejects matrices that are not antisymmetric within
/// [`ORTHONORMALITY_TOL`]; the antisymmetric part is averaged out so that
/// `unskew(skew(w)) == w` exactly.
pub fn unskew(m: &Mat3) -> Result<Vec3> {
    let defect = (m + m.transpose()).norm();
    if !(defect <= ORTHONORMALITY_TOL) {
        return Err(Error::NotAntisymmetric { defect });
    }
    Ok(Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

/// Orthogonal projector onto the plane normal to `y`: `I - y y^T`.
///
/// Equals `-skew(y) * skew(y)` for unit `y`; symmetric, idempotent and
/// annihilates `y`.
pub fn projector(y: &Bearing) -> Mat3 {
    let d = y.direction();
    Mat3::identity() - d * d.transpose()
}

/// Conjugation of an antisymmetric matrix by a rotation: `Q W Q^T`.
/// Satisfies `unskew(rotation_adjoint(Q, skew(w))) == Q * w`.
pub fn rotation_adjoint(q: &Rotation, w: &Mat3) -> Mat3 {
    q.matrix() * w * q.matrix().transpose()
}

/// Rodrigues formula for `exp(skew(omega) * dt)`.
pub fn so3_exp(omega: &Vec3, dt: f64) -> Rotation {
    let phi = omega * dt;
    let theta_sq = phi.norm_squared();
    let s = skew(&phi);
    let (a, b) = if theta_sq.sqrt() < SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let theta = theta_sq.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    Rotation::from_matrix_unchecked(Mat3::identity() + a * s + b * (s * s))
}

/// Closed-form exponential of `dt * [skew(angular), linear; 0, 0]`.
pub fn se3_exp(u: &RigidVelocity, dt: f64) -> Pose {
    let rotation = so3_exp(&u.angular, dt);
    let phi = u.angular * dt;
    let theta_sq = phi.norm_squared();
    let s = skew(&phi);
    let (b, c) = if theta_sq.sqrt() < SMALL_ANGLE {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        (
            (1.0 - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    let v_matrix = Mat3::identity() + b * s + c * (s * s);
    Pose {
        rotation,
        translation: v_matrix * (u.linear * dt),
    }
}

/// Element of SO(3), stored as a 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `R R^T = I` and `det R = 1` within [`ORTHONORMALITY_TOL`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let r = Rotation(m);
        let defect = r.orthonormality_defect();
        if !(defect <= ORTHONORMALITY_TOL) {
            return Err(Error::NotARotation { defect });
        }
        Ok(r)
    }

    /// Skips validation in release builds; asserts the invariant in debug.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        let r = Rotation(m);
        debug_assert!(
            r.orthonormality_defect() <= ORTHONORMALITY_TOL,
            "matrix is not a rotation (defect {:.3e})",
            r.orthonormality_defect()
        );
        r
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// `||R R^T - I||_F + |det R - 1|`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).norm()
            + (self.0.determinant() - 1.0).abs()
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// `R^T v` without forming the transpose.
    pub fn apply_transpose(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    /// Nearest rotation in the Frobenius sense (polar factor via SVD).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let u = svd.u.expect("svd of 3x3 matrix");
        let v_t = svd.v_t.expect("svd of 3x3 matrix");
        let sign = (u * v_t).determinant().signum();
        let corrected = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, sign)) * v_t;
        Rotation(corrected)
    }

    /// Rotation angle in [0, pi], accurate near zero: `atan2` of the
    /// antisymmetric-part magnitude against the trace.
    pub fn angle(&self) -> f64 {
        let sin = (self.0 - self.0.transpose()).norm() / (2.0 * std::f64::consts::SQRT_2);
        let cos = 0.5 * (self.0.trace() - 1.0);
        sin.atan2(cos)
    }

    /// Geodesic distance to another rotation.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        Rotation(self.0.tr_mul(other.matrix())).angle()
    }

    /// Uniformly distributed rotation (via a random unit quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut q = [0.0; 4];
        loop {
            for c in q.iter_mut() {
                *c = sample_standard_normal(rng);
            }
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for c in q.iter_mut() {
                    *c /= norm;
                }
                break;
            }
        }
        let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
        Rotation::from_matrix_unchecked(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Element of SE(3): rotation plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Rotation,
    translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let r_t = self.rotation.transpose();
        Pose {
            translation: -r_t.apply(&self.translation),
            rotation: r_t,
        }
    }

    /// `R p + x`: maps body-frame coordinates to the world frame.
    pub fn point_from_body(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// `R^T (p - x)`: ego-centric coordinates of a world point.
    pub fn body_coordinates(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply_transpose(&(p - self.translation))
    }

    /// Homogeneous 4x4 representation.
    pub fn homogeneous(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn orthonormalized(&self) -> Self {
        Pose {
            rotation: self.rotation.orthonormalized(),
            translation: self.translation,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, translation_scale: f64) -> Self {
        let t = Vec3::new(
            sample_standard_normal(rng),
            sample_standard_normal(rng),
            sample_standard_normal(rng),
        ) * translation_scale;
        Pose::new(Rotation::random(rng), t)
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.apply(&rhs.translation) + self.translation,
        }
    }
}

impl std::ops::Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

/// Element of se(3): body-frame angular and linear velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidVelocity {
    pub angular: Vec3,
    pub linear: Vec3,
}

impl RigidVelocity {
    pub fn zero() -> Self {
        RigidVelocity {
            angular: Vec3::zeros(),
            linear: Vec3::zeros(),
        }
    }

    pub fn new(angular: Vec3, linear: Vec3) -> Self {
        RigidVelocity { angular, linear }
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().all(|c| c.is_finite()) && self.linear.iter().all(|c| c.is_finite())
    }

    /// 4x4 algebra matrix `[skew(angular), linear; 0, 0]`.
    pub fn algebra_matrix(&self) -> Mat4 {
        let mut m = Mat4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.angular));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.linear);
        m
    }

    pub fn norm(&self) -> f64 {
        (self.angular.norm_squared() + self.linear.norm_squared()).sqrt()
    }
}

impl std::ops::Add for RigidVelocity {
    type Output = RigidVelocity;
    fn add(self, rhs: RigidVelocity) -> RigidVelocity {
        RigidVelocity::new(self.angular + rhs.angular, self.linear + rhs.linear)
    }
}

impl std::ops::Sub for RigidVelocity {
    type Output = RigidVelocity;
    fn sub(self, rhs: RigidVelocity) -> RigidVelocity {
        RigidVelocity::new(self.angular - rhs.angular, self.linear - rhs.linear)
    }
}

impl std::ops::Mul<f64> for RigidVelocity {
    type Output = RigidVelocity;
    fn mul(self, rhs: f64) -> RigidVelocity {
        RigidVelocity::new(self.angular * rhs, self.linear * rhs)
    }
}

/// Unit vector on the sphere: body-frame direction to a landmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bearing(Vec3);

impl Bearing {
    /// Accepts vectors already unit-norm within [`UNIT_NORM_TOL`] and stores
    /// them renormalized.
    pub fn new(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::NotUnitNorm { norm });
        }
        Ok(Bearing(v / norm))
    }

    /// Normalizes an arbitrary direction vector.
    pub fn from_vector(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::NotUnitNorm { norm });
        }
        Ok(Bearing(v / norm))
    }

    pub(crate) fn from_unit_unchecked(v: Vec3) -> Self {
        debug_assert!((v.norm() - 1.0).abs() <= 1e-9, "bearing is not unit norm");
        Bearing(v)
    }

    pub fn direction(&self) -> Vec3 {
        self.0
    }

    /// Angle to another bearing in [0, pi].
    pub fn angle_to(&self, other: &Bearing) -> f64 {
        self.0.dot(&other.0).clamp(-1.0, 1.0).acos()
    }

    pub fn rotated(&self, r: &Rotation) -> Bearing {
        Bearing::from_unit_unchecked(r.apply(&self.0).normalize())
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v = Vec3::new(
                sample_standard_normal(rng),
                sample_standard_normal(rng),
                sample_standard_normal(rng),
            );
            if v.norm() > 1e-6 {
                return Bearing(v.normalize());
            }
        }
    }
}

impl std::ops::Deref for Bearing {
    type Target = Vec3;
    fn deref(&self) -> &Vec3 {
        &self.0
    }
}

/// Standard normal sample via Box-Muller.
pub(crate) fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    const TOL: f64 = 1e-12;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0x5eed)
    }

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::new(
            sample_standard_normal(rng),
            sample_standard_normal(rng),
            sample_standard_normal(rng),
        ) * scale
    }

    #[test]
    fn skew_zero_is_zero_matrix() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn skew_unit_z_matches_hand_matrix() {
        let m = skew(&Vec3::new(0.0, 0.0, 1.0));
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((m - expected).norm() == 0.0);
    }

    #[test]
    fn skew_matches_cross_product_and_is_linear() {
        let mut rng = rng();
        for _ in 0..200 {
            let w = random_vec(&mut rng, 2.0);
            let v = random_vec(&mut rng, 2.0);
            assert!((skew(&w) * v - w.cross(&v)).norm() < TOL);
            let a = random_vec(&mut rng, 1.0);
            assert!((skew(&(w + a)) - (skew(&w) + skew(&a))).norm() < 1e-14);
        }
    }

    #[test]
    fn double_skew_identity_on_unit_vectors() {
        // skew(y) skew(y) v = y (y^T v) - v
        let mut rng = rng();
        for _ in 0..1000 {
            let y = Bearing::random(&mut rng);
            let v = random_vec(&mut rng, 3.0);
            let lhs = skew(&y) * (skew(&y) * v);
            let rhs = y.direction() * (y.dot(&v)) - v;
            assert!((lhs - rhs).norm() < TOL);
        }
    }

    #[test]
    fn unskew_round_trip_is_exact() {
        let mut rng = rng();
        assert_eq!(unskew(&Mat3::zeros()).unwrap(), Vec3::zeros());
        assert_eq!(
            unskew(&skew(&Vec3::new(1.0, 2.0, 3.0))).unwrap(),
            Vec3::new(1.0, 2.0, 3.0)
        );
        for _ in 0..100 {
            let w = random_vec(&mut rng, 5.0);
            assert_eq!(unskew(&skew(&w)).unwrap(), w);
        }
    }

    #[test]
    fn unskew_rejects_symmetric_part() {
        let mut m = skew(&Vec3::new(1.0, 0.0, 0.0));
        m[(0, 0)] = 1e-3;
        assert!(matches!(
            unskew(&m),
            Err(Error::NotAntisymmetric { .. })
        ));
    }

    #[test]
    fn projector_of_unit_z() {
        let y = Bearing::new(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let p = projector(&y);
        assert!((p - Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0))).norm() < TOL);
    }

    #[test]
    fn projector_properties() {
        let mut rng = rng();
        for _ in 0..200 {
            let y = Bearing::random(&mut rng);
            let p = projector(&y);
            assert!((p * y.direction()).norm() < TOL, "annihilates y");
            assert!((p - p.transpose()).norm() < TOL, "symmetric");
            assert!((p * p - p).norm() < TOL, "idempotent");
            let via_skew = -skew(&y) * skew(&y);
            assert!((p - via_skew).norm() < TOL, "matches -skew(y)^2");
        }
    }

    #[test]
    fn so3_exp_zero_is_identity() {
        let r = so3_exp(&Vec3::zeros(), 1.0);
        assert!((r.matrix() - Mat3::identity()).norm() < TOL);
    }

    #[test]
    fn so3_exp_quarter_turn_about_z() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2), 1.0);
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expected).norm() < TOL);
    }

    #[test]
    fn so3_exp_stays_orthonormal() {
        let mut rng = rng();
        for _ in 0..500 {
            let w = random_vec(&mut rng, 3.0);
            let r = so3_exp(&w, 0.033);
            assert!(r.orthonormality_defect() < 1e-12);
        }
    }

    #[test]
    fn so3_exp_small_angle_branch_is_continuous() {
        let w = Vec3::new(1.0, -2.0, 0.5).normalize();
        let below = so3_exp(&(w * 0.99e-6), 1.0);
        let above = so3_exp(&(w * 1.01e-6), 1.0);
        assert!(below.angle_to(&above) < 1e-7);
    }

    #[test]
    fn se3_exp_pure_translation() {
        let u = RigidVelocity::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        let p = se3_exp(&u, 2.0);
        assert!((p.translation() - Vec3::new(2.0, 0.0, 0.0)).norm() < TOL);
        assert!((p.rotation().matrix() - Mat3::identity()).norm() < TOL);
    }

    #[test]
    fn se3_exp_matches_matrix_exponential_series() {
        // Brute-force oracle: scaled-and-squared truncated series on Mat4.
        let mut rng = rng();
        for _ in 0..50 {
            let u = RigidVelocity::new(random_vec(&mut rng, 1.0), random_vec(&mut rng, 2.0));
            let dt = 0.7;
            let a = u.algebra_matrix() * dt;
            let mut series = Mat4::identity();
            let mut term = Mat4::identity();
            for k in 1..30 {
                term = term * a / (k as f64);
                series += term;
            }
            let p = se3_exp(&u, dt);
            assert!((p.homogeneous() - series).norm() < 1e-12);
        }
    }

    #[test]
    fn rotation_adjoint_identities() {
        let mut rng = rng();
        let w0 = random_vec(&mut rng, 1.0);
        assert!((rotation_adjoint(&Rotation::identity(), &skew(&w0)) - skew(&w0)).norm() < TOL);
        for _ in 0..200 {
            let q = Rotation::random(&mut rng);
            let w = random_vec(&mut rng, 2.0);
            let ad = rotation_adjoint(&q, &skew(&w));
            assert!((unskew(&ad).unwrap() - q.apply(&w)).norm() < TOL);

            let q2 = Rotation::random(&mut rng);
            let lhs = rotation_adjoint(&(q * q2), &skew(&w));
            let rhs = rotation_adjoint(&q, &rotation_adjoint(&q2, &skew(&w)));
            assert!((lhs - rhs).norm() < TOL, "homomorphism");
        }
    }

    #[test]
    fn pose_composition_associative_and_invertible() {
        let mut rng = rng();
        for _ in 0..200 {
            let a = Pose::random(&mut rng, 2.0);
            let b = Pose::random(&mut rng, 2.0);
            let c = Pose::random(&mut rng, 2.0);
            let left = (a * b) * c;
            let right = a * (b * c);
            assert!((left.homogeneous() - right.homogeneous()).norm() < TOL);

            let id = a * a.inverse();
            assert!((id.homogeneous() - Mat4::identity()).norm() < TOL);
        }
    }

    #[test]
    fn body_coordinates_inverts_point_from_body() {
        let mut rng = rng();
        for _ in 0..100 {
            let p = Pose::random(&mut rng, 3.0);
            let v = random_vec(&mut rng, 4.0);
            let round = p.body_coordinates(&p.point_from_body(&v));
            assert!((round - v).norm() < TOL);
        }
    }

    #[test]
    fn orthonormalized_recovers_rotation_from_drift() {
        let mut rng = rng();
        for _ in 0..100 {
            let r = Rotation::random(&mut rng);
            let drifted = r.matrix() + Mat3::from_fn(|_, _| 1e-8 * sample_standard_normal(&mut rng));
            let fixed = Rotation(drifted).orthonormalized();
            assert!(fixed.orthonormality_defect() < 1e-14);
            assert!(fixed.angle_to(&r) < 1e-7);
        }
    }

    #[test]
    fn bearing_validation() {
        assert!(Bearing::new(Vec3::new(1.0, 0.0, 0.0)).is_ok());
        assert!(matches!(
            Bearing::new(Vec3::new(1.0, 1.0, 0.0)),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(Bearing::from_vector(Vec3::new(3.0, 4.0, 0.0)).is_ok());
        assert!(Bearing::from_vector(Vec3::zeros()).is_err());
    }
}
