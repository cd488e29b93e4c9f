//! The symmetry group `SE(3) x (SO(3) x MR(1))^n` of the visual SLAM problem,
//! its Lie algebra, the right actions on state and output spaces, the bearing
//! output map and the kinematic lift.
//!
//! Elements are written `(A, (Q_i, a_i))` with `A` a pose, `Q_i` rotations and
//! `a_i` positive reals (one pair per landmark). The group acts on the total
//! space of configurations `(P, p_1..p_n)` from the right; the product is
//! componentwise and the compatibility law reads
//! `act(X1, act(X2, xi)) == act(X2 * X1, xi)`.
//!
//! All functions are pure over immutable values.

use crate::error::{Error, Result};
use crate::geometry::{se3_exp, so3_exp, Bearing, Mat4, Pose, RigidVelocity, Rotation, Vec3};

/// Floor on robot-landmark separation guarding the divisions in the lift.
pub const RANGE_FLOOR: f64 = 1e-6;

/// Per-landmark group component `(Q_i, a_i)`.
#[derive(Clone, Copy, Debug)]
pub struct LandmarkFrame {
    pub rotation: Rotation,
    /// Range scaling, strictly positive.
    pub scale: f64,
}

impl LandmarkFrame {
    pub fn identity() -> Self {
        LandmarkFrame {
            rotation: Rotation::identity(),
            scale: 1.0,
        }
    }
}

/// Per-landmark algebra component: axis vector of the antisymmetric matrix
/// `W_i` plus the scalar rate `w_i`.
#[derive(Clone, Copy, Debug)]
pub struct LandmarkVelocity {
    pub rotation_rate: Vec3,
    pub scale_rate: f64,
}

impl LandmarkVelocity {
    pub fn zero() -> Self {
        LandmarkVelocity {
            rotation_rate: Vec3::zeros(),
            scale_rate: 0.0,
        }
    }
}

/// Group element `(A, (Q_i, a_i)_{i=1..n})`.
#[derive(Clone, Debug)]
pub struct GroupElement {
    pose: Pose,
    landmarks: Vec<LandmarkFrame>,
}

impl GroupElement {
    pub fn identity(n: usize) -> Self {
        GroupElement {
            pose: Pose::identity(),
            landmarks: vec![LandmarkFrame::identity(); n],
        }
    }

    pub fn from_parts(pose: Pose, landmarks: Vec<LandmarkFrame>) -> Self {
        debug_assert!(landmarks.iter().all(|l| l.scale > 0.0));
        GroupElement { pose, landmarks }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn landmarks(&self) -> &[LandmarkFrame] {
        &self.landmarks
    }

    pub fn landmark(&self, i: usize) -> &LandmarkFrame {
        &self.landmarks[i]
    }

    /// Componentwise product `(A1 A2, (Q1 Q2, a1 a2))`.
    pub fn multiply(&self, rhs: &GroupElement) -> Result<GroupElement> {
        if self.len() != rhs.len() {
            return Err(Error::DimensionMismatch {
                left: self.len(),
                right: rhs.len(),
            });
        }
        let landmarks = self
            .landmarks
            .iter()
            .zip(&rhs.landmarks)
            .map(|(l, r)| LandmarkFrame {
                rotation: l.rotation * r.rotation,
                scale: l.scale * r.scale,
            })
            .collect();
        Ok(GroupElement {
            pose: self.pose * rhs.pose,
            landmarks,
        })
    }

    /// Componentwise inverse `(A^-1, (Q_i^T, 1/a_i))`.
    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            pose: self.pose.inverse(),
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkFrame {
                    rotation: l.rotation.transpose(),
                    scale: 1.0 / l.scale,
                })
                .collect(),
        }
    }

    /// Adjoint action on the algebra, componentwise: `Ad_A` on the pose part,
    /// `W -> Q W Q^T` (axis `w -> Q w`) per landmark, identity on scalars.
    pub fn adjoint(&self, v: &AlgebraElement) -> Result<AlgebraElement> {
        if self.len() != v.landmarks.len() {
            return Err(Error::DimensionMismatch {
                left: self.len(),
                right: v.landmarks.len(),
            });
        }
        let r = self.pose.rotation();
        let rotated_angular = r.apply(&v.velocity.angular);
        let velocity = RigidVelocity::new(
            rotated_angular,
            self.pose.translation().cross(&rotated_angular) + r.apply(&v.velocity.linear),
        );
        let landmarks = self
            .landmarks
            .iter()
            .zip(&v.landmarks)
            .map(|(l, w)| LandmarkVelocity {
                rotation_rate: l.rotation.apply(&w.rotation_rate),
                scale_rate: w.scale_rate,
            })
            .collect();
        Ok(AlgebraElement {
            velocity,
            landmarks,
        })
    }

    /// Re-orthonormalizes every rotation component.
    pub fn orthonormalized(&self) -> GroupElement {
        GroupElement {
            pose: self.pose.orthonormalized(),
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkFrame {
                    rotation: l.rotation.orthonormalized(),
                    scale: l.scale,
                })
                .collect(),
        }
    }
}

/// Algebra element `(U, (W_i, w_i)_{i=1..n})`.
#[derive(Clone, Debug)]
pub struct AlgebraElement {
    pub velocity: RigidVelocity,
    pub landmarks: Vec<LandmarkVelocity>,
}

impl AlgebraElement {
    pub fn zero(n: usize) -> Self {
        AlgebraElement {
            velocity: RigidVelocity::zero(),
            landmarks: vec![LandmarkVelocity::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Componentwise group exponential: SE(3) and SO(3) exponentials plus the
    /// scalar exponential on the multiplicative reals. Exact for the product
    /// group since factors do not interact.
    pub fn exp(&self, dt: f64) -> GroupElement {
        GroupElement {
            pose: se3_exp(&self.velocity, dt),
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkFrame {
                    rotation: so3_exp(&l.rotation_rate, dt),
                    scale: (l.scale_rate * dt).exp(),
                })
                .collect(),
        }
    }

    /// Lie bracket, componentwise; the scalar factor is abelian.
    pub fn bracket(&self, rhs: &AlgebraElement) -> AlgebraElement {
        debug_assert_eq!(self.len(), rhs.len());
        let velocity = RigidVelocity::new(
            self.velocity.angular.cross(&rhs.velocity.angular),
            self.velocity.angular.cross(&rhs.velocity.linear)
                - rhs.velocity.angular.cross(&self.velocity.linear),
        );
        let landmarks = self
            .landmarks
            .iter()
            .zip(&rhs.landmarks)
            .map(|(a, b)| LandmarkVelocity {
                rotation_rate: a.rotation_rate.cross(&b.rotation_rate),
                scale_rate: 0.0,
            })
            .collect();
        AlgebraElement {
            velocity,
            landmarks,
        }
    }

    pub fn scaled(&self, s: f64) -> AlgebraElement {
        AlgebraElement {
            velocity: self.velocity * s,
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkVelocity {
                    rotation_rate: l.rotation_rate * s,
                    scale_rate: l.scale_rate * s,
                })
                .collect(),
        }
    }

    pub fn add(&self, rhs: &AlgebraElement) -> AlgebraElement {
        debug_assert_eq!(self.len(), rhs.len());
        AlgebraElement {
            velocity: self.velocity + rhs.velocity,
            landmarks: self
                .landmarks
                .iter()
                .zip(&rhs.landmarks)
                .map(|(a, b)| LandmarkVelocity {
                    rotation_rate: a.rotation_rate + b.rotation_rate,
                    scale_rate: a.scale_rate + b.scale_rate,
                })
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &AlgebraElement) -> AlgebraElement {
        self.add(&rhs.scaled(-1.0))
    }
}

/// Configuration `(P, p_1..p_n)` on the total space: robot pose plus landmark
/// positions, excluding robot-landmark co-location.
#[derive(Clone, Debug)]
pub struct TotalState {
    pose: Pose,
    landmarks: Vec<Vec3>,
}

impl TotalState {
    pub fn new(pose: Pose, landmarks: Vec<Vec3>) -> Result<Self> {
        for (i, p) in landmarks.iter().enumerate() {
            let range = (p - pose.translation()).norm();
            if !(range > RANGE_FLOOR) {
                return Err(Error::CoLocated { index: i, range });
            }
        }
        Ok(TotalState { pose, landmarks })
    }

    pub(crate) fn from_parts_unchecked(pose: Pose, landmarks: Vec<Vec3>) -> Self {
        TotalState { pose, landmarks }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn landmarks(&self) -> &[Vec3] {
        &self.landmarks
    }

    pub fn landmark(&self, i: usize) -> &Vec3 {
        &self.landmarks[i]
    }

    /// Ego-centric coordinates `R_P^T (p_i - x_P)` of landmark `i`.
    pub fn body_coordinates(&self, i: usize) -> Vec3 {
        self.pose.body_coordinates(&self.landmarks[i])
    }

    /// Robot-landmark distances.
    pub fn ranges(&self) -> Vec<f64> {
        self.landmarks
            .iter()
            .map(|p| (p - self.pose.translation()).norm())
            .collect()
    }

    /// Rigid change of the reference frame: `(S^-1 P, R_S^T (p_i - x_S))`.
    /// Ego-centric coordinates, and hence the output, are unchanged.
    pub fn frame_change(&self, s: &Pose) -> TotalState {
        TotalState {
            pose: s.inverse() * self.pose,
            landmarks: self
                .landmarks
                .iter()
                .map(|p| s.body_coordinates(p))
                .collect(),
        }
    }
}

/// Tuple of unit bearings, one per landmark.
#[derive(Clone, Debug)]
pub struct OutputVector(Vec<Bearing>);

impl OutputVector {
    pub fn new(bearings: Vec<Bearing>) -> Self {
        OutputVector(bearings)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bearings(&self) -> &[Bearing] {
        &self.0
    }

    pub fn get(&self, i: usize) -> &Bearing {
        &self.0[i]
    }
}

/// Right action of the group on the total space:
/// `(A, (Q_i, a_i)) . (P, p_i) = (PA, a_i^-1 R_PA Q_i^T R_P^T (p_i - x_P) + x_PA)`.
pub fn action_state(x: &GroupElement, state: &TotalState) -> Result<TotalState> {
    if x.len() != state.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: state.len(),
        });
    }
    let new_pose = state.pose * x.pose;
    let landmarks = x
        .landmarks
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let q = state.body_coordinates(i);
            new_pose.point_from_body(&(frame.rotation.apply_transpose(&q) / frame.scale))
        })
        .collect();
    Ok(TotalState {
        pose: new_pose,
        landmarks,
    })
}

/// Right action on the output space: each bearing is rotated by `Q_i^T`.
pub fn action_output(x: &GroupElement, y: &OutputVector) -> Result<OutputVector> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(OutputVector(
        x.landmarks
            .iter()
            .zip(y.bearings())
            .map(|(frame, b)| b.rotated(&frame.rotation.transpose()))
            .collect(),
    ))
}

/// Bearing output map: `y_i = R_P^T (p_i - x_P) / ||p_i - x_P||`.
///
/// Invariant under rigid changes of the reference frame, and equivariant:
/// `output(action_state(X, xi)) == action_output(X, output(xi))`.
pub fn output(state: &TotalState) -> Result<OutputVector> {
    let mut bearings = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let q = state.body_coordinates(i);
        let range = q.norm();
        if !(range > RANGE_FLOOR) {
            return Err(Error::CoLocated { index: i, range });
        }
        bearings.push(Bearing::from_unit_unchecked(q / range));
    }
    Ok(OutputVector(bearings))
}

/// Kinematic lift onto the algebra: the unique element whose action velocity
/// reproduces the system flow `(PU, 0)`. With `q_i = R_P^T (p_i - x_P)`:
/// `W_i = skew(Omega + q_i x V / |q_i|^2)` and `w_i = q_i^T V / |q_i|^2`.
pub fn lift(state: &TotalState, u: &RigidVelocity) -> Result<AlgebraElement> {
    let mut landmarks = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let q = state.body_coordinates(i);
        let range_sq = q.norm_squared();
        if !(range_sq.sqrt() > RANGE_FLOOR) {
            return Err(Error::CoLocated {
                index: i,
                range: range_sq.sqrt(),
            });
        }
        landmarks.push(LandmarkVelocity {
            rotation_rate: u.angular + q.cross(&u.linear) / range_sq,
            scale_rate: q.dot(&u.linear) / range_sq,
        });
    }
    Ok(AlgebraElement {
        velocity: *u,
        landmarks,
    })
}

/// Central finite-difference check of the lift condition: the derivative of
/// `s -> action_state(exp(s * lift(xi, U)), xi)` at `s = 0` must equal the
/// system flow `(PU, 0)`. Returns the largest componentwise defect; it decays
/// as O(step^2).
pub fn lift_condition_defect(state: &TotalState, u: &RigidVelocity, step: f64) -> Result<f64> {
    let lam = lift(state, u)?;
    let plus = action_state(&lam.exp(step), state)?;
    let minus = action_state(&lam.exp(-step), state)?;

    let fd_pose = (plus.pose.homogeneous() - minus.pose.homogeneous()) / (2.0 * step);
    let flow_pose: Mat4 = state.pose.homogeneous() * u.algebra_matrix();
    let mut defect = (fd_pose - flow_pose).amax();

    for i in 0..state.len() {
        let fd_landmark = (plus.landmarks[i] - minus.landmarks[i]) / (2.0 * step);
        defect = defect.max(fd_landmark.amax());
    }
    Ok(defect)
}
