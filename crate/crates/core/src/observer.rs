//! Landmark observer on the symmetry group: output errors, barrier function,
//! landmark innovations, least-squares pose innovation, on-group integration
//! with step rejection, landmark lifecycle and diagnostics.
//!
//! The observer state is a group element `X = (A, (Q_i, a_i))` together with a
//! fixed origin configuration; the state estimate is the action of `X` on the
//! origin. Integration follows `dX/dt = X L - D X` where `L` is the kinematic
//! lift evaluated at the current estimate and `D` is the innovation, built
//! from the measured bearings. Steps are taken with a group retraction
//! (componentwise exponential), explicit Euler by default or a Munthe-Kaas
//! style fourth-order Runge-Kutta when configured.

use nalgebra::{Cholesky, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, Bearing, Mat3, Pose, RigidVelocity, Rotation, Vec3};
use crate::vslam_group::{
    action_state, output, AlgebraElement, GroupElement, LandmarkFrame, LandmarkVelocity,
    TotalState,
};

/// Guard on `1 + delta . y0`; closer to antipodal than this is treated as
/// membership of the exception set rather than allowed to overflow.
pub const ANTIPODE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

/// Gains and numerical guards for the observer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverConfig {
    /// Bearing gain `k` (applied uniformly to every landmark).
    pub bearing_gain: f64,
    /// Depth gain `alpha`.
    pub depth_gain: f64,
    /// Weight `kappa` in the pose least squares.
    pub pose_weight: f64,
    /// Assumed lower bound on true ranges (the barrier threshold).
    pub range_floor: f64,
    /// Gain `k0` entering the barrier floor `epsilon = min(k0, 1/2) * range_floor`.
    pub barrier_gain: f64,
    /// Nominal integration step in seconds.
    pub dt: f64,
    /// Condition-number gate for the pose least squares.
    pub condition_limit: f64,
    /// Depth assigned to newly added landmarks when none is supplied.
    pub initial_depth: f64,
    pub integrator: Integrator,
    /// Largest admissible per-substep ratio of any estimated range; larger
    /// jumps force a retry with a halved step.
    pub max_step_growth: f64,
    /// Number of step halvings before giving up.
    pub max_step_retries: u32,
}

impl ObserverConfig {
    /// Gains used for the circling-vehicle simulation (k = 5, alpha = 500).
    pub fn simulation() -> Self {
        ObserverConfig {
            bearing_gain: 5.0,
            depth_gain: 500.0,
            pose_weight: 1.0,
            range_floor: 0.1,
            barrier_gain: 1.0,
            dt: 0.033,
            condition_limit: 1e8,
            initial_depth: 10.0,
            integrator: Integrator::Euler,
            max_step_growth: 10.0,
            max_step_retries: 8,
        }
    }

    /// Gains used for recorded-flight replay (k = 5, alpha = 0.5).
    pub fn replay() -> Self {
        ObserverConfig {
            depth_gain: 0.5,
            ..Self::simulation()
        }
    }

    /// Barrier floor `epsilon = min(k0, 1/2) * range_floor`.
    pub fn epsilon(&self) -> f64 {
        self.barrier_gain.min(0.5) * self.range_floor
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bearing_gain", self.bearing_gain),
            ("depth_gain", self.depth_gain),
            ("pose_weight", self.pose_weight),
            ("range_floor", self.range_floor),
            ("barrier_gain", self.barrier_gain),
            ("dt", self.dt),
            ("condition_limit", self.condition_limit),
            ("initial_depth", self.initial_depth),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.max_step_growth > 1.0) {
            return Err(Error::InvalidConfig(
                "max_step_growth must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

/// Innovation `(Delta, (Gamma_i, gamma_i))` in the Lie algebra. The landmark
/// frame components are stored as axis vectors of the antisymmetric matrices.
#[derive(Clone, Debug)]
pub struct Innovation {
    pub pose: RigidVelocity,
    pub landmarks: Vec<LandmarkInnovation>,
}

#[derive(Clone, Copy, Debug)]
pub struct LandmarkInnovation {
    /// Axis vector of `Gamma_i`.
    pub frame_axis: Vec3,
    /// Depth innovation `gamma_i`.
    pub scale: f64,
}

impl LandmarkInnovation {
    pub fn zero() -> Self {
        LandmarkInnovation {
            frame_axis: Vec3::zeros(),
            scale: 0.0,
        }
    }
}

impl Innovation {
    pub fn zero(n: usize) -> Self {
        Innovation {
            pose: RigidVelocity::zero(),
            landmarks: vec![LandmarkInnovation::zero(); n],
        }
    }

    pub fn as_algebra(&self) -> AlgebraElement {
        AlgebraElement {
            velocity: self.pose,
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkVelocity {
                    rotation_rate: l.frame_axis,
                    scale_rate: l.scale,
                })
                .collect(),
        }
    }

    pub fn max_frame_norm(&self) -> f64 {
        self.landmarks
            .iter()
            .map(|l| l.frame_axis.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_scale_abs(&self) -> f64 {
        self.landmarks
            .iter()
            .map(|l| l.scale.abs())
            .fold(0.0, f64::max)
    }
}

/// Outcome of the pose least squares.
#[derive(Clone, Copy, Debug)]
pub enum WlsOutcome {
    Solved { condition: f64 },
    Degenerate { condition: f64, reason: &'static str },
}

impl WlsOutcome {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, WlsOutcome::Degenerate { .. })
    }

    pub fn condition(&self) -> f64 {
        match self {
            WlsOutcome::Solved { condition } | WlsOutcome::Degenerate { condition, .. } => {
                *condition
            }
        }
    }
}

/// Per-landmark diagnostics emitted by a step. Storage and range ratio need
/// ground truth and are filled in by the harness when it is available.
#[derive(Clone, Debug)]
pub struct LandmarkDiagnostics {
    pub id: u64,
    /// Output error `delta_i`.
    pub output_error: Bearing,
    /// Angle between `delta_i` and the origin bearing, in radians.
    pub error_angle: f64,
    /// Estimated range `r_hat_i`.
    pub range: f64,
    pub storage: Option<f64>,
    pub range_ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    /// One entry per landmark, `None` where no measurement was supplied.
    pub landmarks: Vec<Option<LandmarkDiagnostics>>,
    pub wls: WlsOutcome,
    pub rejected_substeps: u32,
    pub accepted_substeps: u32,
}

/// Observer state: group element, origin configuration and the id registry.
#[derive(Clone, Debug)]
pub struct ObserverState {
    x_hat: GroupElement,
    origin: TotalState,
    ids: Vec<u64>,
    origin_bearings: Vec<Bearing>,
    origin_ranges: Vec<f64>,
    wls_degraded: bool,
}

impl ObserverState {
    /// Starts at the group identity over the given origin configuration.
    pub fn new(origin: TotalState, ids: Vec<u64>) -> Result<Self> {
        if origin.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                left: origin.len(),
                right: ids.len(),
            });
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::DuplicateId(*id));
            }
        }
        let origin_bearings = output(&origin)?.bearings().to_vec();
        let origin_ranges = origin.ranges();
        Ok(ObserverState {
            x_hat: GroupElement::identity(origin.len()),
            origin,
            ids,
            origin_bearings,
            origin_ranges,
            wls_degraded: false,
        })
    }

    /// Empty state with the given origin pose; landmarks arrive via
    /// [`ObserverState::add_landmark`].
    pub fn empty(origin_pose: Pose) -> Self {
        ObserverState {
            x_hat: GroupElement::identity(0),
            origin: TotalState::from_parts_unchecked(origin_pose, Vec::new()),
            ids: Vec::new(),
            origin_bearings: Vec::new(),
            origin_ranges: Vec::new(),
            wls_degraded: false,
        }
    }

    pub fn landmark_count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }

    pub fn x_hat(&self) -> &GroupElement {
        &self.x_hat
    }

    pub fn origin(&self) -> &TotalState {
        &self.origin
    }

    pub fn origin_bearings(&self) -> &[Bearing] {
        &self.origin_bearings
    }

    pub fn origin_ranges(&self) -> &[f64] {
        &self.origin_ranges
    }

    /// Replaces the landmark components of the group element (used to start
    /// from perturbed initial conditions in basin studies).
    pub fn set_landmark_frames(&mut self, frames: Vec<LandmarkFrame>) -> Result<()> {
        if frames.len() != self.landmark_count() {
            return Err(Error::DimensionMismatch {
                left: frames.len(),
                right: self.landmark_count(),
            });
        }
        for f in &frames {
            if !(f.scale > 0.0) {
                return Err(Error::InvalidConfig("landmark scale must be positive".into()));
            }
        }
        self.x_hat = GroupElement::from_parts(*self.x_hat.pose(), frames);
        Ok(())
    }

    /// State estimate `(P_hat, p_hat_i)`: the action of the group element on
    /// the origin configuration.
    pub fn state_estimate(&self) -> TotalState {
        action_state(&self.x_hat, &self.origin).expect("observer state invariants hold")
    }

    /// Estimated ranges `r_hat_i = origin_range_i / a_hat_i`; equal to
    /// `||p_hat_i - x_Phat||` of the state estimate.
    pub fn estimated_ranges(&self) -> Vec<f64> {
        self.x_hat
            .landmarks()
            .iter()
            .zip(&self.origin_ranges)
            .map(|(frame, r0)| r0 / frame.scale)
            .collect()
    }

    /// Estimated bearings `y_hat_i = Q_hat_i^T y0_i`.
    pub fn estimated_bearings(&self) -> Vec<Bearing> {
        self.x_hat
            .landmarks()
            .iter()
            .zip(&self.origin_bearings)
            .map(|(frame, y0)| y0.rotated(&frame.rotation.transpose()))
            .collect()
    }

    /// Appends a landmark initialized so that the state estimate has exactly
    /// the given first bearing and depth: origin point `x0 + depth * R0 * y`,
    /// frame `(I, 1)`. The construction is independent of the current pose
    /// component.
    pub fn add_landmark(&mut self, id: u64, bearing: &Bearing, depth: f64, cfg: &ObserverConfig) -> Result<()> {
        if self.ids.contains(&id) {
            return Err(Error::DuplicateId(id));
        }
        if !(depth >= cfg.range_floor) {
            return Err(Error::DepthBelowFloor {
                depth,
                floor: cfg.range_floor,
            });
        }
        let point = self.origin.pose().point_from_body(&(bearing.direction() * depth));
        let mut landmarks = self.origin.landmarks().to_vec();
        landmarks.push(point);
        self.origin = TotalState::from_parts_unchecked(*self.origin.pose(), landmarks);

        let mut frames = self.x_hat.landmarks().to_vec();
        frames.push(LandmarkFrame::identity());
        self.x_hat = GroupElement::from_parts(*self.x_hat.pose(), frames);

        self.ids.push(id);
        self.origin_bearings.push(*bearing);
        self.origin_ranges.push(depth);
        Ok(())
    }

    /// Removes a landmark and compacts the registry; other landmarks keep
    /// their components untouched.
    pub fn remove_landmark(&mut self, id: u64) -> Result<()> {
        let index = self.index_of(id).ok_or(Error::UnknownId(id))?;
        self.ids.remove(index);
        self.origin_bearings.remove(index);
        self.origin_ranges.remove(index);

        let mut frames = self.x_hat.landmarks().to_vec();
        frames.remove(index);
        self.x_hat = GroupElement::from_parts(*self.x_hat.pose(), frames);

        let mut landmarks = self.origin.landmarks().to_vec();
        landmarks.remove(index);
        self.origin = TotalState::from_parts_unchecked(*self.origin.pose(), landmarks);
        Ok(())
    }

    /// Diagnostics for the current state against a set of measurements,
    /// without stepping.
    pub fn diagnose(&self, measurements: &[Option<Bearing>]) -> Result<Vec<Option<LandmarkDiagnostics>>> {
        if measurements.len() != self.landmark_count() {
            return Err(Error::DimensionMismatch {
                left: measurements.len(),
                right: self.landmark_count(),
            });
        }
        let ranges = self.estimated_ranges();
        Ok(measurements
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.map(|y| {
                    let delta = y.rotated(&self.x_hat.landmark(i).rotation);
                    LandmarkDiagnostics {
                        id: self.ids[i],
                        error_angle: delta.angle_to(&self.origin_bearings[i]),
                        output_error: delta,
                        range: ranges[i],
                        storage: None,
                        range_ratio: None,
                    }
                })
            })
            .collect())
    }

    /// One integration step of duration `cfg.dt` with the measurements held
    /// constant over the step. Measurements are matched by index; `None`
    /// entries contribute zero innovation for that landmark. Returns the
    /// innovation evaluated at the pre-step state together with step
    /// diagnostics. Steps that would push an estimated range to the barrier
    /// floor (or move it by more than the growth guard) are retried with
    /// halved substeps, up to `cfg.max_step_retries` halvings.
    pub fn step(
        &mut self,
        u: &RigidVelocity,
        measurements: &[Option<Bearing>],
        cfg: &ObserverConfig,
    ) -> Result<(Innovation, StepDiagnostics)> {
        if measurements.len() != self.landmark_count() {
            return Err(Error::DimensionMismatch {
                left: measurements.len(),
                right: self.landmark_count(),
            });
        }
        self.step_sampled(u, &|_| Ok(measurements.to_vec()), cfg)
    }

    /// Like [`ObserverState::step`] but queries measurements at intermediate
    /// stage times (`offset` seconds past the step start). Lets a simulation
    /// harness integrate the true closed loop without the zero-order-hold
    /// error of sampled measurements.
    pub fn step_sampled(
        &mut self,
        u: &RigidVelocity,
        measurements: MeasurementFn<'_>,
        cfg: &ObserverConfig,
    ) -> Result<(Innovation, StepDiagnostics)> {
        let initial = measurements(0.0)?;
        if initial.len() != self.landmark_count() {
            return Err(Error::DimensionMismatch {
                left: initial.len(),
                right: self.landmark_count(),
            });
        }
        if !u.is_finite() {
            return Err(Error::NonFinite {
                context: "velocity input",
            });
        }
        for m in initial.iter().flatten() {
            if !m.direction().iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite {
                    context: "bearing measurement",
                });
            }
        }
        let epsilon = cfg.epsilon();
        for r in self.estimated_ranges() {
            if !(r > epsilon) {
                return Err(Error::BarrierViolated { range: r, epsilon });
            }
        }

        let (innovation, wls) = self.innovation_at(&self.x_hat, u, &initial, cfg)?;
        let diagnostics = self.diagnose(&initial)?;

        let mut counters = StepCounters::default();
        self.advance(u, measurements, cfg, cfg.dt, 0.0, 0, &mut counters)?;
        self.wls_degraded = wls.is_degenerate();

        Ok((
            innovation,
            StepDiagnostics {
                landmarks: diagnostics,
                wls,
                rejected_substeps: counters.rejected,
                accepted_substeps: counters.accepted,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        u: &RigidVelocity,
        measurements: MeasurementFn<'_>,
        cfg: &ObserverConfig,
        dt: f64,
        offset: f64,
        depth: u32,
        counters: &mut StepCounters,
    ) -> Result<()> {
        match self.try_integrate(u, measurements, cfg, dt, offset)? {
            Some(candidate) => {
                self.x_hat = candidate;
                counters.accepted += 1;
                Ok(())
            }
            None => {
                counters.rejected += 1;
                if depth >= cfg.max_step_retries {
                    return Err(Error::StepFailed {
                        retries: depth,
                        dt,
                    });
                }
                let half = dt / 2.0;
                self.advance(u, measurements, cfg, half, offset, depth + 1, counters)?;
                self.advance(u, measurements, cfg, half, offset + half, depth + 1, counters)
            }
        }
    }

    /// Attempts one substep; `Ok(None)` signals rejection (barrier reached or
    /// growth guard tripped), to be retried with a smaller step.
    fn try_integrate(
        &self,
        u: &RigidVelocity,
        measurements: MeasurementFn<'_>,
        cfg: &ObserverConfig,
        dt: f64,
        offset: f64,
    ) -> Result<Option<GroupElement>> {
        let stage = |x: &GroupElement, stage_offset: f64| -> Result<Option<AlgebraElement>> {
            let y = measurements(stage_offset)?;
            match self.field(x, u, &y, cfg) {
                Ok(f) => Ok(Some(f)),
                Err(Error::BarrierViolated { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };

        let candidate = match cfg.integrator {
            Integrator::Euler => {
                let Some(f) = stage(&self.x_hat, offset)? else {
                    return Ok(None);
                };
                f.exp(dt).multiply(&self.x_hat)?
            }
            Integrator::Rk4 => {
                // Munthe-Kaas RK4: classical tableau in the algebra with
                // truncated dexpinv corrections, then one retraction.
                let Some(f1) = stage(&self.x_hat, offset)? else {
                    return Ok(None);
                };
                let k1 = f1.scaled(dt);

                let x2 = k1.scaled(0.5).exp(1.0).multiply(&self.x_hat)?;
                let Some(f2) = stage(&x2, offset + dt / 2.0)? else {
                    return Ok(None);
                };
                let k2 = dexpinv(&k1.scaled(0.5), &f2).scaled(dt);

                let x3 = k2.scaled(0.5).exp(1.0).multiply(&self.x_hat)?;
                let Some(f3) = stage(&x3, offset + dt / 2.0)? else {
                    return Ok(None);
                };
                let k3 = dexpinv(&k2.scaled(0.5), &f3).scaled(dt);

                let x4 = k3.exp(1.0).multiply(&self.x_hat)?;
                let Some(f4) = stage(&x4, offset + dt)? else {
                    return Ok(None);
                };
                let k4 = dexpinv(&k3, &f4).scaled(dt);

                let combined = k1
                    .add(&k2.scaled(2.0))
                    .add(&k3.scaled(2.0))
                    .add(&k4)
                    .scaled(1.0 / 6.0);
                combined.exp(1.0).multiply(&self.x_hat)?
            }
        };
        let candidate = candidate.orthonormalized();

        let epsilon = cfg.epsilon();
        let max_log_growth = cfg.max_step_growth.ln();
        for (i, frame) in candidate.landmarks().iter().enumerate() {
            let range = self.origin_ranges[i] / frame.scale;
            if !range.is_finite() || !(range > epsilon) {
                return Ok(None);
            }
            let previous = self.origin_ranges[i] / self.x_hat.landmark(i).scale;
            if (range / previous).ln().abs() > max_log_growth {
                return Ok(None);
            }
        }
        if !candidate
            .pose()
            .translation()
            .iter()
            .all(|c| c.is_finite())
        {
            return Ok(None);
        }
        Ok(Some(candidate))
    }

    /// Right-trivialized vector field `F(X) = Ad_X(L) - D` where `L` is the
    /// lift at the current estimate and `D` the innovation.
    fn field(
        &self,
        x_hat: &GroupElement,
        u: &RigidVelocity,
        measurements: &[Option<Bearing>],
        cfg: &ObserverConfig,
    ) -> Result<AlgebraElement> {
        let (innovation, _) = self.innovation_at(x_hat, u, measurements, cfg)?;
        let lam = self.lift_at(x_hat, u);
        Ok(x_hat.adjoint(&lam)?.sub(&innovation.as_algebra()))
    }

    /// Lift evaluated at the estimate defined by `x_hat` over the cached
    /// origin data: `q_hat_i = r_hat_i * Q_hat_i^T y0_i`.
    fn lift_at(&self, x_hat: &GroupElement, u: &RigidVelocity) -> AlgebraElement {
        let landmarks = x_hat
            .landmarks()
            .iter()
            .enumerate()
            .map(|(i, frame)| {
                let r_hat = self.origin_ranges[i] / frame.scale;
                let q = frame
                    .rotation
                    .apply_transpose(&self.origin_bearings[i].direction())
                    * r_hat;
                let r_sq = r_hat * r_hat;
                LandmarkVelocity {
                    rotation_rate: u.angular + q.cross(&u.linear) / r_sq,
                    scale_rate: q.dot(&u.linear) / r_sq,
                }
            })
            .collect();
        AlgebraElement {
            velocity: *u,
            landmarks,
        }
    }

    fn innovation_at(
        &self,
        x_hat: &GroupElement,
        u: &RigidVelocity,
        measurements: &[Option<Bearing>],
        cfg: &ObserverConfig,
    ) -> Result<(Innovation, WlsOutcome)> {
        let mut landmarks = Vec::with_capacity(self.landmark_count());
        for (i, m) in measurements.iter().enumerate() {
            match m {
                Some(y) => {
                    let frame = x_hat.landmark(i);
                    let delta = y.rotated(&frame.rotation);
                    let r_hat = self.origin_ranges[i] / frame.scale;
                    landmarks.push(landmark_innovation(
                        &delta,
                        &self.origin_bearings[i],
                        r_hat,
                        &frame.rotation,
                        &u.linear,
                        i,
                        cfg,
                    )?);
                }
                None => landmarks.push(LandmarkInnovation::zero()),
            }
        }
        let (pose, wls) = pose_innovation_at(
            x_hat,
            &self.origin_bearings,
            &self.origin_ranges,
            self.wls_degraded,
            &landmarks,
            cfg,
        );
        Ok((Innovation { pose, landmarks }, wls))
    }
}

/// Measurement source for a step: maps the offset (seconds past the step
/// start) to per-landmark optional bearings.
pub type MeasurementFn<'a> = &'a dyn Fn(f64) -> Result<Vec<Option<Bearing>>>;

#[derive(Default)]
struct StepCounters {
    accepted: u32,
    rejected: u32,
}

/// Truncated `dexp^{-1}_u(v) = v - [u,v]/2 + [u,[u,v]]/12`; sufficient for a
/// fourth-order method since `u = O(dt)`.
fn dexpinv(u: &AlgebraElement, v: &AlgebraElement) -> AlgebraElement {
    let uv = u.bracket(v);
    let uuv = u.bracket(&uv);
    v.sub(&uv.scaled(0.5)).add(&uuv.scaled(1.0 / 12.0))
}

/// Output errors `delta_i = Q_hat_i y_i` (the output action of the inverse
/// group element). Norms are preserved.
pub fn output_error(x_hat: &GroupElement, y: &crate::vslam_group::OutputVector) -> Result<Vec<Bearing>> {
    if x_hat.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x_hat.len(),
            right: y.len(),
        });
    }
    Ok(x_hat
        .landmarks()
        .iter()
        .zip(y.bearings())
        .map(|(frame, b)| b.rotated(&frame.rotation))
        .collect())
}

/// Barrier function: zero at or above the range floor, strictly positive
/// below it and unbounded as the range descends to `epsilon`.
///
/// `(r - floor)^2 / ((floor - eps)^2 (r - eps))` on `(eps, floor)`.
pub fn barrier(range: f64, cfg: &ObserverConfig) -> Result<f64> {
    let epsilon = cfg.epsilon();
    if !(range > epsilon) {
        return Err(Error::BarrierViolated { range, epsilon });
    }
    if range >= cfg.range_floor {
        return Ok(0.0);
    }
    let num = (range - cfg.range_floor).powi(2);
    let den = (cfg.range_floor - epsilon).powi(2) * (range - epsilon);
    Ok(num / den)
}

/// Landmark innovation `(Gamma_i, gamma_i)`; `Gamma_i` is returned as the
/// axis vector of the antisymmetric matrix `c * (delta x y0)^x`.
///
/// Errors with the exception-set condition when `delta` is antipodal to the
/// origin bearing within [`ANTIPODE_TOL`].
pub fn landmark_innovation(
    delta: &Bearing,
    origin_bearing: &Bearing,
    r_hat: f64,
    frame: &Rotation,
    linear_velocity: &Vec3,
    index: usize,
    cfg: &ObserverConfig,
) -> Result<LandmarkInnovation> {
    let c = delta.dot(origin_bearing);
    if 1.0 + c <= ANTIPODE_TOL {
        return Err(Error::Antipodal { index });
    }
    let beta = barrier(r_hat, cfg)?;
    let qv = frame.apply(linear_velocity);

    let coefficient = delta.dot(&qv) / (2.0 * r_hat)
        - (delta.direction() + origin_bearing.direction()).dot(&qv) / (r_hat * (1.0 + c))
        - cfg.bearing_gain;
    let frame_axis = coefficient * delta.direction().cross(&origin_bearing.direction());

    // y0^T (I - delta delta^T) qv expanded.
    let projected = origin_bearing.dot(&qv) - c * delta.dot(&qv);
    let scale = cfg.depth_gain / (r_hat * r_hat)
        * ((1.0 - c) / (2.0 * (1.0 + c)) * delta.dot(&qv) - projected / (1.0 + c).powi(2))
        + (origin_bearing.direction() - delta.direction()).dot(&qv) / r_hat
        + cfg.depth_gain / r_hat * beta;

    Ok(LandmarkInnovation { frame_axis, scale })
}

/// Pose innovation: solves the weighted least squares for the body-frame
/// twist that minimizes the summed squared landmark velocities induced by the
/// innovations, then maps it through `Ad` of the pose component. Falls back
/// to zero with a degeneracy report when the normal matrix fails the
/// condition gate (with hysteresis factor 2) or the constellation is too
/// small.
pub fn pose_innovation(
    state: &ObserverState,
    innovations: &[LandmarkInnovation],
    cfg: &ObserverConfig,
) -> (RigidVelocity, WlsOutcome) {
    pose_innovation_at(
        &state.x_hat,
        &state.origin_bearings,
        &state.origin_ranges,
        state.wls_degraded,
        innovations,
        cfg,
    )
}

fn pose_innovation_at(
    x_hat: &GroupElement,
    origin_bearings: &[Bearing],
    origin_ranges: &[f64],
    degraded: bool,
    innovations: &[LandmarkInnovation],
    cfg: &ObserverConfig,
) -> (RigidVelocity, WlsOutcome) {
    let n = x_hat.len();
    debug_assert_eq!(innovations.len(), n);
    if n == 0 {
        return (
            RigidVelocity::zero(),
            WlsOutcome::Degenerate {
                condition: f64::INFINITY,
                reason: "no landmarks",
            },
        );
    }

    // Normal equations of min sum kappa ||q^x w - v + b_i||^2 over (w, v):
    // each design row is [-q^x, I], so A^T A has blocks [-q^x q^x, q^x; -q^x, I]
    // and A^T b has blocks [q^x b; b], with b_i = gamma q + Ad_{Q^T}(Gamma) q.
    let mut top_left = Mat3::zeros();
    let mut top_right = Mat3::zeros();
    let mut rhs_top = Vec3::zeros();
    let mut rhs_bottom = Vec3::zeros();
    let mut bottom_right = Mat3::zeros();
    let kappa = cfg.pose_weight;

    for i in 0..n {
        let frame = x_hat.landmark(i);
        let q = frame
            .rotation
            .apply_transpose(&origin_bearings[i].direction())
            * (origin_ranges[i] / frame.scale);
        let s = skew(&q);
        top_left += kappa * (-s * s);
        top_right += kappa * s;
        bottom_right += kappa * Mat3::identity();

        let b = innovations[i].scale * q
            + frame
                .rotation
                .apply_transpose(&innovations[i].frame_axis)
                .cross(&q);
        rhs_top += kappa * (s * b);
        rhs_bottom += kappa * b;
    }

    let mut normal = Matrix6::<f64>::zeros();
    normal.fixed_view_mut::<3, 3>(0, 0).copy_from(&top_left);
    normal.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
    normal
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-top_right));
    normal
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&bottom_right);

    let eigen = SymmetricEigen::new(normal);
    let lambda_max = eigen.eigenvalues.amax();
    let lambda_min = eigen.eigenvalues.min();
    let condition = if lambda_min <= lambda_max * 1e-15 {
        f64::INFINITY
    } else {
        lambda_max / lambda_min
    };
    let limit = if degraded {
        cfg.condition_limit / 2.0
    } else {
        cfg.condition_limit
    };
    if !(condition < limit) {
        return (
            RigidVelocity::zero(),
            WlsOutcome::Degenerate {
                condition,
                reason: "normal matrix fails the condition gate",
            },
        );
    }

    let mut rhs = Vector6::<f64>::zeros();
    rhs.fixed_view_mut::<3, 1>(0, 0).copy_from(&rhs_top);
    rhs.fixed_view_mut::<3, 1>(3, 0).copy_from(&rhs_bottom);

    let Some(chol) = Cholesky::new(normal) else {
        return (
            RigidVelocity::zero(),
            WlsOutcome::Degenerate {
                condition,
                reason: "normal matrix is not positive definite",
            },
        );
    };
    let z = chol.solve(&rhs);
    let body = RigidVelocity::new(
        Vec3::new(z[0], z[1], z[2]),
        Vec3::new(z[3], z[4], z[5]),
    );

    // Delta = Ad_A((omega, v)).
    let pose = x_hat.pose();
    let rotated = pose.rotation().apply(&body.angular);
    let delta = RigidVelocity::new(
        rotated,
        pose.translation().cross(&rotated) + pose.rotation().apply(&body.linear),
    );
    (delta, WlsOutcome::Solved { condition })
}

/// Per-landmark storage value `r/2 (1 - y0.d)/(1 + y0.d) + (r - r_hat)^2/(2 alpha)`;
/// non-negative, zero exactly at the error equilibrium. Needs the true range,
/// so it is diagnostic-only.
pub fn storage(
    delta: &Bearing,
    origin_bearing: &Bearing,
    r_hat: f64,
    true_range: f64,
    depth_gain: f64,
) -> Result<f64> {
    let c = delta.dot(origin_bearing);
    if 1.0 + c <= ANTIPODE_TOL {
        return Err(Error::Antipodal { index: 0 });
    }
    Ok(true_range / 2.0 * (1.0 - c) / (1.0 + c)
        + (true_range - r_hat).powi(2) / (2.0 * depth_gain))
}

/// Trapezoidal estimate of the mean transverse speed
/// `(1/T) int ||y^x y^x V|| dtau` over the trailing `horizon` seconds of the
/// window. Diagnostic for the excitation needed by depth convergence.
pub fn pe_metric(samples: &[(f64, Bearing, Vec3)], horizon: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let t_end = samples[samples.len() - 1].0;
    let t_begin = samples[0].0;
    let span = t_end - t_begin;
    if span < horizon {
        return Err(Error::WindowTooShort { span, horizon });
    }
    let t_start = t_end - horizon;
    let transverse = |y: &Bearing, v: &Vec3| (v - y.direction() * y.dot(v)).norm();

    let mut integral = 0.0;
    for pair in samples.windows(2) {
        let (t0, y0, v0) = &pair[0];
        let (t1, y1, v1) = &pair[1];
        if *t1 <= t_start {
            continue;
        }
        let (g0, g1) = (transverse(y0, v0), transverse(y1, v1));
        if *t0 >= t_start {
            integral += 0.5 * (g0 + g1) * (t1 - t0);
        } else {
            // Interval straddles the window start: integrate the tail only.
            let alpha = (t_start - t0) / (t1 - t0);
            let g_start = g0 + alpha * (g1 - g0);
            integral += 0.5 * (g_start + g1) * (t1 - t_start);
        }
    }
    Ok(integral / horizon)
}
