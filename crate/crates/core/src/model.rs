//! Single-rigid-body model of a quadruped and its parameter regressor.
//!
//! The legs are treated as massless, so the whole robot reduces to one floating
//! body pushed by four ground reaction forces. Under that assumption the force
//! and moment balances are linear in
//!
//! ```text
//! π = [m, h_x, h_y],   h = m · [c_x, c_y]
//! ```
//!
//! and can be written as `Φ π = z`, where `z` stacks the summed foot forces and
//! the summed foot moments about the base origin. All vectors live in the
//! inertial frame whose origin coincides with the base origin. Gravity is
//! stored as `[0, 0, +g]`, so a robot standing still has `m g = Σ F_z` with
//! upward (positive) vertical forces.

use nalgebra::{Matrix3, Matrix3x2, Matrix6x3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity magnitude in m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Largest Jacobian condition number accepted when mapping joint torques to
/// foot forces.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("gravity must be vertical, got [{0}, {1}, {2}]")]
    NonVerticalGravity(f64, f64, f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("leg Jacobian is singular (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },
}

/// Mass and first moments of mass `[m, h_x, h_y]`.
///
/// The first moments are expressed in the body frame; the COM height offset is
/// fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// Mass in kg.
    pub mass: f64,
    /// `m · c_x` in kg·m.
    pub moment_x: f64,
    /// `m · c_y` in kg·m.
    pub moment_y: f64,
}

impl ParameterVector {
    pub const fn new(mass: f64, moment_x: f64, moment_y: f64) -> Self {
        Self {
            mass,
            moment_x,
            moment_y,
        }
    }

    /// Parameters of a body with mass `mass` and COM at `(c_x, c_y, 0)`.
    pub fn from_com(mass: f64, c_x: f64, c_y: f64) -> Self {
        Self::new(mass, mass * c_x, mass * c_y)
    }

    /// Nominal parameters of the reference robot: 16.21 kg with the COM
    /// 8.8 mm ahead of the base origin.
    pub fn nominal_robot() -> Self {
        Self::from_com(16.21, 0.0088, 0.0)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.mass, self.moment_x, self.moment_y)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.mass.is_finite() && self.moment_x.is_finite() && self.moment_y.is_finite()
    }

    /// COM offset `(c_x, c_y)` in metres.
    pub fn com(&self) -> Result<(f64, f64), ModelError> {
        com_from_parameters(self)
    }
}

/// Returns `(h_x / m, h_y / m)`.
pub fn com_from_parameters(pi: &ParameterVector) -> Result<(f64, f64), ModelError> {
    if !pi.is_finite() {
        return Err(ModelError::NonFinite("parameter vector"));
    }
    if pi.mass <= 0.0 {
        return Err(ModelError::NonPositiveMass(pi.mass));
    }
    Ok((pi.moment_x / pi.mass, pi.moment_y / pi.mass))
}

/// Kinematic state of the floating base.
///
/// Angular velocity and acceleration are expressed in the inertial frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    /// Rotation from the body frame to the inertial frame.
    pub orientation: Rotation3<f64>,
    pub linear_velocity: Vector3<f64>,
    pub linear_acceleration: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub angular_acceleration: Vector3<f64>,
}

impl RigidBodyState {
    /// A base at `position` with identity orientation and no motion.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: Rotation3::identity(),
            linear_velocity: Vector3::zeros(),
            linear_acceleration: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            angular_acceleration: Vector3::zeros(),
        }
    }

    /// True when the orientation is orthonormal with determinant +1 within `tol`.
    pub fn orientation_is_proper(&self, tol: f64) -> bool {
        let r = self.orientation.matrix();
        (r.transpose() * r - Matrix3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.matrix().iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.linear_acceleration.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.angular_acceleration.iter().all(|v| v.is_finite())
    }
}

/// One foot: position relative to the base origin and the estimated ground
/// reaction force, both in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootState {
    /// 0 = front left, 1 = front right, 2 = rear left, 3 = rear right.
    pub index: usize,
    pub position: Vector3<f64>,
    pub force: Vector3<f64>,
    pub contact_measured: bool,
    pub contact_scheduled: bool,
}

impl FootState {
    pub fn in_contact(index: usize, position: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self {
            index,
            position,
            force,
            contact_measured: true,
            contact_scheduled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSnapshot {
    pub time: f64,
    pub base: RigidBodyState,
    pub feet: [FootState; 4],
    /// `[0, 0, g]` with `g > 0` for ordinary gravity.
    pub gravity: Vector3<f64>,
}

impl RobotSnapshot {
    fn validate(&self) -> Result<(), ModelError> {
        if !self.gravity.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("gravity"));
        }
        if self.gravity.x != 0.0 || self.gravity.y != 0.0 {
            return Err(ModelError::NonVerticalGravity(
                self.gravity.x,
                self.gravity.y,
                self.gravity.z,
            ));
        }
        if !self.time.is_finite() {
            return Err(ModelError::NonFinite("time"));
        }
        if !self.base.is_finite() {
            return Err(ModelError::NonFinite("base state"));
        }
        for foot in &self.feet {
            if !(foot.position.iter().all(|v| v.is_finite()) && foot.force.iter().all(|v| v.is_finite())) {
                return Err(ModelError::NonFinite("foot state"));
            }
        }
        Ok(())
    }
}

/// Which terms of the rigid-body balance enter the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorForm {
    /// Force rows use `v̇ + g`; moment rows use gravity only (`c × m g`).
    #[default]
    Reduced,
    /// Every term linear in `π` once the rotational inertia is dropped:
    /// `ω̇ × h + ω × (ω × h)` in the force rows, `h × (v̇ + g)` in the moment
    /// rows, with `h` rotated from the body frame by the base orientation.
    FirstMoment,
}

/// One measurement instant: `phi · π ≈ z`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSample {
    pub phi: Matrix6x3<f64>,
    /// Rows 0–2: summed forces in N. Rows 3–5: summed moments in N·m.
    pub z: Vector6<f64>,
    pub time: f64,
}

/// Builds the reduced-form regressor. Foot forces are used as given; gating
/// must already have happened.
pub fn build_regressor(snapshot: &RobotSnapshot) -> Result<RegressorSample, ModelError> {
    build_regressor_with(snapshot, RegressorForm::Reduced)
}

pub fn build_regressor_with(
    snapshot: &RobotSnapshot,
    form: RegressorForm,
) -> Result<RegressorSample, ModelError> {
    snapshot.validate()?;
    Ok(RegressorSample {
        phi: regressor_matrix(&snapshot.base, &snapshot.gravity, form),
        z: measured_wrench(&snapshot.feet),
        time: snapshot.time,
    })
}

/// The 6×3 regressor for a base state; columns are `(m, h_x, h_y)`.
pub fn regressor_matrix(
    base: &RigidBodyState,
    gravity: &Vector3<f64>,
    form: RegressorForm,
) -> Matrix6x3<f64> {
    let mut phi = Matrix6x3::zeros();
    let total_accel = base.linear_acceleration + gravity;
    phi.fixed_view_mut::<3, 1>(0, 0).copy_from(&total_accel);
    match form {
        RegressorForm::Reduced => {
            let g = gravity.z;
            phi[(3, 2)] = g;
            phi[(4, 1)] = -g;
        }
        RegressorForm::FirstMoment => {
            let planar: Matrix3x2<f64> = base.orientation.matrix().fixed_columns::<2>(0).into_owned();
            let w = base.angular_velocity.cross_matrix();
            let force_block = (base.angular_acceleration.cross_matrix() + w * w) * planar;
            let moment_block = -total_accel.cross_matrix() * planar;
            phi.fixed_view_mut::<3, 2>(0, 1).copy_from(&force_block);
            phi.fixed_view_mut::<3, 2>(3, 1).copy_from(&moment_block);
        }
    }
    phi
}

/// `[Σ F_i; Σ r_i × F_i]`.
pub fn measured_wrench(feet: &[FootState]) -> Vector6<f64> {
    let mut w = Vector6::zeros();
    for foot in feet {
        let moment = foot.position.cross(&foot.force);
        for k in 0..3 {
            w[k] += foot.force[k];
            w[k + 3] += moment[k];
        }
    }
    w
}

/// Model wrench `Φ π` for the reduced regressor.
pub fn predicted_wrench(pi: &ParameterVector, snapshot: &RobotSnapshot) -> Result<Vector6<f64>, ModelError> {
    predicted_wrench_with(pi, snapshot, RegressorForm::Reduced)
}

pub fn predicted_wrench_with(
    pi: &ParameterVector,
    snapshot: &RobotSnapshot,
    form: RegressorForm,
) -> Result<Vector6<f64>, ModelError> {
    if !pi.is_finite() {
        return Err(ModelError::NonFinite("parameter vector"));
    }
    if pi.mass <= 0.0 {
        return Err(ModelError::NonPositiveMass(pi.mass));
    }
    let sample = build_regressor_with(snapshot, form)?;
    Ok(sample.phi * pi.to_vector())
}

/// Analytic 3-DoF leg: hip abduction about x, hip flexion about y, knee about y.
///
/// At `q = 0` the leg hangs straight down from the hip, displaced sideways by
/// the abduction offset. Positive flexion swings the foot towards −x.
///
/// ```text
/// p = hip_offset + Rx(q0) · ( [0, l0, 0] + Ry(q1) · ([0, 0, -l1] + Ry(q2) · [0, 0, -l2]) )
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegModel {
    /// `[abduction offset (signed, +y), thigh, calf]` in metres.
    pub link_lengths: Vector3<f64>,
    /// Hip joint position relative to the base origin.
    pub hip_offset: Vector3<f64>,
}

impl LegModel {
    pub const JOINT_COUNT: usize = 3;

    pub fn new(link_lengths: Vector3<f64>, hip_offset: Vector3<f64>) -> Self {
        Self {
            link_lengths,
            hip_offset,
        }
    }

    /// Leg `index` of a small quadruped (about 0.19 m half-length,
    /// 0.095 m abduction offset, 0.213 m thigh and calf).
    pub fn small_quadruped(index: usize) -> Self {
        let front = if index < 2 { 1.0 } else { -1.0 };
        let left = if index.is_multiple_of(2) { 1.0 } else { -1.0 };
        Self::new(
            Vector3::new(left * 0.0955, 0.213, 0.213),
            Vector3::new(front * 0.1934, left * 0.0465, 0.0),
        )
    }

    pub fn forward_kinematics(&self, q: &Vector3<f64>) -> Vector3<f64> {
        let (l0, l1, l2) = (self.link_lengths[0], self.link_lengths[1], self.link_lengths[2]);
        let (s0, c0) = q[0].sin_cos();
        let (s1, c1) = q[1].sin_cos();
        let (s12, c12) = (q[1] + q[2]).sin_cos();
        let vertical = l1 * c1 + l2 * c12;
        let forward = l1 * s1 + l2 * s12;
        self.hip_offset
            + Vector3::new(-forward, c0 * l0 + s0 * vertical, s0 * l0 - c0 * vertical)
    }

    /// Analytic `∂p/∂q`.
    pub fn jacobian(&self, q: &Vector3<f64>) -> Matrix3<f64> {
        let (l0, l1, l2) = (self.link_lengths[0], self.link_lengths[1], self.link_lengths[2]);
        let (s0, c0) = q[0].sin_cos();
        let (s1, c1) = q[1].sin_cos();
        let (s12, c12) = (q[1] + q[2]).sin_cos();
        let vertical = l1 * c1 + l2 * c12;
        let forward = l1 * s1 + l2 * s12;
        Matrix3::new(
            0.0,
            -vertical,
            -l2 * c12,
            -s0 * l0 + c0 * vertical,
            -s0 * forward,
            -s0 * l2 * s12,
            c0 * l0 + s0 * vertical,
            c0 * forward,
            c0 * l2 * s12,
        )
    }

    pub fn jacobian_condition(&self, q: &Vector3<f64>) -> f64 {
        let sv = self.jacobian(q).singular_values();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            sv.max() / min
        }
    }

    /// Foot force from joint torques, `F = (Jᵀ)⁻¹ τ`.
    pub fn grf_from_torques(&self, q: &Vector3<f64>, tau: &Vector3<f64>) -> Result<Vector3<f64>, ModelError> {
        if !(q.iter().all(|v| v.is_finite()) && tau.iter().all(|v| v.is_finite())) {
            return Err(ModelError::NonFinite("joint state"));
        }
        let condition = self.jacobian_condition(q);
        if condition.is_nan() || condition > MAX_JACOBIAN_CONDITION {
            return Err(ModelError::SingularJacobian { condition });
        }
        self.jacobian(q)
            .transpose()
            .lu()
            .solve(tau)
            .ok_or(ModelError::SingularJacobian { condition })
    }

    /// Joint torques balancing foot force `force`, `τ = Jᵀ F`.
    pub fn torques_from_grf(&self, q: &Vector3<f64>, force: &Vector3<f64>) -> Vector3<f64> {
        self.jacobian(q).transpose() * force
    }
}

pub fn leg_forward_kinematics(leg: &LegModel, q: &Vector3<f64>) -> Vector3<f64> {
    leg.forward_kinematics(q)
}

pub fn leg_grf_from_torques(
    leg: &LegModel,
    q: &Vector3<f64>,
    tau: &Vector3<f64>,
) -> Result<Vector3<f64>, ModelError> {
    leg.grf_from_torques(q, tau)
}
