//! Contact schedules and the synthetic base/foot motion that goes with them.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::RigidBodyState;

/// Foot order: front left, front right, rear left, rear right.
pub const FOOT_NAMES: [&str; 4] = ["FL", "FR", "RL", "RR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitPattern {
    Stand,
    /// Diagonal pairs alternate: FL+RR, then FR+RL.
    Trot,
    /// Stance table cycled once per phase.
    Custom(Vec<[bool; 4]>),
}

fn default_phase_duration() -> f64 {
    0.35
}

/// One segment of the gait timeline. It lasts until the next segment starts
/// or the scenario ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSchedule {
    pub pattern: GaitPattern,
    #[serde(default = "default_phase_duration")]
    pub phase_duration: f64,
    pub start_time: f64,
}

impl GaitSchedule {
    pub fn stand(start_time: f64) -> Self {
        Self {
            pattern: GaitPattern::Stand,
            phase_duration: default_phase_duration(),
            start_time,
        }
    }

    pub fn trot(start_time: f64, phase_duration: f64) -> Self {
        Self {
            pattern: GaitPattern::Trot,
            phase_duration,
            start_time,
        }
    }

    pub fn is_stand(&self) -> bool {
        self.pattern == GaitPattern::Stand
    }

    /// Phase index and time into that phase at absolute time `t`.
    pub fn phase_at(&self, t: f64) -> (usize, f64) {
        let elapsed = (t - self.start_time).max(0.0);
        // Tick times like 10.35 land a hair below the boundary in floating point.
        let k = (elapsed / self.phase_duration + 1e-9).floor();
        (k as usize, (elapsed - k * self.phase_duration).max(0.0))
    }

    pub fn stance_at(&self, t: f64) -> [bool; 4] {
        let (k, _) = self.phase_at(t);
        match &self.pattern {
            GaitPattern::Stand => [true; 4],
            GaitPattern::Trot => trot_stance(k),
            GaitPattern::Custom(table) => table[k % table.len()],
        }
    }
}

fn trot_stance(phase: usize) -> [bool; 4] {
    if phase.is_multiple_of(2) {
        [true, false, false, true]
    } else {
        [false, true, true, false]
    }
}

/// Geometry and excitation of the synthetic stepping motion.
///
/// Within each phase of length `T` every oscillation follows the smooth bump
/// `(1 − cos(n · 2πτ/T)) / 2`, which starts and ends at rest. The amplitudes
/// below are the peak accelerations of those bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionProfile {
    /// Nominal base height above the footholds, m.
    pub base_height: f64,
    /// Footholds sit at `(±half_length, ±half_width, 0)` under the base.
    pub footprint_half_length: f64,
    pub footprint_half_width: f64,
    /// Swing apex, m.
    pub step_height: f64,
    /// Vertical bob, one per phase, m/s².
    pub bob_accel: f64,
    /// Trot only: sway along the stance diagonal, one per phase, m/s².
    pub sway_accel: f64,
    /// Yaw wobble, two per phase, rad/s².
    pub yaw_accel: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            base_height: 0.3,
            footprint_half_length: 0.1934,
            footprint_half_width: 0.142,
            step_height: 0.05,
            bob_accel: 0.02,
            sway_accel: 4.0,
            yaw_accel: 10.0,
        }
    }
}

impl MotionProfile {
    /// World footholds in foot order.
    pub fn footholds(&self) -> [Vector3<f64>; 4] {
        let (l, w) = (self.footprint_half_length, self.footprint_half_width);
        [
            Vector3::new(l, w, 0.0),
            Vector3::new(l, -w, 0.0),
            Vector3::new(-l, w, 0.0),
            Vector3::new(-l, -w, 0.0),
        ]
    }
}

/// Stance flags, feet relative to the base origin and the base state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub stance: [bool; 4],
    /// Foot positions relative to the base origin, inertial axes.
    pub feet: [Vector3<f64>; 4],
    pub base: RigidBodyState,
}

/// Smooth bump with peak acceleration `accel` and `cycles` repetitions per
/// phase: returns (position, velocity, acceleration).
fn bump(accel: f64, cycles: f64, tau: f64, period: f64) -> (f64, f64, f64) {
    if accel == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let w = 2.0 * PI * cycles / period;
    let amplitude = 2.0 * accel / (w * w);
    let (s, c) = (w * tau).sin_cos();
    (amplitude * (1.0 - c) / 2.0, amplitude * w * s / 2.0, accel * c)
}

/// Base and foot kinematics for `schedule` at time `t`.
pub fn stepping_motion(schedule: &GaitSchedule, t: f64, motion: &MotionProfile) -> StepSample {
    let stance = schedule.stance_at(t);
    let footholds = motion.footholds();
    let mut base = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, motion.base_height));

    if !schedule.is_stand() {
        let (k, tau) = schedule.phase_at(t);
        let period = schedule.phase_duration;

        let (z, vz, az) = bump(motion.bob_accel, 1.0, tau, period);
        base.position.z -= z;
        base.linear_velocity.z -= vz;
        base.linear_acceleration.z -= az;

        if schedule.pattern == GaitPattern::Trot {
            let (rear, front) = if k % 2 == 0 { (3, 0) } else { (2, 1) };
            let dir = (footholds[front] - footholds[rear]).normalize();
            let (s, v, a) = bump(motion.sway_accel, 1.0, tau, period);
            base.position += dir * s;
            base.linear_velocity += dir * v;
            base.linear_acceleration += dir * a;
        }

        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let (yaw, yaw_rate, yaw_accel) = bump(motion.yaw_accel, 2.0, tau, period);
        base.orientation = Rotation3::from_axis_angle(&Vector3::z_axis(), sign * yaw);
        base.angular_velocity.z = sign * yaw_rate;
        base.angular_acceleration.z = sign * yaw_accel;
    }

    let (_, tau) = schedule.phase_at(t);
    let lift = if schedule.is_stand() {
        0.0
    } else {
        motion.step_height * (PI * tau / schedule.phase_duration).sin()
    };
    let feet = std::array::from_fn(|i| {
        let mut p = footholds[i] - base.position;
        if !stance[i] {
            p.z += lift;
        }
        p
    });
    StepSample { stance, feet, base }
}
