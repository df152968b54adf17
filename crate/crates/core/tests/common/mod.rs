#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix6, Matrix6x3, Rotation3, Vector3, Vector6};
use qpi_core::estimators::KalmanState;
use qpi_core::model::{ParameterVector, RegressorForm, RegressorSample, RigidBodyState};
use qpi_core::simulator::{GaitPattern, GaitSchedule, MotionProfile, NoiseModel, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_phi(rng: &mut ChaCha8Rng, scale: f64) -> Matrix6x3<f64> {
    Matrix6x3::from_fn(|_, _| scale * normal(rng))
}

pub fn sample(phi: Matrix6x3<f64>, z: Vector6<f64>) -> RegressorSample {
    RegressorSample { phi, z, time: 0.0 }
}

pub fn random_base(rng: &mut ChaCha8Rng) -> RigidBodyState {
    let mut v = || Vector3::new(normal(rng), normal(rng), normal(rng));
    let (a, w, dw, p) = (v(), v(), v(), v());
    let angles = v() * 0.3;
    RigidBodyState {
        position: p * 0.1,
        orientation: Rotation3::from_euler_angles(angles.x, angles.y, angles.z),
        linear_velocity: Vector3::zeros(),
        linear_acceleration: a,
        angular_velocity: w,
        angular_acceleration: dw * 3.0,
    }
}

pub fn random_parameters(rng: &mut ChaCha8Rng) -> ParameterVector {
    ParameterVector::from_com(
        rng.random_range(8.0..30.0),
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.02..0.02),
    )
}

pub fn kalman(p0: f64, q: f64, r: f64) -> KalmanState {
    KalmanState::new(
        ParameterVector::new(1.0, 0.0, 0.0),
        Matrix3::identity() * p0,
        Matrix3::identity() * q,
        Matrix6::identity() * r,
    )
    .unwrap()
}

/// Short noisy scenario with random truth, gait and motion amplitudes.
pub fn random_scenario(rng: &mut ChaCha8Rng, form: RegressorForm) -> Scenario {
    let trot = rng.random_bool(0.7);
    let mut timeline = vec![GaitSchedule::stand(0.0)];
    if trot {
        timeline.push(GaitSchedule::trot(rng.random_range(0.0..1.0) + 0.01, rng.random_range(0.25..0.45)));
    }
    Scenario {
        schema_version: 1,
        name: "random".into(),
        duration: 3.0,
        tick_rate: 100.0,
        regressor: form,
        true_base_parameters: random_parameters(rng),
        gait_timeline: timeline,
        payload_events: Vec::new(),
        noise: NoiseModel {
            seed: rng.random(),
            ..NoiseModel::default()
        },
        motion: MotionProfile {
            sway_accel: rng.random_range(0.0..5.0),
            yaw_accel: rng.random_range(0.0..12.0),
            bob_accel: rng.random_range(0.0..0.5),
            ..MotionProfile::default()
        },
        faults: Default::default(),
        estimator: Default::default(),
        adaptation: Default::default(),
    }
}

pub fn is_trot(s: &Scenario) -> bool {
    s.gait_timeline.iter().any(|g| g.pattern == GaitPattern::Trot)
}
