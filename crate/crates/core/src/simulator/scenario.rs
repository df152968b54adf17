//! Scenario documents: a timed script of gait segments, payload events, noise
//! and estimator settings, stored as TOML.

use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::gait::{GaitPattern, GaitSchedule, MotionProfile};
use super::noise::NoiseModel;
use super::SimError;
use crate::adaptation::AdaptationConfig;
use crate::estimators::{
    EstimatorError, KalmanState, RlsState, DEFAULT_FORGETTING_FACTOR, DEFAULT_RLS_INITIAL_COVARIANCE,
};
use crate::model::{ParameterVector, RegressorForm};

pub const SCHEMA_VERSION: u32 = 1;

/// Mass added (positive) or removed (negative) at `time`, attached at
/// `attach_point` in the body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadEvent {
    pub time: f64,
    pub mass_delta: f64,
    #[serde(default)]
    pub attach_point: [f64; 2],
    #[serde(default)]
    pub label: Option<String>,
}

impl PayloadEvent {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            let verb = if self.mass_delta >= 0.0 { "attach" } else { "detach" };
            format!("{verb} {:.4} kg", self.mass_delta.abs())
        })
    }

    /// `m' = m + Δm`, `h' = h + Δm · (x, y)`.
    pub fn apply(&self, pi: &ParameterVector) -> ParameterVector {
        ParameterVector::new(
            pi.mass + self.mass_delta,
            pi.moment_x + self.mass_delta * self.attach_point[0],
            pi.moment_y + self.mass_delta * self.attach_point[1],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultInjection {
    /// Measured contact flags lag the schedule by this many ticks.
    pub contact_detection_lag_ticks: usize,
    /// Contact detection reports every swing foot as touching the ground.
    pub swing_contact_false_positive: bool,
}

/// Initial conditions and tuning for the two estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    /// Defaults to the nominal robot when absent.
    pub initial_estimate: Option<ParameterVector>,
    pub initial_covariance: [f64; 3],
    pub process_noise: [f64; 3],
    pub measurement_noise: [f64; 6],
    pub rls_forgetting: f64,
    pub rls_initial_covariance: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            initial_estimate: None,
            initial_covariance: [1.0, 0.2, 0.2],
            process_noise: [5e-3, 5e-4, 5e-4],
            measurement_noise: [1e3, 1e3, 1e4, 1e4, 1e4, 1e3],
            rls_forgetting: DEFAULT_FORGETTING_FACTOR,
            rls_initial_covariance: DEFAULT_RLS_INITIAL_COVARIANCE,
        }
    }
}

impl EstimatorSettings {
    pub fn initial_estimate(&self) -> ParameterVector {
        self.initial_estimate.unwrap_or_else(ParameterVector::nominal_robot)
    }

    pub fn kalman(&self) -> Result<KalmanState, EstimatorError> {
        KalmanState::new(
            self.initial_estimate(),
            Matrix3::from_diagonal(&Vector3::from(self.initial_covariance)),
            Matrix3::from_diagonal(&Vector3::from(self.process_noise)),
            Matrix6::from_diagonal(&Vector6::from(self.measurement_noise)),
        )
    }

    pub fn rls(&self) -> Result<RlsState, EstimatorError> {
        RlsState::new(
            self.initial_estimate(),
            Matrix3::identity() * self.rls_initial_covariance,
            self.rls_forgetting,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub tick_rate: f64,
    /// Model used both to generate ground truth and to estimate.
    #[serde(default)]
    pub regressor: RegressorForm,
    pub true_base_parameters: ParameterVector,
    pub gait_timeline: Vec<GaitSchedule>,
    #[serde(default)]
    pub payload_events: Vec<PayloadEvent>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub motion: MotionProfile,
    #[serde(default)]
    pub faults: FaultInjection,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Parse(msg) => SimError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn tick_count(&self) -> usize {
        (self.duration * self.tick_rate).round() as usize
    }

    pub fn tick_time(&self, index: usize) -> f64 {
        index as f64 / self.tick_rate
    }

    /// Gait segment active at `t`.
    pub fn segment_at(&self, t: f64) -> &GaitSchedule {
        self.gait_timeline
            .iter()
            .rev()
            .find(|s| s.start_time <= t)
            .unwrap_or(&self.gait_timeline[0])
    }

    /// Adaptation settings with the scenario's regressor form applied.
    pub fn adaptation_config(&self) -> AdaptationConfig {
        AdaptationConfig {
            regressor: self.regressor,
            ..self.adaptation.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidScenario(msg));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return invalid("duration must be positive".into());
        }
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return invalid("tick_rate must be positive".into());
        }
        if !(self.true_base_parameters.is_finite() && self.true_base_parameters.mass > 0.0) {
            return invalid("true_base_parameters must be finite with positive mass".into());
        }
        if self.gait_timeline.is_empty() {
            return invalid("gait_timeline is empty".into());
        }
        if self.gait_timeline[0].start_time != 0.0 {
            return invalid("first gait segment must start at 0".into());
        }
        for pair in self.gait_timeline.windows(2) {
            if pair[1].start_time.is_nan() || pair[1].start_time <= pair[0].start_time {
                return invalid("gait segments must have strictly increasing start times".into());
            }
        }
        for seg in &self.gait_timeline {
            if !(seg.phase_duration.is_finite() && seg.phase_duration > 0.0) {
                return invalid("phase_duration must be positive".into());
            }
            if let GaitPattern::Custom(table) = &seg.pattern {
                if table.is_empty() {
                    return invalid("custom gait table is empty".into());
                }
                if table.iter().any(|row| row.iter().filter(|&&s| s).count() < 2) {
                    return invalid("custom gait phases need at least two stance feet".into());
                }
            }
        }
        let mut pi = self.true_base_parameters;
        let mut last_time = f64::NEG_INFINITY;
        for event in &self.payload_events {
            if !(event.time.is_finite() && event.mass_delta.is_finite()) {
                return invalid("payload events must be finite".into());
            }
            if event.time < last_time {
                return invalid("payload events must be sorted by time".into());
            }
            last_time = event.time;
            pi = event.apply(&pi);
            if pi.mass < self.true_base_parameters.mass - 1e-9 {
                return invalid(format!(
                    "payload events at t = {} remove more mass than was attached",
                    event.time
                ));
            }
        }
        self.noise.validate().map_err(SimError::InvalidScenario)?;
        let m = &self.motion;
        let geometry = [m.base_height, m.footprint_half_length, m.footprint_half_width];
        if !geometry.iter().all(|v| v.is_finite() && *v > 0.0) {
            return invalid("motion geometry must be positive".into());
        }
        let amplitudes = [m.step_height, m.bob_accel, m.sway_accel, m.yaw_accel];
        if !amplitudes.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return invalid("motion amplitudes must be non-negative".into());
        }
        self.estimator
            .kalman()
            .map_err(|e| SimError::InvalidScenario(format!("estimator: {e}")))?;
        self.estimator
            .rls()
            .map_err(|e| SimError::InvalidScenario(format!("estimator: {e}")))?;
        self.adaptation
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        if self.adaptation.leg_contribution.mass >= self.estimator.initial_estimate().mass {
            return invalid("leg mass must be below the initial total mass".into());
        }
        Ok(())
    }
}

/// Scenarios shipped with the crate.
pub mod bundled {
    use super::Scenario;

    pub const STAND_THEN_TROT: &str = include_str!("../../scenarios/stand_then_trot.toml");
    pub const PAYLOAD_SWITCHING: &str = include_str!("../../scenarios/payload_switching.toml");
    pub const STANDING_BIAS: &str = include_str!("../../scenarios/standing_bias.toml");
    pub const OFFCENTER_PAYLOAD: &str = include_str!("../../scenarios/offcenter_payload.toml");
    pub const STAND_ONLY: &str = include_str!("../../scenarios/stand_only.toml");
    pub const NOISELESS_TROT: &str = include_str!("../../scenarios/noiseless_trot.toml");

    pub const ALL: [(&str, &str); 6] = [
        ("stand_then_trot", STAND_THEN_TROT),
        ("payload_switching", PAYLOAD_SWITCHING),
        ("standing_bias", STANDING_BIAS),
        ("offcenter_payload", OFFCENTER_PAYLOAD),
        ("stand_only", STAND_ONLY),
        ("noiseless_trot", NOISELESS_TROT),
    ];

    /// Parses a bundled scenario by name.
    pub fn load(name: &str) -> Option<Scenario> {
        ALL.iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Scenario::from_toml_str(text).expect("bundled scenarios are valid"))
    }
}
