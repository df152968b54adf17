//! Model adaptation: contact gating, covariance thresholding and leg
//! subtraction wrapped around the Kalman filter.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{kf_predict, kf_update, EstimatorError, KalmanState};
use crate::model::{build_regressor_with, FootState, ModelError, ParameterVector, RegressorForm, RobotSnapshot};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("floating-base mass would be {0} kg after removing the legs")]
    NonPositiveBaseMass(f64),
    #[error("snapshot time {got} does not advance past {previous}")]
    NonMonotonicTime { previous: f64, got: f64 },
    #[error("invalid adaptation config: {0}")]
    InvalidConfig(String),
}

/// How the three covariance thresholds combine into a publish decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublishPolicy {
    /// Publish only when every monitored diagonal is below its threshold.
    #[default]
    AllBelow,
    /// Publish each parameter whose own diagonal is below its threshold.
    PerParameter,
}

/// Publication thresholds on `diag(P)` for `(m, h_x, h_y)`.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.695, 0.12, 0.11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub thresholds: [f64; 3],
    /// Mass and first moments of the four legs from the robot description.
    pub leg_contribution: ParameterVector,
    pub publish_policy: PublishPolicy,
    /// Set by the caller to match the data source; not read from files.
    #[serde(skip)]
    pub regressor: RegressorForm,
    /// Skip the measurement update when every foot is gated out. When false
    /// the update runs with the zeroed forces.
    pub skip_update_when_airborne: bool,
    /// Once published, keep publishing on every tick.
    pub latch: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS,
            leg_contribution: ParameterVector::new(0.0, 0.0, 0.0),
            publish_policy: PublishPolicy::AllBelow,
            regressor: RegressorForm::Reduced,
            skip_update_when_airborne: false,
            latch: false,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        if !self.thresholds.iter().all(|&t| t > 0.0) {
            return Err(AdaptationError::InvalidConfig("thresholds must be positive".into()));
        }
        if !self.leg_contribution.is_finite() || self.leg_contribution.mass < 0.0 {
            return Err(AdaptationError::InvalidConfig(
                "leg contribution must be finite with non-negative mass".into(),
            ));
        }
        Ok(())
    }
}

/// The floating-base model most recently handed to downstream consumers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedModel {
    pub pi_base: ParameterVector,
    /// Time of the tick that produced `pi_base`.
    pub time: f64,
    /// Whether `pi_base` was refreshed on the current tick.
    pub fresh: bool,
}

impl PublishedModel {
    /// Initial model: the nominal total parameters with the legs removed.
    pub fn initial(nominal_total: &ParameterVector, config: &AdaptationConfig, time: f64) -> Result<Self, AdaptationError> {
        Ok(Self {
            pi_base: subtract_leg_contribution(nominal_total, config)?,
            time,
            fresh: false,
        })
    }
}

/// Keeps a foot's force only if contact is both measured and scheduled.
pub fn gate_contacts(feet: &[FootState; 4]) -> [FootState; 4] {
    feet.map(|mut foot| {
        if !(foot.contact_measured && foot.contact_scheduled) {
            foot.force = Vector3::zeros();
        }
        foot
    })
}

/// Per-parameter verdict `diag(P)_i < threshold_i`.
pub fn publish_mask(covariance: &Matrix3<f64>, config: &AdaptationConfig) -> [bool; 3] {
    std::array::from_fn(|i| covariance[(i, i)] < config.thresholds[i])
}

pub fn should_publish(covariance: &Matrix3<f64>, config: &AdaptationConfig) -> bool {
    let mask = publish_mask(covariance, config);
    match config.publish_policy {
        PublishPolicy::AllBelow => mask.iter().all(|&b| b),
        PublishPolicy::PerParameter => mask.iter().any(|&b| b),
    }
}

/// Removes the legs' mass and first moments from total-body parameters.
pub fn subtract_leg_contribution(
    pi_total: &ParameterVector,
    config: &AdaptationConfig,
) -> Result<ParameterVector, AdaptationError> {
    let legs = &config.leg_contribution;
    let base = ParameterVector::new(
        pi_total.mass - legs.mass,
        pi_total.moment_x - legs.moment_x,
        pi_total.moment_y - legs.moment_y,
    );
    if base.mass.is_nan() || base.mass <= 0.0 {
        return Err(AdaptationError::NonPositiveBaseMass(base.mass));
    }
    Ok(base)
}

/// One adaptation step: gate → regressor → predict → update → threshold.
///
/// The filter always advances. When the thresholds pass, the returned model
/// carries the leg-free estimate and `fresh = true`; otherwise `previous` is
/// returned with `fresh = false`.
pub fn adaptation_tick(
    snapshot: &RobotSnapshot,
    kf: &KalmanState,
    config: &AdaptationConfig,
    previous: &PublishedModel,
) -> Result<(KalmanState, PublishedModel), AdaptationError> {
    let (kf, publish) = filter_step(snapshot, kf, config)?;
    let published = if should_publish(&kf.covariance, config) {
        publish_from(&kf, config, previous, snapshot.time, publish)?
    } else {
        PublishedModel {
            fresh: false,
            ..*previous
        }
    };
    Ok((kf, published))
}

fn filter_step(
    snapshot: &RobotSnapshot,
    kf: &KalmanState,
    config: &AdaptationConfig,
) -> Result<(KalmanState, [bool; 3]), AdaptationError> {
    let gated = RobotSnapshot {
        feet: gate_contacts(&snapshot.feet),
        ..snapshot.clone()
    };
    let sample = build_regressor_with(&gated, config.regressor)?;
    let predicted = kf_predict(kf);
    let airborne = snapshot
        .feet
        .iter()
        .all(|f| !(f.contact_measured && f.contact_scheduled));
    let updated = if airborne && config.skip_update_when_airborne {
        predicted
    } else {
        kf_update(&predicted, &sample)?
    };
    let mask = publish_mask(&updated.covariance, config);
    Ok((updated, mask))
}

fn publish_from(
    kf: &KalmanState,
    config: &AdaptationConfig,
    previous: &PublishedModel,
    time: f64,
    mask: [bool; 3],
) -> Result<PublishedModel, AdaptationError> {
    let candidate = subtract_leg_contribution(&kf.estimate, config)?;
    let pi_base = match config.publish_policy {
        PublishPolicy::AllBelow => candidate,
        PublishPolicy::PerParameter => {
            let new = candidate.to_vector();
            let old = previous.pi_base.to_vector();
            let merged = Vector3::from_fn(|i, _| if mask[i] { new[i] } else { old[i] });
            let merged = ParameterVector::from_vector(&merged);
            if merged.mass.is_nan() || merged.mass <= 0.0 {
                return Err(AdaptationError::NonPositiveBaseMass(merged.mass));
            }
            merged
        }
    };
    Ok(PublishedModel {
        pi_base,
        time,
        fresh: true,
    })
}

/// Stateful wrapper for one robot stream. Enforces strictly increasing
/// snapshot times and implements the optional latch.
#[derive(Debug, Clone)]
pub struct AdaptationPipeline {
    kf: KalmanState,
    config: AdaptationConfig,
    published: PublishedModel,
    last_time: Option<f64>,
    latched: bool,
}

impl AdaptationPipeline {
    pub fn new(kf: KalmanState, config: AdaptationConfig) -> Result<Self, AdaptationError> {
        config.validate()?;
        let published = PublishedModel::initial(&kf.estimate, &config, f64::NEG_INFINITY)?;
        Ok(Self {
            kf,
            config,
            published,
            last_time: None,
            latched: false,
        })
    }

    pub fn kalman(&self) -> &KalmanState {
        &self.kf
    }

    pub fn config(&self) -> &AdaptationConfig {
        &self.config
    }

    pub fn published(&self) -> &PublishedModel {
        &self.published
    }

    pub fn tick(&mut self, snapshot: &RobotSnapshot) -> Result<PublishedModel, AdaptationError> {
        if let Some(previous) = self.last_time {
            if snapshot.time.is_nan() || snapshot.time <= previous {
                return Err(AdaptationError::NonMonotonicTime {
                    previous,
                    got: snapshot.time,
                });
            }
        }
        let (kf, mask) = filter_step(snapshot, &self.kf, &self.config)?;
        let publish = if self.config.latch && self.latched {
            true
        } else {
            should_publish(&kf.covariance, &self.config)
        };
        let published = if publish {
            self.latched = true;
            let mask = if self.config.latch { [true; 3] } else { mask };
            publish_from(&kf, &self.config, &self.published, snapshot.time, mask)?
        } else {
            PublishedModel {
                fresh: false,
                ..self.published
            }
        };
        self.kf = kf;
        self.published = published;
        self.last_time = Some(snapshot.time);
        Ok(published)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RigidBodyState, STANDARD_GRAVITY};
    use approx::assert_relative_eq;

    fn feet(flags: [(bool, bool); 4]) -> [FootState; 4] {
        std::array::from_fn(|i| FootState {
            index: i,
            position: Vector3::new(0.1 * i as f64, -0.1, -0.3),
            force: Vector3::new(1.0, -2.0, 40.0),
            contact_measured: flags[i].0,
            contact_scheduled: flags[i].1,
        })
    }

    #[test]
    fn gating_requires_both_flags() {
        let input = feet([(true, false), (false, true), (true, true), (false, false)]);
        let out = gate_contacts(&input);
        assert_eq!(out[0].force, Vector3::zeros());
        assert_eq!(out[1].force, Vector3::zeros());
        assert_eq!(out[2].force, input[2].force);
        assert_eq!(out[3].force, Vector3::zeros());
        for i in 0..4 {
            assert_eq!(out[i].position, input[i].position);
            assert_eq!(out[i].contact_measured, input[i].contact_measured);
        }
    }

    #[test]
    fn all_contacts_pass_through() {
        let input = feet([(true, true); 4]);
        assert_eq!(gate_contacts(&input), input);
    }

    #[test]
    fn threshold_examples() {
        let cfg = AdaptationConfig::default();
        let p = Matrix3::from_diagonal(&Vector3::new(0.5, 0.05, 0.05));
        assert!(should_publish(&p, &cfg));
        let p = Matrix3::from_diagonal(&Vector3::new(0.7, 0.05, 0.05));
        assert!(!should_publish(&p, &cfg));
        let open = AdaptationConfig {
            thresholds: [f64::INFINITY; 3],
            ..AdaptationConfig::default()
        };
        assert!(should_publish(&Matrix3::from_diagonal(&Vector3::new(1e9, 1e9, 1e9)), &open));
    }

    #[test]
    fn per_parameter_policy_needs_one_below() {
        let cfg = AdaptationConfig {
            publish_policy: PublishPolicy::PerParameter,
            ..AdaptationConfig::default()
        };
        let p = Matrix3::from_diagonal(&Vector3::new(0.7, 0.05, 0.5));
        assert!(should_publish(&p, &cfg));
        assert_eq!(publish_mask(&p, &cfg), [false, true, false]);
    }

    #[test]
    fn leg_subtraction_examples() {
        let total = ParameterVector::new(16.21, 0.142648, 0.0);
        assert_eq!(subtract_leg_contribution(&total, &AdaptationConfig::default()).unwrap(), total);
        let cfg = AdaptationConfig {
            leg_contribution: ParameterVector::new(4.0, 0.02, 0.0),
            ..AdaptationConfig::default()
        };
        let base = subtract_leg_contribution(&total, &cfg).unwrap();
        assert_relative_eq!(base.mass, 12.21, epsilon = 1e-12);
        assert_relative_eq!(base.moment_x, 0.122648, epsilon = 1e-12);
        assert_eq!(base.moment_y, 0.0);
        let heavy = AdaptationConfig {
            leg_contribution: ParameterVector::new(16.21, 0.0, 0.0),
            ..AdaptationConfig::default()
        };
        assert!(matches!(
            subtract_leg_contribution(&total, &heavy),
            Err(AdaptationError::NonPositiveBaseMass(_))
        ));
    }

    fn standing_snapshot(time: f64, flags: [(bool, bool); 4]) -> RobotSnapshot {
        let mut f = feet(flags);
        for foot in f.iter_mut() {
            foot.force = Vector3::new(0.0, 0.0, 16.21 * STANDARD_GRAVITY / 4.0);
        }
        RobotSnapshot {
            time,
            base: RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 0.3)),
            feet: f,
            gravity: Vector3::new(0.0, 0.0, STANDARD_GRAVITY),
        }
    }

    #[test]
    fn first_tick_keeps_nominal_model() {
        let kf = KalmanState::nominal();
        let cfg = AdaptationConfig::default();
        let prev = PublishedModel::initial(&kf.estimate, &cfg, 0.0).unwrap();
        let (next, published) = adaptation_tick(&standing_snapshot(0.01, [(true, true); 4]), &kf, &cfg, &prev).unwrap();
        assert!(!published.fresh);
        assert_eq!(published.pi_base, ParameterVector::nominal_robot());
        assert_ne!(next.covariance, kf.covariance);
    }

    #[test]
    fn airborne_skip_grows_covariance_by_q() {
        let kf = KalmanState::nominal();
        let cfg = AdaptationConfig {
            skip_update_when_airborne: true,
            ..AdaptationConfig::default()
        };
        let mut pipeline = AdaptationPipeline::new(kf.clone(), cfg).unwrap();
        for k in 1..=10 {
            pipeline.tick(&standing_snapshot(0.01 * k as f64, [(false, true); 4])).unwrap();
        }
        let grown = pipeline.kalman().covariance_diagonal() - kf.covariance_diagonal();
        assert_relative_eq!(grown, kf.process_noise.diagonal() * 10.0, epsilon = 1e-12);
        assert_eq!(pipeline.kalman().estimate, kf.estimate);
    }

    #[test]
    fn airborne_update_pulls_mass_down() {
        let kf = KalmanState::nominal();
        let mut pipeline = AdaptationPipeline::new(kf.clone(), AdaptationConfig::default()).unwrap();
        pipeline.tick(&standing_snapshot(0.01, [(false, false); 4])).unwrap();
        assert!(pipeline.kalman().estimate.mass < kf.estimate.mass);
        assert!(!pipeline.published().fresh);
    }

    #[test]
    fn pipeline_rejects_time_going_backwards() {
        let mut pipeline = AdaptationPipeline::new(KalmanState::nominal(), AdaptationConfig::default()).unwrap();
        pipeline.tick(&standing_snapshot(1.0, [(true, true); 4])).unwrap();
        assert!(matches!(
            pipeline.tick(&standing_snapshot(1.0, [(true, true); 4])),
            Err(AdaptationError::NonMonotonicTime { .. })
        ));
    }

    #[test]
    fn latch_keeps_publishing() {
        let mut kf = KalmanState::nominal();
        kf.covariance = Matrix3::from_diagonal(&Vector3::new(0.1, 0.01, 0.01));
        let cfg = AdaptationConfig {
            latch: true,
            ..AdaptationConfig::default()
        };
        let mut latched = AdaptationPipeline::new(kf.clone(), cfg).unwrap();
        let mut plain = AdaptationPipeline::new(kf, AdaptationConfig::default()).unwrap();
        // First tick without process noise so both start below the thresholds.
        latched.kf.process_noise = Matrix3::zeros();
        plain.kf.process_noise = Matrix3::zeros();
        assert!(latched.tick(&standing_snapshot(0.01, [(true, true); 4])).unwrap().fresh);
        assert!(plain.tick(&standing_snapshot(0.01, [(true, true); 4])).unwrap().fresh);
        latched.kf.process_noise = Matrix3::identity();
        plain.kf.process_noise = Matrix3::identity();
        assert!(latched.tick(&standing_snapshot(0.02, [(true, true); 4])).unwrap().fresh);
        assert!(!plain.tick(&standing_snapshot(0.02, [(true, true); 4])).unwrap().fresh);
    }
}
