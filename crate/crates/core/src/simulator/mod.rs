//! Synthetic quadruped data with known ground truth.
//!
//! Each tick the true wrench `Φ(state) · π_true` is split over the stance feet
//! with a minimum-norm solve, so the clean stream satisfies the rigid-body
//! balance to solver precision. Noise, biases and contact faults are then
//! applied to produce the stream the estimators see.

pub mod distribution;
pub mod gait;
pub mod noise;
pub mod scenario;

use std::collections::VecDeque;

use nalgebra::Vector3;
use thiserror::Error;

use crate::model::{regressor_matrix, FootState, ModelError, ParameterVector, RobotSnapshot, STANDARD_GRAVITY};
pub use distribution::{balance_offset, contact_map, distribute_forces, distribute_wrench, DistributionError};
pub use gait::{stepping_motion, GaitPattern, GaitSchedule, MotionProfile, StepSample, FOOT_NAMES};
pub use noise::{NoiseModel, NoiseSource};
pub use scenario::{bundled, EstimatorSettings, FaultInjection, PayloadEvent, Scenario, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("tick {tick} (t = {time:.3} s): {source}")]
    Distribution {
        tick: usize,
        time: f64,
        #[source]
        source: DistributionError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One simulated instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTick {
    pub index: usize,
    /// What the estimators consume.
    pub noisy: RobotSnapshot,
    /// Noise-free snapshot with exact forces.
    pub clean: RobotSnapshot,
    /// True total parameters at this tick.
    pub truth: ParameterVector,
    pub stance: [bool; 4],
    /// The active gait segment is a stand.
    pub standing: bool,
    /// Labels of payload events applied on this tick, joined with "; ".
    pub event_label: Option<String>,
}

/// Iterator over the ticks of a scenario. Stops after the first error.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    index: usize,
    ticks: usize,
    truth: ParameterVector,
    next_event: usize,
    history: VecDeque<[bool; 4]>,
    noise: NoiseSource,
    failed: bool,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        Ok(Self {
            scenario: scenario.clone(),
            index: 0,
            ticks: scenario.tick_count(),
            truth: scenario.true_base_parameters,
            next_event: 0,
            history: VecDeque::new(),
            noise: NoiseSource::new(scenario.noise.seed),
            failed: false,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn step(&mut self) -> Result<SimTick, SimError> {
        let index = self.index;
        let time = self.scenario.tick_time(index);
        let mut labels = Vec::new();
        while let Some(event) = self.scenario.payload_events.get(self.next_event) {
            if event.time > time + 1e-12 {
                break;
            }
            self.truth = event.apply(&self.truth);
            labels.push(event.label());
            self.next_event += 1;
        }

        let segment = self.scenario.segment_at(time);
        let standing = segment.is_stand();
        let mut sample = stepping_motion(segment, time, &self.scenario.motion);
        let gravity = Vector3::new(0.0, 0.0, STANDARD_GRAVITY);
        let wrench = regressor_matrix(&sample.base, &gravity, self.scenario.regressor) * self.truth.to_vector();

        let stance_idx: Vec<usize> = (0..4).filter(|&i| sample.stance[i]).collect();
        if let [a, b] = stance_idx[..] {
            if let Some(shift) = balance_offset([sample.feet[a], sample.feet[b]], &wrench) {
                sample.feet[a] += shift;
                sample.feet[b] += shift;
            }
        }
        let positions: Vec<Vector3<f64>> = stance_idx.iter().map(|&i| sample.feet[i]).collect();
        let forces = distribute_wrench(&positions, &wrench).map_err(|source| SimError::Distribution {
            tick: index,
            time,
            source,
        })?;

        self.history.push_back(sample.stance);
        if self.history.len() > self.scenario.faults.contact_detection_lag_ticks + 1 {
            self.history.pop_front();
        }
        let measured = if self.scenario.faults.swing_contact_false_positive {
            [true; 4]
        } else {
            self.history[0]
        };

        let feet = std::array::from_fn(|i| {
            let force = stance_idx
                .iter()
                .position(|&j| j == i)
                .map_or_else(Vector3::zeros, |k| forces[k]);
            FootState {
                index: i,
                position: sample.feet[i],
                force,
                contact_measured: measured[i],
                contact_scheduled: sample.stance[i],
            }
        });
        let clean = RobotSnapshot {
            time,
            base: sample.base,
            feet,
            gravity,
        };
        let noisy = self.noise.corrupt(&clean, &sample.stance, standing, &self.scenario.noise);
        Ok(SimTick {
            index,
            noisy,
            clean,
            truth: self.truth,
            stance: sample.stance,
            standing,
            event_label: (!labels.is_empty()).then(|| labels.join("; ")),
        })
    }
}

impl Iterator for Simulation {
    type Item = Result<SimTick, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.index >= self.ticks {
            return None;
        }
        let tick = self.step();
        self.failed = tick.is_err();
        self.index += 1;
        Some(tick)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.ticks.saturating_sub(self.index);
        (0, Some(left))
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<SimTick>, SimError> {
    Simulation::new(scenario)?.collect()
}
