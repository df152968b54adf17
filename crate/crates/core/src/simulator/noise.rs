//! Seeded corruption of clean snapshots.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::RobotSnapshot;

/// Sensor corruption applied to the estimator-facing snapshot stream.
///
/// Gaussian noise is drawn for every foot on every tick, including swing feet,
/// since force estimates derived from joint torques never vanish exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-axis force noise, N.
    pub force_noise_std: f64,
    /// Per-axis foot position noise, m.
    pub position_noise_std: f64,
    /// Per-axis base linear acceleration noise, m/s².
    pub accel_noise_std: f64,
    /// Added to every stance foot while the gait segment is a stand, N.
    pub standing_force_bias: [f64; 3],
    /// Added to every swing foot, N. Models forces reported without contact.
    pub swing_force_bias: [f64; 3],
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            force_noise_std: 2.0,
            position_noise_std: 0.002,
            accel_noise_std: 0.1,
            standing_force_bias: [0.0, 0.0, 4.0],
            swing_force_bias: [0.0, 0.0, 0.0],
            seed: 0,
        }
    }
}

impl NoiseModel {
    /// No noise and no bias.
    pub fn noiseless() -> Self {
        Self {
            force_noise_std: 0.0,
            position_noise_std: 0.0,
            accel_noise_std: 0.0,
            standing_force_bias: [0.0; 3],
            swing_force_bias: [0.0; 3],
            seed: 0,
        }
    }

    /// Multiplies the three standard deviations by `factor`; biases unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            force_noise_std: self.force_noise_std * factor,
            position_noise_std: self.position_noise_std * factor,
            accel_noise_std: self.accel_noise_std * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let stds = [self.force_noise_std, self.position_noise_std, self.accel_noise_std];
        if !stds.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err("noise standard deviations must be finite and non-negative".into());
        }
        if !self
            .standing_force_bias
            .iter()
            .chain(&self.swing_force_bias)
            .all(|b| b.is_finite())
        {
            return Err("noise biases must be finite".into());
        }
        Ok(())
    }
}

/// Deterministic noise stream. The number of draws per tick is fixed, so two
/// models with the same seed see the same standard-normal sequence whatever
/// their magnitudes.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal3(&mut self) -> Vector3<f64> {
        Vector3::from_fn(|_, _| StandardNormal.sample(&mut self.rng))
    }

    /// Corrupts `clean`. `stance` selects which feet receive the standing
    /// bias (when `standing`) versus the swing bias.
    pub fn corrupt(
        &mut self,
        clean: &RobotSnapshot,
        stance: &[bool; 4],
        standing: bool,
        model: &NoiseModel,
    ) -> RobotSnapshot {
        let mut noisy = clean.clone();
        let stand_bias = Vector3::from(model.standing_force_bias);
        let swing_bias = Vector3::from(model.swing_force_bias);
        for (foot, &in_stance) in noisy.feet.iter_mut().zip(stance) {
            let force_noise = self.normal3() * model.force_noise_std;
            let position_noise = self.normal3() * model.position_noise_std;
            foot.force += force_noise;
            if in_stance {
                if standing {
                    foot.force += stand_bias;
                }
            } else {
                foot.force += swing_bias;
            }
            foot.position += position_noise;
        }
        noisy.base.linear_acceleration += self.normal3() * model.accel_noise_std;
        noisy
    }
}
