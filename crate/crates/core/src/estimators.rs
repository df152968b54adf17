//! Recursive estimators for the parameter vector `π = [m, h_x, h_y]`.
//!
//! The Kalman filter treats `π` as a random walk: prediction leaves the
//! estimate untouched and inflates the covariance by `Q`; the update uses the
//! regressor `Φ` as its measurement Jacobian and the summed wrench `z` as the
//! measurement. The recursive least-squares baseline uses exponential
//! forgetting and has no notion of measurement noise.
//!
//! Every step returns a fresh state; nothing is mutated in place.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3};
use thiserror::Error;

use crate::model::{ParameterVector, RegressorSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("stacked regressor has rank {rank}, need 3")]
    RankDeficient { rank: usize },
    #[error("invalid estimator state: {0}")]
    InvalidState(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Process noise of the random walk, `diag(5e-3, 5e-4, 5e-4)`.
pub fn default_process_noise() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(5e-3, 5e-4, 5e-4))
}

/// Measurement noise of the stacked wrench, `diag(1e3, 1e3, 1e4, 1e4, 1e4, 1e3)`.
pub fn default_measurement_noise() -> Matrix6<f64> {
    Matrix6::from_diagonal(&nalgebra::Vector6::new(1e3, 1e3, 1e4, 1e4, 1e4, 1e3))
}

/// Initial covariance, chosen above the publication thresholds.
pub fn default_initial_covariance() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, 0.2, 0.2))
}

pub const DEFAULT_FORGETTING_FACTOR: f64 = 0.8;
pub const DEFAULT_RLS_INITIAL_COVARIANCE: f64 = 100.0;

fn symmetrize3(p: &Matrix3<f64>) -> Matrix3<f64> {
    (p + p.transpose()) * 0.5
}

fn is_symmetric<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub estimate: ParameterVector,
    pub covariance: Matrix3<f64>,
    pub process_noise: Matrix3<f64>,
    pub measurement_noise: Matrix6<f64>,
    /// Gain of the most recent update; zero before the first one.
    pub last_gain: Matrix3x6<f64>,
}

impl KalmanState {
    /// Validates symmetry and definiteness of the supplied matrices.
    pub fn new(
        estimate: ParameterVector,
        covariance: Matrix3<f64>,
        process_noise: Matrix3<f64>,
        measurement_noise: Matrix6<f64>,
    ) -> Result<Self, EstimatorError> {
        if !estimate.is_finite() {
            return Err(EstimatorError::NonFinite("initial estimate"));
        }
        if !(covariance.iter().all(|v| v.is_finite())
            && process_noise.iter().all(|v| v.is_finite())
            && measurement_noise.iter().all(|v| v.is_finite()))
        {
            return Err(EstimatorError::NonFinite("noise matrices"));
        }
        if !is_symmetric(&covariance) || !is_symmetric(&process_noise) || !is_symmetric(&measurement_noise) {
            return Err(EstimatorError::InvalidState("covariances must be symmetric".into()));
        }
        if covariance.symmetric_eigenvalues().min() < -1e-12 {
            return Err(EstimatorError::InvalidState("initial covariance is not PSD".into()));
        }
        if process_noise.symmetric_eigenvalues().min() < -1e-12 {
            return Err(EstimatorError::InvalidState("process noise is not PSD".into()));
        }
        if measurement_noise.cholesky().is_none() {
            return Err(EstimatorError::InvalidState(
                "measurement noise must be positive definite".into(),
            ));
        }
        Ok(Self {
            estimate,
            covariance,
            process_noise,
            measurement_noise,
            last_gain: Matrix3x6::zeros(),
        })
    }

    /// Filter starting at the nominal robot with the default noise settings.
    pub fn nominal() -> Self {
        Self::new(
            ParameterVector::nominal_robot(),
            default_initial_covariance(),
            default_process_noise(),
            default_measurement_noise(),
        )
        .expect("default matrices are valid")
    }

    pub fn covariance_diagonal(&self) -> Vector3<f64> {
        self.covariance.diagonal()
    }

    pub fn predict(&self) -> Self {
        kf_predict(self)
    }

    pub fn update(&self, sample: &RegressorSample) -> Result<Self, EstimatorError> {
        kf_update(self, sample)
    }
}

/// Random-walk prediction: estimate unchanged, `P ← P + Q`.
pub fn kf_predict(state: &KalmanState) -> KalmanState {
    KalmanState {
        covariance: symmetrize3(&(state.covariance + state.process_noise)),
        ..state.clone()
    }
}

/// Measurement update with `H = Φ`.
///
/// ```text
/// S = Φ P Φᵀ + R
/// K = P Φᵀ S⁻¹
/// π ← π + K (z − Φ π)
/// P ← (I − K Φ) P
/// ```
///
/// `S⁻¹` is never formed; `Kᵀ` comes from a Cholesky solve of `S Kᵀ = Φ P`.
pub fn kf_update(state: &KalmanState, sample: &RegressorSample) -> Result<KalmanState, EstimatorError> {
    if !(sample.phi.iter().all(|v| v.is_finite()) && sample.z.iter().all(|v| v.is_finite())) {
        return Err(EstimatorError::NonFinite("regressor sample"));
    }
    let phi = &sample.phi;
    let p = &state.covariance;
    let phi_p = phi * p;
    let innovation_cov = phi_p * phi.transpose() + state.measurement_noise;
    let chol = innovation_cov
        .symmetric_part()
        .cholesky()
        .ok_or(EstimatorError::SingularInnovation)?;
    let gain: Matrix3x6<f64> = chol.solve(&phi_p).transpose();

    let pi = state.estimate.to_vector();
    let innovation = sample.z - phi * pi;
    let estimate = pi + gain * innovation;
    let covariance = symmetrize3(&((Matrix3::identity() - gain * phi) * p));

    Ok(KalmanState {
        estimate: ParameterVector::from_vector(&estimate),
        covariance,
        last_gain: gain,
        ..state.clone()
    })
}

/// Exponentially weighted recursive least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    pub estimate: ParameterVector,
    pub covariance: Matrix3<f64>,
    /// Forgetting factor in `(0, 1]`.
    pub forgetting: f64,
}

impl RlsState {
    pub fn new(estimate: ParameterVector, covariance: Matrix3<f64>, forgetting: f64) -> Result<Self, EstimatorError> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(EstimatorError::InvalidState(format!(
                "forgetting factor must lie in (0, 1], got {forgetting}"
            )));
        }
        if !estimate.is_finite() || !covariance.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite("initial RLS state"));
        }
        if !is_symmetric(&covariance) || covariance.cholesky().is_none() {
            return Err(EstimatorError::InvalidState(
                "RLS covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(Self {
            estimate,
            covariance,
            forgetting,
        })
    }

    /// Nominal start with `P₀ = 100 I` and forgetting factor 0.8.
    pub fn nominal() -> Self {
        Self::new(
            ParameterVector::nominal_robot(),
            Matrix3::identity() * DEFAULT_RLS_INITIAL_COVARIANCE,
            DEFAULT_FORGETTING_FACTOR,
        )
        .expect("default RLS state is valid")
    }

    pub fn update(&self, sample: &RegressorSample) -> Result<Self, EstimatorError> {
        rls_update(self, sample)
    }
}

/// ```text
/// G = P Φᵀ (λ I + Φ P Φᵀ)⁻¹
/// π ← π + G (z − Φ π)
/// P ← (P − G Φ P) / λ
/// ```
pub fn rls_update(state: &RlsState, sample: &RegressorSample) -> Result<RlsState, EstimatorError> {
    if !(sample.phi.iter().all(|v| v.is_finite()) && sample.z.iter().all(|v| v.is_finite())) {
        return Err(EstimatorError::NonFinite("regressor sample"));
    }
    let lambda = state.forgetting;
    let phi = &sample.phi;
    let p = &state.covariance;
    let phi_p = phi * p;
    let innovation_cov = phi_p * phi.transpose() + Matrix6::identity() * lambda;
    let chol = innovation_cov
        .symmetric_part()
        .cholesky()
        .ok_or(EstimatorError::SingularInnovation)?;
    let gain: Matrix3x6<f64> = chol.solve(&phi_p).transpose();

    let pi = state.estimate.to_vector();
    let estimate = pi + gain * (sample.z - phi * pi);
    let covariance = symmetrize3(&((p - gain * phi_p) / lambda));
    Ok(RlsState {
        estimate: ParameterVector::from_vector(&estimate),
        covariance,
        forgetting: lambda,
    })
}

/// Least-squares fit over a batch via the normal equations.
pub fn batch_least_squares(samples: &[RegressorSample]) -> Result<ParameterVector, EstimatorError> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for s in samples {
        normal += s.phi.transpose() * s.phi;
        rhs += s.phi.transpose() * s.z;
    }
    if !(normal.iter().all(|v| v.is_finite()) && rhs.iter().all(|v| v.is_finite())) {
        return Err(EstimatorError::NonFinite("stacked regressor"));
    }
    // Singular values of ΦᵀΦ are the squares of those of the stacked Φ.
    let sv = normal.singular_values();
    let largest = sv.max();
    let rank = if largest > 0.0 {
        sv.iter().filter(|&&s| s > largest * 1e-12).count()
    } else {
        0
    };
    if rank < 3 {
        return Err(EstimatorError::RankDeficient { rank });
    }
    let chol = normal
        .cholesky()
        .ok_or(EstimatorError::RankDeficient { rank })?;
    Ok(ParameterVector::from_vector(&chol.solve(&rhs)))
}
