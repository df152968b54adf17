//! Online identification of a quadruped's mass and center of mass.
//!
//! The base is treated as a single rigid body with parameters
//! `π = [m, m·c_x, m·c_y]`. Ground reaction forces and base motion give a
//! linear measurement `Φ π = z` every control tick, which a Kalman filter
//! tracks under a random-walk model. New estimates are published only once
//! the filter covariance has dropped below fixed thresholds.
//!
//! ```
//! use qpi_core::model::{ParameterVector, com_from_parameters};
//!
//! let pi = ParameterVector::from_com(16.21, 0.0088, 0.0);
//! let (cx, cy) = com_from_parameters(&pi).unwrap();
//! assert!((cx - 0.0088).abs() < 1e-12 && cy == 0.0);
//! ```

pub mod adaptation;
pub mod estimators;
pub mod experiment;
pub mod model;
pub mod simulator;

pub use adaptation::{AdaptationConfig, AdaptationPipeline, PublishPolicy, PublishedModel};
pub use estimators::{batch_least_squares, KalmanState, RlsState};
pub use model::{ParameterVector, RegressorForm, RegressorSample, RobotSnapshot};
pub use simulator::{run_scenario, Scenario, SimTick, Simulation};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/estimation.md")]
    struct Estimation;
    #[doc = include_str!("../../../book/src/adaptation.md")]
    struct Adaptation;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
