use qpi_core::adaptation::{should_publish, AdaptationPipeline};
use qpi_core::experiment::{run_experiment, EstimatorKind};
use qpi_core::model::ParameterVector;
use qpi_core::simulator::{bundled, Simulation};

fn replay(name: &str, seed: u64, legs: ParameterVector) {
    let mut scenario = bundled::load(name).unwrap();
    scenario.noise.seed = seed;
    scenario.adaptation.leg_contribution = legs;
    let mut pipeline = AdaptationPipeline::new(scenario.estimator.kalman().unwrap(), scenario.adaptation_config()).unwrap();
    let mut last_publishable = None;
    let mut previous = *pipeline.published();
    for tick in Simulation::new(&scenario).unwrap() {
        let tick = tick.unwrap();
        let model = pipeline.tick(&tick.noisy).unwrap();
        let kf = pipeline.kalman();
        if should_publish(&kf.covariance, pipeline.config()) {
            last_publishable = Some(tick.noisy.time);
        }
        if model.fresh {
            assert_eq!(model.time, tick.noisy.time);
            let expected = kf.estimate.to_vector() - legs.to_vector();
            assert!((model.pi_base.to_vector() - expected).amax() < 1e-12);
        } else {
            assert_eq!(model.pi_base, previous.pi_base);
            assert_eq!(model.time, previous.time);
        }
        if let Some(t) = last_publishable {
            assert!(model.time <= t);
        } else {
            assert!(!model.fresh && model.time == f64::NEG_INFINITY);
        }
        previous = model;
    }
}

#[test]
fn published_model_is_never_newer_than_the_last_publishable_tick() {
    replay("stand_then_trot", 4, ParameterVector::new(0.0, 0.0, 0.0));
    replay("payload_switching", 5, ParameterVector::new(2.4, 0.01, 0.0));
}

#[test]
fn nothing_is_published_while_standing_with_bias() {
    for seed in 0..5 {
        let out = run_experiment(&bundled::load("standing_bias").unwrap(), seed).unwrap();
        assert!(out.rows.iter().filter(|r| r.time < 10.0).all(|r| !r.fresh));
        assert!(out.rows.iter().any(|r| r.fresh));
    }
}

#[test]
fn standing_alone_never_publishes() {
    let out = run_experiment(&bundled::load("stand_only").unwrap(), 5).unwrap();
    assert_eq!(out.report.metrics(EstimatorKind::KalmanPublished).duty_cycle, 0.0);
}

#[test]
fn exact_data_lets_both_estimators_converge() {
    let out = run_experiment(&bundled::load("noiseless_trot").unwrap(), 0).unwrap();
    for kind in [EstimatorKind::Kalman, EstimatorKind::KalmanPublished, EstimatorKind::Rls] {
        assert!(out.report.metrics(kind).terminal_error[0] < 1e-3, "{kind:?}");
    }
}

#[test]
fn payload_steps_are_tracked() {
    let scenario = bundled::load("payload_switching").unwrap();
    let out = run_experiment(&scenario, 7).unwrap();
    for event in &scenario.payload_events {
        let settled = out.rows.iter().find(|r| r.time >= event.time + 5.0).unwrap();
        assert!((settled.kf_m - settled.true_m).abs() < 0.5, "{}", event.label());
    }
}
