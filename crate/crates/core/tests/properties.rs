mod common;

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use qpi_core::adaptation::{gate_contacts, should_publish, AdaptationConfig};
use qpi_core::estimators::{kf_predict, kf_update};
use qpi_core::model::{
    predicted_wrench_with, regressor_matrix, FootState, LegModel, ParameterVector, RegressorForm, RigidBodyState,
    RobotSnapshot, STANDARD_GRAVITY,
};

fn g() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, STANDARD_GRAVITY)
}

fn snapshot(base: RigidBodyState) -> RobotSnapshot {
    RobotSnapshot {
        time: 0.0,
        base,
        feet: std::array::from_fn(|i| FootState::in_contact(i, Vector3::new(0.1, 0.1, -0.3), Vector3::zeros())),
        gravity: g(),
    }
}

fn forms() -> impl Strategy<Value = RegressorForm> {
    prop_oneof![Just(RegressorForm::Reduced), Just(RegressorForm::FirstMoment)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn predicted_wrench_is_linear(seed in any::<u64>(), a in 0.1f64..3.0, b in 0.1f64..3.0, form in forms()) {
        let mut rng = common::rng(seed);
        let snap = snapshot(common::random_base(&mut rng));
        let p1 = common::random_parameters(&mut rng);
        let p2 = common::random_parameters(&mut rng);
        let mix = ParameterVector::from_vector(&(p1.to_vector() * a + p2.to_vector() * b));
        let lhs = predicted_wrench_with(&mix, &snap, form).unwrap();
        let rhs = predicted_wrench_with(&p1, &snap, form).unwrap() * a + predicted_wrench_with(&p2, &snap, form).unwrap() * b;
        prop_assert!((lhs - rhs).amax() <= 1e-10 * rhs.amax().max(1.0));
    }

    #[test]
    fn reduced_regressor_structure(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let base = common::random_base(&mut rng);
        let phi = regressor_matrix(&base, &g(), RegressorForm::Reduced);
        let total = base.linear_acceleration + g();
        for r in 0..3 {
            prop_assert_eq!(phi[(r, 0)], total[r]);
            prop_assert_eq!(phi[(r, 1)], 0.0);
            prop_assert_eq!(phi[(r, 2)], 0.0);
        }
        let moment_rows = [[0.0, 0.0, STANDARD_GRAVITY], [0.0, -STANDARD_GRAVITY, 0.0], [0.0, 0.0, 0.0]];
        for (r, row) in moment_rows.iter().enumerate() {
            for c in 0..3 {
                prop_assert_eq!(phi[(3 + r, c)], row[c]);
            }
        }
    }

    #[test]
    fn first_moment_regressor_structure(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let base = common::random_base(&mut rng);
        let phi = regressor_matrix(&base, &g(), RegressorForm::FirstMoment);
        let total = base.linear_acceleration + g();
        for r in 0..3 {
            prop_assert_eq!(phi[(r, 0)], total[r]);
            prop_assert_eq!(phi[(3 + r, 0)], 0.0);
        }
        // Moment rows are h × (v̇ + g) with h rotated into the world frame.
        let hx = base.orientation * Vector3::x();
        let expected = hx.cross(&total);
        for r in 0..3 {
            prop_assert!((phi[(3 + r, 1)] - expected[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn forms_agree_for_level_body_at_rest(z in -1.0f64..1.0) {
        let base = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, z));
        prop_assert_eq!(
            regressor_matrix(&base, &g(), RegressorForm::Reduced),
            regressor_matrix(&base, &g(), RegressorForm::FirstMoment)
        );
    }

    #[test]
    fn leg_jacobian_matches_finite_differences(q0 in -0.6f64..0.6, q1 in -1.2f64..1.2, q2 in -2.4f64..-0.3, leg in 0usize..4) {
        let model = LegModel::small_quadruped(leg);
        let q = Vector3::new(q0, q1, q2);
        let h = 1e-6;
        let j = model.jacobian(&q);
        for c in 0..3 {
            let mut dq = Vector3::zeros();
            dq[c] = h;
            let fd = (model.forward_kinematics(&(q + dq)) - model.forward_kinematics(&(q - dq))) / (2.0 * h);
            for r in 0..3 {
                prop_assert!((fd[r] - j[(r, c)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn torque_force_round_trip(q0 in -0.6f64..0.6, q1 in -1.2f64..1.2, q2 in -2.4f64..-0.3, f in prop::array::uniform3(-200.0f64..200.0)) {
        let model = LegModel::small_quadruped(1);
        let q = Vector3::new(q0, q1, q2);
        let force = Vector3::from(f);
        let back = model.grf_from_torques(&q, &model.torques_from_grf(&q, &force)).unwrap();
        prop_assert!((back - force).amax() < 1e-9);
    }

    #[test]
    fn gating_is_idempotent(flags in prop::array::uniform4((any::<bool>(), any::<bool>())), fz in 0.0f64..100.0) {
        let feet = std::array::from_fn(|i| FootState {
            index: i,
            position: Vector3::new(0.1, -0.1, -0.3),
            force: Vector3::new(1.0, 2.0, fz),
            contact_measured: flags[i].0,
            contact_scheduled: flags[i].1,
        });
        let once = gate_contacts(&feet);
        prop_assert_eq!(gate_contacts(&once), once);
    }

    #[test]
    fn predict_update_keep_covariance_psd(seed in any::<u64>(), steps in 1usize..50) {
        let mut rng = common::rng(seed);
        let mut kf = common::kalman(1.0, 5e-3, 1.0);
        for _ in 0..steps {
            let phi = common::random_phi(&mut rng, 3.0);
            let predicted = kf_predict(&kf);
            let z = phi * Vector3::new(16.0, 0.1, 0.0) + nalgebra::Vector6::from_fn(|_, _| common::normal(&mut rng));
            kf = kf_update(&predicted, &common::sample(phi, z)).unwrap();
            prop_assert!(kf.covariance.symmetric_eigenvalues().min() >= -1e-10);
            for i in 0..3 {
                prop_assert!(kf.covariance[(i, i)] <= predicted.covariance[(i, i)] + 1e-12);
            }
        }
    }

    #[test]
    fn publication_survives_an_update(seed in any::<u64>(), d in prop::array::uniform3(0.01f64..0.1)) {
        let mut rng = common::rng(seed);
        let config = AdaptationConfig::default();
        let mut kf = common::kalman(1.0, 0.0, 100.0);
        kf.covariance = Matrix3::from_diagonal(&Vector3::from(d));
        prop_assume!(should_publish(&kf.covariance, &config));
        let phi = common::random_phi(&mut rng, 1.0);
        let next = kf_update(&kf, &common::sample(phi, phi * Vector3::new(1.0, 0.0, 0.0))).unwrap();
        prop_assert!(should_publish(&next.covariance, &config));
    }

    #[test]
    fn raising_thresholds_never_blocks_publication(d in prop::array::uniform3(0.0f64..1.0), scale in 1.0f64..5.0) {
        let p = Matrix3::from_diagonal(&Vector3::from(d));
        let config = AdaptationConfig::default();
        let looser = AdaptationConfig { thresholds: config.thresholds.map(|t| t * scale), ..config.clone() };
        prop_assert!(!should_publish(&p, &config) || should_publish(&p, &looser));
    }
}
