//! Minimum-norm distribution of a body wrench over point contacts.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use thiserror::Error;

use crate::model::ParameterVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("need at least two stance feet, got {0}")]
    TooFewFeet(usize),
    #[error("contact map has rank {rank}, need at least 5")]
    RankDeficient { rank: usize },
    #[error("wrench is not reachable from the stance (residual {residual:.3e})")]
    Incompatible { residual: f64 },
    #[error("stance foot {foot} would need a pulling normal force ({force_z:.3} N)")]
    NegativeNormal { foot: usize, force_z: f64 },
}

const RESIDUAL_TOL: f64 = 1e-9;

/// Stacked map from per-foot forces to `[Σ F; Σ r × F]`, 6 × 3n.
pub fn contact_map(stance: &[Vector3<f64>]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(6, 3 * stance.len());
    for (j, r) in stance.iter().enumerate() {
        a.view_mut((0, 3 * j), (3, 3)).fill_with_identity();
        a.view_mut((3, 3 * j), (3, 3)).copy_from(&r.cross_matrix());
    }
    a
}

/// Minimum-norm forces with `Σ F = wrench[0..3]` and `Σ r × F = wrench[3..6]`.
///
/// Rejects stances whose contact map has rank below 5, wrenches the stance
/// cannot produce exactly, and solutions with a negative vertical component.
pub fn distribute_wrench(
    stance: &[Vector3<f64>],
    wrench: &Vector6<f64>,
) -> Result<Vec<Vector3<f64>>, DistributionError> {
    if stance.len() < 2 {
        return Err(DistributionError::TooFewFeet(stance.len()));
    }
    let a = contact_map(stance);
    let svd = a.clone().svd(true, true);
    let largest = svd.singular_values.max();
    let eps = largest * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank < 5 {
        return Err(DistributionError::RankDeficient { rank });
    }
    let b = DVector::from_column_slice(wrench.as_slice());
    let mut x = svd.solve(&b, eps).expect("U and V were computed");
    // One refinement step brings the residual down to rounding level.
    x += svd.solve(&(&b - &a * &x), eps).expect("U and V were computed");
    let residual = (&a * &x - &b).amax();
    if residual > RESIDUAL_TOL * wrench.amax().max(1.0) {
        return Err(DistributionError::Incompatible { residual });
    }
    let forces: Vec<Vector3<f64>> = (0..stance.len())
        .map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]))
        .collect();
    for (foot, f) in forces.iter().enumerate() {
        if f.z < -RESIDUAL_TOL {
            return Err(DistributionError::NegativeNormal { foot, force_z: f.z });
        }
    }
    Ok(forces)
}

/// Forces balancing `m (v̇ + g)` and `c × m g` for a body with parameters `pi`.
pub fn distribute_forces(
    stance: &[Vector3<f64>],
    pi: &ParameterVector,
    accel: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>, DistributionError> {
    let force = (accel + gravity) * pi.mass;
    let moment = Vector3::new(pi.moment_x, pi.moment_y, 0.0).cross(gravity);
    let wrench = Vector6::new(force.x, force.y, force.z, moment.x, moment.y, moment.z);
    distribute_wrench(stance, &wrench)
}

/// Horizontal shift to apply to both feet of a two-foot stance so that
/// `wrench` becomes reachable.
///
/// With two contacts the moment about the support line is fixed by the total
/// force, `(M − r₁ × F)·u = 0`. Moving both feet by `δ n`, with `n` the
/// horizontal normal of the line, changes the left side linearly in `δ`.
/// Returns `None` when the line is vertical or the total force is parallel to
/// the line.
pub fn balance_offset(pair: [Vector3<f64>; 2], wrench: &Vector6<f64>) -> Option<Vector3<f64>> {
    let u = (pair[1] - pair[0]).try_normalize(1e-12)?;
    let n = Vector3::z().cross(&u).try_normalize(1e-12)?;
    let force = wrench.fixed_rows::<3>(0).into_owned();
    let moment = wrench.fixed_rows::<3>(3).into_owned();
    let mismatch = (moment - pair[0].cross(&force)).dot(&u);
    let slope = n.cross(&force).dot(&u);
    if slope.abs() < 1e-9 {
        return None;
    }
    Some(n * (mismatch / slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::STANDARD_GRAVITY;
    use approx::assert_relative_eq;

    fn square() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.19, 0.14, -0.3),
            Vector3::new(0.19, -0.14, -0.3),
            Vector3::new(-0.19, 0.14, -0.3),
            Vector3::new(-0.19, -0.14, -0.3),
        ]
    }

    fn g() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, STANDARD_GRAVITY)
    }

    #[test]
    fn centred_body_splits_load_evenly() {
        let pi = ParameterVector::new(16.0, 0.0, 0.0);
        let f = distribute_forces(&square(), &pi, &Vector3::zeros(), &g()).unwrap();
        for fi in f {
            assert_relative_eq!(fi, Vector3::new(0.0, 0.0, 16.0 * STANDARD_GRAVITY / 4.0), epsilon = 1e-10);
        }
    }

    #[test]
    fn forward_com_loads_front_feet() {
        let pi = ParameterVector::new(16.21, 0.142648, 0.0);
        let stance = square();
        let f = distribute_forces(&stance, &pi, &Vector3::zeros(), &g()).unwrap();
        assert!(f[0].z > f[2].z && f[1].z > f[3].z);
        let total: Vector3<f64> = f.iter().sum();
        let moment: Vector3<f64> = stance.iter().zip(&f).map(|(r, fi)| r.cross(fi)).sum();
        assert_relative_eq!(total, Vector3::new(0.0, 0.0, 16.21 * STANDARD_GRAVITY), epsilon = 1e-9);
        let expected = Vector3::new(0.142648, 0.0, 0.0).cross(&g());
        assert_relative_eq!(moment, expected, epsilon = 1e-9);
    }

    #[test]
    fn com_beyond_diagonal_needs_pulling_force() {
        // Both feet on the x axis; COM on the line but ahead of the front foot.
        let stance = vec![Vector3::new(0.1, 0.0, -0.3), Vector3::new(-0.1, 0.0, -0.3)];
        let pi = ParameterVector::from_com(10.0, 0.15, 0.0);
        let err = distribute_forces(&stance, &pi, &Vector3::zeros(), &g()).unwrap_err();
        assert!(matches!(err, DistributionError::NegativeNormal { foot: 1, .. }), "{err:?}");
    }

    #[test]
    fn com_off_diagonal_is_incompatible() {
        let stance = vec![Vector3::new(0.19, 0.14, -0.3), Vector3::new(-0.19, -0.14, -0.3)];
        let pi = ParameterVector::new(16.21, 0.142648, 0.0);
        let err = distribute_forces(&stance, &pi, &Vector3::zeros(), &g()).unwrap_err();
        assert!(matches!(err, DistributionError::Incompatible { .. }));
    }

    #[test]
    fn balance_offset_makes_diagonal_feasible() {
        let pair = [Vector3::new(0.19, 0.14, -0.3), Vector3::new(-0.19, -0.14, -0.3)];
        let pi = ParameterVector::new(16.21, 0.142648, 0.0);
        let force = g() * pi.mass;
        let moment = Vector3::new(pi.moment_x, pi.moment_y, 0.0).cross(&g());
        let wrench = Vector6::new(force.x, force.y, force.z, moment.x, moment.y, moment.z);
        let shift = balance_offset(pair, &wrench).unwrap();
        assert!(shift.z.abs() < 1e-15);
        // The shifted support line passes through the COM projection.
        let moved = [pair[0] + shift, pair[1] + shift];
        let u = (moved[1] - moved[0]).normalize();
        let to_com = Vector3::new(0.0088, 0.0, 0.0) - moved[0];
        assert!((to_com.x * u.y - to_com.y * u.x).abs() < 1e-12);
        let f = distribute_wrench(&moved, &wrench).unwrap();
        assert!(f.iter().all(|fi| fi.z > 0.0));
    }

    #[test]
    fn single_foot_is_rejected() {
        let stance = vec![Vector3::new(0.1, 0.0, -0.3)];
        assert_eq!(
            distribute_wrench(&stance, &Vector6::zeros()),
            Err(DistributionError::TooFewFeet(1))
        );
    }

    #[test]
    fn coincident_feet_are_rank_deficient() {
        let p = Vector3::new(0.1, 0.0, -0.3);
        let err = distribute_wrench(&[p, p, p], &Vector6::zeros()).unwrap_err();
        assert_eq!(err, DistributionError::RankDeficient { rank: 3 });
    }
}
