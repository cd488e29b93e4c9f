//! Alignment and error metrics: closed-form rigid/similarity trajectory
//! fitting, SLAM-equivalence residuals and run summaries.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Rotation, Vec3};
use crate::observer::storage;
use crate::simulation::RunTrace;
use crate::vslam_group::TotalState;

/// Result of fitting `reference ~ scale * R * estimate + t`.
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub transform: Pose,
    pub scale: f64,
    /// Root-mean-square residual after the fit, in meters.
    pub rmse: f64,
}

/// Closed-form least-squares fit of a rigid (or similarity, when
/// `with_scale`) transform taking `estimate` onto `reference`, via the SVD of
/// the cross-covariance with the usual reflection correction.
pub fn umeyama_align(
    estimate: &[Vec3],
    reference: &[Vec3],
    with_scale: bool,
) -> Result<AlignmentResult> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            left: estimate.len(),
            right: reference.len(),
        });
    }
    let n = estimate.len();
    if n < 3 {
        return Err(Error::Degenerate("fewer than three point pairs"));
    }
    let nf = n as f64;
    let mean_est: Vec3 = estimate.iter().sum::<Vec3>() / nf;
    let mean_ref: Vec3 = reference.iter().sum::<Vec3>() / nf;

    let mut covariance = Mat3::zeros();
    let mut est_variance = 0.0;
    for (e, r) in estimate.iter().zip(reference) {
        let de = e - mean_est;
        let dr = r - mean_ref;
        covariance += dr * de.transpose() / nf;
        est_variance += de.norm_squared() / nf;
    }

    let svd = covariance.svd(true, true);
    let u = svd.u.expect("svd of 3x3 matrix");
    let v_t = svd.v_t.expect("svd of 3x3 matrix");
    let d = svd.singular_values;
    if !(d[0] > 0.0) || d[1] <= 1e-9 * d[0] {
        return Err(Error::Degenerate(
            "point configuration is collinear or collapsed",
        ));
    }
    let sign = (u.determinant() * v_t.determinant()).signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, sign));
    let rotation = Rotation::from_matrix_unchecked(u * correction * v_t);

    let scale = if with_scale {
        if !(est_variance > 0.0) {
            return Err(Error::Degenerate("estimate cloud is collapsed"));
        }
        (d[0] + d[1] + sign * d[2]) / est_variance
    } else {
        1.0
    };
    let translation = mean_ref - scale * rotation.apply(&mean_est);

    let mut sq_sum = 0.0;
    for (e, r) in estimate.iter().zip(reference) {
        let mapped = scale * rotation.apply(e) + translation;
        sq_sum += (r - mapped).norm_squared();
    }
    Ok(AlignmentResult {
        transform: Pose::new(rotation, translation),
        scale,
        rmse: (sq_sum / nf).sqrt(),
    })
}

/// Largest discrepancy between the ego-centric landmark coordinates of the
/// two configurations: `max_i ||R_P^T (p_i - x_P) - R_Phat^T (phat_i - x_Phat)||`.
/// Zero exactly when the configurations are equal up to a rigid change of the
/// reference frame.
pub fn equivalence_residual(estimate: &TotalState, truth: &TotalState) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            left: estimate.len(),
            right: truth.len(),
        });
    }
    let mut residual = 0.0f64;
    for i in 0..truth.len() {
        let diff = (truth.body_coordinates(i) - estimate.body_coordinates(i)).norm();
        residual = residual.max(diff);
    }
    Ok(residual)
}

/// Summary of a scenario run.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    /// Final angle between each output error and its origin bearing, radians.
    pub bearing_errors: Vec<f64>,
    /// Final `r_hat_i / r_i` per landmark.
    pub range_ratios: Vec<f64>,
    /// Final per-landmark storage values.
    pub final_storage: Vec<f64>,
    /// Whether every storage trace was non-increasing within the slack.
    pub storage_monotone: bool,
    /// Per-step slack used for the monotonicity check.
    pub monotonicity_slack: f64,
    /// Largest single-step storage increase observed across landmarks.
    pub max_storage_increase: f64,
    pub equivalence_residual: f64,
    /// RMSE of the estimated robot positions after rigid alignment to truth.
    pub trajectory_rmse: f64,
}

/// Builds an [`ErrorReport`] from a run trace, checking every storage trace
/// for monotone decay within `slack` per step.
pub fn error_report(trace: &RunTrace, slack: f64) -> Result<ErrorReport> {
    let last = trace.final_row();
    let n = trace.ids.len();

    let mut bearing_errors = Vec::with_capacity(n);
    let mut range_ratios = Vec::with_capacity(n);
    let mut final_storage = Vec::with_capacity(n);
    for d in &last.diagnostics {
        let d = d.as_ref().ok_or(Error::EmptyWindow)?;
        bearing_errors.push(d.error_angle);
        range_ratios.push(d.range_ratio.unwrap_or(f64::NAN));
        final_storage.push(d.storage.unwrap_or(f64::NAN));
    }

    let mut max_increase = 0.0f64;
    for i in 0..n {
        let mut previous: Option<f64> = None;
        for row in &trace.rows {
            if let Some(Some(value)) = row.diagnostics.get(i).map(|d| {
                d.as_ref().and_then(|diag| diag.storage)
            }) {
                if let Some(prev) = previous {
                    max_increase = max_increase.max(value - prev);
                }
                previous = Some(value);
            }
        }
    }

    let est_positions: Vec<Vec3> = trace
        .rows
        .iter()
        .map(|r| *r.estimate.pose().translation())
        .collect();
    let true_positions: Vec<Vec3> = trace
        .rows
        .iter()
        .map(|r| *r.truth.pose().translation())
        .collect();
    let trajectory_rmse = umeyama_align(&est_positions, &true_positions, false)
        .map(|a| a.rmse)
        .unwrap_or(f64::NAN);

    Ok(ErrorReport {
        bearing_errors,
        range_ratios,
        final_storage,
        storage_monotone: max_increase <= slack,
        monotonicity_slack: slack,
        max_storage_increase: max_increase,
        equivalence_residual: equivalence_residual(&last.estimate, &last.truth)?,
        trajectory_rmse,
    })
}

/// Per-landmark storage recomputed from a pair of configurations; convenience
/// for tests and external tooling.
pub fn storage_from_states(
    estimate: &TotalState,
    truth: &TotalState,
    origin_bearings: &[crate::geometry::Bearing],
    frames: &[crate::vslam_group::LandmarkFrame],
    depth_gain: f64,
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(truth.len());
    let estimate_ranges = estimate.ranges();
    let truth_ranges = truth.ranges();
    for i in 0..truth.len() {
        let q = estimate.body_coordinates(i);
        let y_hat = crate::geometry::Bearing::from_vector(q)?;
        let delta = y_hat.rotated(&frames[i].rotation);
        values.push(storage(
            &delta,
            &origin_bearings[i],
            estimate_ranges[i],
            truth_ranges[i],
            depth_gain,
        )?);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_standard_normal;
    use crate::vslam_group::{action_state, GroupElement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0xe7a1)
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    sample_standard_normal(rng),
                    sample_standard_normal(rng),
                    sample_standard_normal(rng),
                ) * scale
            })
            .collect()
    }

    #[test]
    fn umeyama_identity_fit() {
        let mut rng = rng();
        let cloud = random_cloud(&mut rng, 30, 3.0);
        let fit = umeyama_align(&cloud, &cloud, false).unwrap();
        assert!(fit.rmse < TOL);
        assert!(fit.transform.rotation().angle() < TOL);
        assert!(fit.transform.translation().norm() < TOL);
        assert_eq!(fit.scale, 1.0);
    }

    #[test]
    fn umeyama_recovers_exact_transforms() {
        let mut rng = rng();
        for with_scale in [false, true] {
            for _ in 0..50 {
                let cloud = random_cloud(&mut rng, 20, 2.0);
                let transform = Pose::random(&mut rng, 4.0);
                let scale = if with_scale {
                    rng.gen_range(0.3..3.0)
                } else {
                    1.0
                };
                let mapped: Vec<Vec3> = cloud
                    .iter()
                    .map(|p| scale * transform.rotation().apply(p) + transform.translation())
                    .collect();
                let fit = umeyama_align(&cloud, &mapped, with_scale).unwrap();
                assert!(fit.rmse < 1e-9);
                assert!(fit.transform.rotation().angle_to(transform.rotation()) < 1e-9);
                assert!((fit.transform.translation() - transform.translation()).norm() < 1e-9);
                assert!((fit.scale - scale).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn umeyama_rejects_degenerate_input() {
        let mut rng = rng();
        let cloud = random_cloud(&mut rng, 2, 1.0);
        assert!(matches!(
            umeyama_align(&cloud, &cloud, false),
            Err(Error::Degenerate(_))
        ));

        // Collinear points leave the rotation about the line unconstrained.
        let line: Vec<Vec3> = (0..10).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&line, &line, false),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn umeyama_is_equivariant_under_reference_motion() {
        let mut rng = rng();
        for _ in 0..20 {
            let est = random_cloud(&mut rng, 25, 2.0);
            let reference = random_cloud(&mut rng, 25, 2.0);
            let fit = umeyama_align(&est, &reference, false).unwrap();

            let s = Pose::random(&mut rng, 3.0);
            let moved: Vec<Vec3> = reference.iter().map(|p| s.point_from_body(p)).collect();
            let fit_moved = umeyama_align(&est, &moved, false).unwrap();
            assert!((fit_moved.rmse - fit.rmse).abs() < 1e-12);
            let composed = s * fit.transform;
            assert!(
                fit_moved
                    .transform
                    .rotation()
                    .angle_to(composed.rotation())
                    < 1e-9
            );
            assert!((fit_moved.transform.translation() - composed.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn equivalence_residual_examples() {
        let mut rng = rng();
        let truth = {
            let pose = Pose::random(&mut rng, 2.0);
            let landmarks = random_cloud(&mut rng, 4, 5.0)
                .into_iter()
                .map(|p| p + Vec3::new(10.0, 0.0, 0.0))
                .collect();
            TotalState::new(pose, landmarks).unwrap()
        };

        assert!(equivalence_residual(&truth, &truth).unwrap() < TOL);

        // Pure frame change of the reference: residual stays zero.
        let s = Pose::random(&mut rng, 3.0);
        let moved = truth.frame_change(&s);
        assert!(equivalence_residual(&moved, &truth).unwrap() < TOL);

        // Group action with identity landmark components is also a frame move.
        let x = GroupElement::from_parts(
            Pose::random(&mut rng, 2.0),
            vec![crate::vslam_group::LandmarkFrame::identity(); 4],
        );
        let acted = action_state(&x, &truth).unwrap();
        assert!(equivalence_residual(&acted, &truth).unwrap() < TOL);

        // Perturbing one landmark by 0.1 m in the body frame gives 0.1.
        let mut landmarks = truth.landmarks().to_vec();
        landmarks[2] += truth.pose().rotation().apply(&Vec3::new(0.1, 0.0, 0.0));
        let perturbed = TotalState::new(*truth.pose(), landmarks).unwrap();
        assert!((equivalence_residual(&perturbed, &truth).unwrap() - 0.1).abs() < TOL);
    }

    #[test]
    fn equivalence_residual_is_frame_invariant() {
        let mut rng = rng();
        for _ in 0..50 {
            let a = TotalState::new(
                Pose::random(&mut rng, 2.0),
                random_cloud(&mut rng, 3, 4.0)
                    .into_iter()
                    .map(|p| p + Vec3::new(8.0, 0.0, 0.0))
                    .collect(),
            )
            .unwrap();
            let b = TotalState::new(
                Pose::random(&mut rng, 2.0),
                random_cloud(&mut rng, 3, 4.0)
                    .into_iter()
                    .map(|p| p + Vec3::new(8.0, 0.0, 0.0))
                    .collect(),
            )
            .unwrap();
            let base = equivalence_residual(&a, &b).unwrap();
            let s = Pose::random(&mut rng, 3.0);
            let left = equivalence_residual(&a.frame_change(&s), &b).unwrap();
            let right = equivalence_residual(&a, &b.frame_change(&s)).unwrap();
            assert!((left - base).abs() < TOL);
            assert!((right - base).abs() < TOL);
        }
    }
}
