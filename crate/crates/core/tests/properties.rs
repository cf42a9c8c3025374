use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use magctl_core::dynamics::{drag_matrix, integrate_step, Pose, RobotParams, RobotState, Workspace};
use magctl_core::estimator::{
    default_process_covariance, kf_step, measurement_covariance, EstimateSource, PoseEstimate, SensorReading,
};
use magctl_core::field::FieldModel;
use magctl_core::field_oracle::{CoilSpec, GridGeometry, LookupFieldModel};
use magctl_core::harness::{degrade, DegradationSpec};
use magctl_core::math::wrap_angle;
use magctl_core::nmpc::{NmpcConfig, Problem};
use nalgebra::Matrix3;
use proptest::prelude::*;

fn coarse_model() -> Arc<LookupFieldModel> {
    static MODEL: OnceLock<Arc<LookupFieldModel>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let geometry = GridGeometry::workspace(5.0).unwrap();
            Arc::new(LookupFieldModel::from_coils(&CoilSpec::default_set(), geometry, 0.5).unwrap())
        })
        .clone()
}

fn angle() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn min_eigen(m: &Matrix3<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigenvalues().min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn wrap_lands_in_half_open_range(a in angle()) {
        let w = wrap_angle(a);
        prop_assert!(w >= -PI && w < PI);
        let turns = (a - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn drag_matrix_is_spd(theta in angle(), d1 in 1e-9..1e-3f64, d2 in 1e-9..1e-3f64) {
        let params = RobotParams { d_par: d1, d_perp: d2, ..RobotParams::magnet_robot() };
        let d = drag_matrix(theta, &params);
        prop_assert!((d[(0, 1)] - d[(1, 0)]).abs() <= 1e-12 * d1.max(d2));
        let eig = d.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > 0.0);
        prop_assert!((d.trace() - d1 - d2).abs() <= 1e-9 * (d1 + d2));
    }

    #[test]
    fn kf_covariance_stays_psd(
        steps in prop::collection::vec((any::<bool>(), -5.0..5.0f64, -5.0..5.0f64, angle()), 1..60),
        sigma in 0.1..5.0f64,
    ) {
        let q = default_process_covariance();
        let rm = measurement_covariance(sigma, 2.0 * sigma * PI / 180.0);
        let mut est = PoseEstimate { pose: Pose::new(0.0, 0.0, 0.0), covariance: rm, source: EstimateSource::Fused };
        for (k, &(fused, x, y, th)) in steps.iter().enumerate() {
            let z = SensorReading { t: k as f64, x, y, theta: wrap_angle(th), valid: true };
            let pred = Pose::new(est.pose.x + 0.1, est.pose.y, est.pose.theta + 0.05);
            let prior = est.covariance + q;
            est = kf_step(&est, pred, fused.then_some(&z), &q, &rm).unwrap();
            let p = est.covariance;
            prop_assert!((p - p.transpose()).abs().max() <= 1e-9 * p.abs().max());
            prop_assert!(min_eigen(&p) >= 0.0);
            prop_assert!(est.pose.theta >= -PI && est.pose.theta < PI);
            if fused {
                // A fused update never increases the variance over the prior.
                prop_assert!(p.trace() <= prior.trace() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn zero_current_energy_never_grows(
        vx in -50.0..50.0f64, vy in -50.0..50.0f64, omega in -20.0..20.0f64,
        x in -30.0..30.0f64, y in -30.0..30.0f64, theta in angle(),
    ) {
        let model = coarse_model();
        let params = RobotParams::magnet_robot();
        let mut s = RobotState { x, y, theta: wrap_angle(theta), vx, vy, omega };
        let zero = vec![0.0; model.coil_count()];
        let mut e = s.kinetic_energy(&params);
        for _ in 0..20 {
            s = integrate_step(&s, &zero, 0.01, model.as_ref(), &params).unwrap();
            let next = s.kinetic_energy(&params);
            prop_assert!(next <= e * (1.0 + 1e-12) + 1e-30);
            e = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn loss_is_non_negative_and_projection_feasible(
        seed_u in prop::collection::vec(-60.0..60.0f64, 8 * 5),
        prev in prop::collection::vec(-30.0..30.0f64, 8),
        x in -40.0..40.0f64, y in -40.0..40.0f64, theta in angle(),
    ) {
        let model = coarse_model();
        let params = RobotParams::magnet_robot();
        let config = NmpcConfig { horizon: 5, ..NmpcConfig::for_coils(8) };
        let targets: Vec<Pose> = (0..=5).map(|k| Pose::new(k as f64, -(k as f64), 0.3)).collect();
        let problem = Problem {
            model: model.as_ref(),
            params: &params,
            config: &config,
            initial: RobotState::at_rest(Pose::new(x, y, wrap_angle(theta))),
            targets: &targets,
            previous: &prev,
        };
        let mut u = seed_u.clone();
        problem.project(&mut u);
        prop_assert!(problem.feasible(&u));
        // Projection is idempotent.
        let mut again = u.clone();
        problem.project(&mut again);
        prop_assert_eq!(&again, &u);
        let mut work = Workspace::new(8);
        let loss = problem.loss(&u, &mut work).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }

    #[test]
    fn degraded_stream_has_requested_rate(rate in 1.0..25.0f64, seed in any::<u64>()) {
        let dt = 0.04;
        let n = 2500;
        let truth = vec![Pose::new(0.0, 0.0, 0.0); n];
        let spec = DegradationSpec::new(rate, 1.0);
        let out = degrade(&truth, dt, &spec, seed).unwrap();
        let count = out.iter().filter(|r| r.is_some()).count() as f64;
        let expected = rate * n as f64 * dt;
        prop_assert!((count - expected).abs() <= 1.0 + 1e-9, "{count} vs {expected}");
        // Readings never come faster than the control loop.
        prop_assert!(count <= n as f64);
    }
}
