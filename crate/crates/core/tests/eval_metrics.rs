use obsint::data::{simulate, Dataset, TrajectorySpec};
use obsint::eval::{drift_curve, evaluate_sequence, pose_rmse, relative_pose_rmse, trajectory_rmse, EvalConfig, Method};
use obsint::preint::Scheme;
use obsint::so3::{exp_so3, quat_mul, Vec3};

fn noiseless(duration: f64) -> Dataset {
    simulate(&TrajectorySpec::demo(duration, 0)).unwrap().dataset
}

#[test]
fn noiseless_relative_pose_is_at_discretization_floor() {
    let d = noiseless(20.0);
    let (t, r) = relative_pose_rmse(&d, &d.imu, 10, Scheme::Midpoint).unwrap();
    assert!(t < 1e-5 && r < 1e-5, "{t} {r}");
}

#[test]
fn identical_predictions_give_exact_zero() {
    let d = noiseless(2.0);
    let states: Vec<_> = d.gt.iter().map(|g| g.state()).collect();
    assert_eq!(pose_rmse(&states, &states).unwrap(), (0.0, 0.0));
}

#[test]
fn drift_vanishes_at_zero_horizon_and_grows() {
    let mut spec = TrajectorySpec::demo(20.0, 1);
    spec.intrinsics.sigma_a = 0.02;
    spec.intrinsics.sigma_g = 2e-3;
    let d = simulate(&spec).unwrap().dataset;
    let c = drift_curve(&d, &d.imu, &[0.0, 0.1, 0.5, 2.0], 7, Scheme::Midpoint).unwrap();
    assert_eq!((c[0].pos, c[0].rot, c[0].vel), (0.0, 0.0, 0.0));
    for w in c.windows(2) {
        assert!(w[1].pos > w[0].pos && w[1].rot > w[0].rot && w[1].vel > w[0].vel);
    }
    assert!(drift_curve(&d, &d.imu, &[25.0], 1, Scheme::Midpoint).is_err());
}

#[test]
fn constant_gyro_bias_rotation_drift_is_linear() {
    let b = Vec3::new(0.004, -0.003, 0.002);
    let mut spec = TrajectorySpec::demo(10.0, 0);
    spec.position = Default::default();
    spec.intrinsics.initial_bg = b;
    let d = simulate(&spec).unwrap().dataset;
    for p in drift_curve(&d, &d.imu, &[0.1, 0.5, 1.0], 3, Scheme::Midpoint).unwrap() {
        let expected = b.norm() * p.horizon;
        assert!((p.rot - expected).abs() < 0.05 * expected, "{} vs {expected}", p.rot);
    }
}

#[test]
fn trajectory_rmse_floor_and_reset() {
    let d = noiseless(30.0);
    let open = trajectory_rmse(&d, &d.imu, None, Scheme::Midpoint).unwrap();
    assert!(open < 1e-2, "{open}");
    let mut spec = TrajectorySpec::demo(30.0, 0);
    spec.intrinsics.initial_ba = Vec3::new(0.05, 0.0, 0.0);
    let biased = simulate(&spec).unwrap().dataset;
    let drift = trajectory_rmse(&biased, &biased.imu, None, Scheme::Midpoint).unwrap();
    let reset = trajectory_rmse(&biased, &biased.imu, Some(2.0), Scheme::Midpoint).unwrap();
    assert!(drift > 1.0 && reset < 0.1 * drift, "{drift} {reset}");
}

#[test]
fn metrics_invariant_to_yaw_and_translation() {
    let d = noiseless(10.0);
    let mut spec = TrajectorySpec::demo(10.0, 3);
    spec.intrinsics.sigma_g = 1e-3;
    spec.intrinsics.sigma_a = 1e-2;
    let noisy = simulate(&spec).unwrap().dataset.imu;
    let yaw = exp_so3(&Vec3::new(0.0, 0.0, 0.8));
    let shift = Vec3::new(100.0, -20.0, 3.0);
    let mut moved = d.clone();
    for g in &mut moved.gt {
        g.q = quat_mul(&yaw, &g.q);
        g.p = yaw.rotate(&g.p) + shift;
        g.v = g.v.map(|v| yaw.rotate(&v));
    }
    let cfg = EvalConfig { drift_stride: 5, ..Default::default() };
    let a = evaluate_sequence("s", &d, &noisy, Method::Raw, &cfg, Scheme::Midpoint).unwrap();
    let b = evaluate_sequence("s", &moved, &noisy, Method::Raw, &cfg, Scheme::Midpoint).unwrap();
    assert!((a.rel_trans_rmse - b.rel_trans_rmse).abs() < 1e-9);
    assert!((a.rel_rot_rmse - b.rel_rot_rmse).abs() < 1e-9);
    for (x, y) in a.drift.iter().zip(&b.drift) {
        assert!((x.pos - y.pos).abs() < 1e-8 && (x.rot - y.rot).abs() < 1e-9 && (x.vel - y.vel).abs() < 1e-9);
    }
}

#[test]
fn mismatched_measurements_rejected() {
    let d = noiseless(1.0);
    assert!(relative_pose_rmse(&d, &d.imu[1..], 10, Scheme::Midpoint).is_err());
    assert!(relative_pose_rmse(&d.slice(0..5), &d.imu[..5], 10, Scheme::Midpoint).is_err());
}
