use std::path::Path;

use obsint::data::{
    align_ground_truth, derive_velocity, load_euroc_csv, make_windows, save_euroc_csv, simulate, split_ranges,
    AugmentationConfig, Dataset, GtState, Split, SplitConfig, TrajectorySpec, WindowConfig,
};
use obsint::losses::{total_loss, LossConfig};
use obsint::preint::{propagate_state, Scheme};
use obsint::so3::{exp_so3, Vec3};
use obsint::{Error, ImuSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn three_row_fixtures_load_to_known_values() {
    let d = load_euroc_csv(&fixture("imu_3rows.csv"), &fixture("gt_3rows.csv")).unwrap();
    assert_eq!(d.imu.len(), 3);
    assert_eq!(d.meta.t0_ns, 1403636579758555392);
    assert_eq!(d.imu[0].t, 0.0);
    assert_eq!(d.imu[1].t, 5_000_192.0 * 1e-9);
    assert_eq!(d.imu[2].t, 10_000_128.0 * 1e-9);
    assert_eq!(d.imu[0].omega, Vec3::new(-0.099134701513277898, 0.14730578886832138, 0.02722713633111154));
    assert_eq!(d.imu[2].accel, Vec3::new(7.8861810416666662, -0.42495483333333334, -2.4353180833333332));
    assert_eq!(d.gt.len(), 3);
    assert_eq!(d.gt[1].p, Vec3::new(4.688177, -1.786770, 0.787350));
    assert_eq!(d.gt[2].v, Some(Vec3::new(-0.030043, 0.034422, 0.808240)));
    let q = d.gt[0].q.to_array();
    let n = (0.534108f64.powi(2) + 0.153029f64.powi(2) + 0.827383f64.powi(2) + 0.082152f64.powi(2)).sqrt();
    assert!((q[0] - 0.534108 / n).abs() < 1e-15 && (q[2] + 0.827383 / n).abs() < 1e-15);
    assert!((d.meta.imu_rate - 1e9 / 5_000_192.0).abs() < 1e-6 || (d.meta.imu_rate - 1e9 / 4_999_936.0).abs() < 1e-6);
}

#[test]
fn missing_file_and_bad_rows() {
    let missing = Path::new("/nonexistent/imu.csv");
    assert!(matches!(load_euroc_csv(missing, &fixture("gt_3rows.csv")), Err(Error::MissingFile(_))));
    let dir = tempfile::tempdir().unwrap();
    let imu = dir.path().join("imu.csv");
    std::fs::write(&imu, "1,0,0,0,0,0,0\n2,0,0,0,0,0\n").unwrap();
    match load_euroc_csv(&imu, &fixture("gt_3rows.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn save_load_round_trip_is_lossless_at_ns() {
    let mut spec = TrajectorySpec::demo(3.0, 5);
    spec.intrinsics.sigma_g = 1e-3;
    spec.intrinsics.sigma_a = 1e-2;
    let mut d = simulate(&spec).unwrap().dataset;
    d.meta.t0_ns = 1_403_636_579_758_555_392;
    let dir = tempfile::tempdir().unwrap();
    let (i, g) = (dir.path().join("imu.csv"), dir.path().join("gt.csv"));
    save_euroc_csv(&d, &i, &g).unwrap();
    let back = load_euroc_csv(&i, &g).unwrap();
    assert_eq!(back.meta.t0_ns, d.meta.t0_ns);
    for (a, b) in back.imu.iter().zip(&d.imu) {
        assert_eq!((a.t * 1e9).round(), (b.t * 1e9).round());
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.accel, b.accel);
    }
    for (a, b) in back.gt.iter().zip(&d.gt) {
        assert_eq!(a.p, b.p);
        assert_eq!(a.v, b.v);
        assert!(a.q.angle_to(&b.q) < 1e-15);
    }
    // saving the loaded copy reproduces the files byte for byte
    let (i2, g2) = (dir.path().join("imu2.csv"), dir.path().join("gt2.csv"));
    save_euroc_csv(&back, &i2, &g2).unwrap();
    assert_eq!(std::fs::read(&i).unwrap(), std::fs::read(&i2).unwrap());
}

#[test]
fn duplicates_dropped_and_order_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (i, g) = (dir.path().join("imu.csv"), dir.path().join("gt.csv"));
    std::fs::write(&i, "3000000,0,0,3,0,0,9.8\n1000000,0,0,1,0,0,9.8\n2000000,0,0,2,0,0,9.8\n2000000,0,0,7,0,0,9.8\n").unwrap();
    std::fs::write(&g, "1000000,0,0,0,1,0,0,0\n3000000,0,0,0,1,0,0,0\n").unwrap();
    let a = load_euroc_csv(&i, &g).unwrap();
    let b = load_euroc_csv(&i, &g).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.meta.dropped_duplicates, 1);
    let z: Vec<f64> = a.imu.iter().map(|s| s.omega.z).collect();
    assert_eq!(z, vec![1.0, 2.0, 3.0]);
}

#[test]
fn velocity_of_sinusoid_within_bound() {
    let rate = 200.0;
    let t: Vec<f64> = (0..=400).map(|i| i as f64 / rate).collect();
    let w = std::f64::consts::TAU;
    let p: Vec<Vec3> = t.iter().map(|&x| Vec3::new((w * x).sin(), (w * x + 1.0).sin(), 0.0)).collect();
    let v = derive_velocity(&t, &p, 0).unwrap();
    let worst = t
        .iter()
        .zip(&v)
        .map(|(&x, vi)| (vi - Vec3::new(w * (w * x).cos(), w * (w * x + 1.0).cos(), 0.0)).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn alignment_is_identity_on_aligned_data() {
    let d = simulate(&TrajectorySpec::demo(2.0, 0)).unwrap().dataset;
    assert_eq!(align_ground_truth(&d).unwrap(), d);
}

#[test]
fn interpolated_positions_match_closed_form() {
    let spec = TrajectorySpec::demo(10.0, 0);
    // ground truth at 100 Hz, IMU at 200 Hz offset by a third of a sample
    let gt: Vec<GtState> = (0..=1000)
        .map(|i| {
            let t = i as f64 * 0.01;
            let s = spec.evaluate(t);
            GtState { t, q: s.q, p: s.p, v: None }
        })
        .collect();
    let imu: Vec<ImuSample> = (0..1990).map(|i| spec.true_measurement(0.0017 + i as f64 * 0.005)).collect();
    let aligned = align_ground_truth(&Dataset { imu, gt, meta: Default::default() }).unwrap();
    let dt: f64 = 0.01;
    let mut worst_p: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    for g in &aligned.gt {
        let s = spec.evaluate(g.t);
        worst_p = worst_p.max((g.p - s.p).norm());
        worst_q = worst_q.max(g.q.angle_to(&s.q));
    }
    // linear interpolation error ≤ dt²/8 · max|p''|
    let bound = dt * dt / 8.0 * 10.0;
    assert!(worst_p < bound, "{worst_p} vs {bound}");
    assert!(worst_q < dt * dt);
    assert!(aligned.gt.iter().all(|g| g.v.is_some()));
}

#[test]
fn disjoint_overlap_is_an_error() {
    let gt = vec![GtState { t: 10.0, q: exp_so3(&Vec3::zeros()), p: Vec3::zeros(), v: None }; 1];
    let imu = vec![ImuSample::new(0.0, Vec3::zeros(), Vec3::zeros()), ImuSample::new(1.0, Vec3::zeros(), Vec3::zeros())];
    assert!(align_ground_truth(&Dataset { imu, gt, meta: Default::default() }).is_err());
}

#[test]
fn windows_satisfy_closure() {
    let d = simulate(&TrajectorySpec::demo(8.0, 2)).unwrap().dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = WindowConfig { window_len: 100, stride: 37, random_offset: true };
    let aug = AugmentationConfig { noise_std: [1e-3; 6], bias_probability: 0.5, ..Default::default() };
    let fr = [0.2, 0.4, 0.6, 0.8, 1.0];
    let w = make_windows(&d, 0..d.imu.len(), &cfg, &aug, &fr, Scheme::Midpoint, Split::Train, &mut rng).unwrap();
    assert!(w.len() > 10);
    assert!(w.iter().any(|x| x.augmentation.bias.is_some()) && w.iter().any(|x| x.augmentation.bias.is_none()));
    for win in &w {
        let full = win.targets.last().unwrap();
        assert_eq!(full.n_samples, 100);
        let end = propagate_state(&win.state_start, &full.delta, &d.meta.gravity);
        assert!((end.p - win.state_end.p).norm() < 1e-10);
        assert!((end.v - win.state_end.v).norm() < 1e-10);
        assert!(end.q.angle_to(&win.state_end.q) < 1e-10);
    }
}

#[test]
fn injected_bias_is_explained_by_compensation() {
    // Non-rotating, noiseless: the integrated-bias terms are exact there.
    let mut spec = TrajectorySpec::demo(6.0, 0);
    spec.attitude = Default::default();
    let d = simulate(&spec).unwrap().dataset;
    let cfg = WindowConfig { window_len: 200, stride: 200, random_offset: false };
    let fr = LossConfig::default().horizon_fractions;
    let run = |aug: &AugmentationConfig| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        make_windows(&d, 0..d.imu.len(), &cfg, aug, &fr, Scheme::Midpoint, Split::Train, &mut rng).unwrap()
    };
    let clean = run(&AugmentationConfig::default());
    let biased = run(&AugmentationConfig { bias_probability: 1.0, max_bias_gyro: 0.0, max_bias_accel: 0.3, ..Default::default() });
    let loss = LossConfig::default();
    for (c, b) in clean.iter().zip(&biased) {
        let (lc, _) = total_loss(&c.raw, &c.raw, &c.targets, &loss, Scheme::Midpoint).unwrap();
        let (lb, _) = total_loss(&b.raw, &b.raw, &b.targets, &loss, Scheme::Midpoint).unwrap();
        assert!((lc.total - lb.total).abs() < 1e-9, "{} vs {}", lc.total, lb.total);
        let mut uncompensated = b.targets.clone();
        uncompensated.iter_mut().for_each(|t| t.compensation = None);
        let (lu, _) = total_loss(&b.raw, &b.raw, &uncompensated, &loss, Scheme::Midpoint).unwrap();
        assert!(lu.total > lc.total + 1e-4);
    }
}

#[test]
fn splits_do_not_leak() {
    let n = 30_000;
    for window in [50, 200, 1000] {
        let r = split_ranges(n, &SplitConfig { gap: 10, ..Default::default() }, window).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![Split::Train, Split::Val, Split::Test]);
        assert!(r[1].1.start >= r[0].1.end + window);
        assert!(r[2].1.start >= r[1].1.end + window);
        assert!(r[2].1.end <= n);
    }
}
