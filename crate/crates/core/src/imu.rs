//! Measurement and state types, and the additive bias + white-noise sensor
//! model used by the simulator and by training-time augmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{Mat3, UnitQuaternion, Vec3};

/// One IMU reading: time (s), angular rate (rad/s) and specific force (m/s²),
/// both in the IMU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub omega: Vec3,
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, omega: Vec3, accel: Vec3) -> Self {
        Self { t, omega, accel }
    }

    /// `[wx, wy, wz, ax, ay, az]`
    pub fn channels(&self) -> [f64; 6] {
        [self.omega.x, self.omega.y, self.omega.z, self.accel.x, self.accel.y, self.accel.z]
    }

    pub fn from_channels(t: f64, c: &[f64; 6]) -> Self {
        Self { t, omega: Vec3::new(c[0], c[1], c[2]), accel: Vec3::new(c[3], c[4], c[5]) }
    }
}

/// Navigation state: attitude `^G_I q`, gyro bias, global velocity, accel
/// bias, global position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuState {
    pub q: UnitQuaternion,
    pub bg: Vec3,
    pub v: Vec3,
    pub ba: Vec3,
    pub p: Vec3,
}

impl Default for ImuState {
    fn default() -> Self {
        Self {
            q: UnitQuaternion::identity(),
            bg: Vec3::zeros(),
            v: Vec3::zeros(),
            ba: Vec3::zeros(),
            p: Vec3::zeros(),
        }
    }
}

impl ImuState {
    pub fn from_pose(q: UnitQuaternion, p: Vec3, v: Vec3) -> Self {
        Self { q, p, v, ..Default::default() }
    }
}

/// Sensor error parameters. Noise stds are densities: the per-sample std
/// is `sigma / sqrt(dt)`; random-walk stds are per `sqrt(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuIntrinsics {
    pub sigma_g: f64,
    pub sigma_a: f64,
    pub sigma_bg_walk: f64,
    pub sigma_ba_walk: f64,
    pub initial_bg: Vec3,
    pub initial_ba: Vec3,
    /// Optional scale/misalignment applied to the true rate before biasing.
    pub gyro_matrix: Option<Mat3>,
    pub accel_matrix: Option<Mat3>,
}

impl Default for ImuIntrinsics {
    fn default() -> Self {
        Self {
            sigma_g: 0.0,
            sigma_a: 0.0,
            sigma_bg_walk: 0.0,
            sigma_ba_walk: 0.0,
            initial_bg: Vec3::zeros(),
            initial_ba: Vec3::zeros(),
            gyro_matrix: None,
            accel_matrix: None,
        }
    }
}

impl ImuIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let stds = [self.sigma_g, self.sigma_a, self.sigma_bg_walk, self.sigma_ba_walk];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("noise standard deviations must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Per-sample white-noise std for each of the six channels.
    pub fn per_sample_noise_std(&self, dt: f64) -> [f64; 6] {
        let g = self.sigma_g / dt.sqrt();
        let a = self.sigma_a / dt.sqrt();
        [g, g, g, a, a, a]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GravityModel {
    pub g: Vec3,
}

impl Default for GravityModel {
    fn default() -> Self {
        Self { g: Vec3::new(0.0, 0.0, -9.8) }
    }
}

impl GravityModel {
    pub fn new(g: Vec3) -> Result<Self> {
        let n = g.norm();
        if !(9.7..=9.9).contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "gravity magnitude {n} outside [9.7, 9.9]; use GravityModel::custom to override"
            )));
        }
        Ok(Self { g })
    }

    /// Any gravity vector, including zero (used by tests and unusual rigs).
    pub fn custom(g: Vec3) -> Self {
        Self { g }
    }

    pub fn zero() -> Self {
        Self { g: Vec3::zeros() }
    }
}

/// Evolving sensor error state for one simulated sequence.
#[derive(Debug, Clone)]
pub struct SensorState {
    rng: ChaCha8Rng,
    pub bg: Vec3,
    pub ba: Vec3,
}

impl SensorState {
    pub fn new(intrinsics: &ImuIntrinsics, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), bg: intrinsics.initial_bg, ba: intrinsics.initial_ba }
    }

    fn normal3(&mut self) -> Vec3 {
        let mut n = || -> f64 { StandardNormal.sample(&mut self.rng) };
        Vec3::new(n(), n(), n())
    }
}

/// Applies `u_m = u + b + n` to a true sample and advances the bias random
/// walk by one step of length `dt`.
pub fn corrupt(
    t: f64,
    true_omega: &Vec3,
    true_accel: &Vec3,
    intrinsics: &ImuIntrinsics,
    state: &mut SensorState,
    dt: f64,
) -> Result<ImuSample> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let omega = intrinsics.gyro_matrix.map_or(*true_omega, |m| m * true_omega);
    let accel = intrinsics.accel_matrix.map_or(*true_accel, |m| m * true_accel);
    let inv_sqrt_dt = 1.0 / dt.sqrt();
    let ng = state.normal3() * (intrinsics.sigma_g * inv_sqrt_dt);
    let na = state.normal3() * (intrinsics.sigma_a * inv_sqrt_dt);
    let sample = ImuSample { t, omega: omega + state.bg + ng, accel: accel + state.ba + na };

    let sqrt_dt = dt.sqrt();
    let wg = state.normal3() * (intrinsics.sigma_bg_walk * sqrt_dt);
    let wa = state.normal3() * (intrinsics.sigma_ba_walk * sqrt_dt);
    state.bg += wg;
    state.ba += wa;
    Ok(sample)
}

/// Specific force in the IMU frame: `R(q)ᵀ (a_G − g)`.
pub fn true_body_accel(q: &UnitQuaternion, global_accel: &Vec3, gravity: &GravityModel) -> Vec3 {
    q.to_rotation_matrix().transpose() * (global_accel - gravity.g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::exp_so3;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noiseless_corrupt_is_identity() {
        let intr = ImuIntrinsics::default();
        let mut st = SensorState::new(&intr, 0);
        let w = Vec3::new(0.1, -0.2, 0.3);
        let a = Vec3::new(1.0, 2.0, 9.8);
        let s = corrupt(0.5, &w, &a, &intr, &mut st, 0.005).unwrap();
        assert_eq!(s.omega, w);
        assert_eq!(s.accel, a);
    }

    #[test]
    fn additive_bias() {
        let intr = ImuIntrinsics { initial_bg: Vec3::new(0.01, 0.0, 0.0), ..Default::default() };
        let mut st = SensorState::new(&intr, 0);
        let w = Vec3::new(0.1, -0.2, 0.3);
        let s = corrupt(0.0, &w, &Vec3::zeros(), &intr, &mut st, 0.01).unwrap();
        assert_eq!(s.omega, w + Vec3::new(0.01, 0.0, 0.0));
    }

    #[test]
    fn rejects_non_positive_dt() {
        let intr = ImuIntrinsics::default();
        let mut st = SensorState::new(&intr, 0);
        assert!(corrupt(0.0, &Vec3::zeros(), &Vec3::zeros(), &intr, &mut st, 0.0).is_err());
        assert!(corrupt(0.0, &Vec3::zeros(), &Vec3::zeros(), &intr, &mut st, -1.0).is_err());
    }

    #[test]
    fn white_noise_std_matches_configuration() {
        let intr = ImuIntrinsics { sigma_g: 0.005, ..Default::default() };
        let mut st = SensorState::new(&intr, 42);
        let dt = 0.005;
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| corrupt(i as f64 * dt, &Vec3::zeros(), &Vec3::zeros(), &intr, &mut st, dt).unwrap().omega.x)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 0.005 / dt.sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.05, "std {} vs {expected}", var.sqrt());
    }

    #[test]
    fn bias_walk_advances() {
        let intr = ImuIntrinsics { sigma_bg_walk: 1e-3, ..Default::default() };
        let mut st = SensorState::new(&intr, 3);
        corrupt(0.0, &Vec3::zeros(), &Vec3::zeros(), &intr, &mut st, 0.01).unwrap();
        assert!(st.bg.norm() > 0.0);
        assert_eq!(st.ba, Vec3::zeros());
    }

    #[test]
    fn specific_force_examples() {
        let g = GravityModel::default();
        let q = UnitQuaternion::identity();
        assert_eq!(true_body_accel(&q, &Vec3::zeros(), &g), Vec3::new(0.0, 0.0, 9.8));
        assert_eq!(true_body_accel(&q, &g.g, &g), Vec3::zeros());
        let flipped = exp_so3(&Vec3::new(std::f64::consts::PI, 0.0, 0.0));
        let f = true_body_accel(&flipped, &Vec3::zeros(), &g);
        assert_abs_diff_eq!((f - Vec3::new(0.0, 0.0, -9.8)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gravity_magnitude_checked() {
        assert!(GravityModel::new(Vec3::new(0.0, 0.0, -9.81)).is_ok());
        assert!(GravityModel::new(Vec3::new(0.0, 0.0, -1.0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn rest_specific_force_norm_is_gravity(c in proptest::array::uniform4(-1.0f64..1.0)) {
            let q = UnitQuaternion::from(c);
            let g = GravityModel::default();
            let f = true_body_accel(&q, &Vec3::zeros(), &g);
            proptest::prop_assert!((f.norm() - 9.8).abs() < 1e-12);
        }
    }
}
