use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, GtState};
use crate::error::{Error, Result};
use crate::imu::{corrupt, true_body_accel, GravityModel, ImuIntrinsics, ImuSample, SensorState};
use crate::so3::{exp_so3, quat_mul, UnitQuaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// `offset + rate·t + Σ A sin(2πf t + φ)`
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisCurve {
    pub offset: f64,
    pub rate: f64,
    pub terms: Vec<Sinusoid>,
}

impl AxisCurve {
    pub fn new(terms: &[(f64, f64, f64)]) -> Self {
        Self {
            offset: 0.0,
            rate: 0.0,
            terms: terms.iter().map(|&(amplitude, frequency, phase)| Sinusoid { amplitude, frequency, phase }).collect(),
        }
    }

    /// Value, first and second derivative at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let mut x = self.offset + self.rate * t;
        let mut dx = self.rate;
        let mut ddx = 0.0;
        for s in &self.terms {
            let w = TAU * s.frequency;
            let arg = w * t + s.phase;
            let (sn, cs) = arg.sin_cos();
            x += s.amplitude * sn;
            dx += s.amplitude * w * cs;
            ddx -= s.amplitude * w * w * sn;
        }
        (x, dx, ddx)
    }

    fn is_valid(&self) -> bool {
        self.offset.is_finite()
            && self.rate.is_finite()
            && self.terms.iter().all(|s| s.amplitude.is_finite() && s.frequency.is_finite() && s.phase.is_finite())
    }
}

/// Smooth analytic trajectory: per-axis position curves and roll/pitch/yaw
/// curves (attitude `q = Rz(yaw)·Ry(pitch)·Rx(roll)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// s
    pub duration: f64,
    /// Hz
    pub imu_rate: f64,
    pub seed: u64,
    pub position: [AxisCurve; 3],
    /// roll, pitch, yaw
    pub attitude: [AxisCurve; 3],
    #[serde(default)]
    pub gravity: GravityModel,
    #[serde(default)]
    pub intrinsics: ImuIntrinsics,
}

/// Noise-free kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub q: UnitQuaternion,
    pub p: Vec3,
    pub v: Vec3,
    pub accel_global: Vec3,
    pub omega_body: Vec3,
}

impl TrajectorySpec {
    /// A few-minute hand-held/drone-like motion at 200 Hz without sensor errors.
    pub fn demo(duration: f64, seed: u64) -> Self {
        Self {
            duration,
            imu_rate: 200.0,
            seed,
            position: [
                AxisCurve::new(&[(2.0, 0.1, 0.0), (0.3, 0.5, 1.0), (0.03, 1.1, 0.3)]),
                AxisCurve::new(&[(1.5, 0.13, 0.7), (0.2, 0.6, 2.0), (0.02, 1.2, 1.1)]),
                AxisCurve::new(&[(0.5, 0.2, 0.2), (0.05, 0.7, 0.5)]),
            ],
            attitude: [
                AxisCurve::new(&[(0.3, 0.25, 0.0), (0.1, 0.7, 0.4)]),
                AxisCurve::new(&[(0.25, 0.19, 1.2), (0.08, 0.8, 0.1)]),
                AxisCurve { offset: 0.0, rate: 0.1, terms: vec![Sinusoid { amplitude: 1.0, frequency: 0.05, phase: 0.0 }] },
            ],
            gravity: GravityModel::default(),
            intrinsics: ImuIntrinsics::default(),
        }
    }

    /// Zero-amplitude spec: the sensor sits still and upright.
    pub fn stationary(duration: f64, imu_rate: f64, seed: u64) -> Self {
        Self {
            duration,
            imu_rate,
            seed,
            position: Default::default(),
            attitude: Default::default(),
            gravity: GravityModel::default(),
            intrinsics: ImuIntrinsics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > 0.0 && self.imu_rate.is_finite()) {
            return Err(Error::InvalidArgument("imu_rate must be positive".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        if !self.position.iter().chain(&self.attitude).all(AxisCurve::is_valid) {
            return Err(Error::InvalidArgument("trajectory curve parameters must be finite".into()));
        }
        self.intrinsics.validate()
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.imu_rate + 1e-9).floor() as usize + 1
    }

    pub fn evaluate(&self, t: f64) -> TruthSample {
        let [px, py, pz] = [0, 1, 2].map(|k| self.position[k].eval(t));
        let (roll, droll, _) = self.attitude[0].eval(t);
        let (pitch, dpitch, _) = self.attitude[1].eval(t);
        let (yaw, dyaw, _) = self.attitude[2].eval(t);
        let q = quat_mul(
            &quat_mul(&exp_so3(&Vec3::new(0.0, 0.0, yaw)), &exp_so3(&Vec3::new(0.0, pitch, 0.0))),
            &exp_so3(&Vec3::new(roll, 0.0, 0.0)),
        );
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let omega_body = Vec3::new(
            droll - dyaw * sp,
            dpitch * cr + dyaw * sr * cp,
            -dpitch * sr + dyaw * cr * cp,
        );
        TruthSample {
            q,
            p: Vec3::new(px.0, py.0, pz.0),
            v: Vec3::new(px.1, py.1, pz.1),
            accel_global: Vec3::new(px.2, py.2, pz.2),
            omega_body,
        }
    }

    /// True angular rate and specific force at `t`.
    pub fn true_measurement(&self, t: f64) -> ImuSample {
        let s = self.evaluate(t);
        ImuSample::new(t, s.omega_body, true_body_accel(&s.q, &s.accel_global, &self.gravity))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    /// Sensor biases `(bg, ba)` in effect at each IMU sample.
    pub true_bias: Vec<(Vec3, Vec3)>,
}

pub fn simulate(spec: &TrajectorySpec) -> Result<SimulatedData> {
    spec.validate()?;
    let n = spec.sample_count();
    let dt = 1.0 / spec.imu_rate;
    let mut sensor = SensorState::new(&spec.intrinsics, spec.seed);
    let mut imu = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    let mut true_bias = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let truth = spec.evaluate(t);
        let f = true_body_accel(&truth.q, &truth.accel_global, &spec.gravity);
        true_bias.push((sensor.bg, sensor.ba));
        imu.push(corrupt(t, &truth.omega_body, &f, &spec.intrinsics, &mut sensor, dt)?);
        gt.push(GtState { t, q: truth.q, p: truth.p, v: Some(truth.v) });
    }
    let meta = DatasetMeta {
        gravity: spec.gravity,
        imu_rate: spec.imu_rate,
        t0_ns: 0,
        provenance: format!("simulated (seed {})", spec.seed),
        noise_std: Some(spec.intrinsics.per_sample_noise_std(dt)),
        dropped_duplicates: 0,
    };
    Ok(SimulatedData { dataset: Dataset { imu, gt, meta }, true_bias })
}
