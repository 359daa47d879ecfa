//! Discrete preintegration of an IMU window into the observable terms
//! `(Δq, Δβ, Δγ)`, state propagation with those terms, ground-truth target
//! derivation, and forward-accumulated Jacobians for training.
//!
//! None of the functions that produce a [`PreintegrationDelta`] from samples
//! read any navigation state or gravity: the terms depend on the measured
//! rate and specific force alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::{GravityModel, ImuSample, ImuState};
use crate::so3::{
    exp_so3, log_so3, quat_inv, quat_mul, quat_to_rot, right_jacobian, right_jacobian_inv, skew, Mat3,
    UnitQuaternion, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Left-rectangle rule on rate and specific force.
    Euler,
    /// Trapezoidal rule: averaged rate for the rotation step, averaged
    /// rotated specific force for velocity and position.
    #[default]
    Midpoint,
}

/// Relative motion over a window, expressed in the IMU frame at its start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreintegrationDelta {
    pub dq: UnitQuaternion,
    pub dbeta: Vec3,
    pub dgamma: Vec3,
    pub dt_total: f64,
    /// Number of samples integrated; 0 for deltas derived from poses.
    pub n_samples: usize,
}

/// Per-sample Jacobian blocks of a delta. Rotation blocks are taken with
/// respect to the log coordinates `log(Δq)`; the rotation does not depend on
/// the accelerometer, so there is no accel block for it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreintJacobians {
    pub d_rot_d_omega: Vec<Mat3>,
    pub d_beta_d_omega: Vec<Mat3>,
    pub d_beta_d_accel: Vec<Mat3>,
    pub d_gamma_d_omega: Vec<Mat3>,
    pub d_gamma_d_accel: Vec<Mat3>,
}

impl PreintJacobians {
    fn zeros(n: usize) -> Self {
        Self {
            d_rot_d_omega: vec![Mat3::zeros(); n],
            d_beta_d_omega: vec![Mat3::zeros(); n],
            d_beta_d_accel: vec![Mat3::zeros(); n],
            d_gamma_d_omega: vec![Mat3::zeros(); n],
            d_gamma_d_accel: vec![Mat3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_rot_d_omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_rot_d_omega.is_empty()
    }

    pub fn d_rot_d_accel(&self, _i: usize) -> Mat3 {
        Mat3::zeros()
    }
}

pub fn validate_window(window: &[ImuSample]) -> Result<()> {
    if window.len() < 2 {
        return Err(Error::WindowTooShort { needed: 2, got: window.len() });
    }
    for (i, s) in window.iter().enumerate() {
        if !(s.t.is_finite() && s.omega.iter().all(|x| x.is_finite()) && s.accel.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite value in sample {i}")));
        }
        if i > 0 && s.t <= window[i - 1].t {
            return Err(Error::NonMonotonicTime { index: i });
        }
    }
    Ok(())
}

/// Running integration state shared by every entry point, so that plain,
/// prefix and Jacobian-carrying integration produce bit-identical deltas.
struct Integrator {
    scheme: Scheme,
    q: UnitQuaternion,
    rot: Mat3,
    beta: Vec3,
    gamma: Vec3,
}

/// Quantities of one step that the Jacobian recursion reuses.
struct StepInfo {
    dt: f64,
    d_rot: Mat3,
    jr_dt: Mat3,
    rot_prev: Mat3,
}

impl Integrator {
    fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            q: UnitQuaternion::identity(),
            rot: Mat3::identity(),
            beta: Vec3::zeros(),
            gamma: Vec3::zeros(),
        }
    }

    fn step(&mut self, a: &ImuSample, b: &ImuSample) -> StepInfo {
        let dt = b.t - a.t;
        let rate = match self.scheme {
            Scheme::Euler => a.omega,
            Scheme::Midpoint => (a.omega + b.omega) * 0.5,
        };
        let phi = rate * dt;
        let dq = exp_so3(&phi);
        let rot_prev = self.rot;
        self.q = quat_mul(&self.q, &dq);
        self.rot = quat_to_rot(&self.q);
        let f = match self.scheme {
            Scheme::Euler => rot_prev * a.accel,
            Scheme::Midpoint => (rot_prev * a.accel + self.rot * b.accel) * 0.5,
        };
        self.gamma += self.beta * dt + f * (0.5 * dt * dt);
        self.beta += f * dt;
        StepInfo { dt, d_rot: quat_to_rot(&dq), jr_dt: right_jacobian(&phi) * dt, rot_prev }
    }

    fn delta(&self, first: &ImuSample, last: &ImuSample, n: usize) -> PreintegrationDelta {
        PreintegrationDelta { dq: self.q, dbeta: self.beta, dgamma: self.gamma, dt_total: last.t - first.t, n_samples: n }
    }
}

pub fn preintegrate(window: &[ImuSample], scheme: Scheme) -> Result<PreintegrationDelta> {
    validate_window(window)?;
    let mut integ = Integrator::new(scheme);
    for pair in window.windows(2) {
        integ.step(&pair[0], &pair[1]);
    }
    Ok(integ.delta(&window[0], &window[window.len() - 1], window.len()))
}

/// Number of leading samples covered by horizon fraction `f` of an
/// `n`-sample window: `⌈f·n⌉`, clamped to `[1, n]`.
pub fn prefix_len(fraction: f64, n: usize) -> usize {
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

fn check_fractions(fractions: &[f64], n: usize) -> Result<Vec<usize>> {
    let mut ends = Vec::with_capacity(fractions.len());
    for (k, &f) in fractions.iter().enumerate() {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!("horizon fraction {f} outside (0, 1]")));
        }
        if k > 0 && f <= fractions[k - 1] {
            return Err(Error::InvalidArgument("horizon fractions must be strictly ascending".into()));
        }
        let len = prefix_len(f, n);
        if len < 2 {
            return Err(Error::WindowTooShort { needed: 2, got: len });
        }
        ends.push(len);
    }
    Ok(ends)
}

/// Deltas over the first `⌈f·N⌉` samples for each fraction `f`.
pub fn prefix_deltas(window: &[ImuSample], fractions: &[f64], scheme: Scheme) -> Result<Vec<PreintegrationDelta>> {
    validate_window(window)?;
    let ends = check_fractions(fractions, window.len())?;
    let mut out = Vec::with_capacity(ends.len());
    let mut integ = Integrator::new(scheme);
    let mut next = 0;
    for j in 0..window.len() - 1 {
        integ.step(&window[j], &window[j + 1]);
        while next < ends.len() && ends[next] == j + 2 {
            out.push(integ.delta(&window[0], &window[j + 1], j + 2));
            next += 1;
        }
    }
    Ok(out)
}

pub fn preintegrate_with_jacobians(
    window: &[ImuSample],
    scheme: Scheme,
) -> Result<(PreintegrationDelta, PreintJacobians)> {
    validate_window(window)?;
    let mut all = prefix_jacobians_at(window, &[window.len()], scheme)?;
    Ok(all.pop().expect("one prefix requested"))
}

/// Prefix deltas and their Jacobians for every fraction, from a single
/// forward pass. Jacobian vectors for a prefix of `n` samples have length `n`.
pub fn prefix_deltas_with_jacobians(
    window: &[ImuSample],
    fractions: &[f64],
    scheme: Scheme,
) -> Result<Vec<(PreintegrationDelta, PreintJacobians)>> {
    validate_window(window)?;
    let ends = check_fractions(fractions, window.len())?;
    prefix_jacobians_at(window, &ends, scheme)
}

fn prefix_jacobians_at(
    window: &[ImuSample],
    ends: &[usize],
    scheme: Scheme,
) -> Result<Vec<(PreintegrationDelta, PreintJacobians)>> {
    let n = window.len();
    // Θ: right-perturbation Jacobian of the running rotation w.r.t. each ω_i.
    let mut theta = vec![Mat3::zeros(); n];
    let mut jac = PreintJacobians::zeros(n);
    let mut integ = Integrator::new(scheme);
    let mut out = Vec::with_capacity(ends.len());
    let mut next = 0;

    for j in 0..n - 1 {
        let (a, b) = (&window[j], &window[j + 1]);
        let info = integ.step(a, b);
        let (dt, half_dt2) = (info.dt, 0.5 * info.dt * info.dt);
        let d_rot_t = info.d_rot.transpose();
        let m_prev = info.rot_prev * skew(&a.accel);
        let m_next = integ.rot * skew(&b.accel);
        let last = match scheme {
            Scheme::Euler => j,
            Scheme::Midpoint => j + 1,
        };

        for i in 0..=last {
            let rate_weight = match scheme {
                Scheme::Euler => 1.0,
                Scheme::Midpoint => 0.5,
            };
            let theta_prev = theta[i];
            let mut theta_next = d_rot_t * theta_prev;
            if i == j || (scheme == Scheme::Midpoint && i == j + 1) {
                theta_next += info.jr_dt * rate_weight;
            }
            theta[i] = theta_next;

            let (df_dw, df_da) = match scheme {
                Scheme::Euler => {
                    let da = if i == j { info.rot_prev } else { Mat3::zeros() };
                    (-(m_prev * theta_prev), da)
                }
                Scheme::Midpoint => {
                    let mut da = Mat3::zeros();
                    if i == j {
                        da += info.rot_prev * 0.5;
                    }
                    if i == j + 1 {
                        da += integ.rot * 0.5;
                    }
                    (-(m_prev * theta_prev + m_next * theta_next) * 0.5, da)
                }
            };
            jac.d_gamma_d_omega[i] += jac.d_beta_d_omega[i] * dt + df_dw * half_dt2;
            jac.d_gamma_d_accel[i] += jac.d_beta_d_accel[i] * dt + df_da * half_dt2;
            jac.d_beta_d_omega[i] += df_dw * dt;
            jac.d_beta_d_accel[i] += df_da * dt;
        }

        while next < ends.len() && ends[next] == j + 2 {
            let len = j + 2;
            let delta = integ.delta(&window[0], b, len);
            let jr_inv = right_jacobian_inv(&log_so3(&delta.dq));
            let snapshot = PreintJacobians {
                d_rot_d_omega: theta[..len].iter().map(|t| jr_inv * t).collect(),
                d_beta_d_omega: jac.d_beta_d_omega[..len].to_vec(),
                d_beta_d_accel: jac.d_beta_d_accel[..len].to_vec(),
                d_gamma_d_omega: jac.d_gamma_d_omega[..len].to_vec(),
                d_gamma_d_accel: jac.d_gamma_d_accel[..len].to_vec(),
            };
            out.push((delta, snapshot));
            next += 1;
        }
    }
    Ok(out)
}

/// Propagates a state across a window with its preintegrated terms.
/// Biases are carried over unchanged.
pub fn propagate_state(s: &ImuState, d: &PreintegrationDelta, gravity: &GravityModel) -> ImuState {
    let rot = quat_to_rot(&s.q);
    let dt = d.dt_total;
    ImuState {
        q: quat_mul(&s.q, &d.dq),
        bg: s.bg,
        v: s.v + gravity.g * dt + rot * d.dbeta,
        ba: s.ba,
        p: s.p + s.v * dt + gravity.g * (0.5 * dt * dt) + rot * d.dgamma,
    }
}

/// Inverts [`propagate_state`]: the terms that carry `s_k` onto `s_k1`
/// over `dt` seconds.
pub fn derive_targets(s_k: &ImuState, s_k1: &ImuState, dt: f64, gravity: &GravityModel) -> Result<PreintegrationDelta> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("target interval must be positive, got {dt}")));
    }
    let rot_t = quat_to_rot(&s_k.q).transpose();
    Ok(PreintegrationDelta {
        dq: quat_mul(&quat_inv(&s_k.q), &s_k1.q),
        dbeta: rot_t * (s_k1.v - s_k.v - gravity.g * dt),
        dgamma: rot_t * (s_k1.p - s_k.p - s_k.v * dt - gravity.g * (0.5 * dt * dt)),
        dt_total: dt,
        n_samples: 0,
    })
}
