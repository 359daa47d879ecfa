//! Reference integrators written without the library's SO(3) code.

#![allow(dead_code)]

use obsint::data::TrajectorySpec;

pub type V3 = [f64; 3];
/// `[w, x, y, z]`
pub type Q = [f64; 4];

pub fn qmul(a: &Q, b: &Q) -> Q {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn qnormalize(q: &Q) -> Q {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.map(|x| x / n)
}

/// `q ⊗ (0, v) ⊗ q*`
pub fn qrotate(q: &Q, v: &V3) -> V3 {
    let conj = [q[0], -q[1], -q[2], -q[3]];
    let r = qmul(&qmul(q, &[0.0, v[0], v[1], v[2]]), &conj);
    [r[1], r[2], r[3]]
}

/// Rotation angle between two unit quaternions.
pub fn qangle(a: &Q, b: &Q) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    2.0 * d.abs().min(1.0).acos()
}

/// Rotation vector of a unit quaternion, taking the short way round.
pub fn qlog(q: &Q) -> V3 {
    let q = if q[0] < 0.0 { q.map(|x| -x) } else { *q };
    let s = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if s < 1e-300 {
        return [0.0; 3];
    }
    let k = 2.0 * s.atan2(q[0]) / s;
    [k * q[1], k * q[2], k * q[3]]
}

pub fn qconj(q: &Q) -> Q {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn norm(v: &V3) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &V3, b: &V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Clone, Copy, Debug)]
pub struct RefDelta {
    pub q: Q,
    pub beta: V3,
    pub gamma: V3,
}

/// Integrates `q̇ = ½ q ⊗ ω`, `β̇ = R(q) f`, `γ̇ = β` from identity over
/// `[t0, t1]` with `steps` classical RK4 steps, using the spec's exact body
/// rate and specific force.
pub fn rk4_delta(spec: &TrajectorySpec, t0: f64, t1: f64, steps: usize) -> RefDelta {
    let meas = |t: f64| {
        let m = spec.true_measurement(t);
        ([m.omega.x, m.omega.y, m.omega.z], [m.accel.x, m.accel.y, m.accel.z])
    };
    // state = [q(4), beta(3), gamma(3)]
    let deriv = |t: f64, y: &[f64; 10]| -> [f64; 10] {
        let (w, f) = meas(t);
        let q = [y[0], y[1], y[2], y[3]];
        let qd = qmul(&q, &[0.0, w[0], w[1], w[2]]).map(|x| 0.5 * x);
        let rf = qrotate(&qnormalize(&q), &f);
        [qd[0], qd[1], qd[2], qd[3], rf[0], rf[1], rf[2], y[4], y[5], y[6]]
    };
    let h = (t1 - t0) / steps as f64;
    let mut y = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let add = |y: &[f64; 10], k: &[f64; 10], s: f64| -> [f64; 10] { std::array::from_fn(|i| y[i] + s * k[i]) };
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = deriv(t, &y);
        let k2 = deriv(t + 0.5 * h, &add(&y, &k1, 0.5 * h));
        let k3 = deriv(t + 0.5 * h, &add(&y, &k2, 0.5 * h));
        let k4 = deriv(t + h, &add(&y, &k3, h));
        y = std::array::from_fn(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        let qn = qnormalize(&[y[0], y[1], y[2], y[3]]);
        y[..4].copy_from_slice(&qn);
    }
    RefDelta { q: [y[0], y[1], y[2], y[3]], beta: [y[4], y[5], y[6]], gamma: [y[7], y[8], y[9]] }
}

/// Noise-free samples of `spec` at `rate` Hz over `[t0, t0 + duration]`.
pub fn true_samples(spec: &TrajectorySpec, t0: f64, duration: f64, rate: f64) -> Vec<obsint::ImuSample> {
    let n = (duration * rate).round() as usize;
    (0..=n).map(|i| spec.true_measurement(t0 + i as f64 / rate)).collect()
}
