use super::{Dataset, GtState};
use crate::error::{Error, Result};
use crate::so3::{slerp, Vec3};

/// Derivative weights of the Lagrange interpolant through `offsets`
/// (node positions relative to the evaluation node `k`, so `offsets[k] = 0`).
fn lagrange_derivative_weights(offsets: &[f64], k: usize) -> Vec<f64> {
    let n = offsets.len();
    (0..n)
        .map(|j| {
            if j == k {
                (0..n).filter(|&l| l != k).map(|l| -1.0 / offsets[l]).sum()
            } else {
                let num: f64 = (0..n).filter(|&l| l != j && l != k).map(|l| -offsets[l]).product();
                let den: f64 = (0..n).filter(|&l| l != j).map(|l| offsets[j] - offsets[l]).product();
                num / den
            }
        })
        .collect()
}

/// Velocities from sampled positions by five-point finite differences
/// (centred in the interior, one-sided at the ends; exact for polynomials up
/// to degree four on any spacing). `smoothing` is the half-width of an
/// optional moving average over the result; 0 disables it.
pub fn derive_velocity(times: &[f64], positions: &[Vec3], smoothing: usize) -> Result<Vec<Vec3>> {
    let n = positions.len();
    if times.len() != n {
        return Err(Error::ShapeMismatch(format!("{} times for {n} positions", times.len())));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("velocity needs at least 3 poses, got {n}")));
    }
    if let Some(i) = (1..n).find(|&i| times[i] <= times[i - 1]) {
        return Err(Error::NonMonotonicTime { index: i });
    }
    let m = n.min(5);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        let lo = k.saturating_sub(m / 2).min(n - m);
        let offsets: Vec<f64> = (lo..lo + m).map(|l| times[l] - times[k]).collect();
        let w = lagrange_derivative_weights(&offsets, k - lo);
        let d = (lo..lo + m).zip(&w).fold(Vec3::zeros(), |acc, (l, wl)| acc + (positions[l] - positions[k]) * *wl);
        v.push(d);
    }
    if smoothing == 0 {
        return Ok(v);
    }
    Ok((0..n)
        .map(|k| {
            let lo = k.saturating_sub(smoothing);
            let hi = (k + smoothing + 1).min(n);
            v[lo..hi].iter().sum::<Vec3>() / (hi - lo) as f64
        })
        .collect())
}

/// Resamples ground truth onto the IMU timestamps: linear interpolation for
/// position and velocity, shortest-arc slerp for attitude. IMU samples
/// outside the ground-truth span are dropped; missing velocity is derived
/// from the ground-truth positions first.
pub fn align_ground_truth(dataset: &Dataset) -> Result<Dataset> {
    let gt = &dataset.gt;
    let (Some(first), Some(last)) = (gt.first(), gt.last()) else {
        return Err(Error::InsufficientData("no ground truth to align".into()));
    };
    if let Some(i) = (1..gt.len()).find(|&i| gt[i].t <= gt[i - 1].t) {
        return Err(Error::NonMonotonicTime { index: i });
    }
    let velocities: Vec<Vec3> = if gt.iter().all(|g| g.v.is_some()) {
        gt.iter().map(|g| g.v.unwrap()).collect()
    } else {
        let t: Vec<f64> = gt.iter().map(|g| g.t).collect();
        let p: Vec<Vec3> = gt.iter().map(|g| g.p).collect();
        derive_velocity(&t, &p, 0)?
    };

    let mut imu = Vec::new();
    let mut out = Vec::new();
    let mut j = 0;
    for s in dataset.imu.iter().filter(|s| s.t >= first.t && s.t <= last.t) {
        while j + 1 < gt.len() && gt[j + 1].t <= s.t {
            j += 1;
        }
        let a = &gt[j];
        let state = if a.t == s.t || j + 1 == gt.len() {
            GtState { t: s.t, q: a.q, p: a.p, v: Some(velocities[j]) }
        } else {
            let b = &gt[j + 1];
            let alpha = (s.t - a.t) / (b.t - a.t);
            let qb = if a.q.dot(&b.q) < 0.0 { b.q.neg() } else { b.q };
            GtState {
                t: s.t,
                q: slerp(&a.q, &qb, alpha),
                p: a.p + (b.p - a.p) * alpha,
                v: Some(velocities[j] + (velocities[j + 1] - velocities[j]) * alpha),
            }
        };
        imu.push(*s);
        out.push(state);
    }
    if imu.len() < 2 {
        return Err(Error::InsufficientData("IMU and ground truth overlap in fewer than two samples".into()));
    }
    Ok(Dataset { imu, gt: out, meta: dataset.meta.clone() })
}
