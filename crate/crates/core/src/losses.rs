//! Training losses on the integrated terms, the regularizer that keeps the
//! refined measurements close to the raw ones, bias-augmentation terms and
//! the multi-horizon combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::ImuSample;
use crate::preint::{prefix_deltas_with_jacobians, prefix_len, preintegrate, PreintegrationDelta, Scheme};
use crate::so3::{log_so3, quat_inv, quat_mul, quat_to_rot, right_jacobian, right_jacobian_inv, UnitQuaternion, Vec3};

/// Dead-zone width of the regularizer, per channel `[wx, wy, wz, ax, ay, az]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda {
    Scalar(f64),
    PerChannel([f64; 6]),
    /// Resolved by the pipeline to three times the per-sample white-noise
    /// std of the data source; falls back to [`Lambda::FALLBACK`].
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Lambda {
    /// 3σ of a typical MEMS IMU sampled at 200 Hz
    /// (1.7e-4 rad/s/√Hz, 2.0e-3 m/s²/√Hz).
    pub const FALLBACK: [f64; 6] = [7.2e-3, 7.2e-3, 7.2e-3, 8.5e-2, 8.5e-2, 8.5e-2];

    pub fn per_channel(&self) -> [f64; 6] {
        match self {
            Lambda::Scalar(s) => [*s; 6],
            Lambda::PerChannel(c) => *c,
            Lambda::Auto(_) => Self::FALLBACK,
        }
    }

    pub fn from_noise_std(per_sample_std: [f64; 6]) -> Self {
        Lambda::PerChannel(per_sample_std.map(|s| 3.0 * s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub huber_delta_q: f64,
    pub huber_delta_v: f64,
    pub huber_delta_p: f64,
    pub lambda_reg: Lambda,
    pub horizon_fractions: Vec<f64>,
    pub horizon_weights: Vec<f64>,
    pub reg_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            huber_delta_q: 0.01,
            huber_delta_v: 0.05,
            huber_delta_p: 0.05,
            lambda_reg: Lambda::Auto(AutoTag::Auto),
            horizon_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            horizon_weights: vec![1.0; 5],
            reg_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn single_horizon() -> Self {
        Self { horizon_fractions: vec![1.0], horizon_weights: vec![1.0], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let deltas = [self.huber_delta_q, self.huber_delta_v, self.huber_delta_p];
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument("huber deltas must be positive".into()));
        }
        if self.lambda_reg.per_channel().iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("lambda_reg must be >= 0".into()));
        }
        if self.horizon_fractions.is_empty() || self.horizon_fractions.len() != self.horizon_weights.len() {
            return Err(Error::InvalidArgument("horizon_fractions and horizon_weights must be non-empty and equal length".into()));
        }
        for (k, f) in self.horizon_fractions.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) || (k > 0 && *f <= self.horizon_fractions[k - 1]) {
                return Err(Error::InvalidArgument("horizon_fractions must be ascending within (0, 1]".into()));
            }
        }
        if !(self.reg_weight >= 0.0) {
            return Err(Error::InvalidArgument("reg_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Bias added to a training window's raw samples, constant over the window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentedBias {
    pub bg: Vec3,
    pub ba: Vec3,
}

/// Integrated effect of a constant bias over (a prefix of) a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedBias {
    pub q_b: UnitQuaternion,
    pub beta_b: Vec3,
    pub gamma_b: Vec3,
}

impl Default for IntegratedBias {
    fn default() -> Self {
        Self { q_b: UnitQuaternion::identity(), beta_b: Vec3::zeros(), gamma_b: Vec3::zeros() }
    }
}

impl AugmentedBias {
    /// Terms entering the augmented losses. They integrate the negated bias,
    /// so that a prediction which still carries the injected bias scores
    /// zero: e.g. `Δβ_s − (Δβ_s + b_a·T) − (−b_a·T) = 0`.
    pub fn compensation(&self, window: &[ImuSample], scheme: Scheme) -> Result<IntegratedBias> {
        integrated_bias_terms(&-self.bg, &-self.ba, window, scheme)
    }
}

/// Preintegrates the bias-only signal (constant `bg`, `ba`) over the
/// window's timestamps. The rotation comes from `bg` alone; `beta_b` and
/// `gamma_b` carry `ba` through that bias-induced rotation.
pub fn integrated_bias_terms(bg: &Vec3, ba: &Vec3, window: &[ImuSample], scheme: Scheme) -> Result<IntegratedBias> {
    let bias_only: Vec<ImuSample> = window.iter().map(|s| ImuSample::new(s.t, *bg, *ba)).collect();
    let d = preintegrate(&bias_only, scheme)?;
    Ok(IntegratedBias { q_b: d.dq, beta_b: d.dbeta, gamma_b: d.dgamma })
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// Componentwise Huber, summed; returns the loss and its gradient.
pub fn huber_vec(v: &Vec3, delta: f64) -> (f64, Vec3) {
    let loss = v.iter().map(|x| huber(*x, delta)).sum();
    (loss, v.map(|x| huber_grad(x, delta)))
}

/// Rotation loss `|log(Δq_s ⊗ Δq̂⁻¹ ⊗ q_b⁻¹)|_h`. The gradient is taken
/// with respect to `log(Δq̂)`.
pub fn loss_rotation(
    target: &UnitQuaternion,
    pred: &UnitQuaternion,
    bias: Option<&IntegratedBias>,
    delta: f64,
) -> (f64, Vec3) {
    let qb_inv = bias.map_or(UnitQuaternion::identity(), |b| quat_inv(&b.q_b));
    let m = quat_mul(&quat_inv(pred), &qb_inv);
    let e = log_so3(&quat_mul(target, &m));
    let (loss, g_e) = huber_vec(&e, delta);
    let phi = log_so3(pred);
    let de_dphi = -(right_jacobian_inv(&e) * quat_to_rot(&m).transpose() * right_jacobian(&phi));
    (loss, de_dphi.transpose() * g_e)
}

/// `|Δβ_s − Δβ̂ − β_b|_h`; gradient w.r.t. `Δβ̂`.
pub fn loss_beta(target: &Vec3, pred: &Vec3, bias: Option<&IntegratedBias>, delta: f64) -> (f64, Vec3) {
    let r = target - pred - bias.map_or(Vec3::zeros(), |b| b.beta_b);
    let (loss, g) = huber_vec(&r, delta);
    (loss, -g)
}

/// `|Δγ_s − Δγ̂ − γ_b|_h`; gradient w.r.t. `Δγ̂`.
pub fn loss_gamma(target: &Vec3, pred: &Vec3, bias: Option<&IntegratedBias>, delta: f64) -> (f64, Vec3) {
    let r = target - pred - bias.map_or(Vec3::zeros(), |b| b.gamma_b);
    let (loss, g) = huber_vec(&r, delta);
    (loss, -g)
}

/// Hinge on the per-channel deviation of refined from raw samples:
/// `Σ max(|u_m − û| − λ, 0)`. Gradient w.r.t. the refined channels.
pub fn loss_reg(raw: &[ImuSample], refined: &[ImuSample], lambda: &[f64; 6]) -> Result<(f64, Vec<[f64; 6]>)> {
    if raw.len() != refined.len() {
        return Err(Error::ShapeMismatch(format!("raw has {} samples, refined {}", raw.len(), refined.len())));
    }
    let mut loss = 0.0;
    let grad = raw
        .iter()
        .zip(refined)
        .map(|(u, r)| {
            let (u, r) = (u.channels(), r.channels());
            let mut g = [0.0; 6];
            for c in 0..6 {
                let d = u[c] - r[c];
                let excess = d.abs() - lambda[c];
                if excess > 0.0 {
                    loss += excess;
                    g[c] = -d.signum();
                }
            }
            g
        })
        .collect();
    Ok((loss, grad))
}

/// Ground-truth terms for one horizon of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonTarget {
    pub n_samples: usize,
    pub delta: PreintegrationDelta,
    pub compensation: Option<IntegratedBias>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lq: f64,
    pub lv: f64,
    pub lp: f64,
    pub ld: f64,
    pub total: f64,
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.lq += o.lq;
        self.lv += o.lv;
        self.lp += o.lp;
        self.ld += o.ld;
        self.total += o.total;
    }
}

impl LossBreakdown {
    pub fn scaled(self, s: f64) -> Self {
        Self { lq: self.lq * s, lv: self.lv * s, lp: self.lp * s, ld: self.ld * s, total: self.total * s }
    }
}

/// Weighted multi-horizon loss plus the weighted regularizer, with the
/// gradient w.r.t. every refined channel.
pub fn total_loss(
    raw: &[ImuSample],
    refined: &[ImuSample],
    targets: &[HorizonTarget],
    config: &LossConfig,
    scheme: Scheme,
) -> Result<(LossBreakdown, Vec<[f64; 6]>)> {
    if targets.len() != config.horizon_fractions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} horizon targets for {} horizon fractions",
            targets.len(),
            config.horizon_fractions.len()
        )));
    }
    for (t, f) in targets.iter().zip(&config.horizon_fractions) {
        let expected = prefix_len(*f, refined.len());
        if t.n_samples != expected {
            return Err(Error::ShapeMismatch(format!(
                "horizon {f}: target covers {} samples, prefix has {expected}",
                t.n_samples
            )));
        }
    }
    let prefixes = prefix_deltas_with_jacobians(refined, &config.horizon_fractions, scheme)?;
    let (ld, mut grad) = loss_reg(raw, refined, &config.lambda_reg.per_channel())?;
    for g in grad.iter_mut() {
        for x in g.iter_mut() {
            *x *= config.reg_weight;
        }
    }

    let mut out = LossBreakdown { ld, ..Default::default() };
    for ((target, (pred, jac)), w) in targets.iter().zip(&prefixes).zip(&config.horizon_weights) {
        let bias = target.compensation.as_ref();
        let (lq, g_phi) = loss_rotation(&target.delta.dq, &pred.dq, bias, config.huber_delta_q);
        let (lv, g_beta) = loss_beta(&target.delta.dbeta, &pred.dbeta, bias, config.huber_delta_v);
        let (lp, g_gamma) = loss_gamma(&target.delta.dgamma, &pred.dgamma, bias, config.huber_delta_p);
        out.lq += w * lq;
        out.lv += w * lv;
        out.lp += w * lp;
        for (i, g) in grad.iter_mut().take(jac.len()).enumerate() {
            let gw = (jac.d_rot_d_omega[i].transpose() * g_phi
                + jac.d_beta_d_omega[i].transpose() * g_beta
                + jac.d_gamma_d_omega[i].transpose() * g_gamma)
                * *w;
            let ga = (jac.d_beta_d_accel[i].transpose() * g_beta + jac.d_gamma_d_accel[i].transpose() * g_gamma) * *w;
            g[0] += gw.x;
            g[1] += gw.y;
            g[2] += gw.z;
            g[3] += ga.x;
            g[4] += ga.y;
            g[5] += ga.z;
        }
    }
    out.total = out.lq + out.lv + out.lp + config.reg_weight * out.ld;
    Ok((out, grad))
}
