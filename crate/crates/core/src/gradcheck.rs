//! Finite-difference checks of every analytic gradient in the pipeline:
//! preintegration Jacobians, each loss term, the multi-horizon total and
//! network backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imu::ImuSample;
use crate::losses::{
    integrated_bias_terms, loss_beta, loss_gamma, loss_reg, loss_rotation, total_loss, AugmentedBias, HorizonTarget, Lambda,
    LossConfig,
};
use crate::net::{backward, forward, init_params_seeded, NetworkConfig, Normalizer};
use crate::preint::{prefix_len, preintegrate, preintegrate_with_jacobians, PreintegrationDelta, Scheme};
use crate::so3::{exp_so3, log_so3, quat_mul, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub network: NetworkConfig,
    pub seed: u64,
    /// Largest accepted `|analytic − numeric| / (|numeric| + 1e-8)`.
    pub tolerance: f64,
    /// Finite-difference step.
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { network: NetworkConfig { n_layers: 2, hidden: 4, window_len: 8, ..Default::default() }, seed: 7, tolerance: 1e-4, step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Fourth-order central difference of `f` at 0.
pub fn central_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

struct Tally {
    name: String,
    entries: usize,
    worst: f64,
}

impl Tally {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), entries: 0, worst: 0.0 }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let e = rel_error(analytic, numeric);
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
    }

    fn finish(self, tol: f64) -> CheckResult {
        CheckResult { passed: self.worst < tol, name: self.name, entries: self.entries, max_rel_error: self.worst }
    }
}

fn random_window(rng: &mut impl Rng, n: usize, dt: f64) -> Vec<ImuSample> {
    (0..n)
        .map(|i| {
            let w = Vec3::from_fn(|_, _| rng.gen_range(-1.5..1.5));
            let a = Vec3::from_fn(|_, _| rng.gen_range(-4.0..4.0)) + Vec3::new(0.0, 0.0, 9.8);
            ImuSample::new(i as f64 * dt, w, a)
        })
        .collect()
}

fn perturbed(window: &[ImuSample], i: usize, c: usize, h: f64) -> Vec<ImuSample> {
    let mut w = window.to_vec();
    let mut ch = w[i].channels();
    ch[c] += h;
    w[i] = ImuSample::from_channels(w[i].t, &ch);
    w
}

/// Error magnitudes alternate between the quadratic and linear Huber
/// regimes while staying clear of the kink.
fn huber_errors(rng: &mut impl Rng, delta: f64) -> Vec3 {
    Vec3::from_fn(|_, _| {
        let scale = if rng.gen_bool(0.5) { rng.gen_range(0.2..0.6) } else { rng.gen_range(1.5..3.0) };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        sign * scale * delta
    })
}

fn check_jacobians(window: &[ImuSample], scheme: Scheme, h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let (_, jac) = preintegrate_with_jacobians(window, scheme)?;
    let tag = match scheme {
        Scheme::Euler => "euler",
        Scheme::Midpoint => "midpoint",
    };
    let blocks: [(&str, &Vec<Mat3>, usize); 5] = [
        ("rot_omega", &jac.d_rot_d_omega, 0),
        ("beta_omega", &jac.d_beta_d_omega, 0),
        ("beta_accel", &jac.d_beta_d_accel, 3),
        ("gamma_omega", &jac.d_gamma_d_omega, 0),
        ("gamma_accel", &jac.d_gamma_d_accel, 3),
    ];
    let mut out = Vec::new();
    for (k, (name, mats, ch0)) in blocks.iter().enumerate() {
        let mut tally = Tally::new(format!("preint.{tag}.{name}"));
        let output = |d: &PreintegrationDelta| match k {
            0 => log_so3(&d.dq),
            1 | 2 => d.dbeta,
            _ => d.dgamma,
        };
        for (i, m) in mats.iter().enumerate() {
            for c in 0..3 {
                let num = Vec3::from_fn(|r, _| {
                    central_difference(|e| output(&preintegrate(&perturbed(window, i, ch0 + c, e), scheme).unwrap())[r], h)
                });
                for r in 0..3 {
                    tally.add(m[(r, c)], num[r]);
                }
            }
        }
        out.push(tally.finish(tol));
    }
    Ok(out)
}

fn check_terms(rng: &mut ChaCha8Rng, window: &[ImuSample], h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let cfg = LossConfig::default();
    let pred = preintegrate(window, Scheme::Midpoint)?;
    let bias = integrated_bias_terms(&Vec3::new(0.03, -0.02, 0.05), &Vec3::new(0.2, 0.1, -0.3), window, Scheme::Midpoint)?;
    let mut out = Vec::new();
    for (label, b) in [("", None), ("_biased", Some(&bias))] {
        let qb = b.map_or(crate::so3::UnitQuaternion::identity(), |b| b.q_b);
        let e_rot = huber_errors(rng, cfg.huber_delta_q);
        let target_q = quat_mul(&quat_mul(&exp_so3(&e_rot), &qb), &pred.dq);
        let phi = log_so3(&pred.dq);
        let (_, g) = loss_rotation(&target_q, &pred.dq, b, cfg.huber_delta_q);
        let mut t = Tally::new(format!("loss.rotation{label}"));
        for c in 0..3 {
            let num = central_difference(
                |e| {
                    let mut p = phi;
                    p[c] += e;
                    loss_rotation(&target_q, &exp_so3(&p), b, cfg.huber_delta_q).0
                },
                h,
            );
            t.add(g[c], num);
        }
        out.push(t.finish(tol));

        let bb = b.map_or(Vec3::zeros(), |b| b.beta_b);
        let target_b = pred.dbeta + bb + huber_errors(rng, cfg.huber_delta_v);
        let (_, g) = loss_beta(&target_b, &pred.dbeta, b, cfg.huber_delta_v);
        let mut t = Tally::new(format!("loss.beta{label}"));
        for c in 0..3 {
            let num = central_difference(
                |e| {
                    let mut p = pred.dbeta;
                    p[c] += e;
                    loss_beta(&target_b, &p, b, cfg.huber_delta_v).0
                },
                h,
            );
            t.add(g[c], num);
        }
        out.push(t.finish(tol));

        let gb = b.map_or(Vec3::zeros(), |b| b.gamma_b);
        let target_g = pred.dgamma + gb + huber_errors(rng, cfg.huber_delta_p);
        let (_, g) = loss_gamma(&target_g, &pred.dgamma, b, cfg.huber_delta_p);
        let mut t = Tally::new(format!("loss.gamma{label}"));
        for c in 0..3 {
            let num = central_difference(
                |e| {
                    let mut p = pred.dgamma;
                    p[c] += e;
                    loss_gamma(&target_g, &p, b, cfg.huber_delta_p).0
                },
                h,
            );
            t.add(g[c], num);
        }
        out.push(t.finish(tol));
    }

    let lambda = Lambda::FALLBACK;
    let refined: Vec<ImuSample> = window
        .iter()
        .map(|s| {
            let mut ch = s.channels();
            for (k, x) in ch.iter_mut().enumerate() {
                let m = if rng.gen_bool(0.5) { 0.5 } else { 2.0 };
                *x += if rng.gen_bool(0.5) { m * lambda[k] } else { -m * lambda[k] };
            }
            ImuSample::from_channels(s.t, &ch)
        })
        .collect();
    let (_, g) = loss_reg(window, &refined, &lambda)?;
    let mut t = Tally::new("loss.reg");
    for i in 0..refined.len() {
        for c in 0..6 {
            let num = central_difference(|e| loss_reg(window, &perturbed(&refined, i, c, e), &lambda).unwrap().0, h * 1e-2);
            t.add(g[i][c], num);
        }
    }
    out.push(t.finish(tol));
    Ok(out)
}

/// Targets whose per-component errors against `window`'s own prefixes sit
/// on both sides of the Huber kink; augmented when `bias` is given.
fn synthetic_targets(
    rng: &mut ChaCha8Rng,
    window: &[ImuSample],
    cfg: &LossConfig,
    bias: Option<&AugmentedBias>,
) -> Result<Vec<HorizonTarget>> {
    cfg.horizon_fractions
        .iter()
        .map(|&f| {
            let len = prefix_len(f, window.len());
            let pred = preintegrate(&window[..len], Scheme::Midpoint)?;
            let compensation = bias.map(|b| b.compensation(&window[..len], Scheme::Midpoint)).transpose()?;
            let c = compensation.unwrap_or_default();
            let delta = PreintegrationDelta {
                dq: quat_mul(&quat_mul(&exp_so3(&huber_errors(rng, cfg.huber_delta_q)), &c.q_b), &pred.dq),
                dbeta: pred.dbeta + c.beta_b + huber_errors(rng, cfg.huber_delta_v),
                dgamma: pred.dgamma + c.gamma_b + huber_errors(rng, cfg.huber_delta_p),
                ..pred
            };
            Ok(HorizonTarget { n_samples: len, delta, compensation })
        })
        .collect()
}

fn check_total(rng: &mut ChaCha8Rng, window: &[ImuSample], h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let raw = window.to_vec();
    let refined: Vec<ImuSample> = raw
        .iter()
        .map(|s| {
            let d: [f64; 6] = std::array::from_fn(|k| {
                let m = if rng.gen_bool(0.5) { rng.gen_range(0.3..0.7) } else { rng.gen_range(1.5..3.0) };
                if rng.gen_bool(0.5) { m * Lambda::FALLBACK[k] } else { -m * Lambda::FALLBACK[k] }
            });
            let mut ch = s.channels();
            ch.iter_mut().zip(d).for_each(|(x, dx)| *x += dx);
            ImuSample::from_channels(s.t, &ch)
        })
        .collect();
    let bias = AugmentedBias { bg: Vec3::new(0.02, -0.01, 0.015), ba: Vec3::new(0.1, 0.05, -0.12) };
    let mut out = Vec::new();
    let configs = [
        ("loss.total_multi_horizon", LossConfig::default(), None),
        ("loss.total_multi_horizon_biased", LossConfig::default(), Some(&bias)),
        ("loss.total_single_horizon", LossConfig::single_horizon(), None),
    ];
    for (name, cfg, b) in configs {
        let targets = synthetic_targets(rng, &refined, &cfg, b)?;
        let (_, g) = total_loss(&raw, &refined, &targets, &cfg, Scheme::Midpoint)?;
        let mut t = Tally::new(name);
        for i in 0..refined.len() {
            for c in 0..6 {
                let num = central_difference(
                    |e| total_loss(&raw, &perturbed(&refined, i, c, e), &targets, &cfg, Scheme::Midpoint).unwrap().0.total,
                    h,
                );
                t.add(g[i][c], num);
            }
        }
        out.push(t.finish(tol));
    }
    Ok(out)
}

fn check_network(rng: &mut ChaCha8Rng, config: &GradcheckConfig, window: &[ImuSample]) -> Result<Vec<CheckResult>> {
    let (h, tol) = (config.step, config.tolerance);
    let net = NetworkConfig { window_len: window.len(), ..config.network.clone() };
    let params = init_params_seeded(&net, config.seed)?;
    // Unit-scale inputs keep the gates out of saturation, so gradients are
    // large enough to difference accurately.
    let fitted = Normalizer::fit([window], net.dt_channel)?;
    let normalizer = Normalizer {
        mean: fitted.mean.iter().zip(&fitted.std).map(|(m, s)| m + rng.gen_range(-0.2..0.2) * s).collect(),
        std: fitted.std.iter().map(|s| s * rng.gen_range(0.8..1.25)).collect(),
    };
    let weights: Vec<[f64; 6]> = (0..window.len()).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    let objective = |refined: &[ImuSample]| -> f64 {
        refined.iter().zip(&weights).map(|(s, w)| s.channels().iter().zip(w).map(|(x, c)| x * c).sum::<f64>()).sum()
    };
    let (refined, cache) = forward(&params, &normalizer, window)?;
    let (pg, ig) = backward(&params, &normalizer, &cache, &weights)?;

    let mut out = Vec::new();
    for group in &params.layout().groups {
        let mut t = Tally::new(format!("net.{}", group.name));
        for i in group.range() {
            let num = central_difference(
                |e| {
                    let mut p = params.clone();
                    p.values[i] += e;
                    objective(&forward(&p, &normalizer, window).unwrap().0)
                },
                h,
            );
            t.add(pg[i], num);
        }
        out.push(t.finish(tol));
    }
    let mut t = Tally::new("net.inputs");
    for i in 0..window.len() {
        for c in 0..6 {
            let num = central_difference(|e| objective(&forward(&params, &normalizer, &perturbed(window, i, c, e)).unwrap().0), h);
            t.add(ig[i][c], num);
        }
    }
    out.push(t.finish(tol));

    // Through the losses: the training gradient.
    let cfg = LossConfig { lambda_reg: Lambda::PerChannel(lambda_clear_of(window, &refined)), ..Default::default() };
    let bias = AugmentedBias { bg: Vec3::new(-0.01, 0.02, 0.01), ba: Vec3::new(0.05, -0.1, 0.08) };
    let targets = synthetic_targets(rng, &refined, &cfg, Some(&bias))?;
    let loss_of = |p: &crate::net::NetworkParams| -> f64 {
        let r = forward(p, &normalizer, window).unwrap().0;
        total_loss(window, &r, &targets, &cfg, Scheme::Midpoint).unwrap().0.total
    };
    let (_, g_ref) = total_loss(window, &refined, &targets, &cfg, Scheme::Midpoint)?;
    let (pg, _) = backward(&params, &normalizer, &cache, &g_ref)?;
    let mut t = Tally::new("end_to_end.params");
    for i in 0..params.values.len() {
        let num = central_difference(
            |e| {
                let mut p = params.clone();
                p.values[i] += e;
                loss_of(&p)
            },
            h,
        );
        t.add(pg[i], num);
    }
    out.push(t.finish(tol));
    Ok(out)
}

/// Per-channel dead-zone widths placed in the widest (log-scale) gap of the
/// observed `|refined − raw|`, keeping the hinge away from every sample.
fn lambda_clear_of(raw: &[ImuSample], refined: &[ImuSample]) -> [f64; 6] {
    std::array::from_fn(|c| {
        let mut d: Vec<f64> = raw.iter().zip(refined).map(|(a, b)| (b.channels()[c] - a.channels()[c]).abs()).collect();
        d.sort_by(f64::total_cmp);
        d.push(d[d.len() - 1] * 4.0);
        let mut best = (d[0] * 0.25, d[0].max(1e-300) / (d[0] * 0.25).max(1e-300));
        for w in d.windows(2) {
            let ratio = w[1] / w[0].max(1e-300);
            if ratio > best.1 {
                best = ((w[0] * w[1]).sqrt(), ratio);
            }
        }
        best.0
    })
}

/// Runs the whole suite; each entry reports its worst element.
pub fn run_gradchecks(config: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    config.network.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.network.window_len;
    let window = random_window(&mut rng, n, 0.02);
    let mut out = Vec::new();
    for scheme in [Scheme::Midpoint, Scheme::Euler] {
        out.extend(check_jacobians(&window, scheme, config.step, config.tolerance)?);
    }
    out.extend(check_terms(&mut rng, &window, config.step, config.tolerance)?);
    out.extend(check_total(&mut rng, &window, config.step, config.tolerance)?);
    out.extend(check_network(&mut rng, config, &window)?);
    Ok(out)
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
    let mut s = format!("{:<width$}  {:>7}  {:>12}  result\n", "check", "entries", "max_rel_err");
    for r in results {
        s += &format!(
            "{:<width$}  {:>7}  {:>12.3e}  {}\n",
            r.name,
            r.entries,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    s
}
