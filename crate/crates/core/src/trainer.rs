//! Adam training loop with best-validation model selection, checkpoints and
//! per-epoch metrics.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, split_ranges, AugmentationConfig, Dataset, Split, SplitConfig, TrainingWindow, WindowConfig};
use crate::error::{Error, Result};
use crate::losses::{total_loss, Lambda, LossBreakdown, LossConfig};
use crate::net::{backward, forward, init_params_seeded, NetworkConfig, NetworkParams, Normalizer};
use crate::preint::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub shuffle: bool,
    /// Cosine learning-rate decay to zero over `max_epochs`.
    pub cosine_decay: bool,
    /// Stop after this many epochs without a new best validation loss.
    pub early_stop_patience: Option<usize>,
    /// Zero the output head after initialization so training starts with
    /// refined = raw.
    pub identity_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 700,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            grad_clip: Some(10.0),
            shuffle: true,
            cosine_decay: false,
            early_stop_patience: None,
            identity_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::InvalidArgument("adam requires beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine_decay && self.max_epochs > 0 {
            let x = (epoch - 1) as f64 / self.max_epochs as f64;
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * x).cos())
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update with learning rate `lr`, after optional
/// global-norm clipping of `grads`.
pub fn adam_step(params: &mut NetworkParams, grads: &[f64], state: &mut AdamState, config: &TrainConfig, lr: f64) -> Result<()> {
    let n = params.values.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, adam state of {}",
            n,
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(params.layout().group_of(i).to_string()));
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = match config.grad_clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    state.step += 1;
    let bc1 = 1.0 - config.beta1.powi(state.step as i32);
    let bc2 = 1.0 - config.beta2.powi(state.step as i32);
    for i in 0..n {
        let g = grads[i] * scale;
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedWeights {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "obsint-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing JSON checkpoint: weights are stored as named row-major
/// blocks so the file stays readable without this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkConfig,
    pub normalizer: Normalizer,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub scheme: Scheme,
    pub epoch: usize,
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub weights: Vec<NamedWeights>,
    /// Optimizer state, kept in resumable checkpoints only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &NetworkParams,
        normalizer: &Normalizer,
        train: &TrainConfig,
        loss: &LossConfig,
        scheme: Scheme,
        epoch: usize,
        val_loss: f64,
        best_val_loss: f64,
    ) -> Self {
        let weights = params
            .layout()
            .groups
            .iter()
            .map(|g| NamedWeights { name: g.name.clone(), rows: g.rows, cols: g.cols, values: params.values[g.range()].to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            network: params.config.clone(),
            normalizer: normalizer.clone(),
            train: train.clone(),
            loss: loss.clone(),
            scheme,
            epoch,
            val_loss,
            best_val_loss,
            weights,
            adam: None,
        }
    }

    pub fn params(&self) -> Result<NetworkParams> {
        let mut params = NetworkParams::zeros(&self.network).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let layout = params.layout();
        if layout.groups.len() != self.weights.len() {
            return Err(Error::Checkpoint(format!("expected {} weight groups, found {}", layout.groups.len(), self.weights.len())));
        }
        for (g, w) in layout.groups.iter().zip(&self.weights) {
            if g.name != w.name || g.rows != w.rows || g.cols != w.cols || w.values.len() != g.len() {
                return Err(Error::Checkpoint(format!(
                    "weight group {:?} ({}x{}, {} values) does not match expected {:?} ({}x{})",
                    w.name,
                    w.rows,
                    w.cols,
                    w.values.len(),
                    g.name,
                    g.rows,
                    g.cols
                )));
            }
            params.values[g.range()].copy_from_slice(&w.values);
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        if self.normalizer.dim() != params.config.input_dim {
            return Err(Error::Checkpoint("normalizer dimension does not match network input".into()));
        }
        Ok(params)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.params()?;
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lq: f64,
    pub lv: f64,
    pub lp: f64,
    pub ld: f64,
    pub wall_s: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,lq,lv,lp,ld,wall_s";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lq, r.lv, r.lp, r.ld, r.wall_s);
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| Error::Parse { path: "metrics.csv".into(), line: i + 1, message: m.into() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err("expected 8 columns"));
        }
        let x: Vec<f64> = f[1..].iter().map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| err("invalid number"))?;
        let epoch = f[0].parse().map_err(|_| err("invalid epoch"))?;
        out.push(EpochMetrics { epoch, train_loss: x[0], val_loss: x[1], lq: x[2], lv: x[3], lp: x[4], ld: x[5], wall_s: x[6] });
    }
    Ok(out)
}

/// Loss and parameter gradient of one window.
pub fn window_loss_grad(
    params: &NetworkParams,
    normalizer: &Normalizer,
    window: &TrainingWindow,
    loss: &LossConfig,
    scheme: Scheme,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (refined, cache) = forward(params, normalizer, &window.raw)?;
    let (b, g_refined) = total_loss(&window.raw, &refined, &window.targets, loss, scheme)?;
    let (g, _) = backward(params, normalizer, &cache, &g_refined)?;
    Ok((b, g))
}

/// Mean loss over `windows`, summed in window order.
pub fn evaluate_loss(
    params: &NetworkParams,
    normalizer: &Normalizer,
    windows: &[TrainingWindow],
    loss: &LossConfig,
    scheme: Scheme,
) -> Result<LossBreakdown> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    let parts: Vec<LossBreakdown> = windows
        .par_iter()
        .map(|w| {
            let (refined, _) = forward(params, normalizer, &w.raw)?;
            Ok(total_loss(&w.raw, &refined, &w.targets, loss, scheme)?.0)
        })
        .collect::<Result<_>>()?;
    let mut sum = LossBreakdown::default();
    for p in parts {
        sum += p;
    }
    Ok(sum.scaled(1.0 / windows.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Lowest-validation-loss parameters seen, including the initial ones.
    pub best: Checkpoint,
    /// State after the final epoch, with optimizer moments for resuming.
    pub last: Checkpoint,
    /// Rows for this run only; epoch 0 is the evaluation before any update.
    pub metrics: Vec<EpochMetrics>,
}

fn check_split(windows: &[TrainingWindow], expected: Split) -> Result<()> {
    match windows.iter().find(|w| w.split != expected) {
        Some(w) => Err(Error::InvalidArgument(format!(
            "{} window at sample {} passed where {} windows are expected",
            w.split.name(),
            w.start,
            expected.name()
        ))),
        None => Ok(()),
    }
}

/// State to continue an interrupted run from.
#[derive(Debug, Clone, Copy)]
pub struct Resume<'a> {
    /// Final checkpoint of the earlier run, carrying optimizer state.
    pub last: &'a Checkpoint,
    pub best: &'a Checkpoint,
}

/// Trains a fresh network, or continues an earlier run, on `train` windows
/// and selects on `val` windows.
pub fn train(
    train_windows: &[TrainingWindow],
    val_windows: &[TrainingWindow],
    network: &NetworkConfig,
    loss: &LossConfig,
    config: &TrainConfig,
    scheme: Scheme,
    resume: Option<Resume<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    loss.validate()?;
    network.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::InsufficientData("training needs non-empty train and val splits".into()));
    }
    check_split(train_windows, Split::Train)?;
    check_split(val_windows, Split::Val)?;

    let started = Instant::now();
    let mut metrics = Vec::new();
    let (mut params, normalizer, mut adam, first_epoch, mut best) = match resume {
        Some(r) => {
            let params = r.last.params()?;
            if &params.config != network || r.best.network != *network {
                return Err(Error::Checkpoint("resume checkpoint was trained with a different network config".into()));
            }
            let adam = r.last.adam.clone().ok_or_else(|| Error::Checkpoint("resume checkpoint has no optimizer state".into()))?;
            (params, r.last.normalizer.clone(), adam, r.last.epoch + 1, r.best.clone())
        }
        None => {
            let mut params = init_params_seeded(network, config.seed)?;
            if config.identity_init {
                params.zero_head();
            }
            let normalizer = Normalizer::fit(train_windows.iter().map(|w| w.raw.as_slice()), network.dt_channel)?;
            let tr = evaluate_loss(&params, &normalizer, train_windows, loss, scheme)?;
            let val = evaluate_loss(&params, &normalizer, val_windows, loss, scheme)?;
            if !val.total.is_finite() {
                return Err(Error::Diverged { epoch: 0, detail: "initial validation loss is not finite".into() });
            }
            metrics.push(row(0, tr.total, &val, started));
            let best = Checkpoint::new(&params, &normalizer, config, loss, scheme, 0, val.total, val.total);
            let adam = AdamState::new(params.values.len());
            (params, normalizer, adam, 1, best)
        }
    };
    if adam.m.len() != params.values.len() {
        return Err(Error::Checkpoint("optimizer state does not match the network".into()));
    }

    let mut since_best = 0;
    let mut last_val = best.val_loss;
    let mut epoch = first_epoch - 1;
    for e in first_epoch..=config.max_epochs {
        epoch = e;
        let lr = config.lr_at(e);
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        if config.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ (e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        }
        let mut train_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let parts: Vec<(LossBreakdown, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| window_loss_grad(&params, &normalizer, &train_windows[i], loss, scheme))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; params.values.len()];
            for (b, g) in &parts {
                train_sum += b.total;
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam_step(&mut params, &grad, &mut adam, config, lr)?;
        }
        let val = evaluate_loss(&params, &normalizer, val_windows, loss, scheme)?;
        if !val.total.is_finite() {
            return Err(Error::Diverged {
                epoch: e,
                detail: format!("validation loss {} (lq {}, lv {}, lp {}, ld {})", val.total, val.lq, val.lv, val.lp, val.ld),
            });
        }
        let r = row(e, train_sum / train_windows.len() as f64, &val, started);
        info!("epoch {e}: train {:.6e} val {:.6e}", r.train_loss, r.val_loss);
        metrics.push(r);
        last_val = val.total;
        if val.total < best.val_loss {
            best = Checkpoint::new(&params, &normalizer, config, loss, scheme, e, val.total, val.total);
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience.is_some_and(|p| since_best >= p) {
                info!("early stop at epoch {e}");
                break;
            }
        }
    }
    let mut last = Checkpoint::new(&params, &normalizer, config, loss, scheme, epoch, last_val, best.val_loss);
    last.adam = Some(adam);
    Ok(TrainOutcome { best, last, metrics })
}

fn row(epoch: usize, train_loss: f64, val: &LossBreakdown, started: Instant) -> EpochMetrics {
    EpochMetrics {
        epoch,
        train_loss,
        val_loss: val.total,
        lq: val.lq,
        lv: val.lv,
        lp: val.lp,
        ld: val.ld,
        wall_s: started.elapsed().as_secs_f64(),
    }
}

/// Windows for each split of one aligned dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitWindows {
    pub train: Vec<TrainingWindow>,
    pub val: Vec<TrainingWindow>,
    pub test: Vec<TrainingWindow>,
    pub ranges: [std::ops::Range<usize>; 3],
}

/// Cuts train/val/test windows from contiguous time splits. Augmentation
/// applies to the train split only; val and test windows use a fixed
/// stride without random offset.
pub fn prepare_windows(
    dataset: &Dataset,
    window: &WindowConfig,
    split: &SplitConfig,
    augmentation: &AugmentationConfig,
    loss: &LossConfig,
    scheme: Scheme,
    seed: u64,
) -> Result<SplitWindows> {
    let [(_, tr), (_, va), (_, te)] = split_ranges(dataset.imu.len(), split, window.window_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fr = &loss.horizon_fractions;
    let train = make_windows(dataset, tr.clone(), window, augmentation, fr, scheme, Split::Train, &mut rng)?;
    let fixed = WindowConfig { random_offset: false, ..*window };
    let off = AugmentationConfig { noise_std: [0.0; 6], bias_probability: 0.0, ..*augmentation };
    let val = make_windows(dataset, va.clone(), &fixed, &off, fr, scheme, Split::Val, &mut rng)?;
    let test = if te.len() >= window.window_len {
        make_windows(dataset, te.clone(), &fixed, &off, fr, scheme, Split::Test, &mut rng)?
    } else {
        Vec::new()
    };
    Ok(SplitWindows { train, val, test, ranges: [tr, va, te] })
}

/// Replaces an `auto` regularizer width with 3σ of the dataset's known
/// per-sample noise.
pub fn resolve_lambda(loss: &LossConfig, dataset: &Dataset) -> LossConfig {
    let mut out = loss.clone();
    if let (Lambda::Auto(_), Some(std)) = (&loss.lambda_reg, dataset.meta.noise_std) {
        out.lambda_reg = Lambda::from_noise_std(std);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params() -> NetworkParams {
        init_params_seeded(&NetworkConfig::tiny(), 3).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny_params();
        let before = p.values.clone();
        let mut st = AdamState::new(p.values.len());
        adam_step(&mut p, &vec![0.0; before.len()], &mut st, &TrainConfig::default(), 1e-3).unwrap();
        assert_eq!(p.values, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let mut p = tiny_params();
        let before = p.values.clone();
        let g: Vec<f64> = (0..before.len()).map(|i| ((i % 7) as f64 - 3.0) * 1e-3).collect();
        let mut st = AdamState::new(g.len());
        let cfg = TrainConfig { grad_clip: None, ..Default::default() };
        adam_step(&mut p, &g, &mut st, &cfg, 0.01).unwrap();
        for i in 0..g.len() {
            let expected = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p.values[i] - before[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = tiny_params();
        let layout = p.layout();
        let mut g = vec![0.0; p.values.len()];
        let head = layout.groups.iter().find(|g| g.name == "head.bias").unwrap();
        g[head.offset] = f64::NAN;
        let mut st = AdamState::new(g.len());
        match adam_step(&mut p, &g, &mut st, &TrainConfig::default(), 1e-3) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "head.bias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clipping_bounds_update_direction() {
        let mut p = tiny_params();
        let mut q = p.clone();
        let g: Vec<f64> = (0..p.values.len()).map(|i| (i as f64).sin() * 100.0).collect();
        let cfg = TrainConfig { grad_clip: Some(1.0), ..Default::default() };
        let mut s1 = AdamState::new(g.len());
        adam_step(&mut p, &g, &mut s1, &cfg, 1e-3).unwrap();
        // m = (1 − β1)·clipped g, whose norm is the clip bound
        assert!((s1.m.iter().map(|x| x * x).sum::<f64>().sqrt() - 0.1).abs() < 1e-12);
        // a first Adam step is scale-free, so clipping barely changes it
        let mut s2 = AdamState::new(g.len());
        adam_step(&mut q, &g, &mut s2, &TrainConfig { grad_clip: None, ..Default::default() }, 1e-3).unwrap();
        for i in (0..g.len()).filter(|&i| g[i].abs() > 1.0) {
            assert!((p.values[i] - q.values[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn metrics_round_trip() {
        let rows = vec![
            EpochMetrics { epoch: 0, train_loss: 1.5, val_loss: 2.25, lq: 0.1, lv: 0.2, lp: 0.3, ld: 0.0, wall_s: 0.01 },
            EpochMetrics { epoch: 1, train_loss: 1.0 / 3.0, val_loss: 1e-17, lq: 0.0, lv: 0.0, lp: 0.0, ld: 0.0, wall_s: 1.0 },
        ];
        assert_eq!(parse_metrics_csv(&metrics_csv(&rows)).unwrap(), rows);
    }
}
