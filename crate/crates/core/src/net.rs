//! Measurement-refinement network: stacked bidirectional LSTM layers
//! followed by one fully-connected head that maps each time step to a
//! 6-channel correction. Forward and backward passes (BPTT) are written out
//! by hand over flat `f64` parameter storage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::ImuSample;

pub const MEASUREMENT_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_layers: usize,
    /// Hidden units per direction.
    pub hidden: usize,
    pub window_len: usize,
    /// 6, or 7 when `dt_channel` is set.
    pub input_dim: usize,
    pub output_dim: usize,
    /// `refined = raw + correction` when set; otherwise the head output is
    /// the refined measurement itself.
    pub residual_output: bool,
    /// Append the sample interval as a seventh input channel.
    pub dt_channel: bool,
    /// Accept windows of any length ≥ 1 instead of exactly `window_len`.
    pub variable_length: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            hidden: 64,
            window_len: 200,
            input_dim: 6,
            output_dim: 6,
            residual_output: true,
            dt_channel: false,
            variable_length: false,
        }
    }
}

impl NetworkConfig {
    pub fn tiny() -> Self {
        Self { n_layers: 1, hidden: 4, window_len: 8, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("n_layers and hidden must be >= 1".into()));
        }
        if self.window_len < 2 {
            return Err(Error::InvalidArgument("window_len must be >= 2".into()));
        }
        let expected_in = MEASUREMENT_DIM + usize::from(self.dt_channel);
        if self.input_dim != expected_in {
            return Err(Error::InvalidArgument(format!(
                "input_dim is {} but dt_channel={} requires {expected_in}",
                self.input_dim, self.dt_channel
            )));
        }
        if self.output_dim != MEASUREMENT_DIM {
            return Err(Error::InvalidArgument(format!("output_dim must be {MEASUREMENT_DIM}")));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden
        }
    }
}

/// Location of one named weight block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct DirOffsets {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    n_in: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub groups: Vec<ParamGroup>,
    dirs: Vec<[DirOffsets; 2]>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &NetworkConfig) -> Self {
        let h4 = 4 * config.hidden;
        let mut groups = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            groups.push(ParamGroup { name, offset, rows, cols });
            offset += rows * cols;
            offset - rows * cols
        };
        let mut dirs = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let n_in = config.layer_input(l);
            let mut pair = [DirOffsets { w_ih: 0, w_hh: 0, bias: 0, n_in }; 2];
            for (d, tag) in ["fwd", "bwd"].iter().enumerate() {
                pair[d].w_ih = push(format!("lstm{l}.{tag}.w_ih"), h4, n_in);
                pair[d].w_hh = push(format!("lstm{l}.{tag}.w_hh"), h4, config.hidden);
                pair[d].bias = push(format!("lstm{l}.{tag}.bias"), h4, 1);
            }
            dirs.push(pair);
        }
        let head_w = push("head.weight".into(), config.output_dim, 2 * config.hidden);
        let head_b = push("head.bias".into(), config.output_dim, 1);
        Self { groups, dirs, head_w, head_b, total: offset }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Name of the group that owns flat index `i`.
    pub fn group_of(&self, i: usize) -> &str {
        self.groups.iter().find(|g| g.range().contains(&i)).map_or("?", |g| g.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config: config.clone(), values: vec![0.0; ParamLayout::new(config).len()] })
    }

    /// Zeroes the head so the network starts at the residual identity.
    pub fn zero_head(&mut self) {
        let layout = self.layout();
        for g in layout.groups.iter().filter(|g| g.name.starts_with("head.")) {
            self.values[g.range()].fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Uniform `±1/√hidden` recurrent weights, `±1/√(2·hidden)` head weights,
/// zero biases except the forget gate, which starts at 1.
pub fn init_params(config: &NetworkConfig, rng: &mut impl Rng) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(config)?;
    let layout = params.layout();
    let h = config.hidden;
    for g in &layout.groups {
        let slice = &mut params.values[g.range()];
        if g.name.ends_with(".bias") && g.name.starts_with("lstm") {
            slice[h..2 * h].fill(1.0);
        } else if g.name == "head.weight" {
            let k = 1.0 / ((2 * h) as f64).sqrt();
            slice.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        } else if g.name.starts_with("lstm") {
            let k = 1.0 / (h as f64).sqrt();
            slice.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        }
    }
    Ok(params)
}

pub fn init_params_seeded(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    init_params(config, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-channel affine input normalization fitted on training data. Channel
/// order `[wx, wy, wz, ax, ay, az, (dt)]`; the accelerometer means absorb
/// the gravity offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-6;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a [ImuSample]>, dt_channel: bool) -> Result<Self> {
        let dim = MEASUREMENT_DIM + usize::from(dt_channel);
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut count = 0usize;
        let mut row = vec![0.0; dim];
        for w in windows {
            for i in 0..w.len() {
                input_row(w, i, dt_channel, &mut row);
                for c in 0..dim {
                    sum[c] += row[c];
                    sum_sq[c] += row[c] * row[c];
                }
                count += 1;
            }
        }
        if count < 2 {
            return Err(Error::InsufficientData("normalizer needs at least two samples".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / n - m * m).max(0.0)).sqrt().max(MIN_STD))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64], out: &mut [f64]) {
        for c in 0..x.len() {
            out[c] = (x[c] - self.mean[c]) / self.std[c];
        }
    }

    pub fn denormalize(&self, y: &[f64], out: &mut [f64]) {
        for c in 0..y.len() {
            out[c] = y[c] * self.std[c] + self.mean[c];
        }
    }
}

fn input_row(window: &[ImuSample], i: usize, dt_channel: bool, row: &mut [f64]) {
    row[..MEASUREMENT_DIM].copy_from_slice(&window[i].channels());
    if dt_channel {
        row[MEASUREMENT_DIM] = if window.len() < 2 {
            0.0
        } else if i == 0 {
            window[1].t - window[0].t
        } else {
            window[i].t - window[i - 1].t
        };
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[r] += Σ_c m[r·cols + c]·x[c]`
fn gemv_acc(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[c] += Σ_r m[r·cols + c]·y[r]`
fn gemv_t_acc(m: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (row, yr) in m.chunks_exact(cols).zip(y) {
        if *yr != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += a * yr);
        }
    }
}

/// `m[r·cols + c] += y[r]·x[c]`
fn outer_acc(m: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    for (row, yr) in m.chunks_exact_mut(cols).zip(y) {
        if *yr != 0.0 {
            row.iter_mut().zip(x).for_each(|(a, b)| *a += yr * b);
        }
    }
}

/// Everything one direction of one layer needs for its backward pass,
/// stored in time order (not processing order).
#[derive(Debug, Clone)]
struct DirCache {
    /// Post-activation gates `[i, f, g, o]`, `4H` per step.
    gates: Vec<f64>,
    cell: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    len: usize,
    /// Input sequence of every layer (`len × n_in`), layer 0 normalized.
    layer_inputs: Vec<Vec<f64>>,
    dirs: Vec<[DirCache; 2]>,
    /// Output of the last layer, `len × 2H`.
    top: Vec<f64>,
    n_params: usize,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn run_direction(
    p: &[f64],
    off: &DirOffsets,
    hidden: usize,
    input: &[f64],
    len: usize,
    reverse: bool,
    out: &mut [f64],
    out_stride: usize,
    out_offset: usize,
) -> DirCache {
    let h = hidden;
    let h4 = 4 * h;
    let w_ih = &p[off.w_ih..off.w_ih + h4 * off.n_in];
    let w_hh = &p[off.w_hh..off.w_hh + h4 * h];
    let bias = &p[off.bias..off.bias + h4];
    let mut cache = DirCache {
        gates: vec![0.0; len * h4],
        cell: vec![0.0; len * h],
        cell_tanh: vec![0.0; len * h],
        hidden: vec![0.0; len * h],
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; h4];
    for s in 0..len {
        let t = if reverse { len - 1 - s } else { s };
        z.copy_from_slice(bias);
        gemv_acc(w_ih, off.n_in, &input[t * off.n_in..(t + 1) * off.n_in], &mut z);
        gemv_acc(w_hh, h, &h_prev, &mut z);
        let gates = &mut cache.gates[t * h4..(t + 1) * h4];
        for k in 0..h {
            gates[k] = sigmoid(z[k]);
            gates[h + k] = sigmoid(z[h + k]);
            gates[2 * h + k] = z[2 * h + k].tanh();
            gates[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        for k in 0..h {
            let c = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            let ct = c.tanh();
            let hv = gates[3 * h + k] * ct;
            cache.cell[t * h + k] = c;
            cache.cell_tanh[t * h + k] = ct;
            cache.hidden[t * h + k] = hv;
            out[t * out_stride + out_offset + k] = hv;
            c_prev[k] = c;
            h_prev[k] = hv;
        }
    }
    cache
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    p: &[f64],
    grad: &mut [f64],
    off: &DirOffsets,
    hidden: usize,
    input: &[f64],
    cache: &DirCache,
    len: usize,
    reverse: bool,
    d_out: &[f64],
    out_stride: usize,
    out_offset: usize,
    d_input: &mut [f64],
) {
    let h = hidden;
    let h4 = 4 * h;
    let n_in = off.n_in;
    let w_ih = &p[off.w_ih..off.w_ih + h4 * n_in];
    let w_hh = &p[off.w_hh..off.w_hh + h4 * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; h4];
    let zeros = vec![0.0; h];
    for s in (0..len).rev() {
        let t = if reverse { len - 1 - s } else { s };
        // state this step was computed from
        let prev = if s == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let gates = &cache.gates[t * h4..(t + 1) * h4];
        let c_prev = prev.map_or(&zeros[..], |pt| &cache.cell[pt * h..(pt + 1) * h]);
        let h_prev = prev.map_or(&zeros[..], |pt| &cache.hidden[pt * h..(pt + 1) * h]);
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let ct = cache.cell_tanh[t * h + k];
            let dh = d_out[t * out_stride + out_offset + k] + dh_next[k];
            let dc = dc_next[k] + dh * o * (1.0 - ct * ct);
            dz[k] = dc * g * i * (1.0 - i);
            dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - g * g);
            dz[3 * h + k] = dh * ct * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x = &input[t * n_in..(t + 1) * n_in];
        outer_acc(&mut grad[off.w_ih..off.w_ih + h4 * n_in], n_in, &dz, x);
        outer_acc(&mut grad[off.w_hh..off.w_hh + h4 * h], h, &dz, h_prev);
        grad[off.bias..off.bias + h4].iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
        gemv_t_acc(w_ih, n_in, &dz, &mut d_input[t * n_in..(t + 1) * n_in]);
        dh_next.fill(0.0);
        gemv_t_acc(w_hh, h, &dz, &mut dh_next);
    }
}

/// Runs the network over a window of raw samples and returns refined
/// samples (same timestamps) plus the cache for [`backward`].
pub fn forward(params: &NetworkParams, normalizer: &Normalizer, raw: &[ImuSample]) -> Result<(Vec<ImuSample>, ForwardCache)> {
    let cfg = &params.config;
    let len = raw.len();
    if len == 0 || (!cfg.variable_length && len != cfg.window_len) {
        return Err(Error::ShapeMismatch(format!("window has {len} samples, network expects {}", cfg.window_len)));
    }
    if normalizer.dim() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "normalizer has {} channels, network input is {}",
            normalizer.dim(),
            cfg.input_dim
        )));
    }
    let layout = params.layout();
    if params.values.len() != layout.len() {
        return Err(Error::ShapeMismatch("parameter vector does not match config".into()));
    }
    let h = cfg.hidden;
    let p = &params.values;

    let mut x0 = vec![0.0; len * cfg.input_dim];
    let mut row = vec![0.0; cfg.input_dim];
    for t in 0..len {
        input_row(raw, t, cfg.dt_channel, &mut row);
        normalizer.normalize(&row, &mut x0[t * cfg.input_dim..(t + 1) * cfg.input_dim]);
    }

    let mut layer_inputs = vec![x0];
    let mut dirs = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let mut out = vec![0.0; len * 2 * h];
        let input = &layer_inputs[l];
        let fwd = run_direction(p, &layout.dirs[l][0], h, input, len, false, &mut out, 2 * h, 0);
        let bwd = run_direction(p, &layout.dirs[l][1], h, input, len, true, &mut out, 2 * h, h);
        dirs.push([fwd, bwd]);
        layer_inputs.push(out);
    }
    let top = layer_inputs.pop().expect("at least one layer");

    let od = cfg.output_dim;
    let head_w = &p[layout.head_w..layout.head_w + od * 2 * h];
    let head_b = &p[layout.head_b..layout.head_b + od];
    let mut refined = Vec::with_capacity(len);
    let mut y = vec![0.0; od];
    for t in 0..len {
        y.copy_from_slice(head_b);
        gemv_acc(head_w, 2 * h, &top[t * 2 * h..(t + 1) * 2 * h], &mut y);
        let raw_c = raw[t].channels();
        let mut c = [0.0; MEASUREMENT_DIM];
        for k in 0..MEASUREMENT_DIM {
            c[k] = if cfg.residual_output {
                raw_c[k] + y[k] * normalizer.std[k]
            } else {
                y[k] * normalizer.std[k] + normalizer.mean[k]
            };
        }
        refined.push(ImuSample::from_channels(raw[t].t, &c));
    }
    Ok((refined, ForwardCache { len, layer_inputs, dirs, top, n_params: layout.len() }))
}

/// Exact gradients of a scalar loss given `∂L/∂refined`. Returns the
/// parameter gradient (flat, same layout as the parameters) and the
/// gradient w.r.t. the raw input channels.
pub fn backward(
    params: &NetworkParams,
    normalizer: &Normalizer,
    cache: &ForwardCache,
    grad_refined: &[[f64; MEASUREMENT_DIM]],
) -> Result<(Vec<f64>, Vec<[f64; MEASUREMENT_DIM]>)> {
    let cfg = &params.config;
    let layout = params.layout();
    if cache.n_params != layout.len() || params.values.len() != layout.len() || cache.dirs.len() != cfg.n_layers {
        return Err(Error::ShapeMismatch("forward cache was produced by a different network".into()));
    }
    if grad_refined.len() != cache.len {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} steps, cache {}",
            grad_refined.len(),
            cache.len
        )));
    }
    let len = cache.len;
    let h = cfg.hidden;
    let od = cfg.output_dim;
    let p = &params.values;
    let mut grad = vec![0.0; layout.len()];
    let mut input_grads = vec![[0.0; MEASUREMENT_DIM]; len];

    // head
    let head_w = &p[layout.head_w..layout.head_w + od * 2 * h];
    let mut d_top = vec![0.0; len * 2 * h];
    let mut dy = vec![0.0; od];
    for t in 0..len {
        for k in 0..od {
            dy[k] = grad_refined[t][k] * normalizer.std[k];
            if cfg.residual_output {
                input_grads[t][k] = grad_refined[t][k];
            }
        }
        let y_in = &cache.top[t * 2 * h..(t + 1) * 2 * h];
        outer_acc(&mut grad[layout.head_w..layout.head_w + od * 2 * h], 2 * h, &dy, y_in);
        grad[layout.head_b..layout.head_b + od].iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
        gemv_t_acc(head_w, 2 * h, &dy, &mut d_top[t * 2 * h..(t + 1) * 2 * h]);
    }

    let mut d_out = d_top;
    for l in (0..cfg.n_layers).rev() {
        let n_in = cfg.layer_input(l);
        let mut d_in = vec![0.0; len * n_in];
        let input = &cache.layer_inputs[l];
        for (d, reverse) in [(0, false), (1, true)] {
            backprop_direction(
                p,
                &mut grad,
                &layout.dirs[l][d],
                h,
                input,
                &cache.dirs[l][d],
                len,
                reverse,
                &d_out,
                2 * h,
                d * h,
                &mut d_in,
            );
        }
        d_out = d_in;
    }

    for t in 0..len {
        for k in 0..MEASUREMENT_DIM {
            input_grads[t][k] += d_out[t * cfg.input_dim + k] / normalizer.std[k];
        }
    }
    Ok((grad, input_grads))
}

/// Refines an arbitrarily long sequence by running consecutive
/// `window_len` chunks; a short tail is covered by one final window aligned
/// to the end of the sequence.
pub fn refine_sequence(params: &NetworkParams, normalizer: &Normalizer, raw: &[ImuSample]) -> Result<Vec<ImuSample>> {
    let w = params.config.window_len;
    if params.config.variable_length || raw.len() <= w {
        if raw.len() < w && !params.config.variable_length {
            let mut p = params.clone();
            p.config.variable_length = true;
            return Ok(forward(&p, normalizer, raw)?.0);
        }
        return Ok(forward(params, normalizer, raw)?.0);
    }
    let mut out: Vec<ImuSample> = Vec::with_capacity(raw.len());
    let mut start = 0;
    while start < raw.len() {
        let (s, skip) = if start + w <= raw.len() { (start, 0) } else { (raw.len() - w, start + w - raw.len()) };
        let (refined, _) = forward(params, normalizer, &raw[s..s + w])?;
        out.extend_from_slice(&refined[skip..]);
        start += w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Vec3;

    fn random_window(rng: &mut impl Rng, n: usize) -> Vec<ImuSample> {
        (0..n)
            .map(|i| {
                ImuSample::new(
                    i as f64 * 0.005,
                    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic_with_forget_bias() {
        let cfg = NetworkConfig { hidden: 8, window_len: 10, ..Default::default() };
        let a = init_params_seeded(&cfg, 5).unwrap();
        let b = init_params_seeded(&cfg, 5).unwrap();
        assert_eq!(a.values, b.values);
        let layout = a.layout();
        for g in layout.groups.iter().filter(|g| g.name.ends_with(".bias") && g.name.starts_with("lstm")) {
            let v = &a.values[g.range()];
            assert!(v[8..16].iter().all(|x| *x == 1.0));
            assert!(v[..8].iter().chain(&v[16..]).all(|x| *x == 0.0));
        }
    }

    #[test]
    fn layout_sizes() {
        let cfg = NetworkConfig { n_layers: 2, hidden: 3, ..Default::default() };
        let layout = ParamLayout::new(&cfg);
        // layer 0: 2·(12·6 + 12·3 + 12), layer 1: 2·(12·6 + 12·3 + 12), head 6·6 + 6
        assert_eq!(layout.len(), 2 * (72 + 36 + 12) + 2 * (72 + 36 + 12) + 36 + 6);
        assert_eq!(layout.group_of(0), "lstm0.fwd.w_ih");
        assert_eq!(layout.group_of(layout.len() - 1), "head.bias");
    }

    #[test]
    fn zero_head_residual_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = NetworkConfig { hidden: 5, window_len: 12, n_layers: 2, ..Default::default() };
        let mut p = init_params(&cfg, &mut rng).unwrap();
        p.zero_head();
        let raw = random_window(&mut rng, 12);
        let norm = Normalizer::fit([raw.as_slice()], false).unwrap();
        let (refined, _) = forward(&p, &norm, &raw).unwrap();
        assert_eq!(refined, raw);
    }

    #[test]
    fn forward_deterministic_and_bidirectional() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = NetworkConfig { hidden: 6, window_len: 16, n_layers: 2, ..Default::default() };
        let p = init_params(&cfg, &mut rng).unwrap();
        let raw = random_window(&mut rng, 16);
        let norm = Normalizer::identity(6);
        let (a, _) = forward(&p, &norm, &raw).unwrap();
        let (b, _) = forward(&p, &norm, &raw).unwrap();
        assert_eq!(a, b);
        let mut rev: Vec<ImuSample> = raw.iter().rev().cloned().collect();
        for (i, s) in rev.iter_mut().enumerate() {
            s.t = raw[i].t;
        }
        let (c, _) = forward(&p, &norm, &rev).unwrap();
        let c_back: Vec<ImuSample> = c.iter().rev().cloned().collect();
        let max_diff = a
            .iter()
            .zip(&c_back)
            .flat_map(|(x, y)| x.channels().into_iter().zip(y.channels()).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max);
        assert!(max_diff > 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = NetworkConfig::tiny();
        let p = init_params_seeded(&cfg, 0).unwrap();
        let raw = random_window(&mut ChaCha8Rng::seed_from_u64(0), 5);
        assert!(forward(&p, &Normalizer::identity(6), &raw).is_err());
        let raw = random_window(&mut ChaCha8Rng::seed_from_u64(0), 8);
        assert!(forward(&p, &Normalizer::identity(7), &raw).is_err());
        let (_, cache) = forward(&p, &Normalizer::identity(6), &raw).unwrap();
        assert!(backward(&p, &Normalizer::identity(6), &cache, &[[0.0; 6]; 3]).is_err());
        let other = init_params_seeded(&NetworkConfig { hidden: 5, ..NetworkConfig::tiny() }, 0).unwrap();
        assert!(backward(&other, &Normalizer::identity(6), &cache, &[[0.0; 6]; 8]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let cfg = NetworkConfig::tiny();
        let p = init_params_seeded(&cfg, 3).unwrap();
        let raw = random_window(&mut ChaCha8Rng::seed_from_u64(3), 8);
        let norm = Normalizer::identity(6);
        let (_, cache) = forward(&p, &norm, &raw).unwrap();
        let (g, gi) = backward(&p, &norm, &cache, &[[0.0; 6]; 8]).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
        assert!(gi.iter().all(|r| r.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn normalizer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_window(&mut rng, 50);
        let n = Normalizer::fit([w.as_slice()], true).unwrap();
        assert_eq!(n.dim(), 7);
        let x = [0.3, -1.2, 4.0, 9.81, -0.1, 2.0, 0.005];
        let mut y = [0.0; 7];
        let mut back = [0.0; 7];
        n.normalize(&x, &mut y);
        n.denormalize(&y, &mut back);
        for c in 0..7 {
            assert!((back[c] - x[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_sequence_covers_every_sample() {
        let cfg = NetworkConfig { hidden: 3, window_len: 10, ..Default::default() };
        let mut p = init_params_seeded(&cfg, 9).unwrap();
        let raw = random_window(&mut ChaCha8Rng::seed_from_u64(9), 37);
        let norm = Normalizer::identity(6);
        let out = refine_sequence(&p, &norm, &raw).unwrap();
        assert_eq!(out.len(), raw.len());
        assert!(out.iter().zip(&raw).all(|(a, b)| a.t == b.t));
        p.zero_head();
        assert_eq!(refine_sequence(&p, &norm, &raw).unwrap(), raw);
        assert_eq!(refine_sequence(&p, &norm, &raw[..4]).unwrap(), raw[..4].to_vec());
    }
}
