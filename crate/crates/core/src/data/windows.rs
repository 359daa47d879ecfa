use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::imu::{ImuSample, ImuState};
use crate::losses::{AugmentedBias, HorizonTarget};
use crate::preint::{derive_targets, prefix_len, Scheme};
use crate::so3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_len: usize,
    pub stride: usize,
    /// Shift the first window by a random offset in `[0, stride)`.
    pub random_offset: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_len: 200, stride: 20, random_offset: true }
    }
}

/// Per-window perturbations of the raw samples. Biases are drawn uniformly
/// per axis in `±max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Additive white noise std per channel `[ωx, ωy, ωz, ax, ay, az]`.
    pub noise_std: [f64; 6],
    pub bias_probability: f64,
    pub max_bias_gyro: f64,
    pub max_bias_accel: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { noise_std: [0.0; 6], bias_probability: 0.0, max_bias_gyro: 0.01, max_bias_accel: 0.1 }
    }
}

impl AugmentationConfig {
    pub fn is_off(&self) -> bool {
        self.noise_std.iter().all(|&s| s == 0.0) && self.bias_probability == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("augmentation noise std must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.bias_probability) {
            return Err(Error::InvalidArgument("bias_probability must lie in [0, 1]".into()));
        }
        if !(self.max_bias_gyro >= 0.0 && self.max_bias_accel >= 0.0) {
            return Err(Error::InvalidArgument("augmentation bias bounds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationRecord {
    /// Seed of the additive noise, when noise was added.
    pub noise_seed: Option<u64>,
    pub bias: Option<AugmentedBias>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    /// Index of the first sample in the source dataset.
    pub start: usize,
    pub raw: Vec<ImuSample>,
    pub state_start: ImuState,
    pub state_end: ImuState,
    /// One target per horizon fraction, shortest first.
    pub targets: Vec<HorizonTarget>,
    pub augmentation: AugmentationRecord,
    pub split: Split,
}

/// Contiguous train/val/test fractions of a sequence with a leakage gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Samples left unused between consecutive splits; raised to at least
    /// one window.
    pub gap: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2, gap: 0 }
    }
}

/// Time-ordered, disjoint sample ranges for train, val and test.
pub fn split_ranges(n: usize, config: &SplitConfig, window_len: usize) -> Result<[(Split, Range<usize>); 3]> {
    let fr = [config.train, config.val, config.test];
    if fr.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || fr.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument("split fractions must be non-negative and sum to at most 1".into()));
    }
    let gap = config.gap.max(window_len);
    let usable = n.saturating_sub(2 * gap) as f64;
    let len = |f: f64| (f * usable).floor() as usize;
    let train = 0..len(config.train);
    let val = train.end + gap..train.end + gap + len(config.val);
    let test = val.end + gap..(val.end + gap + len(config.test)).min(n);
    Ok([(Split::Train, train), (Split::Val, val), (Split::Test, test)])
}

fn window_targets(
    dataset: &Dataset,
    start: usize,
    raw: &[ImuSample],
    bias: Option<&AugmentedBias>,
    fractions: &[f64],
    scheme: Scheme,
) -> Result<Vec<HorizonTarget>> {
    let n = raw.len();
    let s0 = dataset.gt[start].state();
    fractions
        .iter()
        .map(|&f| {
            let len = prefix_len(f, n);
            let end = start + len - 1;
            let delta = derive_targets(&s0, &dataset.gt[end].state(), dataset.gt[end].t - dataset.gt[start].t, &dataset.meta.gravity)?;
            let compensation = bias.map(|b| b.compensation(&raw[..len], scheme)).transpose()?;
            Ok(HorizonTarget { n_samples: len, delta, compensation })
        })
        .collect()
}

/// Cuts windows from an aligned dataset (or the `range` of it), applies
/// augmentation and derives per-horizon targets from the ground truth.
#[allow(clippy::too_many_arguments)]
pub fn make_windows<R: Rng>(
    dataset: &Dataset,
    range: Range<usize>,
    config: &WindowConfig,
    augmentation: &AugmentationConfig,
    fractions: &[f64],
    scheme: Scheme,
    split: Split,
    rng: &mut R,
) -> Result<Vec<TrainingWindow>> {
    dataset.require_aligned()?;
    augmentation.validate()?;
    let n = config.window_len;
    if n < 2 || config.stride == 0 {
        return Err(Error::InvalidArgument("window_len must be at least 2 and stride positive".into()));
    }
    if range.end > dataset.imu.len() || range.start > range.end {
        return Err(Error::InvalidArgument(format!("range {range:?} outside dataset of {} samples", dataset.imu.len())));
    }
    if range.len() < n {
        return Err(Error::WindowTooShort { needed: n, got: range.len() });
    }
    let offset = if config.random_offset { rng.gen_range(0..config.stride.min(range.len() - n + 1)) } else { 0 };

    let mut out = Vec::new();
    let mut start = range.start + offset;
    while start + n <= range.end {
        let mut raw = dataset.imu[start..start + n].to_vec();
        let mut record = AugmentationRecord::default();
        if augmentation.noise_std.iter().any(|&s| s > 0.0) {
            let seed: u64 = rng.gen();
            add_noise(&mut raw, &augmentation.noise_std, seed);
            record.noise_seed = Some(seed);
        }
        if augmentation.bias_probability > 0.0 && rng.gen_bool(augmentation.bias_probability) {
            let mut draw = |m: f64| Vec3::from_fn(|_, _| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 });
            let bias = AugmentedBias { bg: draw(augmentation.max_bias_gyro), ba: draw(augmentation.max_bias_accel) };
            for s in &mut raw {
                s.omega += bias.bg;
                s.accel += bias.ba;
            }
            record.bias = Some(bias);
        }
        let targets = window_targets(dataset, start, &raw, record.bias.as_ref(), fractions, scheme)?;
        out.push(TrainingWindow {
            start,
            state_start: dataset.gt[start].state(),
            state_end: dataset.gt[start + n - 1].state(),
            raw,
            targets,
            augmentation: record,
            split,
        });
        start += config.stride;
    }
    Ok(out)
}

/// Adds reproducible zero-mean Gaussian noise, channel by channel.
pub fn add_noise(samples: &mut [ImuSample], std: &[f64; 6], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in samples {
        let mut c = s.channels();
        for (x, &sd) in c.iter_mut().zip(std) {
            if sd > 0.0 {
                *x += Normal::new(0.0, sd).expect("finite std").sample(&mut rng);
            }
        }
        *s = ImuSample::from_channels(s.t, &c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate, TrajectorySpec};

    #[test]
    fn split_ranges_are_disjoint_with_gap() {
        let [(_, a), (_, b), (_, c)] = split_ranges(10_000, &SplitConfig::default(), 200).unwrap();
        assert_eq!(a.start, 0);
        assert!(b.start >= a.end + 200);
        assert!(c.start >= b.end + 200);
        assert!(c.end <= 10_000);
        assert!(split_ranges(100, &SplitConfig { train: 0.9, val: 0.2, test: 0.0, gap: 0 }, 10).is_err());
    }

    #[test]
    fn disjoint_cover_count() {
        let data = simulate(&TrajectorySpec::demo(2.0, 0)).unwrap().dataset;
        let cfg = WindowConfig { window_len: 50, stride: 50, random_offset: false };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = make_windows(&data, 0..data.imu.len(), &cfg, &AugmentationConfig::default(), &[0.5, 1.0], Scheme::Midpoint, Split::Train, &mut rng)
            .unwrap();
        assert_eq!(w.len(), data.imu.len() / 50);
        for win in &w {
            assert_eq!(win.raw[..], data.imu[win.start..win.start + 50]);
            assert_eq!(win.targets[0].n_samples, 25);
        }
    }

    #[test]
    fn too_short() {
        let data = simulate(&TrajectorySpec::demo(0.1, 0)).unwrap().dataset;
        let cfg = WindowConfig { window_len: 50, stride: 5, random_offset: true };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = make_windows(&data, 0..data.imu.len(), &cfg, &AugmentationConfig::default(), &[1.0], Scheme::Midpoint, Split::Train, &mut rng);
        assert!(matches!(r, Err(Error::WindowTooShort { .. })));
    }
}
