//! Datasets: synthetic trajectories, EuRoC-style CSV I/O, ground-truth
//! alignment and training-window extraction.

mod align;
mod euroc;
mod sim;
mod windows;

use serde::{Deserialize, Serialize};

pub use align::{align_ground_truth, derive_velocity};
pub use euroc::{gt_csv_string, imu_csv_string, load_euroc_csv, parse_gt_csv, parse_imu_csv, save_euroc_csv, GtRow, ImuRow};
pub use sim::{simulate, AxisCurve, SimulatedData, Sinusoid, TrajectorySpec, TruthSample};
pub use windows::{add_noise, make_windows, split_ranges, AugmentationConfig, AugmentationRecord, Split, SplitConfig, TrainingWindow, WindowConfig};

use crate::error::{Error, Result};
use crate::imu::{GravityModel, ImuSample, ImuState};
use crate::so3::{UnitQuaternion, Vec3};

/// Ground-truth pose at time `t` (s), with velocity when known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtState {
    pub t: f64,
    pub q: UnitQuaternion,
    pub p: Vec3,
    pub v: Option<Vec3>,
}

impl GtState {
    /// Navigation state with zero biases; missing velocity reads as zero.
    pub fn state(&self) -> ImuState {
        ImuState::from_pose(self.q, self.p, self.v.unwrap_or_else(Vec3::zeros))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub gravity: GravityModel,
    /// Nominal IMU rate (Hz).
    pub imu_rate: f64,
    /// Absolute time (ns) of `t = 0`.
    pub t0_ns: i64,
    pub provenance: String,
    /// Per-sample white-noise std per channel, when the source is known.
    pub noise_std: Option<[f64; 6]>,
    pub dropped_duplicates: usize,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            gravity: GravityModel::default(),
            imu_rate: 200.0,
            t0_ns: 0,
            provenance: String::new(),
            noise_std: None,
            dropped_duplicates: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub gt: Vec<GtState>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// True when `gt[i]` sits exactly at `imu[i].t` and carries velocity.
    pub fn is_aligned(&self) -> bool {
        self.imu.len() == self.gt.len() && self.imu.iter().zip(&self.gt).all(|(s, g)| s.t == g.t && g.v.is_some())
    }

    pub fn require_aligned(&self) -> Result<()> {
        if self.is_aligned() {
            Ok(())
        } else {
            Err(Error::InvalidArgument("dataset ground truth is not aligned to IMU timestamps".into()))
        }
    }

    pub fn median_dt(&self) -> Option<f64> {
        median_interval(&self.imu)
    }

    pub fn with_imu(&self, imu: Vec<ImuSample>) -> Result<Self> {
        if imu.len() != self.imu.len() || imu.iter().zip(&self.imu).any(|(a, b)| a.t != b.t) {
            return Err(Error::ShapeMismatch("replacement measurements must keep the original timestamps".into()));
        }
        Ok(Self { imu, gt: self.gt.clone(), meta: self.meta.clone() })
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { imu: self.imu[range.clone()].to_vec(), gt: self.gt[range].to_vec(), meta: self.meta.clone() }
    }
}

pub fn median_interval(samples: &[ImuSample]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let mut dts: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    dts.sort_by(f64::total_cmp);
    Some(dts[dts.len() / 2])
}
