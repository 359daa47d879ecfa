//! Accuracy metrics: relative pose RMSE over a few IMU frames, drift versus
//! integration horizon, and dead-reckoning trajectory RMSE.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::imu::{ImuSample, ImuState};
use crate::preint::{preintegrate, propagate_state, Scheme};
use crate::so3::{log_so3, quat_inv, quat_mul};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raw,
    Refined,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Refined => "refined",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(Method::Raw),
            "refined" => Some(Method::Refined),
            _ => None,
        }
    }
}

/// Upper bounds on metrics; any violation makes evaluation fail.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub rel_trans_rmse: Option<f64>,
    pub rel_rot_rmse: Option<f64>,
    pub trajectory_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_frames: usize,
    /// Drift horizons (s).
    pub horizons: Vec<f64>,
    /// Spacing of drift start indices, in samples.
    pub drift_stride: usize,
    /// Re-anchor dead reckoning to ground truth this often (s). Emulates
    /// external corrections; off by default.
    pub reset_interval: Option<f64>,
    /// Checked against the refined report when present, else the raw one.
    pub thresholds: Thresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_frames: 10, horizons: vec![0.1, 0.5, 1.0, 2.0], drift_stride: 1, reset_interval: None, thresholds: Thresholds::default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.drift_stride == 0 {
            return Err(Error::InvalidArgument("n_frames and drift_stride must be >= 1".into()));
        }
        if self.horizons.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidArgument("drift horizons must be finite and non-negative".into()));
        }
        if self.reset_interval.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::InvalidArgument("reset_interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub horizon: f64,
    pub pos: f64,
    pub rot: f64,
    pub vel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequence: String,
    pub method: Method,
    pub n_frames: usize,
    pub rel_trans_rmse: f64,
    pub rel_rot_rmse: f64,
    pub drift: Vec<DriftPoint>,
    pub reset_interval: Option<f64>,
    pub trajectory_rmse: f64,
}

impl EvalReport {
    /// Descriptions of every threshold this report exceeds.
    pub fn violations(&self, t: &Thresholds) -> Vec<String> {
        let checks = [
            ("rel_trans_rmse", self.rel_trans_rmse, t.rel_trans_rmse),
            ("rel_rot_rmse", self.rel_rot_rmse, t.rel_rot_rmse),
            ("trajectory_rmse", self.trajectory_rmse, t.trajectory_rmse),
        ];
        checks
            .iter()
            .filter_map(|&(name, v, limit)| {
                limit.filter(|l| !(v <= *l)).map(|l| format!("{} {}: {name} {v} exceeds {l}", self.sequence, self.method.name()))
            })
            .collect()
    }
}

fn check_measurements(dataset: &Dataset, measurements: &[ImuSample]) -> Result<()> {
    dataset.require_aligned()?;
    if measurements.len() != dataset.gt.len() || measurements.iter().zip(&dataset.gt).any(|(m, g)| m.t != g.t) {
        return Err(Error::ShapeMismatch("measurements must share the ground-truth timestamps".into()));
    }
    Ok(())
}

/// Position, rotation (log-norm) and velocity error of `pred` against `truth`.
fn state_errors(pred: &ImuState, truth: &ImuState) -> (f64, f64, f64) {
    let rot = log_so3(&quat_mul(&quat_inv(&truth.q), &pred.q)).norm();
    ((pred.p - truth.p).norm(), rot, (pred.v - truth.v).norm())
}

/// Errors after integrating `n` intervals from every `stride`-th start.
fn interval_errors(dataset: &Dataset, measurements: &[ImuSample], n: usize, stride: usize, scheme: Scheme) -> Result<Vec<(f64, f64, f64)>> {
    let len = measurements.len();
    if n + 1 > len {
        return Err(Error::InsufficientData(format!("{n} intervals need {} samples, have {len}", n + 1)));
    }
    let g = dataset.meta.gravity;
    (0..len - n)
        .step_by(stride)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| {
            let d = preintegrate(&measurements[i..=i + n], scheme)?;
            let pred = propagate_state(&dataset.gt[i].state(), &d, &g);
            Ok(state_errors(&pred, &dataset.gt[i + n].state()))
        })
        .collect()
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Translation and rotation RMSE of predicted states against references.
pub fn pose_rmse(pred: &[ImuState], truth: &[ImuState]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} references", pred.len(), truth.len())));
    }
    let e: Vec<_> = pred.iter().zip(truth).map(|(p, t)| state_errors(p, t)).collect();
    Ok((rms(e.iter().map(|x| x.0)), rms(e.iter().map(|x| x.1))))
}

/// RMSE of translation (m) and rotation (rad) after integrating `n_frames`
/// intervals from each ground-truth state.
pub fn relative_pose_rmse(dataset: &Dataset, measurements: &[ImuSample], n_frames: usize, scheme: Scheme) -> Result<(f64, f64)> {
    check_measurements(dataset, measurements)?;
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    let e = interval_errors(dataset, measurements, n_frames, 1, scheme)?;
    Ok((rms(e.iter().map(|x| x.0)), rms(e.iter().map(|x| x.1))))
}

/// RMSE of position, rotation and velocity at the end of each horizon (s),
/// integrating from the ground truth at every `stride`-th sample.
pub fn drift_curve(dataset: &Dataset, measurements: &[ImuSample], horizons: &[f64], stride: usize, scheme: Scheme) -> Result<Vec<DriftPoint>> {
    check_measurements(dataset, measurements)?;
    let dt = dataset.median_dt().ok_or_else(|| Error::InsufficientData("need at least two samples".into()))?;
    horizons
        .iter()
        .map(|&h| {
            let n = (h / dt).round() as usize;
            if n == 0 {
                return Ok(DriftPoint { horizon: h, pos: 0.0, rot: 0.0, vel: 0.0 });
            }
            if n + 1 > measurements.len() {
                return Err(Error::InsufficientData(format!("horizon {h} s exceeds the {} s of data", measurements.len() as f64 * dt)));
            }
            let e = interval_errors(dataset, measurements, n, stride.max(1), scheme)?;
            Ok(DriftPoint { horizon: h, pos: rms(e.iter().map(|x| x.0)), rot: rms(e.iter().map(|x| x.1)), vel: rms(e.iter().map(|x| x.2)) })
        })
        .collect()
}

/// Open-loop propagation from the first ground-truth state, optionally
/// re-anchored to ground truth every `reset_interval` seconds. Returns one
/// state per measurement.
pub fn dead_reckon(dataset: &Dataset, measurements: &[ImuSample], reset_interval: Option<f64>, scheme: Scheme) -> Result<Vec<ImuState>> {
    check_measurements(dataset, measurements)?;
    let g = dataset.meta.gravity;
    let mut state = dataset.gt[0].state();
    let mut anchor_t = dataset.gt[0].t;
    let mut out = Vec::with_capacity(measurements.len());
    out.push(state);
    for j in 1..measurements.len() {
        let d = preintegrate(&measurements[j - 1..=j], scheme)?;
        state = propagate_state(&state, &d, &g);
        out.push(state);
        if let Some(r) = reset_interval {
            if dataset.gt[j].t - anchor_t >= r - 1e-12 {
                state = dataset.gt[j].state();
                anchor_t = dataset.gt[j].t;
            }
        }
    }
    Ok(out)
}

/// Position RMSE of [`dead_reckon`] over the whole sequence.
pub fn trajectory_rmse(dataset: &Dataset, measurements: &[ImuSample], reset_interval: Option<f64>, scheme: Scheme) -> Result<f64> {
    let states = dead_reckon(dataset, measurements, reset_interval, scheme)?;
    Ok(rms(states.iter().zip(&dataset.gt).map(|(s, g)| (s.p - g.p).norm())))
}

/// All metrics of one sequence for one measurement source.
pub fn evaluate_sequence(
    sequence: &str,
    dataset: &Dataset,
    measurements: &[ImuSample],
    method: Method,
    config: &EvalConfig,
    scheme: Scheme,
) -> Result<EvalReport> {
    config.validate()?;
    let (rel_trans_rmse, rel_rot_rmse) = relative_pose_rmse(dataset, measurements, config.n_frames, scheme)?;
    Ok(EvalReport {
        sequence: sequence.to_string(),
        method,
        n_frames: config.n_frames,
        rel_trans_rmse,
        rel_rot_rmse,
        drift: drift_curve(dataset, measurements, &config.horizons, config.drift_stride, scheme)?,
        reset_interval: config.reset_interval,
        trajectory_rmse: trajectory_rmse(dataset, measurements, config.reset_interval, scheme)?,
    })
}

/// Mean of each metric over sequences sharing a method, tagged `sequence = "mean"`.
pub fn aggregate(reports: &[EvalReport], method: Method) -> Option<EvalReport> {
    let sel: Vec<&EvalReport> = reports.iter().filter(|r| r.method == method && r.sequence != "mean").collect();
    let first = sel.first()?;
    let k = sel.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / k;
    let drift = if sel.iter().all(|r| r.drift.len() == first.drift.len()) {
        (0..first.drift.len())
            .map(|i| DriftPoint {
                horizon: first.drift[i].horizon,
                pos: mean(&|r| r.drift[i].pos),
                rot: mean(&|r| r.drift[i].rot),
                vel: mean(&|r| r.drift[i].vel),
            })
            .collect()
    } else {
        Vec::new()
    };
    Some(EvalReport {
        sequence: "mean".into(),
        method,
        n_frames: first.n_frames,
        rel_trans_rmse: mean(&|r| r.rel_trans_rmse),
        rel_rot_rmse: mean(&|r| r.rel_rot_rmse),
        drift,
        reset_interval: first.reset_interval,
        trajectory_rmse: mean(&|r| r.trajectory_rmse),
    })
}

pub const RELATIVE_FILE: &str = "relative_pose.csv";
pub const DRIFT_FILE: &str = "drift.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

const RELATIVE_HEADER: &str = "sequence,method,n_frames,trans_rmse_m,rot_rmse_rad";
const DRIFT_HEADER: &str = "sequence,method,horizon_s,quantity,rmse";
const TRAJECTORY_HEADER: &str = "sequence,method,reset_interval_s,rmse_m";

/// Writes the three report CSVs into `out_dir` and returns their paths.
pub fn emit_report(reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rel = format!("{RELATIVE_HEADER}\n");
    let mut drift = format!("{DRIFT_HEADER}\n");
    let mut traj = format!("{TRAJECTORY_HEADER}\n");
    for r in reports {
        let m = r.method.name();
        let _ = writeln!(rel, "{},{m},{},{},{}", r.sequence, r.n_frames, r.rel_trans_rmse, r.rel_rot_rmse);
        for d in &r.drift {
            for (q, v) in [("pos", d.pos), ("rot", d.rot), ("vel", d.vel)] {
                let _ = writeln!(drift, "{},{m},{},{q},{v}", r.sequence, d.horizon);
            }
        }
        let reset = r.reset_interval.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(traj, "{},{m},{reset},{}", r.sequence, r.trajectory_rmse);
    }
    let paths = [RELATIVE_FILE, DRIFT_FILE, TRAJECTORY_FILE].map(|f| out_dir.join(f));
    for (p, body) in paths.iter().zip([rel, drift, traj]) {
        std::fs::write(p, body)?;
    }
    Ok(paths.to_vec())
}

fn csv_rows(path: &Path, header: &str, cols: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let label = path.display().to_string();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(Error::Parse { path: label, line: 1, message: format!("expected header {header:?}") }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<String> = l.split(',').map(str::to_string).collect();
            if f.len() != cols {
                return Err(Error::Parse { path: label.clone(), line: i + 1, message: format!("expected {cols} columns") });
            }
            Ok((i + 1, f))
        })
        .collect()
}

/// Reads back the CSVs written by [`emit_report`].
pub fn read_report(out_dir: &Path) -> Result<Vec<EvalReport>> {
    let bad = |path: &Path, line: usize, what: &str| Error::Parse { path: path.display().to_string(), line, message: format!("invalid {what}") };
    let num = |path: &Path, line: usize, s: &str| s.parse::<f64>().map_err(|_| bad(path, line, "number"));
    let method = |path: &Path, line: usize, s: &str| Method::parse(s).ok_or_else(|| bad(path, line, "method"));

    let rel_path = out_dir.join(RELATIVE_FILE);
    let mut reports = Vec::new();
    for (line, f) in csv_rows(&rel_path, RELATIVE_HEADER, 5)? {
        reports.push(EvalReport {
            sequence: f[0].clone(),
            method: method(&rel_path, line, &f[1])?,
            n_frames: f[2].parse().map_err(|_| bad(&rel_path, line, "n_frames"))?,
            rel_trans_rmse: num(&rel_path, line, &f[3])?,
            rel_rot_rmse: num(&rel_path, line, &f[4])?,
            drift: Vec::new(),
            reset_interval: None,
            trajectory_rmse: 0.0,
        });
    }
    let find = |reports: &mut Vec<EvalReport>, seq: &str, m: Method| reports.iter_mut().position(|r| r.sequence == seq && r.method == m);

    let drift_path = out_dir.join(DRIFT_FILE);
    for (line, f) in csv_rows(&drift_path, DRIFT_HEADER, 5)? {
        let m = method(&drift_path, line, &f[1])?;
        let idx = find(&mut reports, &f[0], m).ok_or_else(|| bad(&drift_path, line, "sequence"))?;
        let h = num(&drift_path, line, &f[2])?;
        let v = num(&drift_path, line, &f[4])?;
        let drift = &mut reports[idx].drift;
        if drift.last().is_none_or(|d| d.horizon != h) {
            drift.push(DriftPoint { horizon: h, pos: 0.0, rot: 0.0, vel: 0.0 });
        }
        let d = drift.last_mut().unwrap();
        match f[3].as_str() {
            "pos" => d.pos = v,
            "rot" => d.rot = v,
            "vel" => d.vel = v,
            _ => return Err(bad(&drift_path, line, "quantity")),
        }
    }

    let traj_path = out_dir.join(TRAJECTORY_FILE);
    for (line, f) in csv_rows(&traj_path, TRAJECTORY_HEADER, 4)? {
        let m = method(&traj_path, line, &f[1])?;
        let idx = find(&mut reports, &f[0], m).ok_or_else(|| bad(&traj_path, line, "sequence"))?;
        reports[idx].reset_interval = if f[2].is_empty() { None } else { Some(num(&traj_path, line, &f[2])?) };
        reports[idx].trajectory_rmse = num(&traj_path, line, &f[3])?;
    }
    Ok(reports)
}
