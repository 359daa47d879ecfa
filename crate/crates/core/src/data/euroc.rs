use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::{median_interval, Dataset, DatasetMeta, GtState};
use crate::error::{Error, Result};
use crate::imu::ImuSample;
use crate::so3::{UnitQuaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuRow {
    pub t_ns: i64,
    pub omega: Vec3,
    pub accel: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtRow {
    pub t_ns: i64,
    pub p: Vec3,
    /// Raw `[qw, qx, qy, qz]` as written; normalized on conversion.
    pub q: [f64; 4],
    pub v: Option<Vec3>,
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, message: message.into() }
}

/// Splits CSV text into `(line number, fields)` rows. Blank lines and `#`
/// comments are skipped; a first row whose leading field is not an integer
/// is taken as a header.
fn rows<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    let mut first = true;
    text.lines().enumerate().filter_map(move |(i, line)| {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if std::mem::take(&mut first) && fields[0].parse::<i64>().is_err() && fields[0].parse::<f64>().is_err() {
            return None;
        }
        Some((i + 1, fields))
    })
}

fn parse_floats(path: &str, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| match f.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(parse_err(path, line, format!("column {}: invalid number {f:?}", k + 2))),
        })
        .collect()
}

fn parse_timestamp(path: &str, line: usize, field: &str) -> Result<i64> {
    field.parse::<i64>().map_err(|_| parse_err(path, line, format!("invalid timestamp {field:?}")))
}

/// Parses `timestamp_ns,wx,wy,wz,ax,ay,az` rows.
pub fn parse_imu_csv(text: &str, path: &str) -> Result<Vec<ImuRow>> {
    let mut out = Vec::new();
    for (line, fields) in rows(text) {
        if fields.len() != 7 {
            return Err(parse_err(path, line, format!("expected 7 columns, found {}", fields.len())));
        }
        let t_ns = parse_timestamp(path, line, fields[0])?;
        let x = parse_floats(path, line, &fields[1..])?;
        out.push(ImuRow { t_ns, omega: Vec3::new(x[0], x[1], x[2]), accel: Vec3::new(x[3], x[4], x[5]) });
    }
    Ok(out)
}

/// Parses `timestamp_ns,px,py,pz,qw,qx,qy,qz[,vx,vy,vz,...]` rows. Columns
/// past velocity (EuRoC appends bias estimates) are ignored.
pub fn parse_gt_csv(text: &str, path: &str) -> Result<Vec<GtRow>> {
    let mut out = Vec::new();
    for (line, fields) in rows(text) {
        if !(fields.len() == 8 || fields.len() >= 11) {
            return Err(parse_err(path, line, format!("expected 8 or at least 11 columns, found {}", fields.len())));
        }
        let t_ns = parse_timestamp(path, line, fields[0])?;
        let used = if fields.len() >= 11 { 11 } else { 8 };
        let x = parse_floats(path, line, &fields[1..used])?;
        let q = [x[3], x[4], x[5], x[6]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 1e-6) {
            return Err(parse_err(path, line, "zero quaternion"));
        }
        let v = (used == 11).then(|| Vec3::new(x[7], x[8], x[9]));
        out.push(GtRow { t_ns, p: Vec3::new(x[0], x[1], x[2]), q, v });
    }
    Ok(out)
}

/// Stable sort by time, dropping repeated timestamps (first occurrence wins).
fn sort_dedup<T>(rows: &mut Vec<T>, t: impl Fn(&T) -> i64) -> usize {
    rows.sort_by_key(&t);
    let before = rows.len();
    rows.dedup_by(|b, a| t(a) == t(b));
    before - rows.len()
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}

/// Loads an IMU/ground-truth CSV pair. Times become seconds relative to the
/// first IMU timestamp, which is kept in `meta.t0_ns`.
pub fn load_euroc_csv(imu_path: &Path, gt_path: &Path) -> Result<Dataset> {
    let mut imu_rows = parse_imu_csv(&read(imu_path)?, &imu_path.display().to_string())?;
    let mut gt_rows = parse_gt_csv(&read(gt_path)?, &gt_path.display().to_string())?;
    let dropped = sort_dedup(&mut imu_rows, |r| r.t_ns) + sort_dedup(&mut gt_rows, |r| r.t_ns);
    if dropped > 0 {
        warn!("dropped {dropped} rows with duplicate timestamps");
    }
    let Some(t0_ns) = imu_rows.first().map(|r| r.t_ns) else {
        return Err(Error::InsufficientData(format!("{}: no IMU rows", imu_path.display())));
    };
    if gt_rows.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no ground-truth rows", gt_path.display())));
    }
    let secs = |ns: i64| (ns - t0_ns) as f64 * 1e-9;
    let imu: Vec<ImuSample> = imu_rows.iter().map(|r| ImuSample::new(secs(r.t_ns), r.omega, r.accel)).collect();
    let gt = gt_rows
        .iter()
        .map(|r| GtState { t: secs(r.t_ns), q: UnitQuaternion::from_wxyz(r.q[0], r.q[1], r.q[2], r.q[3]), p: r.p, v: r.v })
        .collect();
    let imu_rate = median_interval(&imu).map_or(0.0, |dt| 1.0 / dt);
    let meta = DatasetMeta {
        imu_rate,
        t0_ns,
        provenance: format!("{} + {}", imu_path.display(), gt_path.display()),
        dropped_duplicates: dropped,
        ..Default::default()
    };
    Ok(Dataset { imu, gt, meta })
}

fn to_ns(t0_ns: i64, t: f64) -> i64 {
    t0_ns + (t * 1e9).round() as i64
}

pub fn imu_csv_string(dataset: &Dataset) -> String {
    let mut s = String::from("#timestamp [ns],w_x [rad s^-1],w_y [rad s^-1],w_z [rad s^-1],a_x [m s^-2],a_y [m s^-2],a_z [m s^-2]\n");
    for m in &dataset.imu {
        let (w, a) = (m.omega, m.accel);
        let _ = writeln!(s, "{},{},{},{},{},{},{}", to_ns(dataset.meta.t0_ns, m.t), w.x, w.y, w.z, a.x, a.y, a.z);
    }
    s
}

pub fn gt_csv_string(dataset: &Dataset) -> String {
    let mut s = String::from("#timestamp [ns],p_x [m],p_y [m],p_z [m],q_w,q_x,q_y,q_z,v_x [m s^-1],v_y [m s^-1],v_z [m s^-1]\n");
    for g in &dataset.gt {
        let q = g.q.to_array();
        let _ = write!(s, "{},{},{},{},{},{},{},{}", to_ns(dataset.meta.t0_ns, g.t), g.p.x, g.p.y, g.p.z, q[0], q[1], q[2], q[3]);
        if let Some(v) = g.v {
            let _ = write!(s, ",{},{},{}", v.x, v.y, v.z);
        }
        s.push('\n');
    }
    s
}

pub fn save_euroc_csv(dataset: &Dataset, imu_path: &Path, gt_path: &Path) -> Result<()> {
    std::fs::write(imu_path, imu_csv_string(dataset))?;
    std::fs::write(gt_path, gt_csv_string(dataset))?;
    Ok(())
}
