use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use obsint::data::{
    align_ground_truth, gt_csv_string, load_euroc_csv, save_euroc_csv, simulate, split_ranges, Dataset, GtState,
};
use obsint::eval::{aggregate, dead_reckon, emit_report, evaluate_sequence, EvalReport, Method};
use obsint::gradcheck::{run_gradchecks, CheckResult};
use obsint::net::refine_sequence;
use obsint::trainer::{metrics_csv, parse_metrics_csv, prepare_windows, resolve_lambda, train, Checkpoint, Resume, TrainOutcome};

use crate::config::{DataSource, EvalSplit, ExperimentConfig};
use crate::lock::OutputLock;

pub struct Sequence {
    pub name: String,
    pub dataset: Dataset,
}

/// Loads every sequence of the config's data source, aligned.
pub fn load_sequences(cfg: &ExperimentConfig) -> Result<Vec<Sequence>> {
    match cfg.data_source()? {
        DataSource::Simulated(spec) => Ok(vec![Sequence { name: "sim".into(), dataset: simulate(spec)?.dataset }]),
        DataSource::Files(files) => files
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let raw = load_euroc_csv(&f.imu, &f.gt)?;
                let dataset = if raw.is_aligned() { raw } else { align_ground_truth(&raw)? };
                let name = f.name.clone().unwrap_or_else(|| format!("seq{i}"));
                info!("{name}: {} samples at {:.1} Hz", dataset.imu.len(), dataset.meta.imu_rate);
                Ok(Sequence { name, dataset })
            })
            .collect(),
    }
}

/// The part of a sequence that `eval` and `predict` run on.
pub fn eval_slice(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Dataset> {
    match cfg.data.eval_split {
        EvalSplit::All => Ok(dataset.clone()),
        EvalSplit::Test => {
            let [_, _, (_, test)] = split_ranges(dataset.imu.len(), &cfg.data.split, cfg.data.window.window_len)?;
            Ok(dataset.slice(test))
        }
    }
}

/// Writes `imu.csv`, `gt.csv`, `bias.csv` and the effective `spec.json`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let DataSource::Simulated(spec) = cfg.data_source()? else {
        bail!("simulate: the config's data source must be `data.simulate`");
    };
    let out = cfg.output_dir()?;
    let _lock = OutputLock::acquire(out)?;
    let sim = simulate(spec)?;
    let (imu, gt, bias, spec_path) = (out.join("imu.csv"), out.join("gt.csv"), out.join("bias.csv"), out.join("spec.json"));
    save_euroc_csv(&sim.dataset, &imu, &gt)?;
    let mut b = String::from("#timestamp [ns],bg_x,bg_y,bg_z,ba_x,ba_y,ba_z\n");
    for (s, (bg, ba)) in sim.dataset.imu.iter().zip(&sim.true_bias) {
        let ns = sim.dataset.meta.t0_ns + (s.t * 1e9).round() as i64;
        let _ = writeln!(b, "{ns},{},{},{},{},{},{}", bg.x, bg.y, bg.z, ba.x, ba.y, ba.z);
    }
    std::fs::write(&bias, b)?;
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec)?)?;
    info!("simulated {} samples into {}", sim.dataset.imu.len(), out.display());
    Ok(vec![imu, gt, bias, spec_path])
}

/// Trains and writes `best.json`, `last.json`, `metrics.csv` and the
/// effective `config.json`. With `resume`, continues from the `last.json`
/// and `best.json` already in the output directory and appends to the log.
pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> Result<TrainOutcome> {
    let out = cfg.output_dir()?;
    let _lock = OutputLock::acquire(out)?;
    let sequences = load_sequences(cfg)?;
    let loss = resolve_lambda(&cfg.loss, &sequences[0].dataset);
    info!("regularizer width {:?}", loss.lambda_reg.per_channel());
    let (mut train_w, mut val_w) = (Vec::new(), Vec::new());
    for (i, s) in sequences.iter().enumerate() {
        let w = prepare_windows(
            &s.dataset,
            &cfg.data.window,
            &cfg.data.split,
            &cfg.data.augmentation,
            &loss,
            cfg.scheme,
            cfg.train.seed.wrapping_add(i as u64),
        )
        .with_context(|| format!("windowing {}", s.name))?;
        info!("{}: {} train, {} val windows", s.name, w.train.len(), w.val.len());
        train_w.extend(w.train);
        val_w.extend(w.val);
    }

    let (best_path, last_path, metrics_path) = (out.join("best.json"), out.join("last.json"), out.join("metrics.csv"));
    let mut log = Vec::new();
    let outcome = if resume {
        let last = Checkpoint::load(&last_path).with_context(|| format!("resuming from {}", last_path.display()))?;
        let best = Checkpoint::load(&best_path).with_context(|| format!("resuming from {}", best_path.display()))?;
        log = parse_metrics_csv(&std::fs::read_to_string(&metrics_path)?)?;
        log.retain(|m| m.epoch <= last.epoch);
        info!("resuming after epoch {}", last.epoch);
        train(&train_w, &val_w, &cfg.net, &loss, &cfg.train, cfg.scheme, Some(Resume { last: &last, best: &best }))?
    } else {
        train(&train_w, &val_w, &cfg.net, &loss, &cfg.train, cfg.scheme, None)?
    };
    log.extend(outcome.metrics.iter().cloned());
    outcome.best.save(&best_path)?;
    outcome.last.save(&last_path)?;
    std::fs::write(&metrics_path, metrics_csv(&log))?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    info!("best val loss {:.6e} at epoch {}", outcome.best.val_loss, outcome.best.epoch);
    Ok(outcome)
}

pub struct EvalOutcome {
    pub reports: Vec<EvalReport>,
    pub files: Vec<PathBuf>,
    /// Threshold violations of the refined reports, or of the raw ones
    /// when no checkpoint was given.
    pub violations: Vec<String>,
}

/// Raw metrics for every sequence, plus refined metrics when a checkpoint
/// is given.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalOutcome> {
    let out = cfg.output_dir()?;
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let params = ck.as_ref().map(Checkpoint::params).transpose()?;
    if let Some(c) = &ck {
        if c.scheme != cfg.scheme {
            warn!("checkpoint was trained with {:?} but evaluation uses {:?}", c.scheme, cfg.scheme);
        }
    }
    let _lock = OutputLock::acquire(out)?;
    let mut reports = Vec::new();
    for s in load_sequences(cfg)? {
        let d = eval_slice(cfg, &s.dataset)?;
        reports.push(evaluate_sequence(&s.name, &d, &d.imu, Method::Raw, &cfg.eval, cfg.scheme)?);
        if let (Some(c), Some(p)) = (&ck, &params) {
            let refined = refine_sequence(p, &c.normalizer, &d.imu)?;
            reports.push(evaluate_sequence(&s.name, &d, &refined, Method::Refined, &cfg.eval, cfg.scheme)?);
        }
    }
    if reports.iter().filter(|r| r.method == Method::Raw).count() > 1 {
        for m in [Method::Raw, Method::Refined] {
            reports.extend(aggregate(&reports, m));
        }
    }
    for r in &reports {
        info!(
            "{} {}: rel {:.4e} m / {:.4e} rad, trajectory {:.4e} m",
            r.sequence,
            r.method.name(),
            r.rel_trans_rmse,
            r.rel_rot_rmse,
            r.trajectory_rmse
        );
    }
    let files = emit_report(&reports, out)?;
    let checked = if ck.is_some() { Method::Refined } else { Method::Raw };
    let violations = reports.iter().filter(|r| r.method == checked).flat_map(|r| r.violations(&cfg.eval.thresholds)).collect();
    Ok(EvalOutcome { reports, files, violations })
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    Ok(run_gradchecks(&cfg.gradcheck)?)
}

/// Dead-reckons the refined measurements of every sequence and writes
/// `predict_<name>.csv` in ground-truth CSV layout.
pub fn cmd_predict(cfg: &ExperimentConfig, checkpoint: &Path, horizon: Option<f64>) -> Result<Vec<PathBuf>> {
    let out = cfg.output_dir()?;
    let horizon = horizon.or(cfg.predict.horizon);
    if horizon.is_some_and(|h| !(h > 0.0)) {
        bail!("horizon must be positive");
    }
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params()?;
    let _lock = OutputLock::acquire(out)?;
    let mut files = Vec::new();
    for s in load_sequences(cfg)? {
        let d = eval_slice(cfg, &s.dataset)?;
        let refined = refine_sequence(&params, &ck.normalizer, &d.imu)?;
        let states = dead_reckon(&d, &refined, horizon, cfg.scheme)?;
        let gt = states.iter().zip(&d.gt).map(|(x, g)| GtState { t: g.t, q: x.q, p: x.p, v: Some(x.v) }).collect();
        let path = out.join(format!("predict_{}.csv", s.name));
        std::fs::write(&path, gt_csv_string(&Dataset { imu: Vec::new(), gt, meta: d.meta.clone() }))?;
        info!("wrote {}", path.display());
        files.push(path);
    }
    Ok(files)
}
