use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use obsint::data::{AugmentationConfig, SplitConfig, TrajectorySpec, WindowConfig};
use obsint::eval::EvalConfig;
use obsint::gradcheck::GradcheckConfig;
use obsint::losses::LossConfig;
use obsint::net::NetworkConfig;
use obsint::trainer::TrainConfig;
use obsint::Scheme;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One experiment: where the data comes from, what to train and how to
/// evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// When set, replaces the seeds of the train, gradcheck and simulation
    /// sections.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub net: NetworkConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub predict: PredictConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub simulate: Option<TrajectorySpec>,
    pub sequences: Vec<SequenceFiles>,
    pub window: WindowConfig,
    pub split: SplitConfig,
    pub augmentation: AugmentationConfig,
    /// Which part of each sequence `eval` and `predict` run on.
    pub eval_split: EvalSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFiles {
    #[serde(default)]
    pub name: Option<String>,
    pub imu: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    /// The held-out tail of each sequence.
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Re-anchor to ground truth every this many seconds; open loop when
    /// absent.
    pub horizon: Option<f64>,
}

pub enum DataSource<'a> {
    Simulated(&'a TrajectorySpec),
    Files(&'a [SequenceFiles]),
}

impl ExperimentConfig {
    pub fn data_source(&self) -> Result<DataSource<'_>> {
        match (&self.data.simulate, self.data.sequences.is_empty()) {
            (Some(spec), true) => Ok(DataSource::Simulated(spec)),
            (None, false) => Ok(DataSource::Files(&self.data.sequences)),
            (Some(_), false) => bail!("data: set exactly one of `simulate` and `sequences`, not both"),
            (None, true) => bail!("data: no data source; set `simulate` or `sequences`"),
        }
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| anyhow!("output_dir: required by this command"))
    }

    /// Checks every section; data paths must exist.
    pub fn validate(&self) -> Result<()> {
        self.net.validate().context("net")?;
        self.loss.validate().context("loss")?;
        self.train.validate().context("train")?;
        self.eval.validate().context("eval")?;
        self.data.augmentation.validate().context("data.augmentation")?;
        if let Some(spec) = &self.data.simulate {
            spec.validate().context("data.simulate")?;
        }
        if self.data.simulate.is_some() && !self.data.sequences.is_empty() {
            self.data_source()?;
        }
        for (i, s) in self.data.sequences.iter().enumerate() {
            for (field, p) in [("imu", &s.imu), ("gt", &s.gt)] {
                if !p.is_file() {
                    bail!("data.sequences[{i}].{field}: {} does not exist", p.display());
                }
            }
        }
        if self.data.window.window_len != self.net.window_len {
            bail!(
                "net.window_len ({}) must equal data.window.window_len ({})",
                self.net.window_len,
                self.data.window.window_len
            );
        }
        if self.predict.horizon.is_some_and(|h| !(h > 0.0)) {
            bail!("predict.horizon: must be positive");
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = self.output_dir.as_mut() {
            join(o);
        }
        for s in &mut self.data.sequences {
            join(&mut s.imu);
            join(&mut s.gt);
        }
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.gradcheck.seed = s;
            if let Some(spec) = self.data.simulate.as_mut() {
                spec.seed = s;
            }
        }
    }
}

/// Sets `value` at a dotted `path`, creating objects along the way. The
/// value is parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("--set {assignment}: expected section.key=value"))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        bail!("--set {assignment}: empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node.as_object_mut().ok_or_else(|| anyhow!("--set {assignment}: `{}` is not an object", keys[..i].join(".")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}

/// Parses a config document with overrides; errors name the offending field.
pub fn parse_config(text: &str, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut doc: Value = serde_json::from_str(text).context("config is not valid JSON")?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        apply_override(&mut doc, &format!("seed={s}"))?;
    }
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("config field `{path}`: {}", e.into_inner())
    })?;
    cfg.apply_seed();
    Ok(cfg)
}

/// Reads, overrides, resolves and validates a config file.
pub fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = parse_config(&text, overrides, seed).with_context(|| format!("in {}", path.display()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}
