//! Experiment configuration: a versioned JSON schema with dotted-path
//! overrides for sweeps, plus batch files running several cells at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::Scenario;
use crate::nn::OptAlgo;
use crate::offpom::OffPomConfig;
use crate::onpom::OnPomConfig;
use crate::rewards::RewardStrategy;
use crate::{Error, Result};

/// Which optimization mechanism drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    OnPom,
    OffPom,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::OnPom => "onpom",
            Algorithm::OffPom => "offpom",
        }
    }
}

/// One experiment cell. Defaults mirror the shipped configs: 2M steps on 12
/// parallel instances with 2x128 networks at learning rate 1e-3.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub reward: RewardStrategy,
    pub total_steps: u64,
    pub n_envs: usize,
    pub master_seed: u64,
    /// Layout file path, or "default" for the bundled lot.
    pub layout: String,
    pub out_dir: String,
    pub hidden: Vec<usize>,
    pub optimizer: OptAlgo,
    /// Shared learning rate for the on-policy actor/critic update.
    pub learning_rate: f64,
    /// Environment steps between metrics rows.
    pub metrics_stride: u64,
    /// Environment steps between periodic checkpoints.
    pub checkpoint_interval: u64,
    pub onpom: OnPomConfig,
    pub offpom: OffPomConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            algorithm: Algorithm::OnPom,
            reward: RewardStrategy::Mar,
            total_steps: 2_000_000,
            n_envs: 12,
            master_seed: 0,
            layout: "default".into(),
            out_dir: "runs".into(),
            hidden: vec![128, 128],
            optimizer: OptAlgo::Adam,
            learning_rate: 1e-3,
            metrics_stride: 2000,
            checkpoint_interval: 100_000,
            onpom: OnPomConfig::default(),
            offpom: OffPomConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be positive".into()));
        }
        if self.n_envs == 0 {
            return Err(Error::InvalidConfig("n_envs must be at least 1".into()));
        }
        if self.metrics_stride == 0 || self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig(
                "metrics_stride and checkpoint_interval must be positive".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("hidden layers must not be empty".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        self.onpom.validate()?;
        self.offpom.validate()?;
        Ok(())
    }

    /// Load the referenced layout (bundled default or a file path, resolved
    /// against `base_dir` when relative).
    pub fn load_scenario(&self, base_dir: Option<&Path>) -> Result<Scenario> {
        if self.layout == "default" {
            return Ok(Scenario::default_scenario());
        }
        let path = resolve_path(&self.layout, base_dir);
        Scenario::from_json_file(&path)
    }

    /// Directory name for this run's artifacts.
    pub fn run_name(&self) -> String {
        format!(
            "{}-{}-{}",
            self.algorithm.name(),
            self.reward.name(),
            self.master_seed
        )
    }
}

pub fn resolve_path(p: &str, base_dir: Option<&Path>) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() || p == "default" {
        return path.to_path_buf();
    }
    match base_dir {
        Some(b) => b.join(path),
        None => path.to_path_buf(),
    }
}

/// A config file is either one experiment or a batch `{ "runs": [...] }`
/// whose entries are config paths (resolved relative to the batch file) or
/// inline config objects.
#[derive(Debug)]
pub enum ConfigFile {
    Single(Box<ExperimentConfig>),
    Batch(Vec<ExperimentConfig>),
}

/// Apply one `path.to.key=value` override onto a JSON config value. The
/// value is parsed as JSON when possible, falling back to a string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override '{assignment}' is not of the form key=value"))
    })?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            match cur {
                serde_json::Value::Object(map) => {
                    map.insert((*part).to_string(), parsed);
                    return Ok(());
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "override path '{path}' does not address an object"
                    )))
                }
            }
        }
        cur = match cur {
            serde_json::Value::Object(map) => map
                .entry((*part).to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default())),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "override path '{path}' does not address an object"
                )))
            }
        };
    }
    unreachable!("split always yields at least one part");
}

/// Parse a config file, applying overrides (single configs only) and an
/// optional seed replacement. `PARKRL_SEED` in the environment takes
/// precedence over everything.
pub fn load_config_file(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    let base = path.parent().map(Path::to_path_buf);

    let env_seed = std::env::var("PARKRL_SEED")
        .ok()
        .map(|s| {
            s.parse::<u64>().map_err(|_| {
                Error::InvalidConfig(format!("PARKRL_SEED must be an integer, got '{s}'"))
            })
        })
        .transpose()?;

    if let Some(runs) = value.get("runs") {
        if !overrides.is_empty() {
            return Err(Error::InvalidConfig(
                "--override is not supported with batch files".into(),
            ));
        }
        let entries = runs
            .as_array()
            .ok_or_else(|| Error::InvalidConfig("'runs' must be an array".into()))?
            .clone();
        let mut configs = Vec::with_capacity(entries.len());
        for entry in entries {
            let mut cfg: ExperimentConfig = match entry {
                serde_json::Value::String(p) => {
                    let sub = resolve_path(&p, base.as_deref());
                    let sub_text = std::fs::read_to_string(&sub).map_err(|e| {
                        Error::InvalidConfig(format!("cannot read config {}: {e}", sub.display()))
                    })?;
                    let mut cfg: ExperimentConfig = serde_json::from_str(&sub_text)?;
                    // Relative layout paths inside a sub-config resolve
                    // against that sub-config's directory.
                    if cfg.layout != "default" {
                        cfg.layout = resolve_path(&cfg.layout, sub.parent())
                            .to_string_lossy()
                            .into_owned();
                    }
                    cfg
                }
                obj => serde_json::from_value(obj)?,
            };
            if let Some(s) = env_seed.or(seed) {
                cfg.master_seed = s;
            }
            cfg.validate()?;
            configs.push(cfg);
        }
        return Ok(ConfigFile::Batch(configs));
    }

    for assignment in overrides {
        apply_override(&mut value, assignment)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value)?;
    if cfg.layout != "default" {
        cfg.layout = resolve_path(&cfg.layout, base.as_deref())
            .to_string_lossy()
            .into_owned();
    }
    if let Some(s) = env_seed.or(seed) {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(ConfigFile::Single(Box::new(cfg)))
}
