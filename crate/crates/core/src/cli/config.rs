use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::AeConfig;
use crate::discorl::TrainConfig;
use crate::envs::{EnvOptions, TaskSetId};
use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    TrainDiscosyn,
    TrainBaseline,
    Transfer,
    SparseBench,
    Analyze,
    Report,
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TrainDiscosyn => "train-discosyn",
            Command::TrainBaseline => "train-baseline",
            Command::Transfer => "transfer",
            Command::SparseBench => "sparse-bench",
            Command::Analyze => "analyze",
            Command::Report => "report",
            Command::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown command `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub set: TaskSetId,
    pub d: usize,
    /// Seed of the task family (drive rows, contact postures).
    pub seed: u64,
    pub options: EnvOptions,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { set: TaskSetId::A, d: 20, seed: 0, options: EnvOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Ae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub method: Method,
    pub b: usize,
    pub episodes_per_task: usize,
    /// Sample latent actions when collecting the dataset.
    pub stochastic: bool,
    /// Tasks whose agents contribute data; all when absent.
    pub data_tasks: Option<Vec<usize>>,
    /// Tasks the low-dimensional policies are retrained on; all when absent.
    pub retrain_tasks: Option<Vec<usize>>,
    pub ae: AeConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: Method::Pca,
            b: 4,
            episodes_per_task: 50,
            stochastic: false,
            data_tasks: None,
            retrain_tasks: None,
            ae: AeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnseenTask {
    CwValve,
    CylValve,
    TopdownScrew,
    /// Valve whose drive is orthogonal to the decoder's row space.
    OrthogonalValve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Synergy checkpoint, or a `train-discosyn` run directory.
    pub synergy: Option<PathBuf>,
    pub task: UnseenTask,
    /// Success reference; trained from scratch when absent and
    /// `compute_reference` is set.
    pub reference: Option<f64>,
    pub compute_reference: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { synergy: None, task: UnseenTask::CwValve, reference: None, compute_reference: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseConfig {
    pub synergy: Option<PathBuf>,
    pub budget: usize,
    /// Number of paired seeds: the root seed and its successors.
    pub seeds: usize,
    /// Posture gating on the sparse task; the harder, default setting.
    pub engagement_on: bool,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self { synergy: None, budget: 200_000, seeds: 5, engagement_on: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// A `train-discosyn` run directory.
    pub run: Option<PathBuf>,
    pub episodes: usize,
    /// PCA dimension compared against the decoder on the same pairs.
    pub pca_b: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { run: None, episodes: 4, pca_b: 2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub runs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub run: Option<PathBuf>,
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { run: None, episodes: 10 }
    }
}

/// One experiment. `seed` is the root seed; it is copied into
/// `train.seed` and `baseline.ae.seed` when the configuration is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub sparse: SparseConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            seed: 0,
            out: None,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            transfer: TransferConfig::default(),
            sparse: SparseConfig::default(),
            analyze: AnalyzeConfig::default(),
            report: ReportConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Checks every section the command reads.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.env.d == 0 {
            return config_err("env.d must be positive");
        }
        match self.command {
            Command::TrainBaseline => {
                let b = &self.baseline;
                if b.b == 0 || b.b > self.env.d {
                    return config_err(format!("baseline.b must be in 1..={}", self.env.d));
                }
                if b.episodes_per_task == 0 {
                    return config_err("baseline.episodes_per_task must be at least 1");
                }
            }
            Command::Transfer if self.transfer.synergy.is_none() => {
                return config_err("transfer.synergy is required");
            }
            Command::SparseBench => {
                if self.sparse.synergy.is_none() {
                    return config_err("sparse.synergy is required");
                }
                if self.sparse.seeds == 0 {
                    return config_err("sparse.seeds must be at least 1");
                }
            }
            Command::Analyze if self.analyze.run.is_none() => return config_err("analyze.run is required"),
            Command::Eval if self.eval.run.is_none() => return config_err("eval.run is required"),
            _ => {}
        }
        if self.analyze.episodes == 0 || self.eval.episodes == 0 || self.analyze.pca_b == 0 {
            return config_err("analyze.episodes, analyze.pca_b and eval.episodes must be at least 1");
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serialisable");
        s.push('\n');
        s
    }
}

fn parse_err(source: &str, e: &serde_json::Error) -> Error {
    Error::Config(format!("{source}: {e}"))
}

/// Sets the value at a dot-separated path, creating objects as needed. The
/// value is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return config_err(format!("override path `{path}` has an empty segment"));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}` crosses a non-object value")))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override path `{path}` crosses a non-object value")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Command-line adjustments applied on top of a configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub assignments: Vec<String>,
}

/// Parses `text` (named `source` in messages), applies `overrides`,
/// resolves the seed and validates. Parse errors carry line and column.
pub fn parse_config(text: &str, source: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| parse_err(source, &e))?;
    if !value.is_object() {
        return config_err(format!("{source}: the configuration must be a JSON object"));
    }
    // Strict pass on the untouched text for line-precise field errors.
    serde_json::from_str::<ExperimentConfig>(text).map_err(|e| parse_err(source, &e))?;
    let file_command = value.get("command").cloned();
    if let Some(cmd) = overrides.command {
        match file_command.as_ref().and_then(Value::as_str) {
            Some(c) if c != cmd.name() => {
                return config_err(format!("{source}: config is for `{c}`, invoked as `{}`", cmd.name()));
            }
            _ => {}
        }
    }
    for a in &overrides.assignments {
        apply_override(&mut value, a)?;
    }
    let explicit_seeds: Vec<(&str, Option<u64>)> = ["/train/seed", "/baseline/ae/seed"]
        .into_iter()
        .map(|p| (p, value.pointer(p).and_then(Value::as_u64)))
        .collect();
    let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| parse_err(source, &e))?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.out {
        cfg.out = Some(o.clone());
    }
    for (pointer, v) in explicit_seeds {
        if let Some(s) = v.filter(|&s| s != cfg.seed) {
            let key = pointer.trim_start_matches('/').replace('/', ".");
            return config_err(format!("{source}: {key} ({s}) differs from the root seed ({}); set `seed`", cfg.seed));
        }
    }
    cfg.train.seed = cfg.seed;
    cfg.baseline.ae.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Configuration for `command`: from `path` when given, otherwise the
/// defaults, with `overrides` applied.
pub fn load_config(path: Option<&Path>, command: Command, overrides: &Overrides) -> Result<ExperimentConfig> {
    let ov = Overrides { command: Some(command), ..overrides.clone() };
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text, &p.display().to_string(), &ov)
        }
        None => {
            let text = serde_json::json!({ "command": command.name() }).to_string();
            parse_config(&text, "<defaults>", &ov)
        }
    }
}
