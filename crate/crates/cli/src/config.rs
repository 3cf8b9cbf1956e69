//! Run configuration: JSON file, `--key.path value` overrides and the
//! content hash stamped on every output.

use std::path::{Path, PathBuf};

use posediff::data::CorpusSpec;
use posediff::denoiser::DenoiserConfig;
use posediff::tasks::{CompleteSettings, FitSettings, RefineSettings};
use posediff::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Number of diffusion timesteps T.
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: posediff::diffusion::DEFAULT_STEPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    /// Model evaluations per trajectory.
    pub steps: usize,
    pub guidance_scale: f64,
    pub caption: Option<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { count: 16, steps: 20, guidance_scale: 1.0, caption: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Refine,
    Smplify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Held-out poses each task runs on.
    pub count: usize,
    /// Per-component axis-angle noise of fitting initializations, radians.
    pub init_noise: f64,
    /// Per-component axis-angle noise of denoising inputs, radians.
    pub denoise_noise: f64,
    pub fit_method: FitMethod,
    pub scenario: String,
    /// Condition refinement on keypoint features derived from the observation.
    pub image_context: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            count: 20,
            init_noise: 0.3,
            denoise_noise: 0.3,
            fit_method: FitMethod::Refine,
            scenario: "occ_arm".into(),
            image_context: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// One of `fid`, `apd`, `dnn`.
    pub metric: String,
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { metric: "fid".into(), a: None, b: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: "out/corpus.pdps".into(), checkpoint: "out/model.pdck".into(), output: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub training: TrainConfig,
    pub data: CorpusSpec,
    pub sampling: SamplingConfig,
    pub refine: RefineSettings,
    pub fit: FitSettings,
    pub complete: CompleteSettings,
    pub tasks: TaskConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
    /// Also write FK joints of produced poses as Wavefront OBJ point sets.
    pub dump_obj: bool,
}

impl RunConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |e: posediff::Error| CliError::Config(e.to_string());
        self.model.validate().map_err(fail)?;
        self.training.validate().map_err(fail)?;
        self.fit.validate().map_err(fail)?;
        if self.data.size == 0 {
            return Err(CliError::Config("data.size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reads the JSON config (defaults when `path` is `None`) and applies the
/// dot-path overrides in order.
pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| {
                CliError::Config(format!("{}: line {} column {}: {e}", p.display(), e.line(), e.column()))
            })?
        }
        None => serde_json::to_value(RunConfig::default()).expect("defaults serialize"),
    };
    for (key, raw) in overrides {
        set_path(&mut value, key, parse_value(raw))?;
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Flag values are JSON when they parse as JSON, plain strings otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<(), CliError> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut known = Some(&defaults);
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        known = known.and_then(|k| k.get(part));
        if known.is_none() {
            return Err(CliError::Config(format!("unknown configuration key --{key}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--{key}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
