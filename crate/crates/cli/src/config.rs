//! Pipeline configuration: one JSON document plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use portiontrack::baselines::BaselineConfig;
use portiontrack::{FeatureConfig, Method, PortionSpec, TrackerConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const THREADS_ENV: &str = "PORTIONTRACK_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset directory (frame_NNNN.{int,lab,feat}.v4d).
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub method: Method,
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
    pub features: FeatureConfig,
    pub portion: PortionSpec,
    pub baseline: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: PathBuf::from("."),
            out: PathBuf::from("out"),
            method: Method::Dfmt,
            seed: 0,
            threads: 0,
            features: FeatureConfig::default(),
            portion: PortionSpec::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            portion: self.portion.clone(),
            features: self.features.clone(),
            baseline: self.baseline.clone(),
        }
    }

    /// Loads `path` (or the defaults), applies overrides, then the thread
    /// count from the environment, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        if let Ok(v) = std::env::var(THREADS_ENV) {
            cfg.threads = v
                .trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("{THREADS_ENV} must be a thread count, got {v:?}")))?;
        }
        cfg.tracker().validate()?;
        Ok(cfg)
    }
}

/// Sets a dotted path in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("override key {key:?} is malformed")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::Validation(format!("override {key:?} descends into a non-object")))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Validation(format!("override {key:?} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
