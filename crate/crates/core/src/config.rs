//! JSON harness configuration with `dotted.key=value` overrides.
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::PredictorSpec;
use crate::dataset::Split;
use crate::prompt::{ModalityConfig, TemplateSet, VideoMode};
use crate::protocol::{ClipSettings, ProtocolConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPaths {
    /// Canonical manifest produced by `ingest`.
    pub manifest: PathBuf,
    pub split: Split,
}

impl Default for DatasetPaths {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            split: Split::Test,
        }
    }
}

/// Optional template overrides; both or neither.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    pub stage1: Option<PathBuf>,
    pub stage2: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub dataset: DatasetPaths,
    pub clips: ClipSettings,
    pub predictor: PredictorSpec,
    pub protocol: ProtocolConfig,
    pub templates: TemplatePaths,
    pub cache_dir: PathBuf,
    pub runs_dir: PathBuf,
    pub max_concurrency: usize,
    /// Configurations evaluated by `run`.
    pub configs: Vec<ModalityConfig>,
    /// Fixed run id; derived from the run manifest when unset.
    pub run_id: Option<String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetPaths::default(),
            clips: ClipSettings::default(),
            predictor: PredictorSpec::default(),
            protocol: ProtocolConfig::default(),
            templates: TemplatePaths::default(),
            cache_dir: PathBuf::from("cache"),
            runs_dir: PathBuf::from("runs"),
            max_concurrency: 4,
            configs: vec![ModalityConfig::new(VideoMode::AV, false, true)],
            run_id: None,
        }
    }
}

impl HarnessConfig {
    /// Protocol deviations, as stamped into run manifests and reports.
    pub fn deviations(&self) -> Vec<String> {
        let mut d = self.predictor.deviations();
        d.extend(self.protocol.deviations());
        d
    }

    pub fn load_templates(&self) -> Result<TemplateSet, crate::prompt::PromptError> {
        match (&self.templates.stage1, &self.templates.stage2) {
            (Some(a), Some(b)) => TemplateSet::load(a, b),
            _ => Ok(TemplateSet::builtin()),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.manifest);
        fix(&mut self.cache_dir);
        fix(&mut self.runs_dir);
        fix(&mut self.clips.clips_dir);
        for p in [
            self.clips.frames_root.as_mut(),
            self.clips.videos_root.as_mut(),
            self.clips.media_tool.scratch_root.as_mut(),
            self.templates.stage1.as_mut(),
            self.templates.stage2.as_mut(),
            self.predictor.script.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.protocol.validate().map_err(|r| invalid("protocol.repeats", r))?;
        self.predictor.validate().map_err(|e| invalid("predictor", e.to_string()))?;
        if self.max_concurrency == 0 {
            return Err(invalid("max_concurrency", "must be at least 1"));
        }
        if self.configs.is_empty() {
            return Err(invalid("configs", "select at least one configuration"));
        }
        if self.templates.stage1.is_some() != self.templates.stage2.is_some() {
            return Err(invalid("templates", "set both stage1 and stage2, or neither"));
        }
        if self.clips.frames_root.is_none() && self.clips.videos_root.is_none() {
            return Err(invalid("clips", "set frames_root or videos_root"));
        }
        let must_exist = [
            Some(&self.dataset.manifest),
            self.clips.frames_root.as_ref(),
            self.clips.videos_root.as_ref(),
            self.templates.stage1.as_ref(),
            self.templates.stage2.as_ref(),
            self.predictor.script.as_ref(),
        ];
        for p in must_exist.into_iter().flatten() {
            if !p.exists() {
                return Err(ConfigError::MissingFile(p.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: HarnessConfig,
    pub warnings: Vec<String>,
}

/// Sets `dotted.key` in `doc`. The value is read as JSON when it parses,
/// otherwise as a plain string.
fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(invalid(key, "malformed key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => return Err(invalid(&parts[..i].join("."), "not an object")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split_once('`').map(|(name, _)| name)
}

/// Parses a config document (already overridden) as if it lived in `base`.
pub fn config_from_value(doc: Value, base: &Path) -> Result<LoadedConfig, ConfigError> {
    let mut config: HarnessConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        match unknown_field(&message) {
            Some(name) => {
                // the reported path ends at the unknown key itself, or at its parent
                let full = if path == "." || path.is_empty() {
                    name.to_string()
                } else if path.ends_with(name) {
                    path
                } else {
                    format!("{path}.{name}")
                };
                ConfigError::UnknownKey(full)
            }
            None => invalid(&path, message),
        }
    })?;
    config.resolve_paths(base);
    config.validate()?;
    let warnings = config
        .deviations()
        .into_iter()
        .map(|d| format!("protocol deviation: {d}"))
        .collect();
    Ok(LoadedConfig { config, warnings })
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ConfigError::MissingFile(path.to_path_buf())),
        Err(source) => {
            return Err(ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| invalid("<document>", e.to_string()))?;
    if !doc.is_object() {
        return Err(invalid("<document>", "expected a JSON object"));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config_from_value(doc, &base)
}
