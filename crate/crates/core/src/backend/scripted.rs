//! Replay backend: responses keyed by (instance_id, config, repeat_index).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, InferenceRequest, RawResponse};
use crate::prompt::ModalityConfig;

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub instance_id: String,
    pub config: ModalityConfig,
    pub repeat_index: u32,
    pub text: String,
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: HashMap<(String, ModalityConfig, u32), String>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, BackendError> {
        let mut map = HashMap::new();
        for e in entries {
            let key = (e.instance_id.clone(), e.config, e.repeat_index);
            if map.insert(key, e.text).is_some() {
                return Err(BackendError::InvalidScript {
                    path: String::new(),
                    message: format!(
                        "duplicate entry for instance {}, config {}, repeat {}",
                        e.instance_id, e.config, e.repeat_index
                    ),
                });
            }
        }
        Ok(Self { entries: map })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let invalid = |message: String| BackendError::InvalidScript {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| invalid(e.to_string()))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
            entries.push(entry);
        }
        Self::from_entries(entries).map_err(|e| match e {
            BackendError::InvalidScript { message, .. } => invalid(message),
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes entries as JSON lines.
pub fn write_script(path: &Path, entries: &[ScriptEntry]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).expect("entry serializes");
        buf.write_all(b"\n")?;
    }
    crate::fsutil::write_atomic(path, &buf)
}

impl Backend for ScriptedBackend {
    fn respond(&self, req: &InferenceRequest<'_>, repeat_index: u32) -> Result<RawResponse, BackendError> {
        let key = (req.instance.instance_id.clone(), req.config, repeat_index);
        match self.entries.get(&key) {
            Some(text) => Ok(RawResponse::ok(text.clone())),
            None => Err(BackendError::ScriptMissing {
                instance_id: key.0,
                config: req.config.to_string(),
                repeat_index,
            }),
        }
    }
}
