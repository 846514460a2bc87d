//! Run directories: `runs/<run_id>/{manifest.json,records.jsonl,report.*}`.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{PredictionRecord, ProtocolConfig};
use crate::backend::PredictorSpec;
use crate::digest::sha256_hex;
use crate::fsutil::write_atomic;
use crate::prompt::ModalityConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(runs_root: &Path, run_id: &str) -> Self {
        Self {
            root: runs_root.join(run_id),
        }
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn report_path(&self, extension: &str) -> PathBuf {
        self.root.join(format!("report.{extension}"))
    }
}

/// Everything needed to replay a run against a warmed cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub predictor: PredictorSpec,
    pub protocol: ProtocolConfig,
    pub configs: Vec<ModalityConfig>,
    pub template_digest: String,
    pub stage1_digest: String,
    pub stage2_digest: String,
    pub prompt_order: Vec<String>,
    pub dataset_manifest: PathBuf,
    pub dataset_digest: String,
    pub split: String,
    pub instance_count: usize,
    /// Distinct source videos among the instances.
    pub video_count: usize,
    /// Clip settings as configured, serialized.
    pub clip_settings: serde_json::Value,
    pub deviations: Vec<String>,
    pub harness_version: String,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &RunDir) -> std::io::Result<()> {
        write_atomic(&dir.manifest_path(), self.to_json().as_bytes())
    }

    pub fn read(dir: &RunDir) -> Result<Self, RecordsError> {
        let path = dir.manifest_path();
        let text = std::fs::read_to_string(&path).map_err(|e| RecordsError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| RecordsError::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Stable id: a digest of the manifest with `run_id` blanked.
pub fn derive_run_id(manifest: &RunManifest) -> String {
    let mut m = manifest.clone();
    m.run_id = String::new();
    format!("run-{}", &sha256_hex(m.to_json().as_bytes())[..12])
}

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("no records in {}", .0.display())]
    EmptyRecordSet(PathBuf),
}

impl RecordsError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        RecordsError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn record_line(record: &PredictionRecord) -> Vec<u8> {
    let mut line = serde_json::to_vec(record).expect("record serializes");
    line.push(b'\n');
    line
}

/// Append-only JSON-lines sink; each record is one `write_all`.
#[derive(Debug)]
pub struct RecordSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordSink {
    /// Truncates any existing file.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &PredictionRecord) -> std::io::Result<()> {
        let line = record_line(record);
        let mut f = self.file.lock().expect("sink lock");
        f.write_all(&line)?;
        f.flush()
    }
}

/// Rewrites `path` with `records` in reporting order.
pub fn write_records(path: &Path, records: &[PredictionRecord]) -> std::io::Result<()> {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let bytes: Vec<u8> = sorted.into_iter().flat_map(record_line).collect();
    write_atomic(path, &bytes)
}

pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>, RecordsError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(RecordsError::EmptyRecordSet(path.to_path_buf()))
        }
        Err(e) => return Err(RecordsError::io(path, e)),
    };
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| RecordsError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(RecordsError::EmptyRecordSet(path.to_path_buf()));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RawResponse;
    use crate::dataset::Label;
    use crate::protocol::RepeatOutcome;

    fn record(id: &str, cfg: usize) -> PredictionRecord {
        let pcfg = ProtocolConfig::default();
        let repeats = (0..5)
            .map(|r| RepeatOutcome::from_response(r, RawResponse::ok(r#"{"intention": "cross"}"#), pcfg.parse_mode))
            .collect();
        PredictionRecord::from_repeats(id, ModalityConfig::ALL[cfg], Label::Cross, "p", "m", repeats, &pcfg).unwrap()
    }

    #[test]
    fn sink_then_sorted_rewrite() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path(), "run-x");
        let sink = RecordSink::create(&run.records_path()).unwrap();
        let recs = [record("b", 5), record("a", 5), record("z", 0)];
        for r in &recs {
            sink.append(r).unwrap();
        }
        assert_eq!(read_records(&run.records_path()).unwrap().len(), 3);
        write_records(&run.records_path(), &recs).unwrap();
        let ids: Vec<_> = read_records(&run.records_path())
            .unwrap()
            .into_iter()
            .map(|r| (r.config.to_string(), r.instance_id))
            .collect();
        assert_eq!(
            ids,
            [("UV".to_string(), "z".to_string()), ("AV+S".into(), "a".into()), ("AV+S".into(), "b".into())]
        );
    }

    #[test]
    fn record_round_trip_is_byte_stable() {
        let r = record("a", 3);
        let line = record_line(&r);
        let back: PredictionRecord = serde_json::from_slice(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!(record_line(&back), line);
    }

    #[test]
    fn empty_or_missing_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.jsonl");
        assert!(matches!(read_records(&p), Err(RecordsError::EmptyRecordSet(_))));
        std::fs::write(&p, "\n").unwrap();
        assert!(matches!(read_records(&p), Err(RecordsError::EmptyRecordSet(_))));
        std::fs::write(&p, "{}\n").unwrap();
        assert!(matches!(read_records(&p), Err(RecordsError::Parse { line: 1, .. })));
    }

    #[test]
    fn run_id_ignores_its_own_field() {
        let m = RunManifest {
            run_id: "anything".into(),
            command: "run".into(),
            predictor: PredictorSpec::heuristic(20.0),
            protocol: ProtocolConfig::default(),
            configs: vec![ModalityConfig::ALL[5]],
            template_digest: "t".into(),
            stage1_digest: "s1".into(),
            stage2_digest: "s2".into(),
            prompt_order: vec![],
            dataset_manifest: "m.json".into(),
            dataset_digest: "d".into(),
            split: "test".into(),
            instance_count: 3,
            video_count: 1,
            clip_settings: serde_json::json!({}),
            deviations: vec![],
            harness_version: "0".into(),
        };
        let id = derive_run_id(&m);
        assert!(id.starts_with("run-") && id.len() == 16);
        let renamed = RunManifest {
            run_id: "other".into(),
            ..m.clone()
        };
        assert_eq!(derive_run_id(&renamed), id);
        let changed = RunManifest {
            instance_count: 4,
            ..m
        };
        assert_ne!(derive_run_id(&changed), id);
    }
}
