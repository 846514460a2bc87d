//! Ablation driver and report emission (Markdown, CSV, JSON).
//!
//! Reports are a pure function of the run result and the reference rows, so
//! re-emitting from stored records reproduces the original bytes.

mod reference;

use std::fmt::Write as _;
use std::ops::Deref;
use std::str::FromStr;

use serde::Serialize;

use crate::dataset::PedestrianInstance;
use crate::metrics::{display2, evaluate_records, repeat_metrics, ConfusionMatrix, EvalMetrics, MetricsError, StabilitySummary};
use crate::prompt::{ModalityConfig, VideoMode};
use crate::protocol::{EvalError, Harness, PredictionRecord, RecordSink, RunManifest};

pub use reference::{
    reference_rows, InputFlags, ReferenceAblationRow, ReferenceMetrics, ReferenceRow, REFERENCE_ABLATION, REFERENCE_ROWS,
};

pub const CSV_HEADER: &str = "config,acc,auc,f1,precision,recall,n,parse_failure_rate,unanimity_rate";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unsupported report format {0:?} (expected md, csv or json)")]
    UnsupportedFormat(String),
    #[error("no records for configuration {0}")]
    MissingRow(ModalityConfig),
    #[error("an ablation needs exactly the eight configurations in table order")]
    NotAnAblation,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigResult {
    pub config: ModalityConfig,
    pub confusion: ConfusionMatrix,
    pub metrics: EvalMetrics,
    /// Metrics of each repeat on its own; `None` when that repeat never parsed.
    pub per_repeat: Vec<Option<EvalMetrics>>,
}

impl ConfigResult {
    /// Rows whose records all failed still appear, with undefined metrics.
    pub fn from_records(config: ModalityConfig, records: &[&PredictionRecord], repeats: u32) -> Result<Self, MetricsError> {
        let owned: Vec<PredictionRecord> = records.iter().map(|r| (*r).clone()).collect();
        if owned.is_empty() {
            return Err(MetricsError::EmptyRecordSet);
        }
        let (confusion, metrics) = match evaluate_records(&owned) {
            Ok(x) => x,
            Err(MetricsError::EmptyRecordSet) => {
                let s: StabilitySummary = crate::metrics::stability_summary(&owned)?;
                (
                    ConfusionMatrix::default(),
                    EvalMetrics {
                        parse_failure_rate: s.parse_failure_rate,
                        unanimity_rate: s.unanimity_rate,
                        evaluation_failures: owned.len(),
                        ..EvalMetrics::default()
                    },
                )
            }
            Err(e) => return Err(e),
        };
        let per_repeat = (0..repeats).map(|r| repeat_metrics(&owned, r).ok()).collect();
        Ok(Self {
            config,
            confusion,
            metrics,
            per_repeat,
        })
    }
}

/// Metrics for one run: one row per evaluated configuration, in table order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub run_id: String,
    pub predictor: String,
    pub protocol: String,
    pub deviations: Vec<String>,
    pub split: String,
    pub instance_count: usize,
    pub video_count: usize,
    pub rows: Vec<ConfigResult>,
}

impl RunResult {
    pub fn from_records(manifest: &RunManifest, records: &[PredictionRecord]) -> Result<Self, ReportError> {
        let mut configs = manifest.configs.clone();
        configs.sort_by_key(|c| c.table_position());
        configs.dedup();
        let rows = configs
            .iter()
            .map(|&c| {
                let subset: Vec<&PredictionRecord> = records.iter().filter(|r| r.config == c).collect();
                if subset.is_empty() {
                    return Err(ReportError::MissingRow(c));
                }
                Ok(ConfigResult::from_records(c, &subset, manifest.protocol.repeats)?)
            })
            .collect::<Result<Vec<_>, ReportError>>()?;
        Ok(Self {
            run_id: manifest.run_id.clone(),
            predictor: manifest.predictor.summary(),
            protocol: manifest.protocol.summary(),
            deviations: manifest.deviations.clone(),
            split: manifest.split.clone(),
            instance_count: manifest.instance_count,
            video_count: manifest.video_count,
            rows,
        })
    }

    pub fn row(&self, config: ModalityConfig) -> Option<&ConfigResult> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn is_ablation(&self) -> bool {
        self.rows.iter().map(|r| r.config).eq(ModalityConfig::ALL)
    }

    /// The row compared against reference models: AV+S for an ablation,
    /// otherwise the first (usually only) row.
    pub fn headline(&self) -> &ConfigResult {
        let best = ModalityConfig::new(VideoMode::AV, false, true);
        self.row(best).filter(|_| self.is_ablation()).unwrap_or(&self.rows[0])
    }
}

/// A [`RunResult`] covering exactly the eight configurations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationResult(RunResult);

impl TryFrom<RunResult> for AblationResult {
    type Error = ReportError;

    fn try_from(run: RunResult) -> Result<Self, Self::Error> {
        if run.is_ablation() {
            Ok(Self(run))
        } else {
            Err(ReportError::NotAnAblation)
        }
    }
}

impl Deref for AblationResult {
    type Target = RunResult;

    fn deref(&self) -> &RunResult {
        &self.0
    }
}

impl AblationResult {
    pub fn into_inner(self) -> RunResult {
        self.0
    }
}

/// Evaluates `instances` under all eight configurations and summarizes.
/// `manifest.configs` must list the eight configurations.
pub fn run_ablation(
    instances: &[&PedestrianInstance],
    harness: &Harness<'_>,
    manifest: &RunManifest,
    sink: Option<&RecordSink>,
) -> Result<(AblationResult, Vec<PredictionRecord>), ReportError> {
    if manifest.configs != ModalityConfig::ALL {
        return Err(ReportError::NotAnAblation);
    }
    let records = harness.evaluate(instances, &ModalityConfig::ALL, sink)?;
    let result = RunResult::from_records(manifest, &records)?.try_into()?;
    Ok((result, records))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn check(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        "--"
    }
}

fn harness_inputs(config: ModalityConfig) -> InputFlags {
    InputFlags {
        i: false,
        b: config.include_bb || config.video_mode == VideoMode::AV,
        p: false,
        s: config.include_speed,
        v: true,
    }
}

const AUC_NOTE: &str = "AUC is computed from the vote-fraction score: the share of the repeated calls \
that answered cross. With 5 repeats the score takes six values, so equal scores are common; \
each tied positive/negative pair earns half credit.";

const REFERENCE_NOTE: &str = "Reference rows are transcribed, not recomputed. For BF-PIP the comparison \
table lists AUC 0.77 and recall 0.69, while its accompanying text quotes 0.76 and 0.68; \
the table values are shown.";

fn markdown(result: &RunResult, reference: &[ReferenceRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Crossing-intention evaluation report\n");
    let _ = writeln!(s, "- Run: `{}`", result.run_id);
    let _ = writeln!(s, "- Predictor: {}", result.predictor);
    let _ = writeln!(s, "- Protocol: {}", result.protocol);
    let _ = writeln!(
        s,
        "- Dataset: {} pedestrian instances from {} videos, {} split",
        result.instance_count, result.video_count, result.split
    );
    if result.deviations.is_empty() {
        let _ = writeln!(s, "- Protocol deviations: none");
    } else {
        let _ = writeln!(s, "- Protocol deviations: {}", result.deviations.join("; "));
    }
    s.push('\n');

    let title = if result.is_ablation() { "Input-modality ablation" } else { "Results" };
    let _ = writeln!(s, "## {title}\n");
    s.push_str("| Input Modality | ACC | AUC | F1 | P | R | n | Failed | Parse failures | Unanimity |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for row in &result.rows {
        let m = &row.metrics;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            row.config.label(),
            display2(m.acc),
            display2(m.auc),
            display2(m.f1),
            display2(m.precision),
            display2(m.recall),
            m.n,
            m.evaluation_failures,
            display2(Some(m.parse_failure_rate)),
            display2(Some(m.unanimity_rate)),
        );
    }
    s.push('\n');

    let head = result.headline();
    let _ = writeln!(s, "## Comparison with reference models\n");
    s.push_str("| Model | Year | Variant | I | B | P | S | V | Extra | ACC | AUC | F1 | P | R |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    let mut line = |model: &str, year: String, variant: &str, f: InputFlags, extra: Option<&str>, m: [Option<f64>; 5]| {
        let _ = writeln!(
            s,
            "| {model} | {year} | {variant} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            check(f.i),
            check(f.b),
            check(f.p),
            check(f.s),
            check(f.v),
            extra.unwrap_or("--"),
            display2(m[0]),
            display2(m[1]),
            display2(m[2]),
            display2(m[3]),
            display2(m[4]),
        );
    };
    for r in reference {
        let rm = r.metrics;
        line(r.model, r.year.to_string(), r.variant, r.inputs, r.extra, [rm.acc, rm.auc, rm.f1, rm.precision, rm.recall]);
    }
    let hm = &head.metrics;
    let has_text = head.config.include_bb || head.config.include_speed;
    line(
        &format!("This run ({})", head.config.label()),
        "--".into(),
        "harness",
        harness_inputs(head.config),
        has_text.then_some("Text"),
        [hm.acc, hm.auc, hm.f1, hm.precision, hm.recall],
    );
    s.push('\n');

    let _ = writeln!(s, "## Per-repeat metrics\n");
    s.push_str("| Input Modality | Repeat | ACC | AUC | F1 | P | R | n |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for row in &result.rows {
        for (i, m) in row.per_repeat.iter().enumerate() {
            match m {
                Some(m) => {
                    let _ = writeln!(
                        s,
                        "| {} | {i} | {} | {} | {} | {} | {} | {} |",
                        row.config.label(),
                        display2(m.acc),
                        display2(m.auc),
                        display2(m.f1),
                        display2(m.precision),
                        display2(m.recall),
                        m.n
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | {i} | -- | -- | -- | -- | -- | 0 |", row.config.label());
                }
            }
        }
    }
    s.push('\n');
    let _ = writeln!(s, "## Notes\n");
    let _ = writeln!(s, "- {AUC_NOTE}");
    let _ = writeln!(s, "- {REFERENCE_NOTE}");
    let _ = writeln!(s, "- Displayed values are rounded half-up to two decimals; CSV and JSON carry full precision.");
    s
}

fn csv(result: &RunResult) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for row in &result.rows {
        let m = &row.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            row.config.label(),
            opt(m.acc),
            opt(m.auc),
            opt(m.f1),
            opt(m.precision),
            opt(m.recall),
            m.n,
            m.parse_failure_rate,
            m.unanimity_rate
        );
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    result: &'a RunResult,
    headline: ModalityConfig,
    auc_note: &'static str,
    reference_note: &'static str,
    reference: &'a [ReferenceRow],
}

fn json(result: &RunResult, reference: &[ReferenceRow]) -> String {
    let doc = JsonReport {
        result,
        headline: result.headline().config,
        auc_note: AUC_NOTE,
        reference_note: REFERENCE_NOTE,
        reference,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn emit_report(result: &RunResult, reference: &[ReferenceRow], format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Markdown => markdown(result, reference),
        ReportFormat::Csv => csv(result),
        ReportFormat::Json => json(result, reference),
    }
    .into_bytes()
}
