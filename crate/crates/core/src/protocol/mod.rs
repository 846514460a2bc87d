//! The per-instance protocol: R repeated predictions, parsing, and vote
//! aggregation into a label and a vote-fraction score.

mod parse;
mod pipeline;
mod run;

use serde::{Deserialize, Serialize};

use crate::backend::{RawResponse, TransportStatus};
use crate::dataset::Label;
use crate::prompt::ModalityConfig;

pub use parse::{parse_response, MalformedResponse, ParseMode, ParsedLabel};
pub use pipeline::{build_clip, ClipMemo, ClipSettings, EvalError, Harness, StageError};
pub use run::{derive_run_id, read_records, write_records, RecordSink, RecordsError, RunDir, RunManifest};

/// Protocol default for the number of repeats per instance.
pub const DEFAULT_REPEATS: u32 = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    #[default]
    Majority,
    /// `cross` if any parsed repeat says cross.
    AnyCross,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    NotCross,
    Cross,
    /// Surface the tie as an error.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub repeats: u32,
    pub parse_mode: ParseMode,
    pub aggregation: AggregationRule,
    pub tie_break: TieBreak,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            repeats: DEFAULT_REPEATS,
            parse_mode: ParseMode::Strict,
            aggregation: AggregationRule::Majority,
            tie_break: TieBreak::NotCross,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.repeats == 0 {
            return Err("repeats must be at least 1".into());
        }
        if self.aggregation == AggregationRule::Majority && self.repeats % 2 == 0 {
            return Err(format!("repeats must be odd under majority aggregation, got {}", self.repeats));
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let rule = match (self.aggregation, self.tie_break) {
            (AggregationRule::AnyCross, _) => "any-cross vote".to_string(),
            (AggregationRule::Majority, TieBreak::Error) => "majority vote (ties are errors)".to_string(),
            (AggregationRule::Majority, TieBreak::NotCross) => "majority vote (ties -> not_cross)".to_string(),
            (AggregationRule::Majority, TieBreak::Cross) => "majority vote (ties -> cross)".to_string(),
        };
        let parse = match self.parse_mode {
            ParseMode::Strict => "strict",
            ParseMode::Salvage => "salvage",
        };
        format!("{} repeats, {rule}, {parse} parsing", self.repeats)
    }

    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.repeats != DEFAULT_REPEATS {
            out.push(format!("repeats {} (protocol: {DEFAULT_REPEATS})", self.repeats));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("no repeat produced a parseable label")]
    NoParsedVotes,
    #[error("tied vote: {cross} cross vs {not_cross} not_cross")]
    TieWithEvenVotes { cross: usize, not_cross: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub label: Label,
    /// Fraction of parsed votes that are `cross`.
    pub score: f64,
    pub unanimous: bool,
}

pub fn aggregate_repeats(labels: &[Label], pcfg: &ProtocolConfig) -> Result<Aggregate, AggregateError> {
    if labels.is_empty() {
        return Err(AggregateError::NoParsedVotes);
    }
    let cross = labels.iter().filter(|l| l.is_cross()).count();
    let not_cross = labels.len() - cross;
    let label = match pcfg.aggregation {
        AggregationRule::AnyCross if cross > 0 => Label::Cross,
        AggregationRule::AnyCross => Label::NotCross,
        AggregationRule::Majority if cross > not_cross => Label::Cross,
        AggregationRule::Majority if cross < not_cross => Label::NotCross,
        AggregationRule::Majority => match pcfg.tie_break {
            TieBreak::NotCross => Label::NotCross,
            TieBreak::Cross => Label::Cross,
            TieBreak::Error => return Err(AggregateError::TieWithEvenVotes { cross, not_cross }),
        },
    };
    Ok(Aggregate {
        label,
        score: cross as f64 / labels.len() as f64,
        unanimous: cross == 0 || not_cross == 0,
    })
}

/// One of the R calls for an instance, kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub repeat_index: u32,
    pub text: String,
    pub label: Option<Label>,
    pub salvaged: bool,
    /// Why `label` is absent.
    pub failure: Option<String>,
    pub latency_ms: u64,
    pub transport_status: TransportStatus,
    pub attempt_count: u32,
}

impl RepeatOutcome {
    pub fn from_response(repeat_index: u32, response: RawResponse, mode: ParseMode) -> Self {
        let (label, salvaged, failure) = match response.transport_status {
            TransportStatus::Ok => match parse_response(&response.text, mode) {
                Ok(p) => (Some(p.label), p.salvaged, None),
                Err(e) => (None, false, Some(e.to_string())),
            },
            other => (
                None,
                false,
                Some(format!("{}: {}", serde_json::to_value(other).unwrap().as_str().unwrap(), response.text)),
            ),
        };
        Self {
            repeat_index,
            text: response.text,
            label,
            salvaged,
            failure,
            latency_ms: response.latency_ms,
            transport_status: response.transport_status,
            attempt_count: response.attempt_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Evaluated,
    /// Every repeat was malformed; excluded from metrics.
    EvaluationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub config: ModalityConfig,
    pub ground_truth: Label,
    pub status: RecordStatus,
    pub aggregated: Option<Label>,
    pub score: Option<f64>,
    pub unanimous: bool,
    pub prompt_digest: String,
    pub media_digest: String,
    pub repeats: Vec<RepeatOutcome>,
}

impl PredictionRecord {
    pub fn from_repeats(
        instance_id: &str,
        config: ModalityConfig,
        ground_truth: Label,
        prompt_digest: &str,
        media_digest: &str,
        repeats: Vec<RepeatOutcome>,
        pcfg: &ProtocolConfig,
    ) -> Result<Self, AggregateError> {
        let votes: Vec<Label> = repeats.iter().filter_map(|r| r.label).collect();
        let (status, aggregated, score, unanimous) = match aggregate_repeats(&votes, pcfg) {
            Ok(a) => (RecordStatus::Evaluated, Some(a.label), Some(a.score), a.unanimous),
            Err(AggregateError::NoParsedVotes) => (RecordStatus::EvaluationFailed, None, None, false),
            Err(e) => return Err(e),
        };
        Ok(Self {
            instance_id: instance_id.to_string(),
            config,
            ground_truth,
            status,
            aggregated,
            score,
            unanimous,
            prompt_digest: prompt_digest.to_string(),
            media_digest: media_digest.to_string(),
            repeats,
        })
    }

    pub fn is_evaluated(&self) -> bool {
        self.status == RecordStatus::Evaluated
    }

    pub fn malformed_repeats(&self) -> usize {
        self.repeats.iter().filter(|r| r.label.is_none()).count()
    }

    /// Order used for reporting: ablation-table position, then instance id.
    pub fn sort_key(&self) -> (usize, &str) {
        (self.config.table_position(), &self.instance_id)
    }
}
