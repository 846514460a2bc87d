//! Machine-readable failure summaries printed to stderr.

use std::fmt::Debug;

use bfpip_core::protocol::StageError;
use bfpip_core::report::ReportError;
use bfpip_core::prompt::PromptError;
use bfpip_core::Error;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub instance_id: Option<String>,
    pub config: Option<String>,
}

/// Leading identifier of a `Debug` rendering, i.e. the enum variant name.
fn variant<T: Debug>(value: &T) -> String {
    let s = format!("{value:?}");
    s.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

fn prompt_kind(e: &PromptError) -> String {
    match e {
        PromptError::Window(inner) => variant(inner),
        other => variant(other),
    }
}

fn stage_kind(e: &StageError) -> String {
    match e {
        StageError::Clip(inner) => variant(inner),
        StageError::Prompt(inner) => prompt_kind(inner),
        StageError::Backend(inner) => variant(inner),
        StageError::Aggregate(inner) => variant(inner),
        StageError::Sink(_) => "Io".into(),
    }
}

fn core_kind(e: &Error) -> (String, Option<String>, Option<String>) {
    let eval = |ev: &bfpip_core::protocol::EvalError| {
        (
            stage_kind(&ev.source),
            Some(ev.instance_id.clone()),
            ev.config.map(|c| c.label()),
        )
    };
    match e {
        Error::Config(inner) => (variant(inner), None, None),
        Error::Manifest(inner) => (variant(inner), None, None),
        Error::Adapt(inner) => (variant(inner), None, None),
        Error::Clip(inner) => (variant(inner), None, None),
        Error::Prompt(inner) => (prompt_kind(inner), None, None),
        Error::Backend(inner) => (variant(inner), None, None),
        Error::Eval(ev) => eval(ev),
        Error::Metrics(inner) => (variant(inner), None, None),
        Error::Records(inner) => (variant(inner), None, None),
        Error::Report(ReportError::Eval(ev)) => eval(ev),
        Error::Report(ReportError::Metrics(inner)) => (variant(inner), None, None),
        Error::Report(inner) => (variant(inner), None, None),
        Error::Io { .. } => ("Io".into(), None, None),
    }
}

impl Failure {
    pub fn from_error(err: &CliError) -> Self {
        let (kind, instance_id, config) = match err {
            CliError::Core(e) => core_kind(e),
            other => (variant(other), None, None),
        };
        Failure {
            kind,
            message: err.to_string(),
            instance_id,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}
