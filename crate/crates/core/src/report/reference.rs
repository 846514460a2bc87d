//! Published reference results, transcribed by hand and never recomputed.
//! Edits are caught by the checksum test below.

use serde::Serialize;

use crate::prompt::ModalityConfig;

/// Input modalities of a reference model: image, box coordinates, pose,
/// vehicle speed, video clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InputFlags {
    pub i: bool,
    pub b: bool,
    pub p: bool,
    pub s: bool,
    pub v: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceMetrics {
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub year: u16,
    pub variant: &'static str,
    pub inputs: InputFlags,
    pub extra: Option<&'static str>,
    pub metrics: ReferenceMetrics,
}

const fn flags(i: bool, b: bool, p: bool, s: bool, v: bool) -> InputFlags {
    InputFlags { i, b, p, s, v }
}

const fn m(acc: f64, auc: f64, f1: f64, precision: Option<f64>, recall: Option<f64>) -> ReferenceMetrics {
    ReferenceMetrics {
        acc: Some(acc),
        auc: Some(auc),
        f1: Some(f1),
        precision,
        recall,
    }
}

const IBPS: InputFlags = flags(true, true, true, true, false);

/// JAAD-beh comparison, 16 observed frames, 30-frame horizon.
pub const REFERENCE_ROWS: [ReferenceRow; 13] = [
    ReferenceRow { model: "MultiRNN", year: 2018, variant: "GRU", inputs: IBPS, extra: None, metrics: m(0.61, 0.50, 0.74, Some(0.64), Some(0.86)) },
    ReferenceRow { model: "SFRNN", year: 2020, variant: "GRU", inputs: IBPS, extra: None, metrics: m(0.51, 0.45, 0.63, Some(0.61), Some(0.64)) },
    ReferenceRow { model: "SingleRNN", year: 2020, variant: "GRU", inputs: IBPS, extra: None, metrics: m(0.58, 0.54, 0.67, Some(0.67), Some(0.68)) },
    ReferenceRow { model: "PCPA", year: 2021, variant: "RNN+Attention", inputs: IBPS, extra: None, metrics: m(0.58, 0.50, 0.71, None, None) },
    ReferenceRow { model: "IntFormer", year: 2022, variant: "Transformer", inputs: IBPS, extra: None, metrics: m(0.59, 0.54, 0.69, None, None) },
    ReferenceRow { model: "ST CrossingPose", year: 2022, variant: "Graph CNN", inputs: flags(true, true, true, false, false), extra: None, metrics: m(0.63, 0.56, 0.74, Some(0.66), Some(0.83)) },
    ReferenceRow { model: "FFSTP", year: 2022, variant: "GRU+Attention", inputs: IBPS, extra: None, metrics: m(0.62, 0.54, 0.74, Some(0.65), Some(0.85)) },
    ReferenceRow { model: "Pedestrian Graph+", year: 2022, variant: "Graph CNN+Attention", inputs: IBPS, extra: None, metrics: m(0.70, 0.70, 0.76, Some(0.77), Some(0.75)) },
    ReferenceRow { model: "PIT-Block(a)", year: 2022, variant: "Transformer", inputs: IBPS, extra: None, metrics: m(0.70, 0.65, 0.81, Some(0.71), Some(0.93)) },
    ReferenceRow { model: "GPT4V-PBP", year: 2023, variant: "MLLM", inputs: flags(true, true, false, false, false), extra: Some("Text"), metrics: m(0.57, 0.61, 0.65, Some(0.82), Some(0.54)) },
    ReferenceRow { model: "GPT4V-PBP Skip", year: 2023, variant: "MLLM", inputs: flags(true, true, false, false, false), extra: Some("Text"), metrics: m(0.55, 0.59, 0.64, Some(0.81), Some(0.53)) },
    ReferenceRow { model: "OmniPredict", year: 2024, variant: "MLLM", inputs: flags(true, true, false, true, false), extra: Some("Text"), metrics: m(0.67, 0.65, 0.65, Some(0.66), Some(0.65)) },
    ReferenceRow { model: "BF-PIP", year: 2025, variant: "MLLM", inputs: flags(false, true, false, true, true), extra: Some("Text"), metrics: m(0.73, 0.77, 0.80, Some(0.96), Some(0.69)) },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceAblationRow {
    pub config: ModalityConfig,
    pub metrics: ReferenceMetrics,
}

const fn a(config: ModalityConfig, acc: f64, auc: f64, f1: f64, p: f64, r: f64) -> ReferenceAblationRow {
    ReferenceAblationRow {
        config,
        metrics: m(acc, auc, f1, Some(p), Some(r)),
    }
}

/// Published input-modality ablation of the BF-PIP model, in table order.
pub const REFERENCE_ABLATION: [ReferenceAblationRow; 8] = [
    a(ModalityConfig::ALL[0], 0.65, 0.62, 0.74, 0.96, 0.60),
    a(ModalityConfig::ALL[1], 0.70, 0.74, 0.78, 0.97, 0.65),
    a(ModalityConfig::ALL[2], 0.60, 0.58, 0.68, 0.96, 0.53),
    a(ModalityConfig::ALL[3], 0.66, 0.61, 0.74, 0.97, 0.60),
    a(ModalityConfig::ALL[4], 0.64, 0.61, 0.73, 0.95, 0.59),
    a(ModalityConfig::ALL[5], 0.73, 0.76, 0.80, 0.96, 0.69),
    a(ModalityConfig::ALL[6], 0.63, 0.59, 0.72, 0.97, 0.57),
    a(ModalityConfig::ALL[7], 0.68, 0.64, 0.77, 0.97, 0.63),
];

pub fn reference_rows() -> Vec<ReferenceRow> {
    REFERENCE_ROWS.to_vec()
}
