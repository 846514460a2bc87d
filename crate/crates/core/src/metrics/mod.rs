//! Classification metrics, vote-fraction AUC, and stability statistics.
//!
//! The positive class is `cross`. Metrics with a zero denominator are `None`.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::protocol::PredictionRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no evaluated records")]
    EmptyRecordSet,
    #[error("{scores} scores but {truths} labels")]
    LengthMismatch { scores: usize, truths: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = Self::default();
        for (predicted, truth) in pairs {
            cm.add(predicted, truth);
        }
        cm
    }

    pub fn add(&mut self, predicted: Label, truth: Label) {
        match (predicted.is_cross(), truth.is_cross()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `None` when precision or recall is undefined, or both are zero.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Evaluated instances (EvaluationFailed records excluded).
    pub n: usize,
    pub parse_failure_rate: f64,
    pub unanimity_rate: f64,
    /// Records excluded because every repeat was malformed.
    pub evaluation_failures: usize,
}

/// Confusion counts and ACC/P/R/F1 over the evaluated records. `auc` and the
/// stability fields are left at their defaults.
pub fn classification_metrics(records: &[PredictionRecord]) -> Result<(ConfusionMatrix, EvalMetrics), MetricsError> {
    let cm = ConfusionMatrix::from_pairs(
        records
            .iter()
            .filter_map(|r| r.aggregated.map(|a| (a, r.ground_truth))),
    );
    if cm.total() == 0 {
        return Err(MetricsError::EmptyRecordSet);
    }
    Ok((cm, from_confusion(&cm)))
}

fn from_confusion(cm: &ConfusionMatrix) -> EvalMetrics {
    EvalMetrics {
        acc: cm.accuracy(),
        f1: cm.f1(),
        precision: cm.precision(),
        recall: cm.recall(),
        n: cm.total(),
        ..EvalMetrics::default()
    }
}

/// Mann-Whitney AUC with half credit for ties, computed from average ranks.
/// `None` when either class is absent.
pub fn auc_score(scores: &[f64], truths: &[Label]) -> Result<Option<f64>, MetricsError> {
    if scores.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            truths: truths.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let n_pos = truths.iter().filter(|t| t.is_cross()).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based average ranks of the positives, doubled to stay integral
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank2 = (i + 1 + j + 1) as u128;
        let positives = order[i..=j].iter().filter(|&&k| truths[k].is_cross()).count() as u128;
        pos_rank_sum2 += avg_rank2 * positives;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(Some(u2 as f64 / (2 * p * q) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub unanimity_rate: f64,
    pub parse_failure_rate: f64,
}

/// Over all records, including failed ones.
pub fn stability_summary(records: &[PredictionRecord]) -> Result<StabilitySummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let unanimous = records.iter().filter(|r| r.unanimous).count();
    let repeats: usize = records.iter().map(|r| r.repeats.len()).sum();
    let malformed: usize = records.iter().map(|r| r.malformed_repeats()).sum();
    Ok(StabilitySummary {
        unanimity_rate: unanimous as f64 / records.len() as f64,
        parse_failure_rate: if repeats == 0 { 0.0 } else { malformed as f64 / repeats as f64 },
    })
}

/// All metrics for one configuration's records.
pub fn evaluate_records(records: &[PredictionRecord]) -> Result<(ConfusionMatrix, EvalMetrics), MetricsError> {
    let (cm, mut m) = classification_metrics(records)?;
    let (scores, truths): (Vec<f64>, Vec<Label>) = records
        .iter()
        .filter_map(|r| r.score.map(|s| (s, r.ground_truth)))
        .unzip();
    m.auc = auc_score(&scores, &truths)?;
    let s = stability_summary(records)?;
    m.unanimity_rate = s.unanimity_rate;
    m.parse_failure_rate = s.parse_failure_rate;
    m.evaluation_failures = records.iter().filter(|r| !r.is_evaluated()).count();
    Ok((cm, m))
}

/// Metrics of a single repeat taken alone: its parsed label is the
/// prediction and the 0/1 vote is the score. Records whose repeat
/// `index` did not parse are left out.
pub fn repeat_metrics(records: &[PredictionRecord], index: u32) -> Result<EvalMetrics, MetricsError> {
    let votes: Vec<(Label, Label)> = records
        .iter()
        .filter_map(|r| {
            let rep = r.repeats.iter().find(|x| x.repeat_index == index)?;
            rep.label.map(|l| (l, r.ground_truth))
        })
        .collect();
    let cm = ConfusionMatrix::from_pairs(votes.iter().copied());
    if cm.total() == 0 {
        return Err(MetricsError::EmptyRecordSet);
    }
    let mut m = from_confusion(&cm);
    let scores: Vec<f64> = votes.iter().map(|(p, _)| if p.is_cross() { 1.0 } else { 0.0 }).collect();
    let truths: Vec<Label> = votes.iter().map(|(_, t)| *t).collect();
    m.auc = auc_score(&scores, &truths)?;
    let attempted = records
        .iter()
        .filter(|r| r.repeats.iter().any(|x| x.repeat_index == index))
        .count();
    m.parse_failure_rate = (attempted - votes.len()) as f64 / attempted as f64;
    m.unanimity_rate = 1.0;
    Ok(m)
}

/// Half-up rounding to `places` decimals. The epsilon absorbs binary
/// representation error so that 0.725 displays as 0.73.
pub fn round_half_up(x: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    ((x * scale) + 0.5 + 1e-9).floor() / scale
}

/// Two-decimal display; `--` for undefined values.
pub fn display2(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.2}", round_half_up(v, 2)),
        None => "--".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RawResponse;
    use crate::prompt::ModalityConfig;
    use crate::protocol::{ProtocolConfig, RepeatOutcome};
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use Label::{Cross as C, NotCross as N};

    fn cm(tp: usize, fp: usize, fn_: usize, tn: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    fn close(a: Option<f64>, b: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() < 5e-5)
    }

    #[test]
    fn formula_examples() {
        let m = from_confusion(&cm(5, 0, 0, 5));
        assert_eq!((m.acc, m.precision, m.recall, m.f1), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));

        let m = from_confusion(&cm(24, 1, 11, 68));
        assert!(close(m.precision, 0.9600));
        assert!(close(m.recall, 0.6857));
        assert!(close(m.f1, 0.8000));
        assert!(close(m.acc, 0.8846));

        let m = from_confusion(&cm(0, 0, 3, 7));
        assert_eq!((m.precision, m.recall, m.f1), (None, Some(0.0), None));
        assert!(close(m.acc, 0.7));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_score(&[0.9, 0.8, 0.1], &[C, C, N]).unwrap(), Some(1.0));
        assert_eq!(auc_score(&[0.4; 6], &[C, N, C, N, N, C]).unwrap(), Some(0.5));
        assert_eq!(auc_score(&[0.6, 0.6, 0.2, 0.1], &[C, N, C, N]).unwrap(), Some(0.625));
        assert_eq!(auc_score(&[0.6, 0.2], &[C, C]).unwrap(), None);
        assert!(matches!(auc_score(&[0.1], &[C, N]), Err(MetricsError::LengthMismatch { .. })));
    }

    /// Reference definition: every (positive, negative) pair, 1 / 0.5 / 0.
    fn pairwise_auc(scores: &[f64], truths: &[Label]) -> Option<f64> {
        let mut credit = 0.0;
        let mut pairs = 0usize;
        for (i, ti) in truths.iter().enumerate() {
            for (j, tj) in truths.iter().enumerate() {
                if ti.is_cross() && !tj.is_cross() {
                    pairs += 1;
                    credit += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        (pairs > 0).then(|| credit / pairs as f64)
    }

    fn record(truth: Label, votes: &[Option<Label>]) -> PredictionRecord {
        let pcfg = ProtocolConfig::default();
        let repeats = votes
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let text = match v {
                    Some(C) => r#"{"intention": "cross"}"#,
                    Some(N) => r#"{"intention": "not_cross"}"#,
                    None => "??",
                };
                RepeatOutcome::from_response(i as u32, RawResponse::ok(text), pcfg.parse_mode)
            })
            .collect();
        PredictionRecord::from_repeats("i", ModalityConfig::ALL[0], truth, "p", "m", repeats, &pcfg).unwrap()
    }

    fn random_records(rng: &mut impl Rng, n: usize) -> Vec<PredictionRecord> {
        (0..n)
            .map(|_| {
                let truth = if rng.gen_bool(0.5) { C } else { N };
                let votes: Vec<Option<Label>> = (0..5)
                    .map(|_| match rng.gen_range(0..10) {
                        0 => None,
                        k if k < 6 => Some(C),
                        _ => Some(N),
                    })
                    .collect();
                record(truth, &votes)
            })
            .collect()
    }

    #[test]
    fn brute_force_and_pairwise_oracles() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=120);
            let recs = random_records(&mut rng, n);
            let evaluated: Vec<_> = recs.iter().filter(|r| r.aggregated.is_some()).collect();
            let Ok((cm, m)) = classification_metrics(&recs) else {
                assert!(evaluated.is_empty());
                continue;
            };
            let count = |p: Label, t: Label| evaluated.iter().filter(|r| r.aggregated == Some(p) && r.ground_truth == t).count();
            assert_eq!(cm, ConfusionMatrix { tp: count(C, C), fp: count(C, N), fn_: count(N, C), tn: count(N, N) });
            assert_eq!(m.n, evaluated.len());
            let scores: Vec<f64> = evaluated.iter().map(|r| r.score.unwrap()).collect();
            let truths: Vec<Label> = evaluated.iter().map(|r| r.ground_truth).collect();
            let fast = auc_score(&scores, &truths).unwrap();
            match (fast, pairwise_auc(&scores, &truths)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn stability_examples() {
        let mut recs: Vec<_> = (0..7).map(|_| record(C, &[Some(C); 5])).collect();
        recs.extend((0..3).map(|_| record(C, &[Some(C), Some(N), Some(C), Some(C), Some(C)])));
        let s = stability_summary(&recs).unwrap();
        assert_eq!(s.unanimity_rate, 0.7);
        assert_eq!(s.parse_failure_rate, 0.0);

        let mut recs: Vec<_> = (0..10).map(|_| record(C, &[Some(C); 5])).collect();
        recs[3] = record(C, &[Some(C), None, Some(C), Some(C), Some(C)]);
        recs[8] = record(N, &[None, Some(N), Some(N), Some(N), Some(N)]);
        assert_eq!(stability_summary(&recs).unwrap().parse_failure_rate, 0.04);
        assert_eq!(stability_summary(&[]), Err(MetricsError::EmptyRecordSet));
    }

    #[test]
    fn failed_records_are_excluded_and_counted() {
        let recs = vec![record(C, &[Some(C); 5]), record(N, &[None; 5]), record(N, &[Some(N); 5])];
        let (cm, m) = evaluate_records(&recs).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(m.evaluation_failures, 1);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.parse_failure_rate, 5.0 / 15.0);
        assert_eq!(classification_metrics(&[record(N, &[None; 5])]).unwrap_err(), MetricsError::EmptyRecordSet);
    }

    #[test]
    fn per_repeat_metrics() {
        let recs = vec![
            record(C, &[Some(C), Some(N), Some(C), Some(C), Some(C)]),
            record(N, &[Some(N), Some(C), None, Some(N), Some(N)]),
        ];
        let r0 = repeat_metrics(&recs, 0).unwrap();
        assert_eq!((r0.acc, r0.auc), (Some(1.0), Some(1.0)));
        let r1 = repeat_metrics(&recs, 1).unwrap();
        assert_eq!((r1.acc, r1.auc), (Some(0.0), Some(0.0)));
        let r2 = repeat_metrics(&recs, 2).unwrap();
        assert_eq!((r2.n, r2.parse_failure_rate, r2.auc), (1, 0.5, None));
    }

    #[test]
    fn half_up_display() {
        assert_eq!(display2(Some(0.725)), "0.73");
        assert_eq!(display2(Some(0.7738496071829405)), "0.77");
        assert_eq!(display2(Some(0.685)), "0.69");
        assert_eq!(display2(Some(0.6849)), "0.68");
        assert_eq!(display2(Some(1.0)), "1.00");
        assert_eq!(display2(Some(0.0)), "0.00");
        assert_eq!(display2(None), "--");
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in any::<u64>(), n in 1usize..80) {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let recs = random_records(&mut rng, n);
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(evaluate_records(&recs), evaluate_records(&shuffled));
        }

        #[test]
        fn label_swap_symmetry(raw in prop::collection::vec((any::<bool>(), any::<bool>()), 2..60), perm_seed in any::<u64>()) {
            // distinct scores so the tie-free identity holds
            let mut rng = rand::rngs::StdRng::seed_from_u64(perm_seed);
            let mut ranks: Vec<usize> = (0..raw.len()).collect();
            ranks.shuffle(&mut rng);
            let scores: Vec<f64> = ranks.iter().map(|&r| r as f64 / raw.len() as f64).collect();
            let truths: Vec<Label> = raw.iter().map(|&(t, _)| if t { C } else { N }).collect();
            let flip = |l: Label| if l.is_cross() { N } else { C };
            let swapped_truths: Vec<Label> = truths.iter().map(|&l| flip(l)).collect();
            let swapped_scores: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            if let Some(a) = auc_score(&scores, &truths).unwrap() {
                // same ranking, opposite class convention
                let b = auc_score(&scores, &swapped_truths).unwrap().unwrap();
                prop_assert!((a + b - 1.0).abs() < 1e-12);
                let c = auc_score(&swapped_scores, &swapped_truths).unwrap().unwrap();
                prop_assert!((a - c).abs() < 1e-12);
            }
            // P/R swap: predicted cross in one convention is predicted not_cross in the other
            let preds: Vec<Label> = raw.iter().map(|&(_, p)| if p { C } else { N }).collect();
            let a = ConfusionMatrix::from_pairs(preds.iter().copied().zip(truths.iter().copied()));
            let b = ConfusionMatrix::from_pairs(preds.iter().map(|&l| flip(l)).zip(swapped_truths.iter().copied()));
            prop_assert_eq!((a.tp, a.fp, a.fn_, a.tn), (b.tn, b.fn_, b.fp, b.tp));
        }
    }
}
