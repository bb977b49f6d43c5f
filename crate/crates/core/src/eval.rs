//! Classification metrics with the malicious class as positive, optional
//! per-year slot breakdown, and the trapezoidal area-under-time aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("area under time needs at least 2 slots, got {0}")]
    TooFewSlots(usize),
}

/// Counts plus derived metrics; ratios with a zero denominator are absent
/// rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_slot: Option<Vec<SlotReport>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aut: Option<AutReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: u16,
    pub report: EvalReport,
}

/// Area under time per metric; a value is present only when the metric is
/// defined in every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics over (true label, predicted label) pairs.
pub fn evaluate(outcomes: &[(Label, Label)]) -> EvalReport {
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (truth, pred) in outcomes {
        match (truth, pred) {
            (Label::Malicious, Label::Malicious) => tp += 1,
            (Label::Benign, Label::Malicious) => fp += 1,
            (Label::Benign, Label::Benign) => tn += 1,
            (Label::Malicious, Label::Benign) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    EvalReport {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        accuracy: ratio(tp + tn, outcomes.len()),
        f1,
        per_slot: None,
        aut: None,
    }
}

/// Metrics over (year, true label, predicted label) triples: the overall
/// report plus one report per year slot in chronological order, and AUT
/// values whenever at least two slots exist.
pub fn evaluate_slotted(outcomes: &[(u16, Label, Label)]) -> EvalReport {
    let flat: Vec<(Label, Label)> = outcomes.iter().map(|&(_, t, p)| (t, p)).collect();
    let mut report = evaluate(&flat);
    let mut by_year: BTreeMap<u16, Vec<(Label, Label)>> = BTreeMap::new();
    for &(year, t, p) in outcomes {
        by_year.entry(year).or_default().push((t, p));
    }
    let slots: Vec<SlotReport> = by_year
        .into_iter()
        .map(|(slot, pairs)| SlotReport {
            slot,
            report: evaluate(&pairs),
        })
        .collect();
    if slots.len() >= 2 {
        let over = |get: fn(&EvalReport) -> Option<f64>| -> Option<f64> {
            let values: Option<Vec<f64>> = slots.iter().map(|s| get(&s.report)).collect();
            values.map(|v| aut(&v).expect("two or more slots"))
        };
        report.aut = Some(AutReport {
            precision: over(|r| r.precision),
            recall: over(|r| r.recall),
            accuracy: over(|r| r.accuracy),
            f1: over(|r| r.f1),
        });
    }
    report.per_slot = Some(slots);
    report
}

/// Trapezoidal mean of a metric across chronological slots:
/// `1/(N-1) * sum((f(k+1) + f(k)) / 2)`.
pub fn aut(values: &[f64]) -> Result<f64, EvalError> {
    let n = values.len();
    if n < 2 {
        return Err(EvalError::TooFewSlots(n));
    }
    // running mean of the trapezoid midpoints: the increment vanishes
    // exactly for a constant metric
    let mut mean = 0.0;
    for (i, w) in values.windows(2).enumerate() {
        let t = (w[0] + w[1]) / 2.0;
        mean += (t - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Benign as B, Malicious as M};

    fn outcomes(tp: usize, fp: usize, fn_: usize, tn: usize) -> Vec<(Label, Label)> {
        let mut v = Vec::new();
        v.extend(std::iter::repeat_n((M, M), tp));
        v.extend(std::iter::repeat_n((B, M), fp));
        v.extend(std::iter::repeat_n((M, B), fn_));
        v.extend(std::iter::repeat_n((B, B), tn));
        v
    }

    #[test]
    fn hand_computed_counts_and_metrics() {
        let r = evaluate(&outcomes(3, 1, 1, 5));
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (3, 1, 1, 5));
        assert_eq!(r.precision, Some(0.75));
        assert_eq!(r.recall, Some(0.75));
        assert_eq!(r.accuracy, Some(0.8));
        assert_eq!(r.f1, Some(0.75));
    }

    #[test]
    fn all_correct_is_perfect() {
        let r = evaluate(&outcomes(4, 0, 0, 6));
        assert_eq!(r.accuracy, Some(1.0));
        assert_eq!(r.f1, Some(1.0));
    }

    #[test]
    fn no_predicted_positives_leaves_precision_absent() {
        let r = evaluate(&outcomes(0, 0, 1, 1));
        assert_eq!(r.precision, None);
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.f1, None);
    }

    #[test]
    fn counts_sum_to_sample_count() {
        for (a, b, c, d) in [(3, 1, 1, 5), (0, 0, 2, 2), (7, 0, 0, 0)] {
            let r = evaluate(&outcomes(a, b, c, d));
            assert_eq!(r.tp + r.fp + r.fn_ + r.tn, a + b + c + d);
        }
    }

    #[test]
    fn aut_hand_values_are_exact() {
        assert!((aut(&[1.0, 0.5]).unwrap() - 0.75).abs() < 1e-12);
        assert!((aut(&[0.9, 0.8, 1.0]).unwrap() - 0.875).abs() < 1e-12);
    }

    #[test]
    fn aut_of_a_constant_is_the_constant() {
        for n in 2..=12 {
            let v = vec![0.37; n];
            assert_eq!(aut(&v).unwrap(), 0.37);
        }
    }

    #[test]
    fn aut_needs_two_slots() {
        assert!(matches!(aut(&[0.5]), Err(EvalError::TooFewSlots(1))));
        assert!(matches!(aut(&[]), Err(EvalError::TooFewSlots(0))));
    }

    #[test]
    fn slotted_report_orders_years_and_adds_aut() {
        let rows = vec![
            (2020, M, M),
            (2019, M, M),
            (2019, B, B),
            (2020, M, B),
            (2020, B, B),
        ];
        let r = evaluate_slotted(&rows);
        let slots = r.per_slot.as_ref().unwrap();
        assert_eq!(slots.len(), 2);
        assert_eq!(slots[0].slot, 2019);
        assert_eq!(slots[1].slot, 2020);
        assert_eq!(slots[0].report.accuracy, Some(1.0));
        let aut = r.aut.as_ref().unwrap();
        let acc_2020 = slots[1].report.accuracy.unwrap();
        assert!((aut.accuracy.unwrap() - (1.0 + acc_2020) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_year_omits_aut() {
        let rows = vec![(2021, M, M), (2021, B, B)];
        let r = evaluate_slotted(&rows);
        assert!(r.aut.is_none());
        assert_eq!(r.per_slot.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn undefined_slot_metric_drops_that_aut_entry() {
        // the 2019 slot has no actual positives, so recall is absent there
        let rows = vec![(2019, B, B), (2019, B, B), (2020, M, M), (2020, B, B)];
        let r = evaluate_slotted(&rows);
        let aut = r.aut.as_ref().unwrap();
        assert!(aut.recall.is_none());
        assert!(aut.accuracy.is_some());
    }

    #[test]
    fn report_serializes_to_json_and_back() {
        let r = evaluate_slotted(&[(2019, M, M), (2020, B, M)]);
        let json = serde_json::to_string_pretty(&r).unwrap();
        assert!(json.contains("\"fn\""));
        assert!(json.contains("per_slot"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
