//! Classification metrics for inference and latent labels.
//!
//! Predictions are `true`, `false` or `invalid` (no parseable structured
//! output). An invalid prediction is wrong for recall of its gold class and
//! never enters a precision numerator or denominator.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedsim::csv_field;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predicted {
    True,
    False,
    Invalid,
}

impl From<Option<bool>> for Predicted {
    fn from(label: Option<bool>) -> Self {
        match label {
            Some(true) => Predicted::True,
            Some(false) => Predicted::False,
            None => Predicted::Invalid,
        }
    }
}

impl From<bool> for Predicted {
    fn from(label: bool) -> Self {
        Predicted::from(Some(label))
    }
}

impl Predicted {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Predicted::True => Some(true),
            Predicted::False => Some(false),
            Predicted::Invalid => None,
        }
    }

    fn column(self) -> usize {
        match self {
            Predicted::True => 0,
            Predicted::False => 1,
            Predicted::Invalid => 2,
        }
    }

    /// Score used when no model score exists.
    pub fn hard_score(self) -> f64 {
        match self {
            Predicted::True => 1.0,
            Predicted::False => 0.0,
            Predicted::Invalid => 0.5,
        }
    }
}

impl fmt::Display for Predicted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predicted::True => "true",
            Predicted::False => "false",
            Predicted::Invalid => "invalid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub claim_id: String,
    pub gold: bool,
    pub predicted: Predicted,
    /// Higher means more likely true.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Most frequent valid label across layers. A true/false tie goes to the
/// label of the deepest layer holding either; invalid only when no layer is
/// valid.
pub fn majority_label(layer_labels: &BTreeMap<u32, Predicted>) -> Predicted {
    let count = |p| layer_labels.values().filter(|&&v| v == p).count();
    let (t, f) = (count(Predicted::True), count(Predicted::False));
    match t.cmp(&f) {
        std::cmp::Ordering::Greater => Predicted::True,
        std::cmp::Ordering::Less => Predicted::False,
        std::cmp::Ordering::Equal => layer_labels
            .values()
            .rev()
            .copied()
            .find(|&p| p != Predicted::Invalid)
            .unwrap_or(Predicted::Invalid),
    }
}

/// Fraction of layers whose label equals the inference label.
pub fn self_consistency(layer_labels: &BTreeMap<u32, Predicted>, inference: bool) -> Result<f64, MetricsError> {
    if layer_labels.is_empty() {
        return Err(MetricsError::Argument("self-consistency needs at least one layer".into()));
    }
    let target = Predicted::from(inference);
    let matches = layer_labels.values().filter(|&&p| p == target).count();
    Ok(matches as f64 / layer_labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.1}", self.mean, self.std)
    }
}

/// Self-consistency grouped by the inference label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistencySummary {
    pub when_true: Option<MeanStd>,
    pub when_false: Option<MeanStd>,
}

/// `(inference label, per-layer labels)` per claim. Claims with an invalid
/// inference or no layers are skipped.
pub fn self_consistency_summary<'a>(
    claims: impl IntoIterator<Item = (Predicted, &'a BTreeMap<u32, Predicted>)>,
) -> SelfConsistencySummary {
    let mut by: BTreeMap<bool, Vec<f64>> = BTreeMap::new();
    for (inference, layers) in claims {
        let Some(label) = inference.as_bool() else { continue };
        if let Ok(sc) = self_consistency(layers, label) {
            by.entry(label).or_default().push(sc);
        }
    }
    SelfConsistencySummary {
        when_true: by.get(&true).and_then(|v| MeanStd::of(v)),
        when_false: by.get(&false).and_then(|v| MeanStd::of(v)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// Rows gold true/false, columns predicted true/false/invalid.
    pub confusion: [[usize; 3]; 2],
    pub true_class: ClassMetrics,
    pub false_class: ClassMetrics,
    /// Support-weighted averages.
    pub weighted: ClassMetrics,
    pub accuracy: f64,
    /// Absent when only one gold class is present.
    pub roc_auc: Option<f64>,
    /// Scores were derived from hard labels.
    pub auc_from_hard_labels: bool,
    /// Some invalid predictions were scored 0.5.
    pub auc_scored_invalid: bool,
    pub valid_output_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_consistency: Option<SelfConsistencySummary>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Midrank ROC AUC with gold `true` as the positive class. `None` when one
/// class is missing.
pub fn roc_auc(gold: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(gold.len(), scores.len());
    let n_pos = gold.iter().filter(|&&g| g).count();
    let n_neg = gold.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&k| gold[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn compute_report(predictions: &[LabeledPrediction]) -> Result<EvalReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::Argument("no predictions to evaluate".into()));
    }
    let n = predictions.len();
    let mut confusion = [[0usize; 3]; 2];
    for p in predictions {
        confusion[usize::from(!p.gold)][p.predicted.column()] += 1;
    }
    let class = |row: usize| {
        let support = confusion[row].iter().sum();
        let predicted = confusion[0][row] + confusion[1][row];
        let precision = ratio(confusion[row][row], predicted);
        let recall = ratio(confusion[row][row], support);
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        }
    };
    let (t, f) = (class(0), class(1));
    let w = |get: fn(&ClassMetrics) -> f64| (get(&t) * t.support as f64 + get(&f) * f.support as f64) / n as f64;
    let weighted = ClassMetrics {
        precision: w(|c| c.precision),
        recall: w(|c| c.recall),
        f1: w(|c| c.f1),
        support: n,
    };

    let auc_from_hard_labels = predictions.iter().any(|p| p.score.is_none());
    let auc_scored_invalid = predictions
        .iter()
        .any(|p| p.score.is_none() && p.predicted == Predicted::Invalid);
    if auc_scored_invalid {
        log::warn!("invalid predictions scored 0.5 for ROC AUC");
    }
    let scores: Vec<f64> = predictions
        .iter()
        .map(|p| p.score.unwrap_or_else(|| p.predicted.hard_score()))
        .collect();
    let gold: Vec<bool> = predictions.iter().map(|p| p.gold).collect();
    let invalid = confusion[0][2] + confusion[1][2];

    Ok(EvalReport {
        n,
        confusion,
        true_class: t,
        false_class: f,
        weighted,
        accuracy: ratio(confusion[0][0] + confusion[1][1], n),
        roc_auc: roc_auc(&gold, &scores),
        auc_from_hard_labels,
        auc_scored_invalid,
        valid_output_rate: ratio(n - invalid, n),
        self_consistency: None,
    })
}

pub const REPORT_CSV_HEADER: &str = "name,n,precision_true,precision_false,precision_avg,recall_true,recall_false,recall_avg,f1_true,f1_false,f1_avg,roc_auc,accuracy,valid_output_rate,self_consistency_true_mean,self_consistency_true_std,self_consistency_false_mean,self_consistency_false_std";

/// One CSV row per named report.
pub fn report_csv(reports: &[(String, EvalReport)]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for (name, r) in reports {
        let sc = r.self_consistency.clone().unwrap_or_default();
        let ms = |m: Option<MeanStd>| m.map(|m| format!("{},{}", m.mean, m.std)).unwrap_or_else(|| ",".into());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(name),
            r.n,
            r.true_class.precision,
            r.false_class.precision,
            r.weighted.precision,
            r.true_class.recall,
            r.false_class.recall,
            r.weighted.recall,
            r.true_class.f1,
            r.false_class.f1,
            r.weighted.f1,
            r.roc_auc.map(|a| a.to_string()).unwrap_or_default(),
            r.accuracy,
            r.valid_output_rate,
            ms(sc.when_true),
            ms(sc.when_false),
        );
    }
    out
}

/// Fixed-width table with columns precision, recall and F1 (true, false,
/// avg), ROC AUC, accuracy and self-consistency (true*, false*).
pub fn table_text(reports: &[(String, EvalReport)]) -> String {
    let name_w = reports.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$} | {:^20} | {:^20} | {:^20} | {:>7} | {:>8} | {:^26}",
        "", "PRECISION", "RECALL", "F1", "ROC AUC", "ACCURACY", "SELF-CONSISTENCY"
    );
    let _ = writeln!(
        out,
        "{:<name_w$} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>7} | {:>8} | {:>12} {:>13}",
        "DATASET", "TRUE", "FALSE", "AVG", "TRUE", "FALSE", "AVG", "TRUE", "FALSE", "AVG", "", "", "TRUE*", "FALSE*"
    );
    for (name, r) in reports {
        let sc = r.self_consistency.clone().unwrap_or_default();
        let ms = |m: Option<MeanStd>| m.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
        let auc = r.roc_auc.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<name_w$} | {:>6.3} {:>6.3} {:>6.3} | {:>6.3} {:>6.3} {:>6.3} | {:>6.3} {:>6.3} {:>6.3} | {:>7} | {:>8.3} | {:>12} {:>13}",
            name,
            r.true_class.precision,
            r.false_class.precision,
            r.weighted.precision,
            r.true_class.recall,
            r.false_class.recall,
            r.weighted.recall,
            r.true_class.f1,
            r.false_class.f1,
            r.weighted.f1,
            auc,
            r.accuracy,
            ms(sc.when_true),
            ms(sc.when_false),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Predicted::{False as F, Invalid as I, True as T};

    fn layers(labels: &[Predicted]) -> BTreeMap<u32, Predicted> {
        labels.iter().enumerate().map(|(i, &p)| (i as u32 + 1, p)).collect()
    }

    fn pred(gold: bool, predicted: Predicted) -> LabeledPrediction {
        LabeledPrediction {
            claim_id: String::new(),
            gold,
            predicted,
            score: None,
        }
    }

    #[test]
    fn majority() {
        assert_eq!(majority_label(&layers(&[T, T, F])), T);
        assert_eq!(majority_label(&layers(&[I, I])), I);
        assert_eq!(majority_label(&layers(&[T, F])), F);
        assert_eq!(majority_label(&layers(&[F, T, I])), T);
        assert_eq!(majority_label(&layers(&[])), I);
    }

    #[test]
    fn consistency() {
        assert_eq!(self_consistency(&layers(&[T, T, F, T]), true).unwrap(), 0.75);
        assert_eq!(self_consistency(&layers(&[F, I]), false).unwrap(), 0.5);
        assert!(self_consistency(&layers(&[]), true).is_err());
        let a = layers(&[T, T, F, T]);
        let b = layers(&[T, F]);
        let c = layers(&[F, F]);
        let s = self_consistency_summary([(T, &a), (T, &b), (F, &c), (I, &c)]);
        let t = s.when_true.unwrap();
        assert!((t.mean - 0.625).abs() < 1e-15 && (t.std - 0.125).abs() < 1e-15 && t.count == 2);
        assert_eq!(s.when_false.unwrap().mean, 1.0);
    }

    #[test]
    fn invalid_handling() {
        let preds = [pred(true, T), pred(true, I), pred(false, F), pred(false, T), pred(false, I)];
        let r = compute_report(&preds).unwrap();
        assert_eq!(r.confusion, [[1, 0, 1], [1, 1, 1]]);
        assert_eq!(r.true_class.precision, 0.5);
        assert_eq!(r.true_class.recall, 0.5);
        assert_eq!(r.false_class.precision, 1.0);
        assert!((r.false_class.recall - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.4);
        assert_eq!(r.valid_output_rate, 0.6);
        assert!(r.auc_scored_invalid);
    }

    #[test]
    fn separating_scores_and_single_class() {
        let mut preds = vec![pred(true, T), pred(false, F)];
        preds[0].score = Some(0.9);
        preds[1].score = Some(0.1);
        assert_eq!(compute_report(&preds).unwrap().roc_auc, Some(1.0));
        assert_eq!(compute_report(&[pred(true, T)]).unwrap().roc_auc, None);
        assert!(compute_report(&[]).is_err());
    }

    #[test]
    fn table_has_every_row() {
        let r = compute_report(&[pred(true, T), pred(false, T)]).unwrap();
        let text = table_text(&[("inference".into(), r.clone()), ("latent".into(), r.clone())]);
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("SELF-CONSISTENCY"));
        let csv = report_csv(&[("x".into(), r)]);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), REPORT_CSV_HEADER.split(',').count());
    }
}
