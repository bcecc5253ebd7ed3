//! Classification metrics, ROC analysis and the filter policy comparison.
//!
//! High workload is the positive class throughout.

use std::fmt::Write as _;

use thiserror::Error;

use crate::filter::{init_filter, run_filter, ContextPolicy, FilterError};
use crate::labeling::{expand_labels, label_prompts, LabelWindow, Workload};
use crate::likelihood::LikelihoodSet;
use crate::stream::Journey;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("truth and predictions differ in length ({truth} vs {pred})")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("both classes must be present in the truth labels")]
    SingleClass,
    #[error("need at least two policies to compare")]
    TooFewPolicies,
    #[error("journey {0} has no matching likelihood set")]
    MissingTables(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Counts per (true, predicted) class pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(n_classes);
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, pred)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.n).map(|i| self.get(i, i)).sum::<u64>() as f64 / total as f64
    }

    /// Mean of per-class F1 scores; classes with no support and no
    /// predictions are skipped.
    pub fn macro_f1(&self) -> f64 {
        let scores: Vec<f64> = (0..self.n)
            .filter(|&c| self.row_sum(c) + self.col_sum(c) > 0)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                2.0 * tp / (self.row_sum(c) + self.col_sum(c)) as f64
            })
            .collect();
        if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }

    /// Rows as lines of counts, prefixed by the given class names.
    pub fn render(&self, names: &[&str]) -> String {
        let mut s = String::from("truth\\pred");
        for n in names {
            let _ = write!(s, " {n}");
        }
        s.push('\n');
        for (t, name) in names.iter().enumerate() {
            let _ = write!(s, "{name}");
            for p in 0..self.n {
                let _ = write!(s, " {}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No High predictions: precision reported as 0.
    pub precision_undefined: bool,
    /// No High truth: recall reported as 0.
    pub recall_undefined: bool,
    pub confusion: [[u64; 2]; 2],
}

fn metrics_from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> BinaryMetrics {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    BinaryMetrics {
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        precision,
        recall,
        f1,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
        confusion: [[tn, fp], [fn_, tp]],
    }
}

pub fn binary_metrics(truth: &[Workload], pred: &[Workload]) -> Result<BinaryMetrics, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch { truth: truth.len(), pred: pred.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (t, p) in truth.iter().zip(pred) {
        match (t, p) {
            (Workload::High, Workload::High) => tp += 1,
            (Workload::Low, Workload::High) => fp += 1,
            (Workload::High, Workload::Low) => fn_ += 1,
            (Workload::Low, Workload::Low) => tn += 1,
        }
    }
    Ok(metrics_from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// (score, positives, negatives) for one group of tied scores.
type ScoreRun = (f64, u64, u64);

/// Scores sorted descending, grouped into runs of equal score, plus the total
/// positive and negative counts.
fn score_runs(truth: &[Workload], scores: &[f64]) -> Result<(Vec<ScoreRun>, u64, u64), EvalError> {
    if truth.len() != scores.len() {
        return Err(EvalError::LengthMismatch { truth: truth.len(), pred: scores.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut runs: Vec<ScoreRun> = Vec::new();
    for i in order {
        let (pos, neg) = if truth[i].is_high() { (1, 0) } else { (0, 1) };
        match runs.last_mut() {
            Some(r) if r.0 == scores[i] => {
                r.1 += pos;
                r.2 += neg;
            }
            _ => runs.push((scores[i], pos, neg)),
        }
    }
    let n_pos: u64 = runs.iter().map(|r| r.1).sum();
    let n_neg: u64 = runs.iter().map(|r| r.2).sum();
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((runs, n_pos, n_neg))
}

/// ROC curve from sweeping the threshold over the distinct scores.
pub fn roc(truth: &[Workload], scores: &[f64]) -> Result<RocCurve, EvalError> {
    let (runs, n_pos, n_neg) = score_runs(truth, scores)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    for (_, pos, neg) in runs {
        let (x0, y0) = *points.last().expect("non-empty");
        tp += pos;
        fp += neg;
        let (x1, y1) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// Threshold maximizing F1 over the minimum score and the midpoints between
/// consecutive distinct scores (predict High iff score >= threshold). Ties
/// resolve to the lower threshold.
pub fn best_f1_threshold(truth: &[Workload], scores: &[f64]) -> Result<(f64, f64), EvalError> {
    let (runs, n_pos, n_neg) = score_runs(truth, scores)?;
    let (mut tp, mut fp) = (n_pos, n_neg);
    // start from the all-High predictor at the lowest score and raise the bar
    let mut best = (runs[runs.len() - 1].0, metrics_from_counts(tp, fp, 0, 0).f1);
    for k in (1..runs.len()).rev() {
        tp -= runs[k].1;
        fp -= runs[k].2;
        let threshold = 0.5 * (runs[k].0 + runs[k - 1].0);
        let f1 = metrics_from_counts(tp, fp, n_pos - tp, n_neg - fp).f1;
        if f1 > best.1 {
            best = (threshold, f1);
        }
    }
    Ok(best)
}

/// Filter posterior paired with the prompt-derived label of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredInstance {
    pub t: f64,
    pub truth: Workload,
    pub pi_high: f64,
}

/// Runs the filter and keeps the labelled samples, each scored with the
/// posterior of its observation instant.
pub fn score_journey(
    j: &Journey,
    tables: &LikelihoodSet,
    policy: &ContextPolicy,
    window: LabelWindow,
) -> Result<Vec<ScoredInstance>, EvalError> {
    let post = run_filter(j, init_filter(policy, tables, None)?)?;
    let labels = label_prompts(j).labels;
    let mut k = 0;
    let mut out = Vec::new();
    for ls in expand_labels(j, &labels, window) {
        while post[k].t < ls.sample.t {
            k += 1;
        }
        if let Some(truth) = ls.label {
            out.push(ScoredInstance { t: ls.sample.t, truth, pi_high: post[k].pi_high });
        }
    }
    Ok(out)
}

/// How a policy is chosen per journey.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyChoice {
    Fixed(ContextPolicy),
    /// Constant matrix picked from the journey's profile label
    /// (Standard when unlabelled).
    ByProfile,
}

impl PolicyChoice {
    pub fn name(&self) -> String {
        match self {
            PolicyChoice::Fixed(p) => p.name().to_owned(),
            PolicyChoice::ByProfile => "awp".to_owned(),
        }
    }

    pub fn policy_for(&self, j: &Journey) -> ContextPolicy {
        match self {
            PolicyChoice::Fixed(p) => p.clone(),
            PolicyChoice::ByProfile => j
                .awp_label
                .map(ContextPolicy::from_awp)
                .unwrap_or_else(|| ContextPolicy::from_awp(crate::labeling::AwpClass::M)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JourneyScore {
    pub journey_id: String,
    /// None when the journey's labels hold a single class.
    pub auc: Option<f64>,
    /// F1 at the policy's pooled threshold.
    pub f1: f64,
    /// F1 of the MAP decision (threshold 0.5).
    pub map_f1: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub policy: String,
    pub pooled_auc: f64,
    pub threshold: f64,
    pub pooled_f1: f64,
    /// Mean of per-journey F1 at the pooled threshold.
    pub mean_journey_f1: f64,
    pub mean_journey_map_f1: f64,
    pub journeys: Vec<JourneyScore>,
}

impl PolicyReport {
    pub fn journey(&self, id: &str) -> Option<&JourneyScore> {
        self.journeys.iter().find(|j| j.journey_id == id)
    }
}

/// Pooled ROC/AUC and best-F1 threshold per policy, plus per-journey scores
/// at that threshold. `tables[i]` is used for `journeys[i]`, which lets the
/// caller supply leave-one-out tables.
pub fn compare_policies(
    journeys: &[Journey],
    tables: &[LikelihoodSet],
    policies: &[PolicyChoice],
    window: LabelWindow,
) -> Result<Vec<PolicyReport>, EvalError> {
    if policies.len() < 2 {
        return Err(EvalError::TooFewPolicies);
    }
    if tables.len() != journeys.len() {
        let missing = journeys.get(tables.len()).map_or_else(String::new, |j| j.journey_id.clone());
        return Err(EvalError::MissingTables(missing));
    }
    policies
        .iter()
        .map(|choice| {
            let per_journey = journeys
                .iter()
                .zip(tables)
                .map(|(j, t)| score_journey(j, t, &choice.policy_for(j), window))
                .collect::<Result<Vec<_>, _>>()?;
            let truth: Vec<Workload> = per_journey.iter().flatten().map(|s| s.truth).collect();
            let scores: Vec<f64> = per_journey.iter().flatten().map(|s| s.pi_high).collect();
            let curve = roc(&truth, &scores)?;
            let (threshold, pooled_f1) = best_f1_threshold(&truth, &scores)?;
            let journeys: Vec<JourneyScore> = journeys
                .iter()
                .zip(&per_journey)
                .map(|(j, inst)| {
                    let t: Vec<Workload> = inst.iter().map(|s| s.truth).collect();
                    let s: Vec<f64> = inst.iter().map(|s| s.pi_high).collect();
                    let f1_at = |thr: f64| {
                        let pred: Vec<Workload> =
                            s.iter().map(|&x| if x >= thr { Workload::High } else { Workload::Low }).collect();
                        binary_metrics(&t, &pred).map_or(0.0, |m| m.f1)
                    };
                    JourneyScore {
                        journey_id: j.journey_id.clone(),
                        auc: roc(&t, &s).ok().map(|c| c.auc),
                        f1: f1_at(threshold),
                        map_f1: f1_at(0.5),
                        n_instances: inst.len(),
                    }
                })
                .collect();
            let mean = |f: fn(&JourneyScore) -> f64| journeys.iter().map(f).sum::<f64>() / journeys.len().max(1) as f64;
            let mean_journey_f1 = mean(|j| j.f1);
            let mean_journey_map_f1 = mean(|j| j.map_f1);
            Ok(PolicyReport {
                policy: choice.name(),
                pooled_auc: curve.auc,
                threshold,
                pooled_f1,
                mean_journey_f1,
                mean_journey_map_f1,
                journeys,
            })
        })
        .collect()
}

/// Line-oriented text rendering of a comparison.
pub fn render_comparison(reports: &[PolicyReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(
            s,
            "policy {} pooled_auc {:.6} threshold {:.6} pooled_f1 {:.6} mean_journey_f1 {:.6} mean_journey_map_f1 {:.6}",
            r.policy, r.pooled_auc, r.threshold, r.pooled_f1, r.mean_journey_f1, r.mean_journey_map_f1
        );
        for j in &r.journeys {
            let auc = j.auc.map_or_else(|| "NA".to_owned(), |a| format!("{a:.6}"));
            let _ = writeln!(
                s,
                "journey {} {} auc {auc} f1 {:.6} map_f1 {:.6} n {}",
                r.policy, j.journey_id, j.f1, j.map_f1, j.n_instances
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use Workload::{High as H, Low as L};

    #[test]
    fn perfect_prediction() {
        let truth = [H, H, H];
        let m = binary_metrics(&truth, &truth).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(!m.precision_undefined && !m.recall_undefined);
    }

    #[test]
    fn all_low_predictions_flag_precision() {
        let m = binary_metrics(&[H, L, H, L], &[L, L, L, L]).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert!(m.precision_undefined);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(binary_metrics(&[H], &[H, L]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(binary_metrics(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn roc_extremes() {
        let c = roc(&[L, L, H, H], &[0.1, 0.2, 0.8, 0.9]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc(&[L, H, H, L], &[0.3; 4]).unwrap().auc, 0.5);
        assert!(matches!(roc(&[H, H], &[0.1, 0.2]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn f1_sweep_examples() {
        let (thr, f1) = best_f1_threshold(&[L, L, H, H], &[0.1, 0.2, 0.8, 0.9]).unwrap();
        assert_eq!(f1, 1.0);
        assert!(thr > 0.2 && thr < 0.8);
        // all-equal scores: only the all-High predictor exists
        let (thr, f1) = best_f1_threshold(&[L, H, H, L, H], &[0.4; 5]).unwrap();
        assert_eq!(thr, 0.4);
        assert!((f1 - 2.0 * 0.6 / 1.6).abs() < 1e-12);
    }

    #[test]
    fn confusion_matrix_counts() {
        let m = ConfusionMatrix::from_pairs(3, [(0, 0), (0, 1), (1, 1), (2, 2), (2, 2)]);
        assert_eq!(m.total(), 5);
        assert_eq!(m.row_sum(0), 2);
        assert_eq!(m.col_sum(1), 2);
        assert!((m.accuracy() - 0.8).abs() < 1e-12);
        // class F1: 2/3, 2/3, 1
        assert!((m.macro_f1() - (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-12);
        assert!(m.render(&["L", "M", "H"]).contains("H 0 0 2"));
    }
}
