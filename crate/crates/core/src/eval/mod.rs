//! Detection evaluation: greedy IoU matching, TP/FP/FN aggregation,
//! precision/recall/F1, accuracy, all-points AP, mAP and latency statistics.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AnnotatedImage, Detection};
use crate::geometry::iou;
use crate::labelmap::{project_corpus, LabelMap, LabelMapError, UnmappedPolicy};

pub use report::{format_sig, report_to_csv, report_to_json};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("threshold `{name}` = {value} outside (0, 1]")]
    Threshold { name: &'static str, value: f64 },
    #[error("match result for `{got}` does not correspond to corpus image `{expected}`")]
    ImageMismatch { expected: String, got: String },
    #[error("{0} requires at least one input")]
    Undefined(&'static str),
    #[error(transparent)]
    LabelMap(#[from] LabelMapError),
}

fn check_threshold(name: &'static str, value: f64) -> Result<(), EvalError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::Threshold { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// Per-image matching outcome. Indices refer to the image's `predictions`
/// and `ground_truth` vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub image_id: String,
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
}

impl MatchResult {
    pub fn is_true_positive(&self, prediction: usize) -> bool {
        self.matched_pairs.iter().any(|p| p.prediction == prediction)
    }
}

/// Greedy one-to-one matching. Predictions are visited in rank order
/// (descending confidence with the deterministic tie-break); each takes the
/// highest-IoU unmatched ground-truth box of the same label whose IoU is at
/// least `iou_threshold`. Equal IoU goes to the lower ground-truth index.
pub fn match_image(image: &AnnotatedImage, iou_threshold: f64) -> Result<MatchResult, EvalError> {
    check_threshold("iou_threshold", iou_threshold)?;
    let mut order: Vec<usize> = (0..image.predictions.len()).collect();
    order.sort_by(|&a, &b| image.predictions[a].rank_cmp(&image.predictions[b]).then(a.cmp(&b)));

    let mut gt_taken = vec![false; image.ground_truth.len()];
    let mut matched_pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();

    for pi in order {
        let pred = &image.predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in image.ground_truth.iter().enumerate() {
            if gt_taken[gi] || gt.label != pred.label {
                continue;
            }
            let v = iou(&pred.bbox, &gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) => {
                gt_taken[gi] = true;
                matched_pairs.push(MatchedPair {
                    prediction: pi,
                    ground_truth: gi,
                    iou: v,
                });
            }
            None => unmatched_predictions.push(pi),
        }
    }
    unmatched_predictions.sort_unstable();
    let unmatched_ground_truth = gt_taken
        .iter()
        .enumerate()
        .filter(|(_, taken)| !**taken)
        .map(|(i, _)| i)
        .collect();

    Ok(MatchResult {
        image_id: image.image_id.clone(),
        matched_pairs,
        unmatched_predictions,
        unmatched_ground_truth,
    })
}

/// TP/FP/FN totals, either for one class or for the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub label: String,
    #[serde(flatten)]
    pub counts: Counts,
}

/// Sums per-label TP/FP/FN over the corpus. Output is sorted by label;
/// labels with no predictions and no ground truth never appear.
pub fn aggregate_counts(
    matches: &[MatchResult],
    corpus: &[AnnotatedImage],
) -> Result<Vec<ClassCounts>, EvalError> {
    if matches.len() != corpus.len() {
        return Err(EvalError::ImageMismatch {
            expected: format!("{} images", corpus.len()),
            got: format!("{} match results", matches.len()),
        });
    }
    let mut by_label: BTreeMap<&str, Counts> = BTreeMap::new();
    for (m, image) in matches.iter().zip(corpus) {
        if m.image_id != image.image_id {
            return Err(EvalError::ImageMismatch {
                expected: image.image_id.clone(),
                got: m.image_id.clone(),
            });
        }
        for pair in &m.matched_pairs {
            by_label.entry(&image.predictions[pair.prediction].label).or_default().tp += 1;
        }
        for &pi in &m.unmatched_predictions {
            by_label.entry(&image.predictions[pi].label).or_default().fp += 1;
        }
        for &gi in &m.unmatched_ground_truth {
            by_label.entry(&image.ground_truth[gi].label).or_default().fn_ += 1;
        }
    }
    Ok(by_label
        .into_iter()
        .map(|(label, counts)| ClassCounts {
            label: label.to_owned(),
            counts,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and their harmonic mean. With no predictions, precision
/// is 1 when there is also no ground truth and 0 otherwise; with no ground
/// truth, recall is 1. F1 is 0 when precision and recall are both 0.
pub fn precision_recall_f1(counts: Counts) -> Prf {
    let Counts { tp, fp, fn_ } = counts;
    let precision = if tp + fp == 0 {
        if tp + fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Detection accuracy `tp / (tp + fp + fn)`.
pub fn accuracy(counts: Counts) -> Result<f64, EvalError> {
    let denom = counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        return Err(EvalError::Undefined("accuracy"));
    }
    Ok(counts.tp as f64 / denom as f64)
}

/// All-points interpolated average precision for one class.
///
/// `ranked` holds `(confidence, is_true_positive)` for every prediction of the
/// class across the corpus. Entries are ordered by descending confidence with
/// a stable sort, so callers that need a specific tie order should pre-sort.
/// Returns `None` when `total_gt` is zero.
pub fn average_precision(ranked: &[(f64, bool)], total_gt: u64) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let mut ranked = ranked.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = Vec::with_capacity(ranked.len());
    let mut tp = 0u64;
    for (i, &(_, is_tp)) in ranked.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = tp as f64 / total_gt as f64;
        curve.push((recall, precision));
    }
    // precision envelope: max precision at any equal or higher recall
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        if recall > prev_recall {
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    Some(ap)
}

/// Unweighted mean of AP over classes with at least one ground-truth box.
pub fn mean_average_precision(per_class: &[(String, Option<f64>, u64)]) -> Result<f64, EvalError> {
    let eligible: Vec<f64> = per_class
        .iter()
        .filter(|(_, _, support)| *support >= 1)
        .map(|(_, ap, _)| ap.unwrap_or(0.0))
        .collect();
    if eligible.is_empty() {
        return Err(EvalError::Undefined("mean average precision"));
    }
    Ok(eligible.iter().sum::<f64>() / eligible.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

/// Order statistics over per-image detection times. Even-length input takes
/// the mean of the two middle values as median.
pub fn latency_stats(seconds: &[f64]) -> Result<LatencyStats, EvalError> {
    if seconds.is_empty() {
        return Err(EvalError::Undefined("latency statistics"));
    }
    let mut sorted = seconds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(LatencyStats {
        count: n,
        min: sorted[0],
        median,
        max: sorted[n - 1],
        mean: sorted.iter().sum::<f64>() / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: Option<f64>,
    pub support: u64,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the corpus has neither predictions nor ground truth.
    pub accuracy: Option<f64>,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: usize,
    pub config: EvalConfig,
    pub per_class: Vec<ClassMetrics>,
    pub aggregate: AggregateMetrics,
    /// `None` when no class has ground truth.
    pub map_50: Option<f64>,
    /// `None` when no image carries `detect_seconds`.
    pub latency: Option<LatencyStats>,
}

/// Runs the whole evaluation: label projection, confidence filtering,
/// per-image matching, count aggregation, per-class and aggregate metrics,
/// AP/mAP over the unfiltered ranking, and latency statistics.
pub fn evaluate_corpus(
    corpus: &[AnnotatedImage],
    label_map: &LabelMap,
    config: EvalConfig,
) -> Result<EvalReport, EvalError> {
    check_threshold("iou_threshold", config.iou_threshold)?;
    check_threshold("confidence_threshold", config.confidence_threshold)?;
    let projected = project_corpus(label_map, corpus, UnmappedPolicy::Drop)?;
    evaluate_projected(&projected, config)
}

/// Same as [`evaluate_corpus`] for a corpus whose labels are already coarse.
pub fn evaluate_projected(
    corpus: &[AnnotatedImage],
    config: EvalConfig,
) -> Result<EvalReport, EvalError> {
    check_threshold("iou_threshold", config.iou_threshold)?;
    check_threshold("confidence_threshold", config.confidence_threshold)?;

    // Image order must not influence anything downstream.
    let mut images: Vec<&AnnotatedImage> = corpus.iter().collect();
    images.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let filtered: Vec<AnnotatedImage> = images
        .iter()
        .map(|img| AnnotatedImage {
            predictions: img
                .predictions
                .iter()
                .filter(|p| p.confidence >= config.confidence_threshold)
                .cloned()
                .collect(),
            ..(*img).clone()
        })
        .collect();
    let matches = filtered
        .iter()
        .map(|img| match_image(img, config.iou_threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let class_counts = aggregate_counts(&matches, &filtered)?;

    // AP ranks every prediction, ignoring the confidence threshold.
    let mut ranked: BTreeMap<&str, Vec<(&str, &Detection, bool)>> = BTreeMap::new();
    let mut support: BTreeMap<&str, u64> = BTreeMap::new();
    for img in &images {
        let m = match_image(img, config.iou_threshold)?;
        for (pi, pred) in img.predictions.iter().enumerate() {
            ranked
                .entry(pred.label.as_str())
                .or_default()
                .push((img.image_id.as_str(), pred, m.is_true_positive(pi)));
        }
        for gt in &img.ground_truth {
            *support.entry(gt.label.as_str()).or_default() += 1;
        }
    }

    let mut per_class = Vec::with_capacity(class_counts.len());
    let mut totals = Counts::default();
    for cc in &class_counts {
        totals += cc.counts;
        let prf = precision_recall_f1(cc.counts);
        let class_support = support.get(cc.label.as_str()).copied().unwrap_or(0);
        let ap = {
            let mut list = ranked.remove(cc.label.as_str()).unwrap_or_default();
            list.sort_by(|a, b| a.1.rank_cmp(b.1).then_with(|| a.0.cmp(b.0)));
            let flags: Vec<(f64, bool)> = list.iter().map(|(_, d, tp)| (d.confidence, *tp)).collect();
            average_precision(&flags, class_support)
        };
        per_class.push(ClassMetrics {
            label: cc.label.clone(),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            ap,
            support: class_support,
            counts: cc.counts,
        });
    }

    let ap_inputs: Vec<(String, Option<f64>, u64)> = per_class
        .iter()
        .map(|c| (c.label.clone(), c.ap, c.support))
        .collect();
    let map_50 = mean_average_precision(&ap_inputs).ok();

    let prf = precision_recall_f1(totals);
    let aggregate = AggregateMetrics {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        accuracy: accuracy(totals).ok(),
        counts: totals,
    };

    let seconds: Vec<f64> = images.iter().filter_map(|i| i.detect_seconds).collect();
    let latency = latency_stats(&seconds).ok();

    Ok(EvalReport {
        images: images.len(),
        config,
        per_class,
        aggregate,
        map_50,
        latency,
    })
}
