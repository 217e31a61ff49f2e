//! H-score, per-class accuracies, anomaly-score statistics, feature dumps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::objective::Network;

/// Harmonic mean of the common-class and unknown accuracies; 0 when both are 0.
pub fn h_score(acc_c: f64, acc_t: f64) -> f64 {
    if acc_c + acc_t == 0.0 {
        0.0
    } else {
        2.0 * acc_c * acc_t / (acc_c + acc_t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    /// Common-class samples given their own label.
    pub known_correct: usize,
    /// Common-class samples given another known label.
    pub known_misclassified: usize,
    /// Common-class samples rejected as unknown.
    pub known_rejected: usize,
    /// Target-private samples rejected as unknown.
    pub unknown_rejected: usize,
    /// Target-private samples accepted as some known class.
    pub unknown_accepted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub samples: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of per-class accuracies over common classes with at least one sample.
    pub acc_common: f64,
    /// Fraction of target-private samples predicted unknown; `None` without any.
    pub acc_unknown: Option<f64>,
    /// Equals `acc_common` when there are no target-private samples.
    pub h_score: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub confusion: ConfusionSummary,
    /// Known-vs-unknown AUROC of the anomaly score (higher = more known-like).
    pub auroc: Option<f64>,
    pub mean_anomaly_known: Option<f64>,
    pub mean_anomaly_unknown: Option<f64>,
    pub anomaly_scores: Vec<f64>,
    /// Ground truth for each score: `true` when the sample's class is target-private.
    pub is_unknown: Vec<bool>,
    pub accuracy_convention: String,
}

/// Scores predictions against target labels.
///
/// `truth` holds target class ids; predictions use `K` (= `spec.num_known()`)
/// for unknown.
pub fn score_predictions(
    preds: &[Prediction],
    truth: &[i64],
    spec: &SplitSpec,
) -> Result<EvalReport> {
    if preds.len() != truth.len() {
        return Err(Error::shape(
            "score_predictions",
            format!("{} predictions for {} labels", preds.len(), truth.len()),
        ));
    }
    let k = spec.num_known();
    let mut hits = vec![0usize; spec.n_common];
    let mut counts = vec![0usize; spec.n_common];
    let mut confusion = ConfusionSummary::default();
    let (mut unk_total, mut unk_hit) = (0usize, 0usize);
    let mut is_unknown = Vec::with_capacity(truth.len());
    for (p, &y) in preds.iter().zip(truth) {
        if y < 0 {
            return Err(Error::config("target_eval", "evaluation needs visible labels"));
        }
        let y = y as usize;
        if spec.is_common(y) {
            counts[y] += 1;
            if p.label == y {
                hits[y] += 1;
                confusion.known_correct += 1;
            } else if p.label == k {
                confusion.known_rejected += 1;
            } else {
                confusion.known_misclassified += 1;
            }
            is_unknown.push(false);
        } else if spec.is_target_private(y) {
            unk_total += 1;
            if p.label == k {
                unk_hit += 1;
                confusion.unknown_rejected += 1;
            } else {
                confusion.unknown_accepted += 1;
            }
            is_unknown.push(true);
        } else {
            return Err(Error::config(
                "target_eval",
                format!("label {y} is neither a common nor a target-private class"),
            ));
        }
    }
    let per_class: Vec<ClassAccuracy> = (0..spec.n_common)
        .filter(|&c| counts[c] > 0)
        .map(|c| ClassAccuracy {
            class: c,
            samples: counts[c],
            accuracy: hits[c] as f64 / counts[c] as f64,
        })
        .collect();
    let acc_common = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.accuracy).sum::<f64>() / per_class.len() as f64
    };
    let acc_unknown = (unk_total > 0).then(|| unk_hit as f64 / unk_total as f64);
    let h = match acc_unknown {
        Some(t) => h_score(acc_common, t),
        None => acc_common,
    };
    let scores: Vec<f64> = preds.iter().map(|p| p.anomaly).collect();
    let mean_of = |want: bool| {
        let v: Vec<f64> = scores
            .iter()
            .zip(&is_unknown)
            .filter(|(_, &u)| u == want)
            .map(|(s, _)| *s)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(EvalReport {
        acc_common,
        acc_unknown,
        h_score: h,
        per_class,
        confusion,
        auroc: auroc(&scores, &is_unknown),
        mean_anomaly_known: mean_of(false),
        mean_anomaly_unknown: mean_of(true),
        anomaly_scores: scores,
        is_unknown,
        accuracy_convention: "acc_common: mean of per-class accuracies over common classes; \
                              acc_unknown: pooled over target-private samples"
            .into(),
    })
}

/// Predicts every sample of `data` with the collaborative rule.
pub fn predict_all(net: &Network, data: &Dataset) -> Result<Vec<Prediction>> {
    let feats = net.embed(&data.features)?;
    (0..feats.rows())
        .map(|i| net.classifier.predict(feats.row_slice(i)))
        .collect()
}

pub fn evaluate(net: &Network, target_eval: &Dataset, spec: &SplitSpec) -> Result<EvalReport> {
    let preds = predict_all(net, target_eval)?;
    score_predictions(&preds, &target_eval.labels, spec)
}

/// Probability that a random known sample scores above a random unknown
/// one, counting ties as one half.
pub fn auroc(scores: &[f64], is_unknown: &[bool]) -> Option<f64> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(is_unknown.iter().copied()).collect();
    let n_unk = pairs.iter().filter(|p| p.1).count();
    let n_known = pairs.len() - n_unk;
    if n_unk == 0 || n_known == 0 {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank-sum over tie groups
    let mut rank_sum_known = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum_known += avg_rank * pairs[i..j].iter().filter(|p| !p.1).count() as f64;
        i = j;
    }
    let u = rank_sum_known - (n_known * (n_known + 1)) as f64 / 2.0;
    Some(u / (n_known * n_unk) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,known,unknown\n");
        for b in 0..self.known.len() {
            writeln!(
                out,
                "{:?},{:?},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.known[b],
                self.unknown[b]
            )
            .unwrap();
        }
        out
    }
}

/// Anomaly-score histogram split by ground truth, pooled over reports.
pub fn anomaly_histogram(reports: &[EvalReport], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("bins", "must be positive"));
    }
    let all: Vec<(f64, bool)> = reports
        .iter()
        .flat_map(|r| r.anomaly_scores.iter().copied().zip(r.is_unknown.iter().copied()))
        .collect();
    if all.is_empty() {
        return Err(Error::config("reports", "no scores to bin"));
    }
    let lo = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut hi = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut known = vec![0; bins];
    let mut unknown = vec![0; bins];
    for (s, u) in all {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        if u {
            unknown[b] += 1;
        } else {
            known[b] += 1;
        }
    }
    Ok(Histogram {
        edges,
        known,
        unknown,
    })
}

/// `id,label,pred,f0..f{D−1}` for external visualisation.
pub fn export_features(net: &Network, data: &Dataset, path: &Path) -> Result<()> {
    let feats = net.embed(&data.features)?;
    let mut out = String::from("id,label,pred");
    for j in 0..feats.cols() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for i in 0..data.len() {
        let pred = net.classifier.predict(feats.row_slice(i))?;
        write!(out, "{},{},{}", data.ids[i], data.labels[i], pred.label).unwrap();
        for v in feats.row_slice(i) {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean, sample standard deviation, and median.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    let median = if s.len() % 2 == 1 {
        s[mid]
    } else {
        (s[mid - 1] + s[mid]) / 2.0
    };
    (mean, std, median)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(label: usize, anomaly: f64) -> Prediction {
        Prediction {
            label,
            confidence: 1.0,
            anomaly,
        }
    }

    #[test]
    fn h_score_examples() {
        assert!((h_score(0.8, 0.6) - 0.685_714_285_714_285_7).abs() < 1e-12);
        assert_eq!(h_score(1.0, 0.0), 0.0);
        assert_eq!(h_score(0.0, 0.0), 0.0);
        for x in [0.1, 0.37, 0.5, 0.99] {
            assert!((h_score(x, x) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_counted_confusion() {
        // 3 common classes (0, 1, 2), no source-private, target-private class 3; K = 3
        let spec = SplitSpec::new(3, 0, 1).unwrap();
        let truth = [0, 0, 1, 1, 1, 2, 3, 3, 3, 3];
        let preds = [
            pred(0, 1.0), // hit
            pred(3, 1.0), // rejected
            pred(1, 1.0), // hit
            pred(1, 1.0), // hit
            pred(0, 1.0), // miss
            pred(2, 1.0), // hit
            pred(3, 0.1), // unknown rejected
            pred(3, 0.2),
            pred(3, 0.1),
            pred(2, 0.3), // accepted
        ];
        let r = score_predictions(&preds, &truth, &spec).unwrap();
        // per-class: 1/2, 2/3, 1/1
        let acc_c = (0.5 + 2.0 / 3.0 + 1.0) / 3.0;
        assert!((r.acc_common - acc_c).abs() < 1e-15);
        assert_eq!(r.acc_unknown, Some(0.75));
        assert!((r.h_score - h_score(acc_c, 0.75)).abs() < 1e-15);
        assert_eq!(
            r.confusion,
            ConfusionSummary {
                known_correct: 4,
                known_misclassified: 1,
                known_rejected: 1,
                unknown_rejected: 3,
                unknown_accepted: 1,
            }
        );
        // all known scores (1.0) exceed every unknown score
        assert_eq!(r.auroc, Some(1.0));
    }

    #[test]
    fn perfect_and_degenerate() {
        let spec = SplitSpec::new(2, 1, 1).unwrap();
        let truth = [0, 1, 3];
        let perfect = [pred(0, 1.0), pred(1, 1.0), pred(3, 0.0)];
        assert_eq!(score_predictions(&perfect, &truth, &spec).unwrap().h_score, 1.0);
        let all_unknown = [pred(3, 0.0), pred(3, 0.0), pred(3, 0.0)];
        let r = score_predictions(&all_unknown, &truth, &spec).unwrap();
        assert_eq!(r.acc_common, 0.0);
        assert_eq!(r.h_score, 0.0);
        assert_eq!(r.auroc, Some(0.5));
    }

    #[test]
    fn empty_common_class_excluded_from_mean() {
        let spec = SplitSpec::new(3, 0, 0).unwrap();
        let r = score_predictions(&[pred(0, 1.0), pred(1, 1.0)], &[0, 0], &spec).unwrap();
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.acc_common, 0.5);
        assert_eq!(r.acc_unknown, None);
        assert_eq!(r.h_score, 0.5);
    }

    #[test]
    fn auroc_brute_force() {
        let scores = [0.3, 0.1, 0.5, 0.5, 0.2, 0.9];
        let unk = [false, true, false, true, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if !unk[i] && unk[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((auroc(&scores, &unk).unwrap() - wins / pairs).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_everything() {
        let spec = SplitSpec::new(1, 0, 1).unwrap();
        let preds: Vec<_> = (0..10).map(|i| pred(0, i as f64 / 10.0)).collect();
        let truth: Vec<i64> = (0..10).map(|i| if i < 4 { 1 } else { 0 }).collect();
        let r = score_predictions(&preds, &truth, &spec).unwrap();
        let h = anomaly_histogram(&[r], 3).unwrap();
        assert_eq!(h.edges.len(), 4);
        assert_eq!(h.known.iter().sum::<usize>(), 6);
        assert_eq!(h.unknown.iter().sum::<usize>(), 4);
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,known,unknown\n"));
    }

    #[test]
    fn summary_stats() {
        let (m, s, med) = summarize(&[1.0, 2.0, 4.0]);
        assert!((m - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(med, 2.0);
        assert!(s > 0.0);
        assert_eq!(summarize(&[1.0, 3.0]).2, 2.0);
    }
}
