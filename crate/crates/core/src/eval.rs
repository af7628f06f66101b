//! Ranking and classification metrics for edge prediction.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Edge;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Step-wise average precision.
    pub ap: f64,
    /// One point per distinct score, highest threshold first.
    pub points: Vec<CurvePoint>,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::validation("NaN score"));
    }
    Ok(())
}

/// Area under the precision-recall curve as average precision: pairs are
/// ranked by descending score, exact ties form a single threshold step, and
/// `AP = Σ ΔRecall · Precision`.
pub fn prauc(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            threshold,
            recall,
            precision,
        });
    }
    Ok(PrCurve { ap, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl ThresholdMetrics {
    fn from_counts(threshold: f64, counts: Counts) -> Self {
        ThresholdMetrics {
            threshold,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
        }
    }
}

pub fn confusion(predicted: impl IntoIterator<Item = bool>, labels: &[bool]) -> Counts {
    let mut c = Counts::default();
    for (p, &l) in predicted.into_iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Predicts positive iff `score >= threshold`.
pub fn f1_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    check_inputs(scores, labels)?;
    let counts = confusion(scores.iter().map(|&s| s >= threshold), labels);
    Ok(ThresholdMetrics::from_counts(threshold, counts))
}

/// The threshold along the curve with the highest F1; ties keep the higher
/// threshold.
pub fn best_f1(scores: &[f64], labels: &[bool]) -> Result<ThresholdMetrics> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut counts = Counts {
        tp: 0,
        fp: 0,
        fn_: positives,
        tn: labels.len() - positives,
    };
    let mut best: Option<ThresholdMetrics> = None;
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] {
                counts.tp += 1;
                counts.fn_ -= 1;
            } else {
                counts.fp += 1;
                counts.tn -= 1;
            }
            k += 1;
        }
        let m = ThresholdMetrics::from_counts(threshold, counts);
        if best.is_none_or(|b| m.f1 > b.f1) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one positive means at least one threshold"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Predicts an edge with probability 0.5.
    Uniform,
    /// Predicts an edge with the training-set edge ratio.
    Weighted,
}

/// Coin-flip predictions scored against `labels`. No PRAUC: the baseline
/// produces no scores.
pub fn random_baseline(
    labels: &[bool],
    mode: BaselineMode,
    train_ratio: f64,
    seed: u64,
) -> Result<ThresholdMetrics> {
    let p = match mode {
        BaselineMode::Uniform => 0.5,
        BaselineMode::Weighted => {
            if !(train_ratio > 0.0 && train_ratio < 1.0) {
                return Err(Error::Config(format!(
                    "weighted baseline needs a ratio in (0, 1), got {train_ratio}"
                )));
            }
            train_ratio
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predicted: Vec<bool> = (0..labels.len()).map(|_| rng.random_bool(p)).collect();
    Ok(ThresholdMetrics::from_counts(p, confusion(predicted, labels)))
}

/// Edge probabilities for one document's candidate pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub id: String,
    pub pairs: Vec<Edge>,
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroReport {
    /// Mean over documents with at least one gold edge.
    pub prauc: f64,
    pub f1: f64,
    pub documents: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prauc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: Counts,
    pub positives_ratio: f64,
    pub pairs: usize,
    pub documents: usize,
    pub best_f1: ThresholdMetrics,
    pub curve: Vec<CurvePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_doc: Option<MacroReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Metrics over all pairs pooled across documents; `per_doc` adds the
/// per-document average.
pub fn summarize(docs: &[ScoredDocument], per_doc: bool) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let scores: Vec<f64> = docs.iter().flat_map(|d| d.scores.iter().copied()).collect();
    let labels: Vec<bool> = docs.iter().flat_map(|d| d.labels.iter().copied()).collect();
    let curve = prauc(&scores, &labels)?;
    let at_half = f1_at_threshold(&scores, &labels, DEFAULT_THRESHOLD)?;
    let best = best_f1(&scores, &labels)?;
    let per_doc = if per_doc {
        let mut sum_ap = 0.0;
        let mut sum_f1 = 0.0;
        let mut counted = 0;
        for d in docs {
            if d.labels.iter().any(|&l| l) {
                sum_ap += prauc(&d.scores, &d.labels)?.ap;
                sum_f1 += f1_at_threshold(&d.scores, &d.labels, DEFAULT_THRESHOLD)?.f1;
                counted += 1;
            }
        }
        Some(MacroReport {
            prauc: sum_ap / counted as f64,
            f1: sum_f1 / counted as f64,
            documents: counted,
        })
    } else {
        None
    };
    Ok(EvalReport {
        prauc: curve.ap,
        f1: at_half.f1,
        precision: at_half.precision,
        recall: at_half.recall,
        counts: at_half.counts,
        positives_ratio: labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64,
        pairs: labels.len(),
        documents: docs.len(),
        best_f1: best,
        curve: curve.points,
        per_doc,
        config_hash: None,
    })
}

/// Stable hex digest of a serializable configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(format!("{:016x}", xxhash_rust::xxh3::xxh3_64(&bytes)))
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "threshold,recall,precision").expect("write to Vec");
    for p in curve {
        writeln!(out, "{},{},{}", p.threshold, p.recall, p.precision).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
