//! Confusion-count accumulation and the six reported segmentation scores.

use crate::error::{shape_err, validation, Result};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign};

/// Pixel-level confusion counts. Merging is associative and commutative,
/// so per-image counts can be accumulated in any grouping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub n_images: usize,
    /// Metrics whose denominator was 0 and were reported as 1.0 by convention.
    pub degenerate: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_image: Option<Vec<MetricReport>>,
}

impl MetricReport {
    /// Table-style rendering: IoU/Dice as percentages with 1 decimal.
    pub fn percent_line(&self) -> String {
        format!(
            "IoU {:.1}% Dice {:.1}% ACC {:.1} Pre {:.1} Re {:.1} Sp {:.1}",
            self.iou * 100.0,
            self.dice * 100.0,
            self.accuracy * 100.0,
            self.precision * 100.0,
            self.recall * 100.0,
            self.specificity * 100.0
        )
    }
}

/// Thresholds a probability map; ties at the threshold go to foreground.
pub fn binarize<S: Scalar>(pred: &ArrayD<S>, threshold: f64) -> ArrayD<S> {
    let t = S::from_f64(threshold);
    pred.mapv(|p| if p >= t { S::one() } else { S::zero() })
}

/// Exact pixel counting over a binary prediction/truth pair.
pub fn accumulate<S: Scalar>(pred_bin: &ArrayD<S>, truth: &ArrayD<S>) -> Result<ConfusionCounts> {
    if pred_bin.shape() != truth.shape() {
        return Err(shape_err(format!(
            "pred {:?} vs truth {:?}",
            pred_bin.shape(),
            truth.shape()
        )));
    }
    let mut c = ConfusionCounts::default();
    let half = S::from_f64(0.5);
    for (&p, &t) in pred_bin.iter().zip(truth.iter()) {
        match (p > half, t > half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0 {
        degenerate.push(name.to_string());
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Derives the six scores from pooled counts. 0/0 is reported as 1.0 with
/// the metric name recorded in `degenerate`.
pub fn report(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(validation("metric report over zero pixels"));
    }
    let mut degenerate = Vec::new();
    Ok(MetricReport {
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, "iou", &mut degenerate),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, "dice", &mut degenerate),
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision: ratio(c.tp, c.tp + c.fp, "precision", &mut degenerate),
        recall: ratio(c.tp, c.tp + c.fn_, "recall", &mut degenerate),
        specificity: ratio(c.tn, c.tn + c.fp, "specificity", &mut degenerate),
        n_images: 1,
        degenerate,
        per_image: None,
    })
}

/// Pooled (micro) report over a split, with per-image macro detail attached.
pub fn report_split<S: Scalar>(
    pairs: &[(ArrayD<S>, ArrayD<S>)],
    threshold: f64,
) -> Result<MetricReport> {
    let mut pooled = ConfusionCounts::default();
    let mut per_image = Vec::with_capacity(pairs.len());
    for (pred, truth) in pairs {
        let b = binarize(pred, threshold);
        let c = accumulate(&b, truth)?;
        pooled += c;
        per_image.push(report(&c)?);
    }
    let mut rep = report(&pooled)?;
    rep.n_images = pairs.len();
    rep.per_image = Some(per_image);
    Ok(rep)
}
