//! Two-class change-detection scores over the defined pixels of a tri-state
//! reference map. CHANGED is the positive class.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::dataio::{BinaryMap, RefLabel, ReferenceMap};
use crate::error::{CcdfError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix::new(self.tp + o.tp, self.fp + o.fp, self.tn + o.tn, self.fn_ + o.fn_)
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: ConfusionMatrix) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

/// Counts prediction outcomes; undefined reference pixels are skipped.
pub fn accumulate_confusion(pred: &BinaryMap, reference: &ReferenceMap) -> Result<ConfusionMatrix> {
    if pred.changed().dim() != reference.labels().dim() {
        return Err(CcdfError::shape(
            format!("{:?}", reference.labels().dim()),
            format!("{:?}", pred.changed().dim()),
        ));
    }
    if reference.defined_count() == 0 {
        return Err(CcdfError::InvalidArgument("reference map has no defined pixels".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &r) in pred.changed().iter().zip(reference.labels()) {
        match (r, p) {
            (RefLabel::Changed, true) => cm.tp += 1,
            (RefLabel::Changed, false) => cm.fn_ += 1,
            (RefLabel::Unchanged, true) => cm.fp += 1,
            (RefLabel::Unchanged, false) => cm.tn += 1,
            (RefLabel::Undefined, _) => {}
        }
    }
    Ok(cm)
}

/// All seven scores as fractions in `[0, 1]` (`kc` in `[-1, 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub kc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub miou: f64,
    pub ciou: f64,
    /// Names of scores whose denominator was zero; those are reported as 0.
    pub degenerate: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return Err(CcdfError::InvalidArgument("confusion matrix is empty".into()));
    }
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let mut flags = Vec::new();
    let oa = (tp + tn) / n;
    let precision = ratio(tp, tp + fp, "precision", &mut flags);
    let recall = ratio(tp, tp + fn_, "recall", &mut flags);
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut flags);
    let ciou = ratio(tp, tp + fp + fn_, "ciou", &mut flags);
    let uiou = ratio(tn, tn + fp + fn_, "uiou", &mut flags);
    let miou = (ciou + uiou) / 2.0;
    let pe = ((tp + fp) * (tp + fn_) + (tn + fn_) * (tn + fp)) / (n * n);
    let kc = ratio(oa - pe, 1.0 - pe, "kc", &mut flags);
    Ok(Metrics {
        oa,
        kc,
        precision,
        recall,
        f1,
        miou,
        ciou,
        degenerate: flags,
    })
}

fn pct(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

/// Scores in percent rounded to two decimals, plus the raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(rename = "OA")]
    pub oa: f64,
    #[serde(rename = "KC")]
    pub kc: f64,
    #[serde(rename = "Pre")]
    pub precision: f64,
    #[serde(rename = "Rec")]
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "mIOU")]
    pub miou: f64,
    #[serde(rename = "cIOU")]
    pub ciou: f64,
    pub counts: ConfusionMatrix,
    pub degenerate: Vec<String>,
}

impl EvaluationReport {
    pub fn new(cm: &ConfusionMatrix) -> Result<Self> {
        let m = compute_metrics(cm)?;
        Ok(Self {
            oa: pct(m.oa),
            kc: pct(m.kc),
            precision: pct(m.precision),
            recall: pct(m.recall),
            f1: pct(m.f1),
            miou: pct(m.miou),
            ciou: pct(m.ciou),
            counts: *cm,
            degenerate: m.degenerate,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
