//! Confusion counts and the scores derived from them. "Tumor" is the
//! positive class.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    /// Tallies predictions against truths (class 1 = positive).
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Self {
        let mut cm = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t == 1, p == 1);
        }
        cm
    }

    pub fn record(&mut self, actual_positive: bool, predicted_positive: bool) {
        match (actual_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Undefined {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Undefined {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    pub undefined: Undefined,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// Accuracy, precision, recall and F1. A zero denominator yields 0 and sets
/// the matching [`Undefined`] flag.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::invalid("metrics", "empty confusion matrix"));
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let accuracy = (tp + tn) / (tp + fp + fn_ + tn);
    let (precision, p_undef) = ratio(tp, tp + fp);
    let (recall, r_undef) = ratio(tp, tp + fn_);
    let (f1, f_undef) = ratio(2.0 * recall * precision, recall + precision);
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        confusion: *cm,
        undefined: Undefined {
            precision: p_undef,
            recall: r_undef,
            f1: f_undef,
        },
    })
}

/// Per-metric mean and sample standard deviation (`n - 1` denominator;
/// zero for a single report).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: [f64; 4],
    pub stddev: [f64; 4],
}

pub fn summarize(reports: &[MetricsReport]) -> Result<MetricSummary> {
    if reports.is_empty() {
        return Err(Error::invalid("summarize", "no reports"));
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 4];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut stddev = [0.0; 4];
    if reports.len() > 1 {
        for r in reports {
            for ((s, v), m) in stddev.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2);
            }
        }
        stddev.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
    }
    Ok(MetricSummary { mean, stddev })
}
