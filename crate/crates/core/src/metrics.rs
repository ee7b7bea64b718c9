//! Confusion matrices, classification scores and timing scopes.
//!
//! Conventions for empty denominators:
//! - precision of a class that is never predicted is 0 and still counts
//!   toward the macro mean over all ten classes;
//! - recall and F1 of a class absent from the labels are undefined (`None`)
//!   and excluded from their macro means;
//! - F1 is 0 when precision + recall is 0.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NUM_CLASSES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class {0} is outside 0..=9")]
    ClassOutOfRange(u8),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("stopwatch misuse: {0}")]
    ScopeMisuse(&'static str),
}

/// `counts[t][p]` = samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    /// Column `k` off the diagonal.
    pub fn false_positives(&self, k: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&t| t != k).map(|t| self.counts[t][k]).sum()
    }

    /// Row `k` off the diagonal.
    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&p| p != k).map(|p| self.counts[k][p]).sum()
    }

    pub fn true_negatives(&self, k: usize) -> u64 {
        self.total() - self.true_positives(k) - self.false_positives(k) - self.false_negatives(k)
    }

    /// Samples whose true class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(labels) {
        for v in [p, t] {
            if v as usize >= NUM_CLASSES {
                return Err(MetricsError::ClassOutOfRange(v));
            }
        }
        m.counts[t as usize][p as usize] += 1;
    }
    Ok(m)
}

/// Correct predictions over all predictions.
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match m.total() {
        0 => Err(MetricsError::EmptyMatrix),
        total => Ok(m.trace() as f64 / total as f64),
    }
}

/// Per-class scores and their macro averages.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores<S> {
    pub per_class: [S; NUM_CLASSES],
    pub macro_avg: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

pub fn precision(m: &ConfusionMatrix) -> ClassScores<f64> {
    let per_class: [f64; NUM_CLASSES] =
        std::array::from_fn(|k| ratio(m.true_positives(k), m.true_positives(k) + m.false_positives(k)));
    ClassScores {
        macro_avg: per_class.iter().sum::<f64>() / NUM_CLASSES as f64,
        per_class,
    }
}

pub fn recall(m: &ConfusionMatrix) -> ClassScores<Option<f64>> {
    let per_class: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|k| {
        let support = m.support(k);
        (support > 0).then(|| ratio(m.true_positives(k), support))
    });
    ClassScores {
        macro_avg: mean_defined(&per_class),
        per_class,
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1(m: &ConfusionMatrix) -> ClassScores<Option<f64>> {
    let (p, r) = (precision(m), recall(m));
    let per_class: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|k| r.per_class[k].map(|rk| f1_score(p.per_class[k], rk)));
    ClassScores {
        macro_avg: mean_defined(&per_class),
        per_class,
    }
}

/// Pooled TP over pooled TP + FP; equals accuracy for single-label data.
pub fn micro_precision(m: &ConfusionMatrix) -> f64 {
    let tp: u64 = (0..NUM_CLASSES).map(|k| m.true_positives(k)).sum();
    let fp: u64 = (0..NUM_CLASSES).map(|k| m.false_positives(k)).sum();
    ratio(tp, tp + fp)
}

pub fn micro_recall(m: &ConfusionMatrix) -> f64 {
    let tp: u64 = (0..NUM_CLASSES).map(|k| m.true_positives(k)).sum();
    let fn_: u64 = (0..NUM_CLASSES).map(|k| m.false_negatives(k)).sum();
    ratio(tp, tp + fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub precision: [f64; NUM_CLASSES],
    pub recall: [Option<f64>; NUM_CLASSES],
    pub f1: [Option<f64>; NUM_CLASSES],
    pub build_time_s: f64,
    pub classification_time_s: f64,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix, build_time_s: f64, classification_time_s: f64) -> Result<Self, MetricsError> {
        let (p, r, f) = (precision(m), recall(m), f1(m));
        Ok(Self {
            accuracy: accuracy(m)?,
            macro_precision: p.macro_avg,
            macro_recall: r.macro_avg,
            macro_f1: f.macro_avg,
            precision: p.per_class,
            recall: r.per_class,
            f1: f.per_class,
            build_time_s,
            classification_time_s,
        })
    }
}

/// Monotonic wall-clock scope. Time accumulates over start/stop pairs.
#[derive(Debug, Default, Clone)]
pub struct Stopwatch {
    started: Option<Instant>,
    elapsed: Duration,
}

impl Stopwatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self) -> Result<(), MetricsError> {
        if self.started.is_some() {
            return Err(MetricsError::ScopeMisuse("started twice"));
        }
        self.started = Some(Instant::now());
        Ok(())
    }

    /// Ends the open segment and returns its duration.
    pub fn stop(&mut self) -> Result<Duration, MetricsError> {
        let started = self
            .started
            .take()
            .ok_or(MetricsError::ScopeMisuse("stopped before start"))?;
        let segment = started.elapsed();
        self.elapsed += segment;
        Ok(segment)
    }

    pub fn is_running(&self) -> bool {
        self.started.is_some()
    }

    pub fn seconds(&self) -> f64 {
        self.elapsed.as_secs_f64()
    }
}

/// Runs `f` and returns its result with the elapsed seconds.
pub fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(n: u64) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::default();
        for k in 0..NUM_CLASSES {
            m.counts[k][k] = n;
        }
        m
    }

    #[test]
    fn confusion_examples() {
        let m = confusion(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_eq!(m.counts[0][0], 1);
        assert_eq!(m.counts[0][1], 1);
        assert_eq!(m.counts[1][1], 1);
        assert_eq!(m.total(), 3);
        let same: Vec<u8> = (0..50).map(|i| (i % 10) as u8).collect();
        assert_eq!(confusion(&same, &same).unwrap(), diag(5));
        assert_eq!(confusion(&[], &[]).unwrap().total(), 0);
        assert_eq!(accuracy(&confusion(&[], &[]).unwrap()), Err(MetricsError::EmptyMatrix));
        assert!(matches!(confusion(&[1], &[]), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(confusion(&[10], &[1]), Err(MetricsError::ClassOutOfRange(10)));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&diag(3)).unwrap(), 1.0);
        let uniform = ConfusionMatrix { counts: [[1; 10]; 10] };
        assert_eq!(accuracy(&uniform).unwrap(), 0.1);
        let mut off = ConfusionMatrix::default();
        off.counts[0][1] = 4;
        assert_eq!(accuracy(&off).unwrap(), 0.0);
    }

    #[test]
    fn precision_examples() {
        let p = precision(&diag(2));
        assert!(p.per_class.iter().all(|&v| v == 1.0));
        assert_eq!(p.macro_avg, 1.0);
        let mut m = ConfusionMatrix::default();
        m.counts[0][0] = 1;
        m.counts[1][0] = 1;
        let p = precision(&m);
        assert_eq!(p.per_class[0], 0.5);
        // class 1 is never predicted
        assert_eq!(p.per_class[1], 0.0);
        assert_eq!(p.macro_avg, 0.05);
    }

    #[test]
    fn recall_examples() {
        assert!(recall(&diag(1)).per_class.iter().all(|&v| v == Some(1.0)));
        let mut m = ConfusionMatrix::default();
        m.counts[0][0] = 1;
        m.counts[0][1] = 1;
        let r = recall(&m);
        assert_eq!(r.per_class[0], Some(0.5));
        assert_eq!(r.per_class[1], None);
        // only class 0 is present
        assert_eq!(r.macro_avg, 0.5);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        assert_eq!(f1_score(0.5, 0.5), 0.5);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert_eq!(f1(&diag(4)).macro_avg, 1.0);
    }

    #[test]
    fn tn_counts() {
        let m = confusion(&[0, 1, 1, 2], &[0, 0, 1, 2]).unwrap();
        assert_eq!(m.true_negatives(0), 2);
        assert_eq!(m.true_negatives(1), 2);
        assert_eq!(m.true_negatives(2), 3);
    }

    #[test]
    fn stopwatch_scopes() {
        let mut sw = Stopwatch::new();
        assert_eq!(sw.stop(), Err(MetricsError::ScopeMisuse("stopped before start")));
        sw.start().unwrap();
        assert_eq!(sw.start(), Err(MetricsError::ScopeMisuse("started twice")));
        sw.stop().unwrap();
        assert!(sw.seconds() >= 0.0 && sw.seconds() < 0.01);
    }
}
