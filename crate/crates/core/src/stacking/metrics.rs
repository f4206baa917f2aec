//! Multiclass log loss and accuracy.

use serde::{Deserialize, Serialize};

use super::{argmax, StackError};
use crate::{ClassProbs, NUM_CLASSES};

/// Probabilities are clipped to `[PROB_CLIP, 1]` before the log.
pub const PROB_CLIP: f64 = 1e-15;

fn check(probs: &[ClassProbs], y: &[usize]) -> Result<(), StackError> {
    if probs.is_empty() {
        return Err(StackError::UndefinedMetric("no rows".into()));
    }
    if probs.len() != y.len() {
        return Err(StackError::Dimension(format!(
            "{} prediction rows but {} labels",
            probs.len(),
            y.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(StackError::Dimension(format!("label {bad} out of range")));
    }
    Ok(())
}

#[inline]
fn row_loss(p: &ClassProbs, label: usize) -> f64 {
    -p[label].clamp(PROB_CLIP, 1.0).ln()
}

/// `-(1/N) Σ_i ln p[i, y_i]` with clipped probabilities.
pub fn log_loss(probs: &[ClassProbs], y: &[usize]) -> Result<f64, StackError> {
    check(probs, y)?;
    let total = probs.iter().zip(y).fold(0.0, |acc, (p, &c)| acc + row_loss(p, c));
    Ok(total / probs.len() as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &[ClassProbs], y: &[usize]) -> Result<f64, StackError> {
    check(probs, y)?;
    let hits = probs.iter().zip(y).filter(|(p, &c)| argmax(p) == c).count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Mean log loss over the rows of each true class; 0 for classes with no rows.
pub fn per_class_log_loss(probs: &[ClassProbs], y: &[usize]) -> Result<[f64; NUM_CLASSES], StackError> {
    check(probs, y)?;
    let mut sums = [0.0; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (p, &c) in probs.iter().zip(y) {
        sums[c] += row_loss(p, c);
        counts[c] += 1;
    }
    let mut out = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        if counts[c] > 0 {
            out[c] = sums[c] / counts[c] as f64;
        }
    }
    Ok(out)
}

/// Serialized as the metrics JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub log_loss: f64,
    pub accuracy: f64,
    pub per_class_log_loss: [f64; NUM_CLASSES],
    pub n: usize,
}

pub fn evaluate(probs: &[ClassProbs], y: &[usize]) -> Result<MetricsReport, StackError> {
    Ok(MetricsReport {
        log_loss: log_loss(probs, y)?,
        accuracy: accuracy(probs, y)?,
        per_class_log_loss: per_class_log_loss(probs, y)?,
        n: probs.len(),
    })
}
