//! Second-level modelling: folds, out-of-fold prediction, learners, ensembles,
//! test-time augmentation and evaluation metrics.

mod ensemble;
mod folds;
mod gbdt;
mod logistic;
mod metrics;
mod oof;
mod tta;

pub use ensemble::{random_param_ensemble, Ensemble, ParamRanges};
pub use folds::{make_folds, FoldAssignment, FoldSlot};
pub use gbdt::{gbdt_predict, train_gbdt, GbdtModel, GbdtParams, TreeNode};
pub use logistic::{logistic_objective, train_logistic, LogisticModel, LogisticParams};
pub use metrics::{accuracy, evaluate, log_loss, per_class_log_loss, MetricsReport, PROB_CLIP};
pub use oof::{oof_predict, ModelFactory, OofOutput, OofTable, PredictionSource, Predictor};
pub use tta::{aggregate_predictions, tta_aggregate, tta_variants, BaseModel, TtaConfig, TtaMean};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentError;
use crate::{ClassProbs, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum StackError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    #[error("map {map_id} has {labeled} labeled buildings, fewer than {k} folds")]
    TooFewLabeled { map_id: u8, labeled: usize, k: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<StackError>,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// Dense row-major matrix of second-level features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, StackError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(StackError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, StackError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(StackError::Dimension("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

pub(crate) fn check_targets(x: &Matrix, y: &[usize]) -> Result<(), StackError> {
    if x.rows() != y.len() {
        return Err(StackError::Dimension(format!(
            "{} feature rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(StackError::DegenerateTarget("need at least 2 training rows".into()));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(StackError::Dimension(format!("label {bad} out of range")));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(StackError::DegenerateTarget(format!("all labels equal {}", y[0])));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(StackError::Dimension("non-finite feature value".into()));
    }
    Ok(())
}

/// Floor applied to empirical class frequencies before taking logs, so absent
/// classes get a finite initial score.
pub(crate) const PRIOR_FLOOR: f64 = 1e-12;

pub(crate) fn log_priors(y: &[usize]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for &c in y {
        counts[c] += 1;
    }
    counts.map(|c| (c as f64 / y.len() as f64).max(PRIOR_FLOOR).ln())
}

pub(crate) fn softmax(scores: &[f64; NUM_CLASSES]) -> ClassProbs {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.map(|s| (s - max).exp());
    let total: f64 = exp.iter().sum();
    exp.map(|e| e / total)
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(p: &ClassProbs) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}
