//! Out-of-fold prediction.
//!
//! Fold `f`'s model is trained on every training row outside fold `f` and
//! predicts the rows of fold `f`. Rows without a validation fold (train-only
//! and unlabeled) get the mean of all fold models' predictions.

use rayon::prelude::*;

use super::folds::{FoldAssignment, FoldSlot};
use super::StackError;
use crate::{ClassProbs, NUM_CLASSES};

/// Trained model predicting a row of the dataset the factory closes over.
pub trait Predictor: Send + Sync {
    fn predict(&self, row: usize) -> Result<ClassProbs, StackError>;
}

/// Trains one model per fold.
pub trait ModelFactory: Sync {
    type Model: Predictor;

    fn fit(&self, train_rows: &[usize]) -> Result<Self::Model, StackError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionSource {
    OutOfFold(usize),
    FoldAverage,
}

#[derive(Debug, Clone)]
pub struct OofOutput {
    /// One probability vector per row.
    pub probs: Vec<ClassProbs>,
    pub source: Vec<PredictionSource>,
    /// Rows each fold model was trained on, for leakage audits.
    pub train_sets: Vec<Vec<usize>>,
}

pub fn oof_predict<F: ModelFactory>(factory: &F, folds: &FoldAssignment) -> Result<OofOutput, StackError> {
    let train_sets: Vec<Vec<usize>> = (0..folds.k).map(|f| folds.training_rows(f)).collect();
    let models = train_sets
        .par_iter()
        .enumerate()
        .map(|(fold, rows)| {
            factory.fit(rows).map_err(|e| StackError::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<(ClassProbs, PredictionSource)> = folds
        .slots
        .par_iter()
        .enumerate()
        .map(|(row, slot)| match *slot {
            FoldSlot::Validation(f) => {
                let p = models[f].predict(row).map_err(|e| StackError::Fold {
                    fold: f,
                    source: Box::new(e),
                })?;
                Ok((p, PredictionSource::OutOfFold(f)))
            }
            FoldSlot::TrainOnly | FoldSlot::Unassigned => {
                let mut acc = [0.0; NUM_CLASSES];
                for (f, m) in models.iter().enumerate() {
                    let p = m.predict(row).map_err(|e| StackError::Fold {
                        fold: f,
                        source: Box::new(e),
                    })?;
                    for (a, v) in acc.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                Ok((acc.map(|a| a / models.len() as f64), PredictionSource::FoldAverage))
            }
        })
        .collect::<Result<Vec<_>, StackError>>()?;
    let (probs, source) = rows.into_iter().unzip();
    Ok(OofOutput {
        probs,
        source,
        train_sets,
    })
}

/// Per-building probability vectors of several base models.
#[derive(Debug, Clone, PartialEq)]
pub struct OofTable {
    pub models: Vec<String>,
    /// `probs[building][model]`.
    pub probs: Vec<Vec<ClassProbs>>,
}

impl OofTable {
    pub fn single(model: impl Into<String>, probs: Vec<ClassProbs>) -> Self {
        OofTable {
            models: vec![model.into()],
            probs: probs.into_iter().map(|p| vec![p]).collect(),
        }
    }

    /// Appends another model's column block; rows must align.
    pub fn push_model(&mut self, model: impl Into<String>, probs: Vec<ClassProbs>) -> Result<(), StackError> {
        if !self.probs.is_empty() && probs.len() != self.probs.len() {
            return Err(StackError::Dimension(format!(
                "model has {} rows, table has {}",
                probs.len(),
                self.probs.len()
            )));
        }
        if self.probs.is_empty() {
            self.probs = vec![Vec::new(); probs.len()];
        }
        self.models.push(model.into());
        for (row, p) in self.probs.iter_mut().zip(probs) {
            row.push(p);
        }
        Ok(())
    }

    pub fn model_probs(&self, model: usize) -> Vec<ClassProbs> {
        self.probs.iter().map(|r| r[model]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(ClassProbs);

    impl Predictor for Constant {
        fn predict(&self, _: usize) -> Result<ClassProbs, StackError> {
            Ok(self.0)
        }
    }

    struct ConstantFactory;

    impl ModelFactory for ConstantFactory {
        type Model = Constant;
        fn fit(&self, _: &[usize]) -> Result<Constant, StackError> {
            Ok(Constant([0.1, 0.2, 0.3, 0.3, 0.1]))
        }
    }

    /// Predicts the class frequencies of its training rows.
    struct PriorFactory<'a>(&'a [usize]);

    impl ModelFactory for PriorFactory<'_> {
        type Model = Constant;
        fn fit(&self, rows: &[usize]) -> Result<Constant, StackError> {
            let mut p = [0.0; NUM_CLASSES];
            for &r in rows {
                p[self.0[r]] += 1.0 / rows.len() as f64;
            }
            Ok(Constant(p))
        }
    }

    struct Failing;

    impl ModelFactory for Failing {
        type Model = Constant;
        fn fit(&self, rows: &[usize]) -> Result<Constant, StackError> {
            if rows.contains(&0) {
                Ok(Constant([0.2; 5]))
            } else {
                Err(StackError::Model("boom".into()))
            }
        }
    }

    fn two_folds(n: usize) -> FoldAssignment {
        FoldAssignment {
            k: 2,
            seed: 0,
            slots: (0..n).map(|i| FoldSlot::Validation(i % 2)).collect(),
        }
    }

    #[test]
    fn constant_predictor_fills_matrix() {
        let mut folds = two_folds(6);
        folds.slots[5] = FoldSlot::Unassigned;
        let out = oof_predict(&ConstantFactory, &folds).unwrap();
        assert!(out.probs.iter().all(|p| *p == [0.1, 0.2, 0.3, 0.3, 0.1]));
        assert_eq!(out.source[5], PredictionSource::FoldAverage);
        for p in &out.probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_factory_swaps_folds() {
        // 10 rows; fold 0 = even rows, fold 1 = odd rows
        let y = [0, 1, 0, 1, 0, 1, 2, 1, 2, 3];
        // even rows: 0,0,0,2,2 -> prior (3/5, 0, 2/5, 0, 0)
        // odd rows : 1,1,1,1,3 -> prior (0, 4/5, 0, 1/5, 0)
        let out = oof_predict(&PriorFactory(&y), &two_folds(10)).unwrap();
        let even = [0.6, 0.0, 0.4, 0.0, 0.0];
        let odd = [0.0, 0.8, 0.0, 0.2, 0.0];
        for (i, p) in out.probs.iter().enumerate() {
            let want = if i % 2 == 0 { odd } else { even };
            for c in 0..NUM_CLASSES {
                assert!((p[c] - want[c]).abs() < 1e-12, "row {i}");
            }
        }
        // purity: no row is in the training set of the model that predicted it
        for (row, src) in out.source.iter().enumerate() {
            if let PredictionSource::OutOfFold(f) = src {
                assert!(!out.train_sets[*f].contains(&row));
            }
        }
    }

    #[test]
    fn factory_failure_carries_fold_index() {
        match oof_predict(&Failing, &two_folds(4)) {
            Err(StackError::Fold { fold, .. }) => assert_eq!(fold, 0),
            other => panic!("unexpected {:?}", other.map(|o| o.probs)),
        }
    }

    #[test]
    fn table_alignment() {
        let mut t = OofTable::single("a", vec![[0.2; 5]; 3]);
        t.push_model("b", vec![[0.2; 5]; 3]).unwrap();
        assert_eq!(t.probs[0].len(), 2);
        assert!(t.push_model("c", vec![[0.2; 5]; 2]).is_err());
    }
}
