//! Pipeline stages shared by the commands and the end-to-end tests.

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use rooftop::geodata::BuildingSet;
use rooftop::raster::Chip;
use rooftop::spatial::FeatureMatrix;
use rooftop::stacking::{
    oof_predict, random_param_ensemble, tta_aggregate, train_logistic, BaseModel, Ensemble, FoldAssignment,
    FoldSlot, LogisticModel, LogisticParams, Matrix, ModelFactory, OofOutput, ParamRanges, Predictor, StackError,
    TtaConfig,
};
use rooftop::{ClassProbs, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::args::LearnerKind;
use crate::dataset::row_index;

/// Predictions of a chip model for every chip, optionally with test-time augmentation.
pub fn chip_predictions<M: BaseModel>(model: &M, chips: &[Chip], tta: Option<&TtaConfig>) -> Result<Vec<ClassProbs>> {
    chips
        .par_iter()
        .map(|c| match tta {
            Some(cfg) => tta_aggregate(model, c, cfg).map_err(anyhow::Error::from),
            None => Ok(model.predict(c)),
        })
        .collect()
}

pub struct Cached<'a>(&'a [ClassProbs]);

impl Predictor for Cached<'_> {
    fn predict(&self, row: usize) -> Result<ClassProbs, StackError> {
        Ok(self.0[row])
    }
}

/// Factory for a model that needs no training, such as the colour oracle.
pub struct FixedFactory<'a>(pub &'a [ClassProbs]);

impl<'a> ModelFactory for FixedFactory<'a> {
    type Model = Cached<'a>;

    fn fit(&self, _: &[usize]) -> Result<Self::Model, StackError> {
        Ok(Cached(self.0))
    }
}

pub struct PriorModel(ClassProbs);

impl Predictor for PriorModel {
    fn predict(&self, _: usize) -> Result<ClassProbs, StackError> {
        Ok(self.0)
    }
}

/// Class frequencies of the training rows, with one pseudo-count per class.
pub struct PriorFactory(pub Vec<Option<u8>>);

impl ModelFactory for PriorFactory {
    type Model = PriorModel;

    fn fit(&self, rows: &[usize]) -> Result<PriorModel, StackError> {
        let mut counts = [1.0; NUM_CLASSES];
        for &r in rows {
            if let Some(l) = self.0[r] {
                counts[l as usize] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        Ok(PriorModel(counts.map(|c| c / total)))
    }
}

pub fn oof_fixed(probs: &[ClassProbs], folds: &FoldAssignment) -> Result<OofOutput> {
    Ok(oof_predict(&FixedFactory(probs), folds)?)
}

pub fn oof_prior(bs: &BuildingSet, folds: &FoldAssignment) -> Result<OofOutput> {
    let labels = bs.buildings().iter().map(|b| b.label).collect();
    Ok(oof_predict(&PriorFactory(labels), folds)?)
}

/// Building row of each feature row.
pub fn feature_to_building_rows(fm: &FeatureMatrix, bs: &BuildingSet) -> Result<Vec<usize>> {
    let index = row_index(bs);
    fm.ids
        .iter()
        .zip(&fm.map_ids)
        .map(|(id, &m)| {
            index
                .get(&(m, id.clone()))
                .copied()
                .ok_or_else(|| anyhow!("feature row {m}:{id} is not in the dataset"))
        })
        .collect()
}

/// Feature rows with a validation fold, and their labels.
pub fn stack_training_set(fm: &FeatureMatrix, bs: &BuildingSet, folds: &FoldAssignment) -> Result<(Vec<usize>, Vec<usize>)> {
    let rows = feature_to_building_rows(fm, bs)?;
    let mut sel = Vec::new();
    let mut y = Vec::new();
    for (i, &r) in rows.iter().enumerate() {
        if let FoldSlot::Validation(_) = folds.slots[r] {
            let label = bs.buildings()[r]
                .label
                .ok_or_else(|| anyhow!("validation row {} has no label", bs.buildings()[r].id))?;
            sel.push(i);
            y.push(label as usize);
        }
    }
    if sel.is_empty() {
        bail!("no labeled validation rows to train on");
    }
    Ok((sel, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "lowercase")]
pub enum Learned {
    Gbdt { ensemble: Ensemble },
    Logistic { model: LogisticModel },
}

/// Trained second-level model together with the feature columns it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub columns: Vec<String>,
    pub seed: u64,
    pub n_train: usize,
    #[serde(flatten)]
    pub learned: Learned,
}

#[derive(Debug, Clone)]
pub struct StackOptions {
    pub learner: LearnerKind,
    pub members: usize,
    pub seed: u64,
    pub ranges: ParamRanges,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions {
            learner: LearnerKind::Gbdt,
            members: 10,
            seed: 42,
            ranges: ParamRanges::default(),
        }
    }
}

pub fn train_stack(fm: &FeatureMatrix, bs: &BuildingSet, folds: &FoldAssignment, opt: &StackOptions) -> Result<StackModel> {
    let (sel, y) = stack_training_set(fm, bs, folds)?;
    let x = fm.matrix.select_rows(&sel);
    let learned = match opt.learner {
        LearnerKind::Gbdt => Learned::Gbdt {
            ensemble: random_param_ensemble(&x, &y, &opt.ranges, opt.members, opt.seed)?,
        },
        LearnerKind::Logistic => Learned::Logistic {
            model: train_logistic(
                &x,
                &y,
                &LogisticParams {
                    seed: opt.seed,
                    ..Default::default()
                },
            )?,
        },
    };
    Ok(StackModel {
        columns: fm.columns.clone(),
        seed: opt.seed,
        n_train: sel.len(),
        learned,
    })
}

impl StackModel {
    fn check(&self, fm: &FeatureMatrix) -> Result<()> {
        if fm.columns != self.columns {
            bail!(
                "feature columns differ from training ({} vs {} columns)",
                fm.columns.len(),
                self.columns.len()
            );
        }
        Ok(())
    }

    pub fn predict(&self, fm: &FeatureMatrix) -> Result<Vec<ClassProbs>> {
        self.check(fm)?;
        self.predict_matrix(&fm.matrix)
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<ClassProbs>> {
        Ok(match &self.learned {
            Learned::Gbdt { ensemble } => ensemble.predict(x)?,
            Learned::Logistic { model } => model.predict(x)?,
        })
    }

    pub fn member_predictions(&self, fm: &FeatureMatrix) -> Result<Vec<Vec<ClassProbs>>> {
        self.check(fm)?;
        Ok(match &self.learned {
            Learned::Gbdt { ensemble } => ensemble.member_predictions(&fm.matrix)?,
            Learned::Logistic { model } => vec![model.predict(&fm.matrix)?],
        })
    }
}
