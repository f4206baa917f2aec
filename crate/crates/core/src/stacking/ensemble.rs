//! Averaging over GBDT members trained with randomly sampled parameters.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{train_gbdt, GbdtModel, GbdtParams};
use super::{Matrix, StackError};
use crate::seed::{rng_from_seed, SeedHasher};
use crate::{ClassProbs, NUM_CLASSES};

/// Inclusive sampling ranges for member parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub n_rounds: (usize, usize),
    pub max_depth: (usize, usize),
    pub learning_rate: (f64, f64),
    pub min_samples_leaf: (usize, usize),
    pub feature_subsample: (f64, f64),
    pub row_subsample: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            n_rounds: (100, 400),
            max_depth: (2, 5),
            learning_rate: (0.03, 0.3),
            min_samples_leaf: (1, 1),
            feature_subsample: (0.6, 1.0),
            row_subsample: (0.6, 1.0),
        }
    }
}

impl ParamRanges {
    fn validate(&self) -> Result<(), StackError> {
        let ok = self.n_rounds.0 <= self.n_rounds.1
            && self.max_depth.0 <= self.max_depth.1
            && self.learning_rate.0 <= self.learning_rate.1
            && self.min_samples_leaf.0 <= self.min_samples_leaf.1
            && self.feature_subsample.0 <= self.feature_subsample.1
            && self.row_subsample.0 <= self.row_subsample.1;
        if !ok {
            return Err(StackError::Parameter("range lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    /// Draws one parameter set; every field is drawn unconditionally so the
    /// stream position does not depend on range widths.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> GbdtParams {
        GbdtParams {
            n_rounds: rng.random_range(self.n_rounds.0..=self.n_rounds.1),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            learning_rate: rng.random_range(self.learning_rate.0..=self.learning_rate.1),
            min_samples_leaf: rng.random_range(self.min_samples_leaf.0..=self.min_samples_leaf.1),
            feature_subsample: rng.random_range(self.feature_subsample.0..=self.feature_subsample.1),
            row_subsample: rng.random_range(self.row_subsample.0..=self.row_subsample.1),
            seed: rng.random(),
            ..GbdtParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<GbdtModel>,
}

impl Ensemble {
    /// Per-member probability matrices, in member order.
    pub fn member_predictions(&self, x: &Matrix) -> Result<Vec<Vec<ClassProbs>>, StackError> {
        self.members.par_iter().map(|m| m.predict(x)).collect()
    }

    /// Arithmetic mean of member probabilities, summed in member order.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<ClassProbs>, StackError> {
        let per = self.member_predictions(x)?;
        let k = per.len() as f64;
        let mut out = vec![[0.0; NUM_CLASSES]; x.rows()];
        for probs in &per {
            for (acc, p) in out.iter_mut().zip(probs) {
                for c in 0..NUM_CLASSES {
                    acc[c] += p[c];
                }
            }
        }
        for acc in &mut out {
            for v in acc.iter_mut() {
                *v /= k;
            }
        }
        Ok(out)
    }
}

pub fn random_param_ensemble(
    x: &Matrix,
    y: &[usize],
    ranges: &ParamRanges,
    n_members: usize,
    seed: u64,
) -> Result<Ensemble, StackError> {
    if n_members < 1 {
        return Err(StackError::Parameter("n_members must be >= 1".into()));
    }
    ranges.validate()?;
    let mut rng = rng_from_seed(SeedHasher::new("ensemble").u64(seed).finish());
    let params: Vec<GbdtParams> = (0..n_members).map(|_| ranges.sample(&mut rng)).collect();
    for p in &params {
        p.validate()?;
    }
    let members = params
        .par_iter()
        .map(|p| train_gbdt(x, y, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble { members })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ranges() -> ParamRanges {
        ParamRanges {
            n_rounds: (5, 20),
            ..Default::default()
        }
    }

    fn fixture() -> (Matrix, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, (i / 7) as f64, ((i * 13) % 11) as f64])
            .collect();
        let y = (0..40).map(|i| (i % 7) * 5 / 7).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_member_equals_its_model() {
        let (x, y) = fixture();
        let e = random_param_ensemble(&x, &y, &small_ranges(), 1, 5).unwrap();
        assert_eq!(e.predict(&x).unwrap(), e.members[0].predict(&x).unwrap());
    }

    #[test]
    fn averages_stay_on_simplex_and_are_deterministic() {
        let (x, y) = fixture();
        let a = random_param_ensemble(&x, &y, &small_ranges(), 4, 5).unwrap();
        let b = random_param_ensemble(&x, &y, &small_ranges(), 4, 5).unwrap();
        assert_eq!(a, b);
        for p in a.predict(&x).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sampled_params_respect_ranges() {
        let r = ParamRanges::default();
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let p = r.sample(&mut rng);
            assert!((100..=400).contains(&p.n_rounds));
            assert!((2..=5).contains(&p.max_depth));
            assert!((0.03..=0.3).contains(&p.learning_rate));
            assert!((0.6..=1.0).contains(&p.row_subsample));
            assert!((0.6..=1.0).contains(&p.feature_subsample));
        }
    }

    #[test]
    fn zero_members_rejected() {
        let (x, y) = fixture();
        assert!(random_param_ensemble(&x, &y, &small_ranges(), 0, 5).is_err());
    }
}
