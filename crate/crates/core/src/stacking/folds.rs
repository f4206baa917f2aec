//! Per-map random fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::StackError;
use crate::geodata::BuildingSet;
use crate::seed::{rng_from_seed, SeedHasher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldSlot {
    /// Held out in this fold; trained on in every other fold.
    Validation(usize),
    /// Labeled but unverified: trained on in every fold, never validated.
    TrainOnly,
    /// No label; prediction target only.
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// One slot per building, in building-set order.
    pub slots: Vec<FoldSlot>,
}

impl FoldAssignment {
    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        self.rows_where(|s| s == FoldSlot::Validation(fold))
    }

    /// Rows a fold's model may be trained on.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        self.rows_where(|s| match s {
            FoldSlot::Validation(f) => f != fold,
            FoldSlot::TrainOnly => true,
            FoldSlot::Unassigned => false,
        })
    }

    /// All rows with a validation fold.
    pub fn validated_rows(&self) -> Vec<usize> {
        self.rows_where(|s| matches!(s, FoldSlot::Validation(_)))
    }

    fn rows_where(&self, pred: impl Fn(FoldSlot) -> bool) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, &s)| pred(s))
            .map(|(i, _)| i)
            .collect()
    }

    /// Fold column as written to CSV: fold index, -1 train-only, -2 unlabeled.
    pub fn slot_code(slot: FoldSlot) -> i64 {
        match slot {
            FoldSlot::Validation(f) => f as i64,
            FoldSlot::TrainOnly => -1,
            FoldSlot::Unassigned => -2,
        }
    }

    pub fn slot_from_code(code: i64) -> Option<FoldSlot> {
        match code {
            -1 => Some(FoldSlot::TrainOnly),
            -2 => Some(FoldSlot::Unassigned),
            f if f >= 0 => Some(FoldSlot::Validation(f as usize)),
            _ => None,
        }
    }
}

/// Deals the verified labeled buildings of each map round-robin into `k` folds
/// after a seeded shuffle. Buildings are ordered by id before shuffling, so the
/// result does not depend on input order.
pub fn make_folds(bs: &BuildingSet, k: usize, seed: u64) -> Result<FoldAssignment, StackError> {
    if k < 2 {
        return Err(StackError::Parameter(format!("need at least 2 folds, got {k}")));
    }
    let buildings = bs.buildings();
    let mut slots = vec![FoldSlot::Unassigned; buildings.len()];
    let mut per_map: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, b) in buildings.iter().enumerate() {
        match (b.label, b.verified) {
            (Some(_), true) => per_map.entry(b.map_id).or_default().push(i),
            (Some(_), false) => slots[i] = FoldSlot::TrainOnly,
            (None, _) => {}
        }
    }
    for (map_id, mut rows) in per_map {
        if rows.len() < k {
            return Err(StackError::TooFewLabeled {
                map_id,
                labeled: rows.len(),
                k,
            });
        }
        rows.sort_by(|&a, &b| buildings[a].id.cmp(&buildings[b].id));
        let mut rng = rng_from_seed(SeedHasher::new("folds").u64(seed).u64(map_id as u64).finish());
        rows.shuffle(&mut rng);
        for (n, row) in rows.into_iter().enumerate() {
            slots[row] = FoldSlot::Validation(n % k);
        }
    }
    Ok(FoldAssignment { k, seed, slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{Building, Point, Polygon};

    fn set(n: usize, map_id: u8, verified: bool) -> Vec<Building> {
        (0..n)
            .map(|i| {
                let p = Polygon::new(vec![
                    Point::new(i as f64, 0.0),
                    Point::new(i as f64 + 1.0, 0.0),
                    Point::new(i as f64, 1.0),
                ])
                .unwrap();
                Building::new(format!("m{map_id}b{i}"), map_id, p, Some((i % 5) as u8), verified).unwrap()
            })
            .collect()
    }

    #[test]
    fn ten_buildings_five_folds() {
        let bs = BuildingSet::new(set(10, 0, true)).unwrap();
        let f = make_folds(&bs, 5, 1).unwrap();
        for fold in 0..5 {
            assert_eq!(f.validation_rows(fold).len(), 2);
            assert_eq!(f.training_rows(fold).len(), 8);
        }
        assert_eq!(make_folds(&bs, 5, 1).unwrap(), f);
        assert_ne!(make_folds(&bs, 5, 2).unwrap(), f);
    }

    #[test]
    fn unverified_and_unlabeled_rows() {
        let mut b = set(6, 0, true);
        b.extend(set(3, 1, false));
        b[0].label = None;
        let bs = BuildingSet::new(b).unwrap();
        let f = make_folds(&bs, 5, 3).unwrap();
        assert_eq!(f.slots[0], FoldSlot::Unassigned);
        assert!(f.slots[6..].iter().all(|&s| s == FoldSlot::TrainOnly));
        assert_eq!(f.training_rows(0).iter().filter(|&&r| r >= 6).count(), 3);
    }

    #[test]
    fn too_few_labeled_names_the_map() {
        let mut b = set(10, 0, true);
        b.extend(set(3, 4, true));
        let bs = BuildingSet::new(b).unwrap();
        match make_folds(&bs, 5, 0) {
            Err(StackError::TooFewLabeled { map_id, labeled, .. }) => {
                assert_eq!((map_id, labeled), (4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(make_folds(&bs, 1, 0), Err(StackError::Parameter(_))));
    }

    #[test]
    fn slot_codes_round_trip() {
        for s in [FoldSlot::Validation(3), FoldSlot::TrainOnly, FoldSlot::Unassigned] {
            assert_eq!(FoldAssignment::slot_from_code(FoldAssignment::slot_code(s)), Some(s));
        }
        assert_eq!(FoldAssignment::slot_from_code(-3), None);
    }
}
