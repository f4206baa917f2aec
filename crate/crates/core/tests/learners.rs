use proptest::prelude::*;
use rand::Rng;
use rooftop::geodata::{Building, BuildingSet};
use rooftop::seed::rng_from_seed;
use rooftop::stacking::{
    gbdt_predict, log_loss, make_folds, oof_predict, train_gbdt, FoldSlot, GbdtModel, GbdtParams, Matrix, ModelFactory,
    Predictor, StackError,
};
use rooftop::{ClassProbs, Point, Polygon};

fn fixture(seed: u64, n: usize, d: usize, classes: usize) -> (Matrix, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut y: Vec<usize> = (0..n)
        .map(|i| {
            let s = data[i * d] + if d > 1 { 0.5 * data[i * d + 1] } else { 0.0 } + rng.random_range(-0.5..0.5);
            (((s + 2.5) / 5.0 * classes as f64).floor() as usize).min(classes - 1)
        })
        .collect();
    y[0] = 0;
    y[1] = classes - 1;
    (Matrix::new(n, d, data).unwrap(), y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn boosting_never_worse_than_prior(seed in any::<u64>(), d in 1usize..4, classes in 2usize..6, depth in 1usize..4, lr in 0.01..0.3f64) {
        let (x, y) = fixture(seed, 80, d, classes);
        let p = GbdtParams { n_rounds: 20, max_depth: depth, learning_rate: lr, ..Default::default() };
        let m = train_gbdt(&x, &y, &p).unwrap();
        prop_assert_eq!(m.tree_count(), 20 * 5);
        let probs = gbdt_predict(&m, &x).unwrap();
        let prior = gbdt_predict(&GbdtModel::prior_only(d, &y), &x).unwrap();
        prop_assert!(log_loss(&probs, &y).unwrap() <= log_loss(&prior, &y).unwrap() + 1e-12);
        for p in &probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

fn buildings(seed: u64, per_map: &[usize], unverified_map: Option<u8>) -> BuildingSet {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for (m, &n) in per_map.iter().enumerate() {
        for i in 0..n {
            let x = rng.random_range(0.0..100.0);
            let p = Polygon::new(vec![Point::new(x, 0.0), Point::new(x + 1.0, 0.0), Point::new(x, 1.0)]).unwrap();
            let label = (rng.random::<f64>() < 0.8).then(|| rng.random_range(0..5));
            let verified = unverified_map != Some(m as u8);
            out.push(Building::new(format!("b{i:04}"), m as u8, p, label, verified).unwrap());
        }
    }
    BuildingSet::new(out).unwrap()
}

#[test]
fn folds_partition_labeled_buildings() {
    let mut rng = rng_from_seed(77);
    for _ in 0..20 {
        let k = rng.random_range(2..8);
        let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(5 * k..120)).collect();
        let bs = buildings(rng.random(), &sizes, Some(2));
        let f = make_folds(&bs, k, rng.random()).unwrap();
        let b = bs.buildings();
        for (i, s) in f.slots.iter().enumerate() {
            match s {
                FoldSlot::Validation(_) => assert!(b[i].label.is_some() && b[i].verified),
                FoldSlot::TrainOnly => assert!(b[i].label.is_some() && !b[i].verified),
                FoldSlot::Unassigned => assert!(b[i].label.is_none()),
            }
        }
        for map in 0..2u8 {
            let sizes: Vec<usize> = (0..k)
                .map(|fold| f.validation_rows(fold).iter().filter(|&&r| b[r].map_id == map).count())
                .collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
        }
    }
}

struct Prior(ClassProbs);

impl Predictor for Prior {
    fn predict(&self, _: usize) -> Result<ClassProbs, StackError> {
        Ok(self.0)
    }
}

struct PriorFactory(Vec<usize>);

impl ModelFactory for PriorFactory {
    type Model = Prior;
    fn fit(&self, rows: &[usize]) -> Result<Prior, StackError> {
        let mut p = [0.0; 5];
        for &r in rows {
            p[self.0[r]] += 1.0 / rows.len() as f64;
        }
        Ok(Prior(p))
    }
}

#[test]
fn oof_rows_come_from_models_that_never_saw_them() {
    let bs = buildings(5, &[60, 45], Some(1));
    let f = make_folds(&bs, 5, 1).unwrap();
    let y: Vec<usize> = bs.buildings().iter().map(|b| b.label.unwrap_or(0) as usize).collect();
    let out = oof_predict(&PriorFactory(y), &f).unwrap();
    for (row, slot) in f.slots.iter().enumerate() {
        if let FoldSlot::Validation(fold) = slot {
            assert!(!out.train_sets[*fold].contains(&row));
        }
        assert!((out.probs[row].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for (fold, set) in out.train_sets.iter().enumerate() {
        assert!(set.iter().all(|&r| f.slots[r] != FoldSlot::Validation(fold) && f.slots[r] != FoldSlot::Unassigned));
    }
}
