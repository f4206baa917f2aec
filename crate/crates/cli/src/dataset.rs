//! Dataset descriptors and the small CSV formats exchanged between commands.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rooftop::geodata::{parse_feature_collection, BuildingSet};
use rooftop::raster::{read_rgb_png, ImageRgb};
use rooftop::stacking::{FoldAssignment, FoldSlot};
use rooftop::{ClassProbs, NUM_CLASSES, NUM_MAPS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub map_id: u8,
    /// Relative paths resolve against the dataset file's directory.
    pub image: PathBuf,
    pub footprints: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub maps: Vec<MapEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub dir: PathBuf,
    pub buildings: BuildingSet,
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.maps.is_empty() {
            bail!("dataset lists no maps");
        }
        let mut seen = [false; NUM_MAPS];
        for m in &self.maps {
            let slot = seen
                .get_mut(m.map_id as usize)
                .ok_or_else(|| anyhow!("map id {} outside 0..{NUM_MAPS}", m.map_id))?;
            if *slot {
                bail!("map id {} listed twice", m.map_id);
            }
            *slot = true;
        }
        Ok(())
    }
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading dataset {}", path.display()))?;
        let spec: DatasetSpec =
            serde_json::from_str(&text).with_context(|| format!("parsing dataset {}", path.display()))?;
        spec.validate()?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let sets = spec
            .maps
            .iter()
            .map(|m| {
                let p = resolve(&dir, &m.footprints);
                let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                parse_feature_collection(&text, m.map_id as usize).with_context(|| format!("parsing {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        let buildings = BuildingSet::merge(sets)?;
        Ok(Dataset { spec, dir, buildings })
    }

    pub fn image_path(&self, map_id: u8) -> Result<PathBuf> {
        let m = self
            .spec
            .maps
            .iter()
            .find(|m| m.map_id == map_id)
            .ok_or_else(|| anyhow!("map {map_id} not in dataset"))?;
        Ok(resolve(&self.dir, &m.image))
    }

    pub fn footprint_paths(&self) -> Vec<PathBuf> {
        self.spec.maps.iter().map(|m| resolve(&self.dir, &m.footprints)).collect()
    }

    pub fn load_image(&self, map_id: u8) -> Result<ImageRgb> {
        let p = self.image_path(map_id)?;
        read_rgb_png(&p).with_context(|| format!("reading image {}", p.display()))
    }

    /// Row of each `(map_id, id)` key.
    pub fn row_index(&self) -> HashMap<(u8, String), usize> {
        row_index(&self.buildings)
    }
}

pub fn row_index(bs: &BuildingSet) -> HashMap<(u8, String), usize> {
    bs.buildings()
        .iter()
        .enumerate()
        .map(|(i, b)| ((b.map_id, b.id.clone()), i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FoldRecord {
    map_id: u8,
    id: String,
    fold: i64,
}

pub fn write_folds(bs: &BuildingSet, f: &FoldAssignment) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (b, &s) in bs.buildings().iter().zip(&f.slots) {
        w.serialize(FoldRecord {
            map_id: b.map_id,
            id: b.id.clone(),
            fold: FoldAssignment::slot_code(s),
        })?;
    }
    Ok(w.into_inner()?)
}

/// Reads a fold file and orders its slots like `bs`.
pub fn read_folds(path: &Path, bs: &BuildingSet, seed: u64) -> Result<FoldAssignment> {
    let index = row_index(bs);
    let mut slots: Vec<Option<FoldSlot>> = vec![None; bs.len()];
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut k = 0;
    for rec in r.deserialize::<FoldRecord>() {
        let rec = rec?;
        let row = *index
            .get(&(rec.map_id, rec.id.clone()))
            .ok_or_else(|| anyhow!("fold file names unknown building {}:{}", rec.map_id, rec.id))?;
        let slot = FoldAssignment::slot_from_code(rec.fold)
            .ok_or_else(|| anyhow!("bad fold code {} for {}", rec.fold, rec.id))?;
        if let FoldSlot::Validation(f) = slot {
            k = k.max(f + 1);
        }
        slots[row] = Some(slot);
    }
    let slots = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| anyhow!("building {} missing from fold file", bs.buildings()[i].id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldAssignment { k, seed, slots })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProbRecord {
    map_id: u8,
    id: String,
    p0: f64,
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
}

/// Keyed probability rows (`map_id,id,p0..p4`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    pub keys: Vec<(u8, String)>,
    pub probs: Vec<ClassProbs>,
}

impl ProbTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for ((map_id, id), p) in self.keys.iter().zip(&self.probs) {
            w.serialize(ProbRecord {
                map_id: *map_id,
                id: id.clone(),
                p0: p[0],
                p1: p[1],
                p2: p[2],
                p3: p[3],
                p4: p[4],
            })?;
        }
        Ok(w.into_inner()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let (mut keys, mut probs) = (Vec::new(), Vec::new());
        for rec in r.deserialize::<ProbRecord>() {
            let rec = rec.with_context(|| format!("parsing {}", path.display()))?;
            let p = [rec.p0, rec.p1, rec.p2, rec.p3, rec.p4];
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                bail!("{}: invalid probabilities for {}", path.display(), rec.id);
            }
            keys.push((rec.map_id, rec.id));
            probs.push(p);
        }
        Ok(ProbTable { keys, probs })
    }

    /// Probabilities in `bs` row order; every building must be present.
    pub fn aligned(&self, bs: &BuildingSet) -> Result<Vec<ClassProbs>> {
        let lookup: HashMap<&(u8, String), &ClassProbs> = self.keys.iter().zip(&self.probs).collect();
        bs.buildings()
            .iter()
            .map(|b| {
                lookup
                    .get(&(b.map_id, b.id.clone()))
                    .map(|p| **p)
                    .ok_or_else(|| anyhow!("no prediction for building {}:{}", b.map_id, b.id))
            })
            .collect()
    }
}

/// Probabilities and labels for every `(map_id, id, label)` target.
pub fn join_targets(preds: &ProbTable, targets: &[(u8, String, u8)]) -> Result<(Vec<ClassProbs>, Vec<usize>)> {
    let lookup: HashMap<(u8, &str), &ClassProbs> =
        preds.keys.iter().zip(&preds.probs).map(|((m, id), p)| ((*m, id.as_str()), p)).collect();
    let mut probs = Vec::with_capacity(targets.len());
    let mut y = Vec::with_capacity(targets.len());
    for (m, id, label) in targets {
        let p = lookup
            .get(&(*m, id.as_str()))
            .ok_or_else(|| anyhow!("no prediction for labeled building {m}:{id}"))?;
        if *label as usize >= NUM_CLASSES {
            bail!("label {label} out of range for {id}");
        }
        probs.push(**p);
        y.push(*label as usize);
    }
    Ok((probs, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rooftop::geodata::Building;
    use rooftop::{Point, Polygon};

    fn set() -> BuildingSet {
        let tri = Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)]).unwrap();
        BuildingSet::new(vec![
            Building::new("a", 0, tri.clone(), Some(1), true).unwrap(),
            Building::new("a", 1, tri.clone(), None, true).unwrap(),
            Building::new("b", 1, tri, Some(2), false).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn prob_table_round_trip_and_alignment() {
        let bs = set();
        let t = ProbTable {
            keys: vec![(1, "b".into()), (0, "a".into()), (1, "a".into())],
            probs: vec![[0.1, 0.2, 0.3, 0.2, 0.2], [1.0, 0.0, 0.0, 0.0, 0.0], [0.2; 5]],
        };
        let dir = std::env::temp_dir().join(format!("rooftop-prob-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("p.csv");
        fs::write(&p, t.to_csv().unwrap()).unwrap();
        let back = ProbTable::read(&p).unwrap();
        assert_eq!(back, t);
        let a = back.aligned(&bs).unwrap();
        assert_eq!(a[0][0], 1.0);
        assert_eq!(a[2][2], 0.3);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn folds_round_trip() {
        let bs = set();
        let f = FoldAssignment {
            k: 1,
            seed: 3,
            slots: vec![FoldSlot::Validation(0), FoldSlot::Unassigned, FoldSlot::TrainOnly],
        };
        let dir = std::env::temp_dir().join(format!("rooftop-folds-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("f.csv");
        fs::write(&p, write_folds(&bs, &f).unwrap()).unwrap();
        assert_eq!(read_folds(&p, &bs, 3).unwrap(), f);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn duplicate_map_ids_rejected() {
        let e = MapEntry {
            map_id: 0,
            image: "a.png".into(),
            footprints: "a.geojson".into(),
        };
        let spec = DatasetSpec { maps: vec![e.clone(), e] };
        assert!(spec.validate().is_err());
    }
}
