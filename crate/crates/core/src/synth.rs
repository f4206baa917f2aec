//! Synthetic maps with spatially clustered roof labels, and a noisy oracle
//! base model that reads roof colour.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{Building, BuildingSet, GeoError};
use crate::raster::{rasterize_mask, Chip, ImageRgb, RasterError};
use crate::seed::{rng_from_seed, SeedHasher};
use crate::stacking::BaseModel;
use crate::{ClassProbs, Point, Polygon, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("could not place building {placed} of {requested} after {attempts} attempts")]
    Capacity {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("truth file: {0}")]
    Truth(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Roof colour model of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub mean: [f64; 3],
    /// Per-pixel noise standard deviation.
    pub std: f64,
}

/// Class frequencies of the contest's roof annotations.
pub const CONTEST_CLASS_COUNTS: [usize; NUM_CLASSES] = [1518, 14817, 669, 5241, 308];

fn contest_prior() -> [f64; NUM_CLASSES] {
    let total: usize = CONTEST_CLASS_COUNTS.iter().sum();
    CONTEST_CLASS_COUNTS.map(|c| c as f64 / total as f64)
}

pub fn default_palette() -> [Texture; NUM_CLASSES] {
    [
        Texture { mean: [168.0, 166.0, 160.0], std: 10.0 },
        Texture { mean: [122.0, 150.0, 178.0], std: 10.0 },
        Texture { mean: [152.0, 122.0, 92.0], std: 10.0 },
        Texture { mean: [112.0, 118.0, 126.0], std: 10.0 },
        Texture { mean: [150.0, 72.0, 66.0], std: 10.0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub map_size_px: u32,
    pub n_buildings: usize,
    pub n_label_clusters: usize,
    pub label_noise: f64,
    pub class_prior: [f64; NUM_CLASSES],
    /// Inclusive side length range of the rectangular roofs.
    pub building_size_range: (u32, u32),
    pub texture_palette: [Texture; NUM_CLASSES],
    /// Standard deviation of a per-building colour offset, which makes
    /// neighbouring classes confusable.
    pub tint_std: f64,
    /// Whether generated labels count as verified.
    pub verified: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            map_size_px: 2048,
            n_buildings: 1000,
            n_label_clusters: 12,
            label_noise: 0.05,
            class_prior: contest_prior(),
            building_size_range: (16, 40),
            texture_palette: default_palette(),
            tint_std: 18.0,
            verified: true,
            seed: 42,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Parameter(m.to_string()));
        if self.map_size_px == 0 || self.n_buildings == 0 || self.n_label_clusters == 0 {
            return bad("map size, building count and cluster count must be positive");
        }
        let (lo, hi) = self.building_size_range;
        if lo < 2 || lo > hi || hi >= self.map_size_px {
            return bad("building_size_range must satisfy 2 <= lo <= hi < map_size_px");
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must be in [0, 1]");
        }
        if self.class_prior.iter().any(|&p| !(p >= 0.0)) || (self.class_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class_prior must be nonnegative and sum to 1");
        }
        if !(self.tint_std >= 0.0) || self.texture_palette.iter().any(|t| !(t.std >= 0.0)) {
            return bad("noise levels must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMap {
    pub image: ImageRgb,
    pub buildings: BuildingSet,
}

const GROUND: [f64; 3] = [96.0, 104.0, 84.0];
const GAP_PX: i64 = 2;
const ATTEMPTS_PER_BUILDING: usize = 500;

fn sample_class<R: Rng>(rng: &mut R, prior: &[f64; NUM_CLASSES]) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return c as u8;
        }
    }
    prior.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u8
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Generates one map. The random stream depends on `(p.seed, map_id)` only.
pub fn generate_map(p: &SynthParams, map_id: u8) -> Result<SyntheticMap, SynthError> {
    p.validate()?;
    let mut rng = rng_from_seed(SeedHasher::new("synth-map").u64(p.seed).u64(map_id as u64).finish());
    let size = p.map_size_px as i64;
    let (smin, smax) = p.building_size_range;

    let clusters: Vec<(Point, u8)> = (0..p.n_label_clusters)
        .map(|_| {
            let c = Point::new(rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
            (c, sample_class(&mut rng, &p.class_prior))
        })
        .collect();

    let mut rects: Vec<[i64; 4]> = Vec::with_capacity(p.n_buildings);
    let mut attempts = 0usize;
    while rects.len() < p.n_buildings {
        if attempts >= ATTEMPTS_PER_BUILDING * p.n_buildings {
            return Err(SynthError::Capacity {
                placed: rects.len(),
                requested: p.n_buildings,
                attempts,
            });
        }
        attempts += 1;
        let w = rng.random_range(smin..=smax) as i64;
        let h = rng.random_range(smin..=smax) as i64;
        let x = rng.random_range(0..=size - w);
        let y = rng.random_range(0..=size - h);
        let r = [x, y, x + w, y + h];
        let clear = rects
            .iter()
            .all(|o| r[0] >= o[2] + GAP_PX || o[0] >= r[2] + GAP_PX || r[1] >= o[3] + GAP_PX || o[1] >= r[3] + GAP_PX);
        if clear {
            rects.push(r);
        }
    }

    let mut image = ImageRgb::new(p.map_size_px, p.map_size_px)?;
    for px in image.pixels.chunks_exact_mut(3) {
        for (v, g) in px.iter_mut().zip(GROUND) {
            *v = clamp_u8(g + rng.random_range(-8.0..=8.0));
        }
    }

    let tint = Normal::new(0.0, p.tint_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut buildings = Vec::with_capacity(rects.len());
    for (i, r) in rects.iter().enumerate() {
        let (x0, y0, x1, y1) = (r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64);
        let poly = Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])?;
        let centre = Point::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let nearest = clusters
            .iter()
            .min_by(|a, b| a.0.distance(&centre).total_cmp(&b.0.distance(&centre)))
            .expect("at least one cluster");
        let flip: f64 = rng.random();
        let replacement = sample_class(&mut rng, &p.class_prior);
        let label = if flip < p.label_noise { replacement } else { nearest.1 };

        let tex = p.texture_palette[label as usize];
        let offset: [f64; 3] = std::array::from_fn(|_| if p.tint_std > 0.0 { tint.sample(&mut rng) } else { 0.0 });
        let w = (r[2] - r[0]) as u32;
        let h = (r[3] - r[1]) as u32;
        let mask = rasterize_mask(&poly, Point::new(x0, y0), w, h);
        for j in 0..h {
            for k in 0..w {
                if mask.data[(j * w + k) as usize] == 0 {
                    continue;
                }
                let rgb: [u8; 3] = std::array::from_fn(|ch| {
                    let n: f64 = if tex.std > 0.0 {
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * tex.std
                    } else {
                        0.0
                    };
                    clamp_u8(tex.mean[ch] + offset[ch] + n)
                });
                image.put(r[0] as u32 + k, r[1] as u32 + j, rgb);
            }
        }
        buildings.push(Building::new(format!("b{i:05}"), map_id, poly, Some(label), p.verified)?);
    }
    Ok(SyntheticMap {
        image,
        buildings: BuildingSet::new(buildings)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub confusion_level: f64,
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            confusion_level: 0.3,
            seed: 0,
        }
    }
}

/// Nearest-palette colour classifier mixed with seeded simplex noise.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    pub params: OracleParams,
    pub palette: [Texture; NUM_CLASSES],
    name: String,
}

impl OracleModel {
    pub fn new(params: OracleParams, palette: [Texture; NUM_CLASSES]) -> Result<Self, SynthError> {
        if !(0.0..=1.0).contains(&params.confusion_level) {
            return Err(SynthError::Parameter(format!(
                "confusion_level {} not in [0, 1]",
                params.confusion_level
            )));
        }
        Ok(OracleModel {
            params,
            palette,
            name: format!("oracle_c{}_s{}", params.confusion_level, params.seed),
        })
    }

    /// Mean RGB over mask pixels, if any.
    pub fn masked_mean(chip: &Chip) -> Option<[f64; 3]> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (i, &m) in chip.mask.iter().enumerate() {
            if m != 0 {
                for (ch, s) in sum.iter_mut().enumerate() {
                    *s += chip.rgb[i * 3 + ch] as f64;
                }
                n += 1;
            }
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }

    /// Palette class closest to the chip's mean roof colour.
    pub fn readout(&self, chip: &Chip) -> Option<usize> {
        let mean = Self::masked_mean(chip)?;
        let d = |t: &Texture| (0..3).map(|c| (t.mean[c] - mean[c]).powi(2)).sum::<f64>();
        (0..NUM_CLASSES).min_by(|&a, &b| d(&self.palette[a]).total_cmp(&d(&self.palette[b])))
    }
}

impl BaseModel for OracleModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, chip: &Chip) -> ClassProbs {
        let c = self.params.confusion_level;
        let seed = SeedHasher::new("oracle")
            .u64(self.params.seed)
            .u64(chip.width as u64)
            .bytes(&chip.rgb)
            .bytes(&chip.mask)
            .finish();
        let mut rng = rng_from_seed(seed);
        let e: [f64; NUM_CLASSES] = std::array::from_fn(|_| Exp1.sample(&mut rng));
        let total: f64 = e.iter().sum();
        let mut p = match self.readout(chip) {
            Some(k) => std::array::from_fn(|i| if i == k { 1.0 - c } else { 0.0 }),
            None => [(1.0 - c) / NUM_CLASSES as f64; NUM_CLASSES],
        };
        for (pi, ei) in p.iter_mut().zip(e) {
            *pi += c * ei / total;
        }
        let s: f64 = p.iter().sum();
        p.map(|v| v / s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub map_id: u8,
    pub id: String,
    pub label: u8,
}

/// Hides a seeded `test_fraction` of each map's labels. Returns the set with
/// those labels removed and the hidden ground truth, sorted by `(map_id, id)`.
pub fn hide_labels(bs: &BuildingSet, test_fraction: f64, seed: u64) -> Result<(BuildingSet, Vec<TruthRecord>), SynthError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SynthError::Parameter(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let mut buildings = bs.buildings().to_vec();
    let mut truth = Vec::new();
    for map in bs.map_ids() {
        let mut rows: Vec<usize> = (0..buildings.len()).filter(|&i| buildings[i].map_id == map).collect();
        rows.sort_by(|&a, &b| buildings[a].id.cmp(&buildings[b].id));
        let mut rng = rng_from_seed(SeedHasher::new("hide").u64(seed).u64(map as u64).finish());
        rows.shuffle(&mut rng);
        let n_hide = (rows.len() as f64 * test_fraction).round() as usize;
        for &r in &rows[..n_hide] {
            if let Some(label) = buildings[r].label.take() {
                truth.push(TruthRecord {
                    map_id: map,
                    id: buildings[r].id.clone(),
                    label,
                });
            }
        }
    }
    truth.sort_by(|a, b| (a.map_id, &a.id).cmp(&(b.map_id, &b.id)));
    Ok((BuildingSet::new(buildings)?, truth))
}

pub fn write_truth_csv<W: Write>(rows: &[TruthRecord], sink: W) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(source: R) -> Result<Vec<TruthRecord>, SynthError> {
    let mut r = csv::Reader::from_reader(source);
    let rows = r.deserialize().collect::<Result<Vec<TruthRecord>, _>>()?;
    if let Some(bad) = rows.iter().find(|t| t.label as usize >= NUM_CLASSES) {
        return Err(SynthError::Truth(format!("label {} out of range for {}", bad.label, bad.id)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::extract_chip;
    use crate::spatial::SpatialIndex;
    use crate::stacking::argmax;

    fn small(n: usize) -> SynthParams {
        SynthParams {
            map_size_px: 512,
            n_buildings: n,
            ..Default::default()
        }
    }

    #[test]
    fn one_building() {
        let m = generate_map(&small(1), 0).unwrap();
        assert_eq!(m.buildings.len(), 1);
        let b = &m.buildings.buildings()[0];
        assert!(b.label.unwrap() < 5);
        assert_eq!(b.polygon.len(), 4);
    }

    #[test]
    fn deterministic_and_map_dependent() {
        let p = small(50);
        assert_eq!(generate_map(&p, 0).unwrap(), generate_map(&p, 0).unwrap());
        assert_ne!(generate_map(&p, 0).unwrap().image, generate_map(&p, 1).unwrap().image);
    }

    #[test]
    fn single_cluster_without_noise_is_uniform() {
        let p = SynthParams {
            n_label_clusters: 1,
            label_noise: 0.0,
            ..small(60)
        };
        let m = generate_map(&p, 0).unwrap();
        let first = m.buildings.buildings()[0].label;
        assert!(m.buildings.buildings().iter().all(|b| b.label == first));
    }

    #[test]
    fn no_overlap() {
        let m = generate_map(&small(150), 0).unwrap();
        let b = m.buildings.buildings();
        for i in 0..b.len() {
            for j in i + 1..b.len() {
                let (a0, a1) = b[i].polygon.bbox();
                let (b0, b1) = b[j].polygon.bbox();
                assert!(a1.x <= b0.x || b1.x <= a0.x || a1.y <= b0.y || b1.y <= a0.y);
            }
        }
    }

    #[test]
    fn capacity_error() {
        let p = SynthParams {
            map_size_px: 64,
            n_buildings: 100,
            ..Default::default()
        };
        assert!(matches!(generate_map(&p, 0), Err(SynthError::Capacity { .. })));
    }

    #[test]
    fn neighbours_share_labels() {
        let p = SynthParams {
            label_noise: 0.1,
            n_label_clusters: 6,
            class_prior: [0.2; 5],
            ..SynthParams::default()
        };
        let m = generate_map(&p, 0).unwrap();
        let idx = SpatialIndex::build(&m.buildings).unwrap();
        let b = m.buildings.buildings();
        let agree = (0..b.len())
            .filter(|&i| {
                let mut counts = [0usize; 5];
                for nb in idx.knn(i, 8).neighbors {
                    counts[b[nb.row].label.unwrap() as usize] += 1;
                }
                let maj = (0..5).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
                maj == b[i].label.unwrap() as usize
            })
            .count();
        assert!(agree as f64 / b.len() as f64 >= 0.6, "{agree}");
    }

    #[test]
    fn oracle_zero_confusion_on_clean_chip_is_one_hot() {
        let p = SynthParams {
            tint_std: 0.0,
            texture_palette: default_palette().map(|t| Texture { std: 0.0, ..t }),
            ..small(20)
        };
        let m = generate_map(&p, 0).unwrap();
        let oracle = OracleModel::new(OracleParams { confusion_level: 0.0, seed: 1 }, p.texture_palette).unwrap();
        for b in m.buildings.buildings() {
            let chip = extract_chip(&m.image, b, 10).unwrap();
            let probs = oracle.predict(&chip);
            let l = b.label.unwrap() as usize;
            assert_eq!(probs[l], 1.0);
        }
    }

    #[test]
    fn oracle_full_confusion_ignores_content() {
        let m = generate_map(&small(10), 0).unwrap();
        let oracle = OracleModel::new(OracleParams { confusion_level: 1.0, seed: 1 }, default_palette()).unwrap();
        let chip = extract_chip(&m.image, &m.buildings.buildings()[0], 10).unwrap();
        let p = oracle.predict(&chip);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p, oracle.predict(&chip));
        assert!(OracleModel::new(OracleParams { confusion_level: 1.5, seed: 0 }, default_palette()).is_err());
    }

    #[test]
    fn oracle_is_informative_but_imperfect() {
        let p = SynthParams::default();
        let m = generate_map(&p, 0).unwrap();
        let oracle = OracleModel::new(OracleParams { confusion_level: 0.3, seed: 42 }, p.texture_palette).unwrap();
        let b = m.buildings.buildings();
        let correct = b
            .iter()
            .filter(|b| argmax(&oracle.predict(&extract_chip(&m.image, b, 0).unwrap())) == b.label.unwrap() as usize)
            .count();
        let acc = correct as f64 / b.len() as f64;
        assert!(acc > 0.5 && acc < 0.99, "accuracy {acc}");
    }

    #[test]
    fn hiding_partitions_each_map() {
        let a = generate_map(&small(100), 0).unwrap().buildings;
        let (train, truth) = hide_labels(&a, 0.5, 3).unwrap();
        assert_eq!(truth.len(), 50);
        assert_eq!(train.buildings().iter().filter(|b| b.label.is_some()).count(), 50);
        assert_eq!(hide_labels(&a, 0.5, 3).unwrap().1, truth);
        for t in &truth {
            let orig = a.buildings().iter().find(|b| b.id == t.id).unwrap();
            assert_eq!(orig.label, Some(t.label));
        }
        assert!(hide_labels(&a, 1.0, 3).is_err());
    }

    #[test]
    fn truth_csv_round_trip() {
        let rows = vec![TruthRecord { map_id: 1, id: "b00002".into(), label: 3 }];
        let mut buf = Vec::new();
        write_truth_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("map_id,id,label\n"));
        assert_eq!(read_truth_csv(buf.as_slice()).unwrap(), rows);
    }
}
