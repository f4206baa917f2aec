//! Neighbourhood meta-features.
//!
//! Buildings are indexed per map by centroid in a static k-d tree. Neighbour
//! order is by squared centroid distance, then by building id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{Building, BuildingSet};
use crate::stacking::{Matrix, OofTable};
use crate::{ClassProbs, Point, NUM_CLASSES, NUM_MAPS};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed feature file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    pos: Point,
    map_id: u8,
}

/// Static 2-d tree over the rows of one map. `perm[lo..hi]` is a subtree whose
/// root sits at the midpoint; the split axis alternates with depth.
#[derive(Debug, Clone)]
struct KdTree {
    perm: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row of the neighbour in the indexed building set.
    pub row: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
    /// Fewer than `k` other buildings exist on the map.
    pub shortfall: bool,
}

/// Immutable centroid index grouped by map.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    entries: Vec<Entry>,
    ids: Vec<String>,
    trees: BTreeMap<u8, KdTree>,
}

struct Candidate<'a> {
    d2: f64,
    id: &'a str,
    row: usize,
}

impl Candidate<'_> {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[inline]
fn coord(p: Point, axis: usize) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}

#[inline]
fn dist2(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    dx * dx + dy * dy
}

impl KdTree {
    fn build(mut rows: Vec<usize>, entries: &[Entry]) -> Self {
        fn rec(s: &mut [usize], depth: usize, e: &[Entry]) {
            if s.len() <= 1 {
                return;
            }
            let axis = depth % 2;
            let mid = s.len() / 2;
            s.select_nth_unstable_by(mid, |&a, &b| {
                coord(e[a].pos, axis)
                    .total_cmp(&coord(e[b].pos, axis))
                    .then(a.cmp(&b))
            });
            let (left, right) = s.split_at_mut(mid);
            rec(left, depth + 1, e);
            rec(&mut right[1..], depth + 1, e);
        }
        rec(&mut rows, 0, entries);
        KdTree { perm: rows }
    }

    #[allow(clippy::too_many_arguments)]
    fn visit<'a>(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        q: Point,
        idx: &'a SpatialIndex,
        // squared pruning bound; `None` means unbounded
        bound: &mut dyn FnMut() -> Option<f64>,
        accept: &mut dyn FnMut(Candidate<'a>),
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let row = self.perm[mid];
        let p = idx.entries[row].pos;
        accept(Candidate {
            d2: dist2(p, q),
            id: &idx.ids[row],
            row,
        });
        let axis = depth % 2;
        let diff = coord(q, axis) - coord(p, axis);
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.visit(near.0, near.1, depth + 1, q, idx, bound, accept);
        // equal distances must still be visited for the id tie-break
        if bound().is_none_or(|b| diff * diff <= b) {
            self.visit(far.0, far.1, depth + 1, q, idx, bound, accept);
        }
    }
}

impl SpatialIndex {
    /// Indexes building centroids; rows follow `bs` order.
    pub fn build(bs: &BuildingSet) -> Result<Self, FeatureError> {
        if bs.is_empty() {
            return Err(FeatureError::Config("cannot index an empty building set".into()));
        }
        let entries: Vec<Entry> = bs
            .buildings()
            .iter()
            .map(|b| Entry {
                pos: b.polygon.centroid(),
                map_id: b.map_id,
            })
            .collect();
        let ids = bs.buildings().iter().map(|b| b.id.clone()).collect();
        let mut by_map: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_map.entry(e.map_id).or_default().push(i);
        }
        let trees = by_map
            .into_iter()
            .map(|(m, rows)| (m, KdTree::build(rows, &entries)))
            .collect();
        Ok(SpatialIndex { entries, ids, trees })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn centroid(&self, row: usize) -> Point {
        self.entries[row].pos
    }

    pub fn map_id(&self, row: usize) -> u8 {
        self.entries[row].map_id
    }

    /// Number of buildings on a map.
    pub fn map_len(&self, map_id: u8) -> usize {
        self.trees.get(&map_id).map_or(0, |t| t.perm.len())
    }

    /// The `k` nearest other buildings on the same map, ascending.
    pub fn knn(&self, row: usize, k: usize) -> KnnResult {
        let q = self.entries[row].pos;
        let tree = &self.trees[&self.entries[row].map_id];
        let heap = std::cell::RefCell::new(BinaryHeap::<Candidate>::with_capacity(k + 1));
        if k > 0 {
            tree.visit(
                0,
                tree.perm.len(),
                0,
                q,
                self,
                &mut || {
                    let h = heap.borrow();
                    if h.len() < k {
                        None
                    } else {
                        h.peek().map(|c| c.d2)
                    }
                },
                &mut |c| {
                    if c.row == row {
                        return;
                    }
                    let mut h = heap.borrow_mut();
                    if h.len() < k {
                        h.push(c);
                    } else if h.peek().is_some_and(|w| c < *w) {
                        h.pop();
                        h.push(c);
                    }
                },
            );
        }
        let found = heap.into_inner().into_sorted_vec();
        let shortfall = found.len() < k;
        KnnResult {
            neighbors: found
                .into_iter()
                .map(|c| Neighbor {
                    row: c.row,
                    distance: c.d2.sqrt(),
                })
                .collect(),
            shortfall,
        }
    }

    /// Other buildings on the same map with distance `<= r`, ascending.
    pub fn radius_query(&self, row: usize, r: f64) -> Vec<Neighbor> {
        let q = self.entries[row].pos;
        let tree = &self.trees[&self.entries[row].map_id];
        let r2 = r * r;
        let mut found: Vec<Candidate> = Vec::new();
        tree.visit(0, tree.perm.len(), 0, q, self, &mut || Some(r2), &mut |c| {
            if c.row != row && c.d2 <= r2 {
                found.push(c);
            }
        });
        found.sort();
        found
            .into_iter()
            .map(|c| Neighbor {
                row: c.row,
                distance: c.d2.sqrt(),
            })
            .collect()
    }
}

/// Class histogram of labeled neighbours, normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelDistribution {
    pub probs: ClassProbs,
    pub labeled: usize,
}

/// Uniform when no neighbour carries a label.
pub fn label_distribution<'a>(neighbors: impl IntoIterator<Item = &'a Building>) -> LabelDistribution {
    let mut counts = [0usize; NUM_CLASSES];
    for b in neighbors {
        if let Some(l) = b.label {
            counts[l as usize] += 1;
        }
    }
    let labeled: usize = counts.iter().sum();
    let probs = if labeled == 0 {
        [1.0 / NUM_CLASSES as f64; NUM_CLASSES]
    } else {
        counts.map(|c| c as f64 / labeled as f64)
    };
    LabelDistribution { probs, labeled }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub k_neighbors: usize,
    pub radii: Vec<f64>,
    /// Scale centroids to [0,1] by the per-map centroid bounding box.
    pub normalize_coords: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            k_neighbors: 8,
            radii: vec![100.0, 300.0, 1000.0],
            normalize_coords: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.k_neighbors < 1 {
            return Err(FeatureError::Config("k_neighbors must be >= 1".into()));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(FeatureError::Config("radii must be positive".into()));
        }
        if self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FeatureError::Config("radii must be strictly ascending".into()));
        }
        Ok(())
    }

    /// Column names in matrix order.
    pub fn column_names(&self, models: &[String]) -> Vec<String> {
        let mut cols = Vec::new();
        for m in models {
            cols.extend((0..NUM_CLASSES).map(|c| format!("oof_{m}_{c}")));
        }
        cols.extend((0..NUM_MAPS).map(|m| format!("map_{m}")));
        cols.extend(["area", "log_area", "cx", "cy"].map(String::from));
        for r in 1..=self.k_neighbors {
            cols.extend(["dist", "area", "dx", "dy"].map(|f| format!("nn{r}_{f}")));
        }
        cols.extend((0..NUM_CLASSES).map(|c| format!("knn_label_{c}")));
        for r in &self.radii {
            cols.extend((0..NUM_CLASSES).map(|c| format!("r{r}_label_{c}")));
            cols.push(format!("r{r}_labeled_count"));
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub description: String,
}

fn describe(name: &str) -> String {
    let d = if name.starts_with("oof_") {
        "out-of-fold base model probability"
    } else if name.starts_with("map_") {
        "map one-hot"
    } else if name == "area" {
        "roof polygon area, px^2"
    } else if name == "log_area" {
        "ln(1 + area)"
    } else if name == "cx" || name == "cy" {
        "centroid scaled by the per-map centroid bounding box"
    } else if name.ends_with("_dist") {
        "centroid distance to the ranked neighbour, px; 2x map diagonal when missing"
    } else if name.ends_with("_area") {
        "area of the ranked neighbour; 0 when missing"
    } else if name.ends_with("_dx") || name.ends_with("_dy") {
        "neighbour centroid minus own centroid, px; 0 when missing"
    } else if name.ends_with("_labeled_count") {
        "labeled neighbours within the radius"
    } else {
        "neighbour label distribution; uniform 0.2 when no labeled neighbour"
    };
    d.to_string()
}

/// Second-level feature rows ordered by `(map_id, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub map_ids: Vec<u8>,
    /// Input building row for each output row.
    pub source_rows: Vec<usize>,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub config: FeatureConfig,
    pub models: Vec<String>,
    pub columns: Vec<ColumnMeta>,
    pub n_rows: usize,
}

struct MapStats {
    min: Point,
    max: Point,
    diagonal: f64,
}

fn map_stats(bs: &BuildingSet, idx: &SpatialIndex) -> BTreeMap<u8, MapStats> {
    let mut out: BTreeMap<u8, MapStats> = BTreeMap::new();
    let mut extent: BTreeMap<u8, (Point, Point)> = BTreeMap::new();
    for (row, b) in bs.buildings().iter().enumerate() {
        let c = idx.centroid(row);
        let s = out.entry(b.map_id).or_insert(MapStats {
            min: c,
            max: c,
            diagonal: 0.0,
        });
        s.min = Point::new(s.min.x.min(c.x), s.min.y.min(c.y));
        s.max = Point::new(s.max.x.max(c.x), s.max.y.max(c.y));
        let (lo, hi) = b.polygon.bbox();
        let e = extent.entry(b.map_id).or_insert((lo, hi));
        e.0 = Point::new(e.0.x.min(lo.x), e.0.y.min(lo.y));
        e.1 = Point::new(e.1.x.max(hi.x), e.1.y.max(hi.y));
    }
    for (m, s) in out.iter_mut() {
        let (lo, hi) = extent[m];
        s.diagonal = lo.distance(&hi).max(1.0);
    }
    out
}

fn scaled(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// Builds one feature row per building. `oof.probs` must follow `bs` order.
pub fn assemble_features(
    bs: &BuildingSet,
    idx: &SpatialIndex,
    oof: &OofTable,
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    cfg.validate()?;
    let n = bs.len();
    if idx.len() != n {
        return Err(FeatureError::Dimension(format!(
            "index has {} rows, building set {n}",
            idx.len()
        )));
    }
    if oof.probs.len() != n || oof.probs.iter().any(|r| r.len() != oof.models.len()) {
        return Err(FeatureError::Dimension(format!(
            "OOF table has {} rows for {n} buildings and {} models",
            oof.probs.len(),
            oof.models.len()
        )));
    }
    let columns = cfg.column_names(&oof.models);
    let stats = map_stats(bs, idx);
    let b = bs.buildings();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| (b[i].map_id, &b[i].id).cmp(&(b[j].map_id, &b[j].id)));

    let rows: Vec<Vec<f64>> = order
        .par_iter()
        .map(|&row| {
            let me = &b[row];
            let st = &stats[&me.map_id];
            let c = idx.centroid(row);
            let mut v = Vec::with_capacity(columns.len());
            for p in &oof.probs[row] {
                v.extend_from_slice(p);
            }
            v.extend((0..NUM_MAPS).map(|m| f64::from(u8::from(m == me.map_id as usize))));
            let area = me.polygon.area();
            v.extend([area, area.ln_1p()]);
            if cfg.normalize_coords {
                v.extend([scaled(c.x, st.min.x, st.max.x), scaled(c.y, st.min.y, st.max.y)]);
            } else {
                v.extend([c.x, c.y]);
            }
            let knn = idx.knn(row, cfg.k_neighbors);
            for r in 0..cfg.k_neighbors {
                match knn.neighbors.get(r) {
                    Some(nb) => {
                        let p = idx.centroid(nb.row);
                        v.extend([nb.distance, b[nb.row].polygon.area(), p.x - c.x, p.y - c.y]);
                    }
                    None => v.extend([2.0 * st.diagonal, 0.0, 0.0, 0.0]),
                }
            }
            v.extend(label_distribution(knn.neighbors.iter().map(|nb| &b[nb.row])).probs);
            // radius sets are nested, so one query at the largest radius suffices
            let widest = idx.radius_query(row, *cfg.radii.last().expect("validated"));
            for &r in &cfg.radii {
                let d = label_distribution(
                    widest
                        .iter()
                        .filter(|nb| dist2(idx.centroid(nb.row), c) <= r * r)
                        .map(|nb| &b[nb.row]),
                );
                v.extend(d.probs);
                v.push(d.labeled as f64);
            }
            v
        })
        .collect();

    let data: Vec<f64> = rows.concat();
    let matrix = Matrix::new(n, columns.len(), data).map_err(|e| FeatureError::Dimension(e.to_string()))?;
    Ok(FeatureMatrix {
        ids: order.iter().map(|&i| b[i].id.clone()).collect(),
        map_ids: order.iter().map(|&i| b[i].map_id).collect(),
        source_rows: order,
        columns,
        matrix,
    })
}

impl FeatureMatrix {
    pub fn sidecar(&self, cfg: &FeatureConfig, models: &[String]) -> FeatureSidecar {
        FeatureSidecar {
            config: cfg.clone(),
            models: models.to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| ColumnMeta {
                    name: c.clone(),
                    description: describe(c),
                })
                .collect(),
            n_rows: self.ids.len(),
        }
    }

    /// CSV with header `id,map_id,<columns>`; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["id".to_string(), "map_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.ids.len() {
            let mut rec = vec![self.ids[i].clone(), self.map_ids[i].to_string()];
            rec.extend(self.matrix.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a CSV written by [`FeatureMatrix::write_csv`]. `source_rows` is
    /// set to the file order.
    pub fn read_csv<R: Read>(source: R) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_reader(source);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "id" || &header[1] != "map_id" {
            return Err(FeatureError::Format("header must start with id,map_id".into()));
        }
        let columns: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let (mut ids, mut map_ids, mut data) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            map_ids.push(
                rec[1]
                    .parse::<u8>()
                    .map_err(|e| FeatureError::Format(format!("row {line}: map_id: {e}")))?,
            );
            for f in rec.iter().skip(2) {
                data.push(
                    f.parse::<f64>()
                        .map_err(|e| FeatureError::Format(format!("row {line}: {e}")))?,
                );
            }
        }
        let n = ids.len();
        let matrix = Matrix::new(n, columns.len(), data).map_err(|e| FeatureError::Format(e.to_string()))?;
        Ok(FeatureMatrix {
            columns,
            ids,
            map_ids,
            source_rows: (0..n).collect(),
            matrix,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Polygon;

    fn square(id: &str, map: u8, x: f64, y: f64, label: Option<u8>) -> Building {
        let p = Polygon::new(vec![
            Point::new(x - 1.0, y - 1.0),
            Point::new(x + 1.0, y - 1.0),
            Point::new(x + 1.0, y + 1.0),
            Point::new(x - 1.0, y + 1.0),
        ])
        .unwrap();
        Building::new(id, map, p, label, true).unwrap()
    }

    #[test]
    fn collinear_knn() {
        let bs = BuildingSet::new(vec![
            square("a", 0, 0.0, 0.0, None),
            square("b", 0, 1.0, 0.0, None),
            square("c", 0, 5.0, 0.0, None),
        ])
        .unwrap();
        let idx = SpatialIndex::build(&bs).unwrap();
        let r = idx.knn(0, 2);
        let d: Vec<f64> = r.neighbors.iter().map(|n| n.distance).collect();
        assert_eq!(d, vec![1.0, 5.0]);
        assert!(!r.shortfall);
        assert!(idx.knn(0, 3).shortfall);
        assert!(r.neighbors.iter().all(|n| n.row != 0));
    }

    #[test]
    fn single_building_and_map_isolation() {
        let one = BuildingSet::new(vec![square("a", 0, 0.0, 0.0, None)]).unwrap();
        let idx = SpatialIndex::build(&one).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(idx.knn(0, 1).neighbors.is_empty());
        let two = BuildingSet::new(vec![
            square("a", 0, 0.0, 0.0, None),
            square("a", 1, 0.5, 0.0, None),
            square("b", 0, 10.0, 0.0, None),
        ])
        .unwrap();
        let idx = SpatialIndex::build(&two).unwrap();
        assert_eq!(idx.knn(0, 5).neighbors.iter().map(|n| n.row).collect::<Vec<_>>(), vec![2]);
        assert!(SpatialIndex::build(&BuildingSet::default()).is_err());
    }

    #[test]
    fn radius_boundary_is_inclusive() {
        let bs = BuildingSet::new(vec![square("a", 0, 0.0, 0.0, None), square("b", 0, 3.0, 4.0, None)]).unwrap();
        let idx = SpatialIndex::build(&bs).unwrap();
        assert_eq!(idx.radius_query(0, 5.0).len(), 1);
        assert!(idx.radius_query(0, 4.999).is_empty());
    }

    #[test]
    fn ties_break_by_id() {
        let bs = BuildingSet::new(vec![
            square("q", 0, 0.0, 0.0, None),
            square("z", 0, 1.0, 0.0, None),
            square("m", 0, -1.0, 0.0, None),
            square("a", 0, 0.0, 1.0, None),
        ])
        .unwrap();
        let idx = SpatialIndex::build(&bs).unwrap();
        let rows: Vec<usize> = idx.knn(0, 2).neighbors.iter().map(|n| n.row).collect();
        assert_eq!(rows, vec![3, 2]);
    }

    #[test]
    fn label_distributions() {
        let bs = [
            square("a", 0, 0.0, 0.0, Some(1)),
            square("b", 0, 0.0, 0.0, Some(1)),
            square("c", 0, 0.0, 0.0, Some(3)),
            square("d", 0, 0.0, 0.0, None),
        ];
        let d = label_distribution(&bs);
        assert_eq!(d.labeled, 3);
        assert_eq!(d.probs, [0.0, 2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0]);
        let e = label_distribution(&bs[3..]);
        assert_eq!((e.probs, e.labeled), ([0.2; 5], 0));
    }

    #[test]
    fn column_arithmetic() {
        let bs = BuildingSet::new(vec![square("a", 0, 0.0, 0.0, Some(2))]).unwrap();
        let idx = SpatialIndex::build(&bs).unwrap();
        let oof = OofTable::single("m", vec![[0.2; 5]]);
        let cfg = FeatureConfig {
            k_neighbors: 1,
            radii: vec![100.0],
            normalize_coords: true,
        };
        let fm = assemble_features(&bs, &idx, &oof, &cfg).unwrap();
        assert_eq!(fm.columns.len(), 31);
        assert_eq!(fm.matrix.cols(), 31);
        let row = fm.matrix.row(0);
        // missing neighbour: twice the diagonal of the 2x2 map extent
        let dist = row[fm.columns.iter().position(|c| c == "nn1_dist").unwrap()];
        assert!((dist - 2.0 * 8f64.sqrt()).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn misaligned_oof_rejected() {
        let bs = BuildingSet::new(vec![square("a", 0, 0.0, 0.0, None), square("b", 0, 5.0, 0.0, None)]).unwrap();
        let idx = SpatialIndex::build(&bs).unwrap();
        let oof = OofTable::single("m", vec![[0.2; 5]]);
        assert!(matches!(
            assemble_features(&bs, &idx, &oof, &FeatureConfig::default()),
            Err(FeatureError::Dimension(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let bs = BuildingSet::new(vec![
            square("b", 0, 0.0, 0.0, Some(1)),
            square("a", 0, 7.3, 1.1, Some(4)),
            square("c", 1, 2.0, 2.0, None),
        ])
        .unwrap();
        let idx = SpatialIndex::build(&bs).unwrap();
        let oof = OofTable::single("m", vec![[0.1, 0.2, 0.3, 0.15, 0.25]; 3]);
        let fm = assemble_features(&bs, &idx, &oof, &FeatureConfig::default()).unwrap();
        assert_eq!(fm.ids, vec!["a", "b", "c"]);
        assert_eq!(fm.source_rows, vec![1, 0, 2]);
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.matrix, fm.matrix);
        assert_eq!(back.columns, fm.columns);
        let side = fm.sidecar(&FeatureConfig::default(), &oof.models);
        assert!(side.columns.iter().any(|c| c.description.contains("2x map diagonal")));
    }

    #[test]
    fn bad_config() {
        assert!(FeatureConfig { k_neighbors: 0, ..Default::default() }.validate().is_err());
        assert!(FeatureConfig { radii: vec![300.0, 100.0], ..Default::default() }.validate().is_err());
    }
}
