//! Building footprints: GeoJSON ingestion and exact polygon geometry.
//!
//! Only the exterior ring of each polygon is read. Interior rings are logged
//! and dropped. Coordinates are planar pixel coordinates of the source map.

use std::collections::HashSet;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::{Scalar, CLASS_NAMES, NUM_CLASSES, NUM_MAPS};

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("document is not a GeoJSON FeatureCollection")]
    NotFeatureCollection,
    #[error("feature {id}: {reason}")]
    Feature { id: String, reason: String },
    #[error("unknown roof material {0:?}")]
    UnknownMaterial(String),
    #[error("duplicate building id {id:?} in map {map_id}")]
    DuplicateId { id: String, map_id: u8 },
    #[error("map id {0} out of range 0..{NUM_MAPS}")]
    MapId(usize),
    #[error("invalid polygon: {0}")]
    Polygon(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Point::new(self.x + dx, self.y + dy)
    }

    pub fn distance(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Simple polygon given by its exterior ring.
///
/// The closing vertex is never stored: a ring `a b c a` is kept as `a b c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T> {
    exterior: Vec<Point<T>>,
}

impl<T: Scalar> Polygon<T> {
    /// Builds a polygon, dropping a repeated closing vertex.
    pub fn new(mut exterior: Vec<Point<T>>) -> Result<Self, GeoError> {
        if exterior.len() > 1 && exterior.first() == exterior.last() {
            exterior.pop();
        }
        if exterior.len() < 3 {
            return Err(GeoError::Polygon(format!(
                "needs at least 3 distinct ring vertices, got {}",
                exterior.len()
            )));
        }
        if exterior.iter().any(|p| !p.is_finite()) {
            return Err(GeoError::Polygon("non-finite coordinate".into()));
        }
        Ok(Polygon { exterior })
    }

    pub fn exterior(&self) -> &[Point<T>] {
        &self.exterior
    }

    pub fn len(&self) -> usize {
        self.exterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exterior.is_empty()
    }

    fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.exterior.len();
        (0..n).map(move |i| (self.exterior[i], self.exterior[(i + 1) % n]))
    }

    /// Ring vertices relative to the bbox minimum. The bbox does not depend on
    /// vertex order, so reversed rings see the same shifted coordinates.
    fn shifted(&self) -> (Point<T>, Vec<Point<T>>) {
        let (lo, _) = self.bbox();
        let pts = self
            .exterior
            .iter()
            .map(|p| Point::new(p.x - lo.x, p.y - lo.y))
            .collect();
        (lo, pts)
    }

    /// Twice the signed area.
    ///
    /// Positive and negative cross terms are summed separately in ascending
    /// order, which makes the magnitude exactly orientation independent.
    fn signed_double_area(&self) -> T {
        let (_, pts) = self.shifted();
        let n = pts.len();
        let (mut pos, mut neg): (Vec<T>, Vec<T>) = (Vec::new(), Vec::new());
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            let t = a.x * b.y - b.x * a.y;
            if t >= T::zero() {
                pos.push(t);
            } else {
                neg.push(-t);
            }
        }
        let ordered_sum = |mut v: Vec<T>| {
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            v.into_iter().fold(T::zero(), |acc, t| acc + t)
        };
        ordered_sum(pos) - ordered_sum(neg)
    }

    /// Shoelace area, independent of orientation.
    pub fn area(&self) -> T {
        self.signed_double_area().abs() / T::from_usize_exact(2)
    }

    fn vertex_mean(&self) -> Point<T> {
        let n = T::from_usize_exact(self.exterior.len());
        let sx: T = self.exterior.iter().map(|p| p.x).sum();
        let sy: T = self.exterior.iter().map(|p| p.y).sum();
        Point::new(sx / n, sy / n)
    }

    /// Area-weighted centroid; falls back to the vertex mean for zero-area rings.
    pub fn centroid(&self) -> Point<T> {
        let (lo, pts) = self.shifted();
        let n = pts.len();
        let (mut cx, mut cy, mut acc) = (T::zero(), T::zero(), T::zero());
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            let cross = a.x * b.y - b.x * a.y;
            acc += cross;
            cx += (a.x + b.x) * cross;
            cy += (a.y + b.y) * cross;
        }
        if acc == T::zero() {
            return self.vertex_mean();
        }
        let six_a = T::from_usize_exact(3) * acc;
        Point::new(lo.x + cx / six_a, lo.y + cy / six_a)
    }

    /// Componentwise (min, max) over the vertices.
    pub fn bbox(&self) -> (Point<T>, Point<T>) {
        let first = self.exterior[0];
        self.exterior
            .iter()
            .fold((first, first), |(lo, hi), p| {
                (
                    Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Point::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            })
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Polygon {
            exterior: self.exterior.iter().map(|p| p.translate(dx, dy)).collect(),
        }
    }

    pub fn reversed(&self) -> Self {
        let mut exterior = self.exterior.clone();
        exterior.reverse();
        Polygon { exterior }
    }

    /// Even-odd point test using horizontal crossings to the right of `p`.
    pub fn contains(&self, p: Point<T>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) && p.x < crossing_x(a, b, p.y) {
                inside = !inside;
            }
        }
        inside
    }
}

/// x coordinate where edge `a→b` meets the horizontal line at `y`.
///
/// Shared by the point test and the scanline rasterizer so the two agree
/// bit-for-bit.
#[inline]
pub(crate) fn crossing_x<T: Scalar>(a: Point<T>, b: Point<T>, y: T) -> T {
    (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x
}

/// Maps a roof material name to its class index.
pub fn class_index(name: &str) -> Option<u8> {
    CLASS_NAMES.iter().position(|c| *c == name).map(|i| i as u8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub id: String,
    pub map_id: u8,
    pub polygon: Polygon<f64>,
    /// Class index in `0..NUM_CLASSES` when the material is known.
    pub label: Option<u8>,
    /// False for automatically labelled maps that must not be used for validation.
    pub verified: bool,
}

impl Building {
    pub fn new(
        id: impl Into<String>,
        map_id: u8,
        polygon: Polygon<f64>,
        label: Option<u8>,
        verified: bool,
    ) -> Result<Self, GeoError> {
        let id = id.into();
        if map_id as usize >= NUM_MAPS {
            return Err(GeoError::MapId(map_id as usize));
        }
        if let Some(l) = label {
            if l as usize >= NUM_CLASSES {
                return Err(GeoError::Feature {
                    id,
                    reason: format!("label {l} out of range"),
                });
            }
        }
        Ok(Building {
            id,
            map_id,
            polygon,
            label,
            verified,
        })
    }
}

/// Buildings of one or more maps; ids are unique within each map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildingSet {
    buildings: Vec<Building>,
}

impl BuildingSet {
    pub fn new(buildings: Vec<Building>) -> Result<Self, GeoError> {
        let mut seen = HashSet::new();
        for b in &buildings {
            if !seen.insert((b.map_id, b.id.as_str())) {
                return Err(GeoError::DuplicateId {
                    id: b.id.clone(),
                    map_id: b.map_id,
                });
            }
        }
        Ok(BuildingSet { buildings })
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn into_buildings(self) -> Vec<Building> {
        self.buildings
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    pub fn class_names(&self) -> &'static [&'static str; NUM_CLASSES] {
        &CLASS_NAMES
    }

    /// Concatenates sets, re-checking id uniqueness.
    pub fn merge(sets: impl IntoIterator<Item = BuildingSet>) -> Result<Self, GeoError> {
        BuildingSet::new(sets.into_iter().flat_map(|s| s.buildings).collect())
    }

    /// Sorted, deduplicated map ids present in the set.
    pub fn map_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.buildings.iter().map(|b| b.map_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

fn json_error(text: &str, err: &serde_json::Error) -> GeoError {
    // serde_json reports 1-based line and byte column.
    let line = err.line().max(1);
    let offset = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum::<usize>()
        + err.column().saturating_sub(1);
    GeoError::Json {
        offset: offset.min(text.len()),
        message: err.to_string(),
    }
}

fn feature_err(id: &str, reason: impl Into<String>) -> GeoError {
    GeoError::Feature {
        id: id.to_string(),
        reason: reason.into(),
    }
}

fn parse_ring(id: &str, ring: &Value) -> Result<Vec<Point<f64>>, GeoError> {
    let coords = ring
        .as_array()
        .ok_or_else(|| feature_err(id, "linear ring is not an array"))?;
    coords
        .iter()
        .map(|c| {
            let pair = c
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| feature_err(id, "position must have at least 2 numbers"))?;
            let x = pair[0].as_f64();
            let y = pair[1].as_f64();
            match (x, y) {
                (Some(x), Some(y)) => Ok(Point::new(x, y)),
                _ => Err(feature_err(id, "non-numeric coordinate")),
            }
        })
        .collect()
}

fn parse_feature(feature: &Value, index: usize, map_id: u8) -> Result<Building, GeoError> {
    let props = feature.get("properties").and_then(Value::as_object);
    let id = match props.and_then(|p| p.get("id")) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(feature_err(&format!("#{index}"), "missing string property `id`")),
    };

    let geometry = feature
        .get("geometry")
        .ok_or_else(|| feature_err(&id, "missing geometry"))?;
    let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    if gtype != "Polygon" {
        return Err(feature_err(&id, format!("geometry type {gtype:?} is not Polygon")));
    }
    let rings = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| feature_err(&id, "polygon without rings"))?;
    if rings.len() > 1 {
        log::warn!("feature {id}: ignoring {} interior ring(s)", rings.len() - 1);
    }
    let polygon = Polygon::new(parse_ring(&id, &rings[0])?).map_err(|e| match e {
        GeoError::Polygon(msg) => feature_err(&id, msg),
        other => other,
    })?;

    let label = match props.and_then(|p| p.get("roof_material")) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => {
            Some(class_index(s).ok_or_else(|| GeoError::UnknownMaterial(s.clone()))?)
        }
        Some(other) => return Err(feature_err(&id, format!("roof_material {other} is not a string"))),
    };
    let verified = match props.and_then(|p| p.get("verified")) {
        None | Some(Value::Null) => true,
        Some(Value::Bool(v)) => *v,
        Some(other) => return Err(feature_err(&id, format!("verified {other} is not a boolean"))),
    };
    Building::new(id, map_id, polygon, label, verified)
}

/// Parses a GeoJSON FeatureCollection of roof polygons belonging to `map_id`.
///
/// Absent or null `roof_material` leaves the building unlabelled; absent
/// `verified` defaults to true.
pub fn parse_feature_collection(text: &str, map_id: usize) -> Result<BuildingSet, GeoError> {
    if map_id >= NUM_MAPS {
        return Err(GeoError::MapId(map_id));
    }
    let doc: Value = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::NotFeatureCollection);
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or(GeoError::NotFeatureCollection)?;
    let buildings = features
        .iter()
        .enumerate()
        .map(|(i, f)| parse_feature(f, i, map_id as u8))
        .collect::<Result<Vec<_>, _>>()?;
    BuildingSet::new(buildings)
}

/// Serializes buildings to the GeoJSON subset read by [`parse_feature_collection`].
///
/// Rings are written closed (first vertex repeated).
pub fn to_feature_collection<'a>(buildings: impl IntoIterator<Item = &'a Building>) -> String {
    let features: Vec<Value> = buildings
        .into_iter()
        .map(|b| {
            let mut ring: Vec<Value> = b
                .polygon
                .exterior()
                .iter()
                .map(|p| json!([p.x, p.y]))
                .collect();
            ring.push(ring[0].clone());
            let mut props = Map::new();
            props.insert("id".into(), Value::String(b.id.clone()));
            if let Some(l) = b.label {
                props.insert("roof_material".into(), Value::String(CLASS_NAMES[l as usize].into()));
            }
            props.insert("verified".into(), Value::Bool(b.verified));
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": props,
            })
        })
        .collect();
    serde_json::to_string(&json!({ "type": "FeatureCollection", "features": features }))
        .expect("GeoJSON values always serialize")
}
