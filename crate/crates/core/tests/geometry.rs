use proptest::prelude::*;
use rooftop::geodata::{parse_feature_collection, to_feature_collection, Building, BuildingSet};
use rooftop::{Point, Polygon};

fn ring() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1000.0..1000.0f64, -1000.0..1000.0f64), 3..12)
}

fn poly(v: &[(f64, f64)]) -> Polygon {
    Polygon::new(v.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
}

/// Textbook shoelace without any reordering, used as a loose oracle.
fn naive_area(v: &[(f64, f64)]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| v[i].0 * v[(i + 1) % n].1 - v[(i + 1) % n].0 * v[i].1)
        .sum::<f64>()
        .abs()
        / 2.0
}

proptest! {
    #[test]
    fn area_matches_shoelace(v in ring()) {
        let a = poly(&v).area();
        prop_assert!(a >= 0.0);
        prop_assert!((a - naive_area(&v)).abs() <= 1e-6 * (1.0 + a));
    }

    #[test]
    fn area_is_orientation_independent(v in ring()) {
        let p = poly(&v);
        prop_assert_eq!(p.area(), p.reversed().area());
    }

    #[test]
    fn area_is_translation_invariant(v in ring(), dx in -500.0..500.0f64, dy in -500.0..500.0f64) {
        let p = poly(&v);
        let q = p.translate(dx, dy);
        prop_assert!((p.area() - q.area()).abs() <= 1e-6 * (1.0 + p.area()));
    }

    #[test]
    fn centroid_translates_with_polygon(v in ring(), dx in -500.0..500.0f64, dy in -500.0..500.0f64) {
        let p = poly(&v);
        prop_assume!(p.area() > 1.0);
        let c = p.centroid();
        let d = p.translate(dx, dy).centroid();
        prop_assert!((d.x - c.x - dx).abs() < 1e-6 && (d.y - c.y - dy).abs() < 1e-6);
    }

    #[test]
    fn bbox_bounds_all_vertices(v in ring()) {
        let p = poly(&v);
        let (lo, hi) = p.bbox();
        for q in p.exterior() {
            prop_assert!(lo.x <= q.x && q.x <= hi.x && lo.y <= q.y && q.y <= hi.y);
        }
    }

    #[test]
    fn rectangle_centroid_inside(x in -100.0..100.0f64, y in -100.0..100.0f64, w in 0.5..50.0f64, h in 0.5..50.0f64) {
        let p = poly(&[(x, y), (x + w, y), (x + w, y + h), (x, y + h)]);
        let c = p.centroid();
        prop_assert!((c.x - (x + w / 2.0)).abs() < 1e-9 && (c.y - (y + h / 2.0)).abs() < 1e-9);
        prop_assert!(p.contains(c));
    }

    #[test]
    fn geojson_round_trip(rings in prop::collection::vec(ring(), 1..6), labels in prop::collection::vec(prop::option::of(0u8..5), 6)) {
        let buildings: Vec<Building> = rings
            .iter()
            .enumerate()
            .map(|(i, r)| Building::new(format!("id{i}"), 3, poly(r), labels[i], i % 2 == 0).unwrap())
            .collect();
        let set = BuildingSet::new(buildings).unwrap();
        let text = to_feature_collection(set.buildings());
        let back = parse_feature_collection(&text, 3).unwrap();
        prop_assert_eq!(back, set);
    }
}

#[test]
fn closing_vertex_is_dropped() {
    let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
        "geometry":{"type":"Polygon","coordinates":[[[0,0],[2,0],[2,2],[0,2],[0,0]]]},
        "properties":{"id":"x","roof_material":"other"}}]}"#;
    let bs = parse_feature_collection(text, 0).unwrap();
    assert_eq!(bs.buildings()[0].polygon.len(), 4);
    assert_eq!(bs.buildings()[0].label, Some(4));
    assert_eq!(bs.buildings()[0].polygon.area(), 4.0);
}
