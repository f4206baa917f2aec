use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rooftop::stacking::MetricsReport;
use rooftop::tensorops::{read_tensor, write_tensor, Bias, Tensor4};
use rooftop_cli::manifest::RunManifest;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rooftop"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn rooftop")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("rooftop-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", s(&data), "--maps", "2", "--buildings", "40", "--map-size", "320", "--seed", "7"]);
    data
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(bin(&["folds"]).status.code(), Some(2));
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn pipeline_errors_exit_with_one() {
    let d = scratch("missing");
    let out = bin(&["folds", "--dataset", s(&d.join("absent.json")), "--out", s(&d.join("f.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn one_chip_per_building_and_manifest_digests() {
    let d = scratch("chips");
    let data = small_dataset(&d);
    let chips = d.join("chips");
    ok(&["chip", "--dataset", s(&data.join("dataset.json")), "--out", s(&chips), "--margin", "20"]);
    let buildings: usize = (0..2)
        .map(|m| {
            let text = fs::read_to_string(data.join(format!("map_{m}.geojson"))).unwrap();
            rooftop::geodata::parse_feature_collection(&text, m).unwrap().len()
        })
        .sum();
    assert_eq!(buildings, 80);
    let index = fs::read_to_string(chips.join("chips.csv")).unwrap();
    assert_eq!(index.lines().count(), buildings + 1);
    let pngs = ["0", "1"]
        .iter()
        .map(|m| fs::read_dir(chips.join(m)).unwrap().count())
        .sum::<usize>();
    assert_eq!(pngs, buildings);

    let m: RunManifest = serde_json::from_str(&fs::read_to_string(chips.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "chip");
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.inputs.len(), 3);
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn evaluate_perfect_predictions_and_report() {
    let d = scratch("eval");
    let data = small_dataset(&d);
    let truth = fs::read_to_string(data.join("truth.csv")).unwrap();
    let mut preds = String::from("map_id,id,p0,p1,p2,p3,p4\n");
    for line in truth.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let label: usize = f[2].parse().unwrap();
        let p: Vec<&str> = (0..5).map(|c| if c == label { "1" } else { "0" }).collect();
        preds.push_str(&format!("{},{},{}\n", f[0], f[1], p.join(",")));
    }
    fs::write(d.join("perfect.csv"), preds).unwrap();
    let metrics = d.join("perfect.json");
    ok(&[
        "evaluate",
        "--predictions",
        s(&d.join("perfect.csv")),
        "--truth",
        s(&data.join("truth.csv")),
        "--out",
        s(&metrics),
    ]);
    let m: MetricsReport = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m.log_loss, 0.0);
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.n, truth.lines().count() - 1);

    let out = ok(&["report", "--metrics", &format!("perfect={}", s(&metrics))]);
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.contains("| perfect | 0.00000 | 1.0000 |"), "{md}");
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn adapt_weights_keeps_bias_and_scales() {
    let d = scratch("adapt");
    let w: Tensor4<f32> = Tensor4::from_fn(3, 3, 3, 2, |u, v, c, o| (u + 2 * v + 3 * c + 5 * o) as f32).unwrap();
    let mut buf = Vec::new();
    write_tensor(&w, Some(&Bias::new(vec![0.5, -1.0])), &mut buf).unwrap();
    fs::write(d.join("w.rtns"), buf).unwrap();
    ok(&[
        "adapt-weights",
        "--input",
        s(&d.join("w.rtns")),
        "--output",
        s(&d.join("w6.rtns")),
        "--mode",
        "proportional",
        "--channels",
        "6",
    ]);
    let (w6, b) = read_tensor::<f32, _>(fs::read(d.join("w6.rtns")).unwrap().as_slice()).unwrap();
    assert_eq!(w6.shape(), (3, 3, 6, 2));
    assert_eq!(w6.get(1, 2, 4, 1), 0.5 * w.get(1, 2, 1, 1));
    assert_eq!(b.unwrap(), Bias::new(vec![0.5, -1.0]));

    let out = bin(&[
        "adapt-weights",
        "--input",
        s(&d.join("w.rtns")),
        "--output",
        s(&d.join("w2.rtns")),
        "--mode",
        "zero",
        "--channels",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn augment_preview_writes_a_sheet() {
    let d = scratch("preview");
    let data = small_dataset(&d);
    let chips = d.join("chips");
    ok(&["chip", "--dataset", s(&data.join("dataset.json")), "--out", s(&chips)]);
    let cfg = d.join("aug.json");
    fs::write(&cfg, r#"{"output_size": 64}"#).unwrap();
    let sheet = d.join("sheet.png");
    ok(&[
        "augment-preview",
        "--chips",
        s(&chips),
        "--out",
        s(&sheet),
        "--building",
        "b00003",
        "--count",
        "6",
        "--cols",
        "3",
        "--config",
        s(&cfg),
    ]);
    let img = rooftop::raster::read_rgb_png(&sheet).unwrap();
    assert_eq!((img.width, img.height), (3 * 66, 2 * 66));
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn ingest_validates_and_resolves_paths() {
    let d = scratch("ingest");
    let data = small_dataset(&d);
    let out = d.join("ds.json");
    ok(&[
        "ingest",
        "--map",
        &format!("0:{}:{}", s(&data.join("map_0.png")), s(&data.join("map_0.geojson"))),
        "--out",
        s(&out),
    ]);
    ok(&["folds", "--dataset", s(&out), "--k", "3", "--out", s(&d.join("f.csv"))]);
    let bad = bin(&["ingest", "--map", &format!("0:{}:{}", s(&data.join("map_0.png")), s(&data.join("truth.csv"))), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    fs::remove_dir_all(d).unwrap();
}
