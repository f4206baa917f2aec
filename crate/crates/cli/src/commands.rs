use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use rooftop::augment::{augment_pipeline, contact_sheet, AugmentConfig, SeedPolicy};
use rooftop::geodata::{parse_feature_collection, to_feature_collection, BuildingSet};
use rooftop::raster::{chip_file_name, decode_chip, encode_chip, encode_rgb_png, extract_chip, read_rgb_png, Chip};
use rooftop::spatial::{assemble_features, FeatureConfig, FeatureMatrix, SpatialIndex};
use rooftop::stacking::{evaluate, make_folds, MetricsReport, OofTable, TtaConfig, TtaMean};
use rooftop::synth::{generate_map, hide_labels, read_truth_csv, write_truth_csv, OracleModel, OracleParams, SynthParams};
use rooftop::tensorops::{adapt_weights_proportional, adapt_weights_zero, read_tensor, write_tensor};
use rooftop::{ClassProbs, CLASS_NAMES};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::dataset::{join_targets, read_folds, write_folds, Dataset, DatasetSpec, MapEntry, ProbTable};
use crate::manifest::{manifest_beside, sha256_hex, write_atomic, Outcome};
use crate::pipeline::{chip_predictions, oof_fixed, oof_prior, train_stack, StackModel, StackOptions};

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    let mut p: SynthParams = match &a.params {
        Some(path) => read_json(path)?,
        None => SynthParams::default(),
    };
    if let Some(v) = a.seed {
        p.seed = v;
    }
    if let Some(v) = a.buildings {
        p.n_buildings = v;
    }
    if let Some(v) = a.map_size {
        p.map_size_px = v;
    }
    if let Some(v) = a.clusters {
        p.n_label_clusters = v;
    }
    if let Some(v) = a.label_noise {
        p.label_noise = v;
    }
    p.validate()?;
    if a.maps == 0 || a.maps as usize > rooftop::NUM_MAPS {
        bail!("--maps must be in 1..={}", rooftop::NUM_MAPS);
    }
    fs::create_dir_all(&a.out)?;
    let mut out = Outcome::new(manifest_beside(&a.out, true));
    out.seed("synth", p.seed);

    let maps = (0..a.maps)
        .into_par_iter()
        .map(|m| {
            let mp = SynthParams {
                verified: !a.unverified.contains(&m),
                ..p.clone()
            };
            generate_map(&mp, m).map(|g| (m, g))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let all = BuildingSet::merge(maps.iter().map(|(_, g)| g.buildings.clone()))?;
    let (visible, truth) = hide_labels(&all, a.test_fraction, p.seed)?;

    let mut entries = Vec::new();
    for (m, g) in &maps {
        let image = PathBuf::from(format!("map_{m}.png"));
        let footprints = PathBuf::from(format!("map_{m}.geojson"));
        write_atomic(&a.out.join(&image), &encode_rgb_png(&g.image)?)?;
        let geo = to_feature_collection(visible.buildings().iter().filter(|b| b.map_id == *m));
        write_atomic(&a.out.join(&footprints), geo.as_bytes())?;
        out.output(a.out.join(&image)).output(a.out.join(&footprints));
        entries.push(MapEntry {
            map_id: *m,
            image,
            footprints,
        });
    }
    let mut truth_csv = Vec::new();
    write_truth_csv(&truth, &mut truth_csv)?;
    for (name, bytes) in [
        ("truth.csv", truth_csv),
        ("synth_params.json", to_json(&p)?),
        ("dataset.json", to_json(&DatasetSpec { maps: entries })?),
    ] {
        write_atomic(&a.out.join(name), &bytes)?;
        out.output(a.out.join(name));
    }
    info!(
        "{} maps, {} buildings, {} held-out labels",
        maps.len(),
        visible.len(),
        truth.len()
    );
    Ok(out)
}

fn parse_map_arg(s: &str) -> Result<(u8, PathBuf, PathBuf)> {
    let mut parts = s.splitn(3, ':');
    let (Some(id), Some(img), Some(geo)) = (parts.next(), parts.next(), parts.next()) else {
        bail!("--map expects MAP_ID:IMAGE:GEOJSON, got {s:?}");
    };
    let id: u8 = id.parse().with_context(|| format!("bad map id in {s:?}"))?;
    Ok((id, PathBuf::from(img), PathBuf::from(geo)))
}

pub fn ingest(a: &IngestArgs) -> Result<Outcome> {
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    let mut entries = Vec::new();
    for s in &a.maps {
        let (map_id, image, footprints) = parse_map_arg(s)?;
        let img = read_rgb_png(&image).with_context(|| format!("reading {}", image.display()))?;
        let text = fs::read_to_string(&footprints).with_context(|| format!("reading {}", footprints.display()))?;
        let bs = parse_feature_collection(&text, map_id as usize)
            .with_context(|| format!("parsing {}", footprints.display()))?;
        let outside = bs
            .buildings()
            .iter()
            .filter(|b| {
                let (lo, hi) = b.polygon.bbox();
                hi.x < 0.0 || hi.y < 0.0 || lo.x > img.width as f64 || lo.y > img.height as f64
            })
            .count();
        if outside > 0 {
            warn!("map {map_id}: {outside} footprints lie entirely outside the image");
        }
        let labeled = bs.buildings().iter().filter(|b| b.label.is_some()).count();
        info!(
            "map {map_id}: {}x{} image, {} buildings, {labeled} labeled",
            img.width,
            img.height,
            bs.len()
        );
        out.input(&image).input(&footprints);
        entries.push(MapEntry {
            map_id,
            image: fs::canonicalize(&image)?,
            footprints: fs::canonicalize(&footprints)?,
        });
    }
    let spec = DatasetSpec { maps: entries };
    spec.validate()?;
    write_atomic(&a.out, &to_json(&spec)?)?;
    out.output(&a.out);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChipRecord {
    pub map_id: u8,
    pub id: String,
    pub file: String,
    pub sha256: String,
}

pub fn chip(a: &ChipArgs) -> Result<Outcome> {
    let ds = Dataset::load(&a.dataset)?;
    let mut out = Outcome::new(manifest_beside(&a.out, true));
    out.input(&a.dataset);
    let mut records = Vec::with_capacity(ds.buildings.len());
    for m in ds.buildings.map_ids() {
        let img = ds.load_image(m)?;
        out.input(ds.image_path(m)?);
        let rows: Vec<_> = ds.buildings.buildings().iter().filter(|b| b.map_id == m).collect();
        let written = rows
            .par_iter()
            .map(|b| -> Result<ChipRecord> {
                let c = extract_chip(&img, b, a.margin)?;
                let bytes = encode_chip(&c)?;
                let file = chip_file_name(m, &b.id);
                write_atomic(&a.out.join(&file), &bytes)?;
                Ok(ChipRecord {
                    map_id: m,
                    id: b.id.clone(),
                    file,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(written);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &records {
        w.serialize(r)?;
    }
    let index = a.out.join("chips.csv");
    write_atomic(&index, &w.into_inner()?)?;
    out.output(index);
    info!("wrote {} chips", records.len());
    Ok(out)
}

pub fn read_chip_index(dir: &Path) -> Result<Vec<ChipRecord>> {
    let p = dir.join("chips.csv");
    let mut r = csv::Reader::from_path(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(r.deserialize().collect::<Result<Vec<ChipRecord>, _>>()?)
}

fn load_chip(dir: &Path, map_id: u8, id: &str) -> Result<Chip> {
    let p = dir.join(chip_file_name(map_id, id));
    let bytes = fs::read(&p).with_context(|| format!("reading chip {}", p.display()))?;
    let mut c = decode_chip(&bytes).with_context(|| format!("decoding {}", p.display()))?;
    c.building_id = id.to_string();
    Ok(c)
}

pub fn adapt_weights(a: &AdaptArgs) -> Result<Outcome> {
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let (w, bias) = read_tensor::<f32, _>(std::io::BufReader::new(file))?;
    let adapted = match a.mode {
        AdaptMode::Zero => adapt_weights_zero(&w, a.channels)?,
        AdaptMode::Proportional => adapt_weights_proportional(&w, a.channels)?,
    };
    let mut buf = Vec::new();
    write_tensor(&adapted, bias.as_ref(), &mut buf)?;
    write_atomic(&a.output, &buf)?;
    info!("{:?} -> {:?}", w.shape(), adapted.shape());
    let mut out = Outcome::new(manifest_beside(&a.output, false));
    out.input(&a.input).output(&a.output);
    Ok(out)
}

pub fn augment_preview(a: &PreviewArgs) -> Result<Outcome> {
    if a.count == 0 || a.cols == 0 {
        bail!("--count and --cols must be positive");
    }
    let cfg: AugmentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => AugmentConfig::default(),
    };
    cfg.validate()?;
    let index = read_chip_index(&a.chips)?;
    let policy = SeedPolicy { global_seed: a.seed };
    let sources: Vec<(u8, String, u64)> = match &a.building {
        Some(id) => {
            let r = index
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| anyhow!("building {id} not in {}", a.chips.display()))?;
            (0..a.count as u64).map(|v| (r.map_id, r.id.clone(), v)).collect()
        }
        None => index.iter().take(a.count).map(|r| (r.map_id, r.id.clone(), 0)).collect(),
    };
    let chips = sources
        .par_iter()
        .map(|(m, id, variant)| -> Result<Chip> {
            let c = load_chip(&a.chips, *m, id)?;
            Ok(augment_pipeline(&c, &cfg, policy.item_seed(id, 0, *variant))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let sheet = contact_sheet(&chips, a.cols)?;
    write_atomic(&a.out, &encode_rgb_png(&sheet)?)?;
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    out.seed("augment", a.seed).output(&a.out);
    if let Some(p) = &a.config {
        out.input(p);
    }
    Ok(out)
}

pub fn folds(a: &FoldsArgs) -> Result<Outcome> {
    let ds = Dataset::load(&a.dataset)?;
    let f = make_folds(&ds.buildings, a.k, a.seed)?;
    write_atomic(&a.out, &write_folds(&ds.buildings, &f)?)?;
    info!("{} validated rows in {} folds", f.validated_rows().len(), a.k);
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    out.seed("folds", a.seed).input(&a.dataset).output(&a.out);
    Ok(out)
}

pub fn oof(a: &OofArgs) -> Result<Outcome> {
    let ds = Dataset::load(&a.dataset)?;
    let f = read_folds(&a.folds, &ds.buildings, 0)?;
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    out.input(&a.dataset).input(&a.folds);
    let result = match a.model {
        BaseModelKind::Prior => oof_prior(&ds.buildings, &f)?,
        BaseModelKind::Oracle => {
            let palette_path = a.palette.clone().unwrap_or_else(|| ds.dir.join("synth_params.json"));
            let params: SynthParams = read_json(&palette_path)?;
            out.input(&palette_path).seed("model", a.model_seed);
            let model = OracleModel::new(
                OracleParams {
                    confusion_level: a.confusion,
                    seed: a.model_seed,
                },
                params.texture_palette,
            )?;
            let chips = ds
                .buildings
                .buildings()
                .par_iter()
                .map(|b| load_chip(&a.chips, b.map_id, &b.id))
                .collect::<Result<Vec<_>>>()?;
            let tta = a.tta.then(|| TtaConfig {
                mean: match a.tta_mean {
                    MeanKind::Arithmetic => TtaMean::Arithmetic,
                    MeanKind::Geometric => TtaMean::Geometric,
                },
                ..Default::default()
            });
            let probs = chip_predictions(&model, &chips, tta.as_ref())?;
            oof_fixed(&probs, &f)?
        }
    };
    let table = ProbTable {
        keys: ds.buildings.buildings().iter().map(|b| (b.map_id, b.id.clone())).collect(),
        probs: result.probs,
    };
    write_atomic(&a.out, &table.to_csv()?)?;
    out.output(&a.out);
    Ok(out)
}

fn model_name(p: &Path) -> Result<String> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .map(String::from)
        .ok_or_else(|| anyhow!("cannot name model from {}", p.display()))
}

pub fn sidecar_path(features: &Path) -> PathBuf {
    features.with_extension("json")
}

pub fn features(a: &FeaturesArgs) -> Result<Outcome> {
    let ds = Dataset::load(&a.dataset)?;
    let mut table = OofTable {
        models: Vec::new(),
        probs: Vec::new(),
    };
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    out.input(&a.dataset);
    for p in &a.oof {
        let name = model_name(p)?;
        if table.models.contains(&name) {
            bail!("two OOF files share the model name {name:?}");
        }
        table.push_model(name, ProbTable::read(p)?.aligned(&ds.buildings)?)?;
        out.input(p);
    }
    let cfg = FeatureConfig {
        k_neighbors: a.k_neighbors,
        radii: a.radii.clone(),
        ..Default::default()
    };
    let idx = SpatialIndex::build(&ds.buildings)?;
    let fm = assemble_features(&ds.buildings, &idx, &table, &cfg)?;
    let mut csv = Vec::new();
    fm.write_csv(&mut csv)?;
    write_atomic(&a.out, &csv)?;
    let side = sidecar_path(&a.out);
    write_atomic(&side, &to_json(&fm.sidecar(&cfg, &table.models))?)?;
    out.output(&a.out).output(side);
    info!("{} rows x {} columns", fm.ids.len(), fm.columns.len());
    Ok(out)
}

fn read_features(p: &Path) -> Result<FeatureMatrix> {
    let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    FeatureMatrix::read_csv(std::io::BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let ds = Dataset::load(&a.dataset)?;
    let f = read_folds(&a.folds, &ds.buildings, 0)?;
    let fm = read_features(&a.features)?;
    let opt = StackOptions {
        learner: a.learner,
        members: a.members,
        seed: a.seed,
        ..Default::default()
    };
    let model = train_stack(&fm, &ds.buildings, &f, &opt)?;
    info!("trained on {} rows", model.n_train);
    write_atomic(&a.out, &to_json(&model)?)?;
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    out.seed("ensemble", a.seed)
        .input(&a.features)
        .input(&a.dataset)
        .input(&a.folds)
        .output(&a.out);
    Ok(out)
}

fn prob_table(fm: &FeatureMatrix, probs: Vec<ClassProbs>) -> ProbTable {
    ProbTable {
        keys: fm.map_ids.iter().copied().zip(fm.ids.iter().cloned()).collect(),
        probs,
    }
}

pub fn predict(a: &PredictArgs) -> Result<Outcome> {
    let model: StackModel = read_json(&a.model)?;
    let fm = read_features(&a.features)?;
    let probs = model.predict(&fm)?;
    write_atomic(&a.out, &prob_table(&fm, probs).to_csv()?)?;
    let mut out = Outcome::new(manifest_beside(&a.out, false));
    out.input(&a.model).input(&a.features).output(&a.out);
    if let Some(dir) = &a.per_member {
        for (i, p) in model.member_predictions(&fm)?.into_iter().enumerate() {
            let path = dir.join(format!("member_{i:02}.csv"));
            write_atomic(&path, &prob_table(&fm, p).to_csv()?)?;
            out.output(path);
        }
    }
    Ok(out)
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<Outcome> {
    let preds = ProbTable::read(&a.predictions)?;
    let mut out = Outcome::new(match &a.out {
        Some(p) => manifest_beside(p, false),
        None => manifest_beside(&a.predictions, false).with_extension("evaluate.json"),
    });
    out.input(&a.predictions);
    let targets: Vec<(u8, String, u8)> = match (&a.truth, &a.labels) {
        (Some(t), _) => {
            out.input(t);
            let f = fs::File::open(t).with_context(|| format!("opening {}", t.display()))?;
            read_truth_csv(f)?.into_iter().map(|r| (r.map_id, r.id, r.label)).collect()
        }
        (None, Some(d)) => {
            out.input(d);
            Dataset::load(d)?
                .buildings
                .buildings()
                .iter()
                .filter(|b| b.verified)
                .filter_map(|b| b.label.map(|l| (b.map_id, b.id.clone(), l)))
                .collect()
        }
        (None, None) => bail!("evaluate needs --truth or --labels"),
    };
    let (probs, y) = join_targets(&preds, &targets)?;
    let report = evaluate(&probs, &y)?;
    let json = to_json(&report)?;
    print!("{}", String::from_utf8_lossy(&json));
    if let Some(p) = &a.out {
        write_atomic(p, &json)?;
        out.output(p);
    }
    Ok(out)
}

pub fn render_report(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("| model | log loss | accuracy | n |");
    for c in CLASS_NAMES {
        s.push_str(&format!(" {c} |"));
    }
    s.push_str("\n|---|---:|---:|---:|");
    s.push_str(&"---:|".repeat(CLASS_NAMES.len()));
    s.push('\n');
    for (name, m) in rows {
        s.push_str(&format!("| {name} | {:.5} | {:.4} | {} |", m.log_loss, m.accuracy, m.n));
        for v in m.per_class_log_loss {
            s.push_str(&format!(" {v:.4} |"));
        }
        s.push('\n');
    }
    s
}

pub fn report(a: &ReportArgs) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut out = Outcome::new(a.out.as_ref().map(|p| manifest_beside(p, false)).unwrap_or_default());
    for spec in &a.metrics {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (model_name(Path::new(spec))?, PathBuf::from(spec)),
        };
        rows.push((name, read_json::<MetricsReport>(&path)?));
        out.input(path);
    }
    let md = render_report(&rows);
    print!("{md}");
    if let Some(p) = &a.out {
        write_atomic(p, md.as_bytes())?;
        out.output(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_argument_parsing() {
        let (id, img, geo) = parse_map_arg("3:a/b.png:c.geojson").unwrap();
        assert_eq!((id, img, geo), (3, PathBuf::from("a/b.png"), PathBuf::from("c.geojson")));
        assert!(parse_map_arg("3:a.png").is_err());
        assert!(parse_map_arg("x:a.png:b").is_err());
    }

    #[test]
    fn report_has_one_row_per_model() {
        let m = MetricsReport {
            log_loss: 0.5,
            accuracy: 0.8,
            per_class_log_loss: [0.1; 5],
            n: 10,
        };
        let md = render_report(&[("a".into(), m.clone()), ("b".into(), m)]);
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| a | 0.50000 | 0.8000 | 10 |"));
    }
}
