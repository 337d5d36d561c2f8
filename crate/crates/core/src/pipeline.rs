//! Stage runner. Every stage reads the previous stage's artifacts from disk,
//! writes its own into `<root>/<stage>/`, and records a manifest with
//! SHA-256 hashes of everything it read and wrote.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::{self, CityImageSeries};
use crate::linalg::DenseMatrix;
use crate::motif::{self, SeriesView};
use crate::report;
use crate::saak::{self, SaakModel};
use crate::states::{self, Dendrogram, StateSeries};
use crate::synth;
use crate::validate::{self, UsageMatrix};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Features,
    Cluster,
    Motifs,
    Validate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Features,
        Stage::Cluster,
        Stage::Motifs,
        Stage::Validate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Motifs => "motifs",
            Stage::Validate => "validate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub params: serde_json::Value,
    /// Path (relative to the artifact root when inside it) → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects a stage's reads and writes for its manifest.
struct Record<'a> {
    root: &'a Path,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Record<'a> {
    fn new(root: &'a Path) -> Self {
        Record {
            root,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        self.inputs.insert(self.key(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        self.outputs.insert(self.key(path), sha256_hex(bytes));
        Ok(())
    }

    fn finish(self, stage: Stage, dir: &Path, params: serde_json::Value) -> Result<Manifest> {
        let manifest = Manifest {
            stage: stage.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(value)? + "\n").into_bytes())
}

fn utf8(bytes: Vec<u8>, path: &Path) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| Error::Malformed {
        what: path.display().to_string(),
        detail: "not UTF-8".into(),
    })
}

/// Runs stages for one config against one artifact root.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, root: PathBuf) -> Self {
        Pipeline { config, root }
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    /// Stages `pipeline` runs; `synth` only without an events input.
    pub fn stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Synth || self.config.input.events.is_none())
            .collect()
    }

    pub fn run(&self, stage: Stage) -> Result<Manifest> {
        self.config.validate().map_err(|e| e.in_stage(stage.name()))?;
        let dir = self.dir(stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e).in_stage(stage.name()))?;
        let result = match stage {
            Stage::Synth => self.synth(&dir),
            Stage::Ingest => self.ingest(&dir),
            Stage::Features => self.features(&dir),
            Stage::Cluster => self.cluster(&dir),
            Stage::Motifs => self.motifs(&dir),
            Stage::Validate => self.validate(&dir),
            Stage::Report => self.report(&dir),
        };
        result.map_err(|e| e.in_stage(stage.name()))
    }

    pub fn run_all(&self) -> Result<Vec<Manifest>> {
        self.stages().into_iter().map(|s| self.run(s)).collect()
    }

    fn events_path(&self) -> PathBuf {
        self.config
            .input
            .events
            .clone()
            .unwrap_or_else(|| self.dir(Stage::Synth).join("events.csv"))
    }

    fn usage_path(&self) -> PathBuf {
        self.config
            .input
            .usage
            .clone()
            .unwrap_or_else(|| self.dir(Stage::Synth).join("usage.csv"))
    }

    fn synth(&self, dir: &Path) -> Result<Manifest> {
        let cfg = &self.config.synth;
        let out = synth::generate(cfg)?;
        let mut rec = Record::new(&self.root);
        let events = csv_bytes(|b| ingest::write_events(b, &out.events))?;
        rec.write(&dir.join("events.csv"), &events)?;
        rec.write(&dir.join("usage.csv"), &csv_bytes(|b| ingest::write_events(b, &out.usage))?)?;
        rec.write(&dir.join("truth.csv"), &csv_bytes(|b| out.truth.write_csv(b))?)?;
        let images = ingest::images_from_events(&out.events, &cfg.grid())?;
        let ratio = synth::regime_separability(&images, &out.truth.regimes);
        let ratio = match ratio {
            Some(r) if r.is_finite() => json!(r),
            Some(_) => json!("inf"),
            None => serde_json::Value::Null,
        };
        rec.finish(
            Stage::Synth,
            dir,
            json!({ "config": cfg, "commute_sleep_movement_ratio": ratio }),
        )
    }

    fn ingest(&self, dir: &Path) -> Result<Manifest> {
        let spec = self.config.grid_spec();
        let mut rec = Record::new(&self.root);
        let path = self.events_path();
        let bytes = rec.read(&path)?;
        let parsed = ingest::parse_events(bytes.as_slice())?;
        let images = ingest::images_from_events(&parsed.events, &spec)?;
        rec.write(&dir.join("images.csv"), &csv_bytes(|b| images.write_csv(b))?)?;
        rec.write(&dir.join("grid.json"), &json_bytes(&spec)?)?;
        rec.finish(
            Stage::Ingest,
            dir,
            json!({
                "grid": spec,
                "events": parsed.events.len(),
                "skipped": parsed.skipped,
                "first_malformed_lines": parsed.malformed_lines,
            }),
        )
    }

    fn load_images(&self, rec: &mut Record) -> Result<CityImageSeries> {
        let idir = self.dir(Stage::Ingest);
        let grid_path = idir.join("grid.json");
        let spec = serde_json::from_slice(&rec.read(&grid_path)?)?;
        let img_path = idir.join("images.csv");
        CityImageSeries::read_csv(rec.read(&img_path)?.as_slice(), spec)
    }

    fn features(&self, dir: &Path) -> Result<Manifest> {
        let s = &self.config.saak;
        let mut rec = Record::new(&self.root);
        let images = self.load_images(&mut rec)?;
        let (model, raw) = saak::fit_saak(&images, s.saak_config())?;
        let reduction = saak::reduce(&raw, s.reduce_dim)?;
        rec.write(&dir.join("model.json"), model.to_json()?.as_bytes())?;
        rec.write(&dir.join("reduction.json"), &json_bytes(&reduction.basis)?)?;
        rec.write(&dir.join("features.csv"), &csv_bytes(|b| saak::write_features(b, &reduction.reduced))?)?;
        rec.write(
            &dir.join("projection.csv"),
            &csv_bytes(|b| saak::write_features(b, &reduction.projection_2d))?,
        )?;
        rec.finish(
            Stage::Features,
            dir,
            json!({
                "saak": s,
                "raw_dim": raw.cols(),
                "reduced_dim": reduction.reduced.cols(),
                "stages": model.stages.len(),
            }),
        )
    }

    fn slot_times(&self, n: usize) -> Vec<i64> {
        let spec = self.config.grid_spec();
        (0..n).map(|i| spec.slot_start(i)).collect()
    }

    fn cluster(&self, dir: &Path) -> Result<Manifest> {
        let c = &self.config.cluster;
        let mut rec = Record::new(&self.root);
        let fpath = self.dir(Stage::Features).join("features.csv");
        let features = saak::read_features(rec.read(&fpath)?.as_slice())?;
        let images = self.load_images(&mut rec)?;
        let levels = c.levels();
        for &k in &levels {
            if k > features.rows() {
                return Err(Error::BadK { k, n: features.rows() });
            }
        }
        let dendrogram = states::ward_cluster(&features)?;
        rec.write(&dir.join("dendrogram.json"), &json_bytes(&dendrogram)?)?;
        let times = self.slot_times(features.rows());
        for &k in &levels {
            let series = StateSeries::from_dendrogram(&dendrogram, k, times.clone())?;
            rec.write(&dir.join(format!("states_k{k}.csv")), &csv_bytes(|b| series.write_csv(b))?)?;
            if k == c.primary_k {
                rec.write(&dir.join("states.csv"), &csv_bytes(|b| series.write_csv(b))?)?;
                let profiles = states::profile_states(&series, &images, &self.config.day_calendar())?;
                rec.write(&dir.join("profiles.json"), &json_bytes(&profiles)?)?;
            }
        }
        let hierarchy = states::hierarchy_export(&dendrogram, &levels)?;
        rec.write(&dir.join("hierarchy.json"), &json_bytes(&hierarchy)?)?;
        rec.finish(Stage::Cluster, dir, json!({ "levels": levels, "primary_k": c.primary_k }))
    }

    fn load_states(&self, rec: &mut Record) -> Result<StateSeries> {
        let path = self.dir(Stage::Cluster).join("states.csv");
        StateSeries::read_csv(rec.read(&path)?.as_slice())
    }

    fn slots_per_day(&self) -> Result<usize> {
        let d = self.config.grid_spec().slot_duration_s;
        if 86_400 % d != 0 {
            return Err(Error::InvalidConfig(format!("slot duration {d} s does not divide a day")));
        }
        Ok((86_400 / d) as usize)
    }

    fn motifs(&self, dir: &Path) -> Result<Manifest> {
        let params = &self.config.motif;
        let mut rec = Record::new(&self.root);
        let series = self.load_states(&mut rec)?;
        let cal = self.config.day_calendar();
        let days: Vec<i64> = series.slot_times.iter().map(|&t| cal.day_number(t)).collect();
        let per_day = self.slots_per_day()?;
        let view = SeriesView::new(&series.labels, &days, per_day)?;
        let set = motif::discover_motifs(&view, params)?;
        let classes = motif::cluster_classes(&set, params, per_day);
        let graph = motif::build_graph(&classes);
        let slot_hours = self.config.grid_spec().slot_duration_s as f64 / 3600.0;
        rec.write(&dir.join("classes.json"), &json_bytes(&classes)?)?;
        rec.write(&dir.join("graph.json"), &json_bytes(&graph.edges)?)?;
        rec.write(&dir.join("graph.dot"), graph.to_dot(slot_hours).as_bytes())?;
        rec.finish(
            Stage::Motifs,
            dir,
            json!({
                "motif": params,
                "pairs": set.pairs.len(),
                "lengths": set.by_length.keys().collect::<Vec<_>>(),
                "classes": classes.len(),
                "edges": graph.edges.len(),
            }),
        )
    }

    fn validate(&self, dir: &Path) -> Result<Manifest> {
        let mut rec = Record::new(&self.root);
        let series = self.load_states(&mut rec)?;
        let upath = self.usage_path();
        let bytes = rec.read(&upath)?;
        let usage = usage_matrix(&bytes, &series, &self.config.grid_spec())?;
        let scores = validate::tfidf(&usage);
        let mut counts = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut counts);
            w.write_record(["app_category", "state", "count"])?;
            for (app, row) in usage.apps.iter().zip(&usage.counts) {
                for (state, v) in usage.states.iter().zip(row) {
                    if *v > 0.0 {
                        w.write_record([app.as_str(), state.as_str(), &v.to_string()])?;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(dir, e))?;
        }
        rec.write(&dir.join("usage_counts.csv"), &counts)?;
        rec.write(&dir.join("tfidf.csv"), &csv_bytes(|b| scores.write_csv(b))?)?;
        rec.write(&dir.join("tfidf.md"), scores.to_markdown().as_bytes())?;
        rec.finish(
            Stage::Validate,
            dir,
            json!({
                "apps": usage.apps.len(),
                "states": usage.states.len(),
                "zero_rows": scores.zero_rows,
                "zero_cols": scores.zero_cols,
            }),
        )
    }

    fn report(&self, dir: &Path) -> Result<Manifest> {
        let mut rec = Record::new(&self.root);
        let series = self.load_states(&mut rec)?;
        let ppath = self.dir(Stage::Features).join("projection.csv");
        let projection: DenseMatrix = saak::read_features(rec.read(&ppath)?.as_slice())?;
        let cal = self.config.day_calendar();
        let slot = self.config.grid_spec().slot_duration_s;
        let groups = &self.config.report.ring_groups;
        rec.write(&dir.join("strip.svg"), report::render_strip(&series, &cal, slot)?.as_bytes())?;
        rec.write(&dir.join("rings.svg"), report::render_rings(&series, &cal, slot, groups)?.as_bytes())?;
        rec.write(
            &dir.join("scatter.svg"),
            report::render_scatter(&projection, &series.labels)?.as_bytes(),
        )?;
        rec.finish(Stage::Report, dir, json!({ "ring_groups": groups }))
    }
}

/// Usage counts per (category, state). Accepts either pre-aggregated
/// `app_category,state,count` rows or event rows with a category column,
/// which are mapped to slots and then to states.
pub fn usage_matrix(bytes: &[u8], series: &StateSeries, spec: &ingest::GridSpec) -> Result<UsageMatrix> {
    let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    if String::from_utf8_lossy(first).trim() == "app_category,state,count" {
        return UsageMatrix::read_csv(bytes);
    }
    let parsed = ingest::parse_events(bytes)?;
    let mut cells: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for e in &parsed.events {
        let (Some(cat), Some(slot)) = (&e.app_category, spec.slot_of(e.timestamp)) else {
            continue;
        };
        if let Some(&state) = series.labels.get(slot) {
            *cells.entry((cat.clone(), state)).or_default() += 1.0;
        }
    }
    if cells.is_empty() {
        return Err(Error::DegenerateInput("no usage events fall inside the state series".into()));
    }
    let apps: Vec<String> = cells
        .keys()
        .map(|k| k.0.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = series.k.max(series.labels.iter().max().map_or(0, |m| m + 1));
    let mut counts = vec![vec![0.0; k]; apps.len()];
    for ((app, state), v) in cells {
        let i = apps.binary_search(&app).expect("collected above");
        counts[i][state] = v;
    }
    UsageMatrix::new(apps, (0..k).map(|s| s.to_string()).collect(), counts)
}

/// Re-hash every artifact named in the stage manifests under `root` and
/// report mismatches. Inputs are checked against their current contents.
pub fn verify_manifests(root: &Path) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let mut found = 0;
    for stage in Stage::ALL {
        let path = root.join(stage.name()).join(MANIFEST);
        let Ok(file) = fs::File::open(&path) else {
            continue;
        };
        found += 1;
        let m: Manifest = serde_json::from_reader(BufReader::new(file))?;
        for (kind, map) in [("input", &m.inputs), ("output", &m.outputs)] {
            for (name, hash) in map {
                let p = if Path::new(name).is_absolute() {
                    PathBuf::from(name)
                } else {
                    root.join(name)
                };
                match sha256_file(&p) {
                    Ok(h) if &h == hash => {}
                    Ok(_) => problems.push(format!("{}: {kind} {name} changed", m.stage)),
                    Err(_) => problems.push(format!("{}: {kind} {name} missing", m.stage)),
                }
            }
        }
    }
    if found == 0 {
        return Err(Error::MissingInput(root.join("*").join(MANIFEST)));
    }
    Ok(problems)
}

/// Load a saved Saak model.
pub fn load_model(path: &Path) -> Result<SaakModel> {
    let bytes = fs::read(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
    SaakModel::from_json(&utf8(bytes, path)?)
}

/// Load a saved dendrogram.
pub fn load_dendrogram(path: &Path) -> Result<Dendrogram> {
    let bytes = fs::read(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
    Ok(serde_json::from_slice(&bytes)?)
}
