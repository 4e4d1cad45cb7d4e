//! Batch runs over a configured study area: indicator computation,
//! clustering, evaluation and epoch comparison, plus synthetic fixtures and
//! parameter sweeps. Every table is written to the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::batch::{roi_batch, roi_batch_traced, thread_pool, Sheet};
use crate::ckmeans::{cluster_by_scope, ClassLabel, ClusteringOutcome, GroupReport, LabeledRecord};
use crate::geometry::{buffer_segment, Point2D, RoadSegment, SheetFootprint, Stratum};
use crate::io::{
    parse_footprints_geojson, parse_roads_geojson, roads_to_geojson, scope_str, world_file_for, write_feature_collection, IoError,
    FootprintSet, OutFeature, RasterManifest, RoadNetwork, RunConfig, SheetEntry,
};
use crate::metrics::{
    f1_threshold_svg, grouped_report, roc, roc_svg, write_report_csv_with_columns, EvalRecord, GroupBy,
    MetricsRow,
};
use crate::raster::{load_raster, save_raster, AffineTransform, Bands, BuaGrid, GeoRaster, BUA_CELL_SIZE_M};
use crate::reference::{built_up_fraction, parse_manual_labels, select_bua_epoch, ManualLabels};
use crate::roi::{write_debug_dump, RoiOptions, RoiRecord};
use crate::synth::{
    render, run_synthetic, sweep, write_ground_truth_csv, write_sweep_csv, ScenarioFile, SweepGrid,
};
use crate::temporal::{
    cross_tabulate, historical_km, km_to_um, length_change, roi_bivariate_histogram, um_to_km,
    write_histogram_csv, write_length_change_csv, write_transitions_csv, LengthChangeRow,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 for configuration problems, 2 for unreadable or malformed data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Io { .. } => 2,
        }
    }
}

impl From<IoError> for PipelineError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(m) => PipelineError::Config(m),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Output directory that remembers what was written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: BTreeSet<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| {
            PipelineError::Config(format!("cannot create output directory {}: {e}", root.display()))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: BTreeSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(name);
        let io = |source| PipelineError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&path, bytes).map_err(io)?;
        self.written.insert(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| PipelineError::Data(format!("{name}: {e}")))?;
        self.write(name, buf)
    }

    pub fn note(&mut self, name: &str) {
        self.written.insert(name.to_string());
    }

    pub fn written(&self) -> Vec<String> {
        self.written.iter().cloned().collect()
    }
}

/// Loaded and stratified study-area inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub network: RoadNetwork,
    /// Sheets per analysis epoch, in manifest order.
    pub sheets: BTreeMap<i32, Vec<Sheet>>,
    pub stratum_threshold_m: f64,
}

impl Inputs {
    pub fn epochs(&self) -> Vec<i32> {
        self.sheets.keys().copied().collect()
    }

    pub fn rejected_ids(&self) -> BTreeSet<String> {
        self.network.rejected.iter().map(|r| r.id.clone()).collect()
    }

    fn segment_map(&self) -> BTreeMap<&str, &RoadSegment> {
        self.network.segments.iter().map(|s| (s.id(), s)).collect()
    }
}

fn load_sheet(entry: &SheetEntry, base: &Path, outlines: &FootprintSet) -> Result<Sheet> {
    let image = base.join(&entry.image);
    let world = base.join(entry.world_file_path());
    for p in [&image, &world] {
        if !p.is_file() {
            return Err(PipelineError::Config(format!(
                "sheet {}: file not found: {}",
                entry.sheet_id,
                p.display()
            )));
        }
    }
    let raster = load_raster(&image, &world)
        .map_err(|e| PipelineError::Data(format!("sheet {}: {e}", entry.sheet_id)))?
        .with_sheet(entry.sheet_id.clone(), entry.map_year());
    let outline = |year| outlines.get(&(entry.sheet_id.clone(), year));
    let polygon = match &entry.footprint {
        Some(pts) => Some(pts.iter().map(|&p| p.into()).collect()),
        None => outline(entry.epoch_year).or_else(|| outline(entry.map_year())).cloned(),
    };
    let footprint = match polygon {
        Some(pts) => SheetFootprint::new(entry.sheet_id.clone(), pts, entry.map_year()),
        None => raster.footprint(),
    }
    .map_err(|e| PipelineError::Data(format!("sheet {}: {e}", entry.sheet_id)))?;
    Ok(Sheet { raster, footprint })
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let mut network = parse_roads_geojson(&read_text(&cfg.roads)?)?;
    for r in &network.rejected {
        log::warn!("segment {} (feature {}): {}", r.id, r.index, r.reason);
    }
    if network.segments.is_empty() {
        return Err(PipelineError::Data(format!(
            "{}: no usable road segments",
            cfg.roads.display()
        )));
    }
    let stratum_threshold_m = crate::geometry::stratify_segments(&mut network.segments, cfg.percentile)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let manifest = RasterManifest::from_json(&read_text(&cfg.manifest)?)?;
    let base = cfg.manifest.parent().unwrap_or(Path::new("."));
    let outlines = match &cfg.footprints {
        Some(p) => parse_footprints_geojson(&read_text(p)?)?,
        None => FootprintSet::new(),
    };
    for (sheet_id, year) in outlines.keys() {
        let used = manifest
            .sheets
            .iter()
            .any(|e| &e.sheet_id == sheet_id && (e.epoch_year == *year || e.map_year() == *year));
        if !used {
            log::warn!("footprint {sheet_id} ({year}) matches no manifest sheet");
        }
    }
    let mut sheets: BTreeMap<i32, Vec<Sheet>> = BTreeMap::new();
    for entry in &manifest.sheets {
        sheets.entry(entry.epoch_year).or_default().push(load_sheet(entry, base, &outlines)?);
    }
    Ok(Inputs {
        network,
        sheets,
        stratum_threshold_m,
    })
}

/// `bua_<year>.pgm` grids with their world files.
pub fn load_bua_grids(dir: &Path) -> Result<Vec<BuaGrid>> {
    let entries = std::fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut found: BTreeMap<i32, PathBuf> = BTreeMap::new();
    for e in entries.flatten() {
        let path = e.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(year) = name
            .strip_prefix("bua_")
            .and_then(|r| r.strip_suffix(".pgm"))
            .and_then(|y| y.parse::<i32>().ok())
        else {
            continue;
        };
        found.insert(year, path);
    }
    if found.is_empty() {
        return Err(PipelineError::Config(format!(
            "no bua_<year>.pgm grids in {}",
            dir.display()
        )));
    }
    found
        .into_iter()
        .map(|(year, image)| {
            let world = world_file_for(&image);
            let raster = load_raster(&image, &world).map_err(|e| PipelineError::Data(e.to_string()))?;
            BuaGrid::new(raster, year).map_err(|e| PipelineError::Data(format!("{}: {e}", image.display())))
        })
        .collect()
}

pub fn load_labels(path: &Path) -> Result<ManualLabels> {
    let f = std::fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manual_labels(f).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn roi_options(cfg: &RunConfig) -> RoiOptions {
    RoiOptions {
        params: cfg.params(),
        global_seed: cfg.seed,
        oob_limit: cfg.oob_limit,
    }
}

/// Indicator records per epoch: one per input feature, sorted by id.
pub fn roi_stage(cfg: &RunConfig, inputs: &Inputs, mut debug: Option<&mut OutputDir>) -> Result<BTreeMap<i32, Vec<RoiRecord>>> {
    let pool = thread_pool(cfg.workers);
    let opts = roi_options(cfg);
    let mut out = BTreeMap::new();
    for (&epoch, sheets) in &inputs.sheets {
        let mut records = match debug.as_deref_mut() {
            Some(dir) => {
                let traced = roi_batch_traced(&inputs.network.segments, sheets, &opts, epoch, &pool);
                let sub = format!("debug/{epoch}");
                let path = dir.root().join(&sub);
                for t in traced.iter().filter_map(|(_, t)| t.as_ref()) {
                    write_debug_dump(&path, t).map_err(|source| PipelineError::Io {
                        path: path.clone(),
                        source,
                    })?;
                }
                dir.note(&sub);
                traced.into_iter().map(|(r, _)| r).collect()
            }
            None => roi_batch(&inputs.network.segments, sheets, &opts, epoch, &pool),
        };
        records.extend(inputs.network.rejected.iter().map(|r| RoiRecord::unassigned(r.id.clone(), epoch)));
        records.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        let invalid = records.iter().filter(|r| !r.valid).count();
        log::info!("epoch {epoch}: {} records, {invalid} invalid", records.len());
        out.insert(epoch, records);
    }
    Ok(out)
}

fn status(rec: &RoiRecord, rejected: &BTreeSet<String>) -> &'static str {
    if rejected.contains(&rec.segment_id) {
        "invalid_geometry"
    } else if rec.sheet_id.is_none() {
        "unassigned"
    } else if rec.valid {
        "ok"
    } else if rec.n_cross_sections == 0 {
        "sampling_error"
    } else {
        "out_of_bounds"
    }
}

fn has_roi(rec: &RoiRecord) -> bool {
    rec.n_cross_sections > 0
}

fn opt_num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

struct RoiColumns<'a> {
    segments: BTreeMap<&'a str, &'a RoadSegment>,
    rejected: BTreeSet<String>,
}

impl<'a> RoiColumns<'a> {
    fn new(inputs: &'a Inputs) -> Self {
        Self {
            segments: inputs.segment_map(),
            rejected: inputs.rejected_ids(),
        }
    }

    const HEADER: [&'static str; 11] = [
        "segment_id",
        "sheet_id",
        "epoch_year",
        "map_year",
        "stratum",
        "length_m",
        "roi",
        "n_cross_sections",
        "oob_fraction",
        "valid",
        "status",
    ];

    fn csv_row(&self, r: &RoiRecord) -> Vec<String> {
        let seg = self.segments.get(r.segment_id.as_str());
        vec![
            r.segment_id.clone(),
            r.sheet_id.clone().unwrap_or_default(),
            r.epoch_year.to_string(),
            r.map_year.to_string(),
            seg.and_then(|s| s.stratum).map_or("", |s| s.as_str()).to_string(),
            opt_str(seg.map(|s| s.length_m())),
            opt_str(has_roi(r).then_some(r.roi)),
            r.n_cross_sections.to_string(),
            r.oob_fraction.to_string(),
            r.valid.to_string(),
            status(r, &self.rejected).to_string(),
        ]
    }

    fn properties(&self, r: &RoiRecord) -> Map<String, Value> {
        let seg = self.segments.get(r.segment_id.as_str());
        let mut p = Map::new();
        p.insert("segment_id".into(), r.segment_id.clone().into());
        p.insert("sheet_id".into(), r.sheet_id.clone().map_or(Value::Null, Value::from));
        p.insert("epoch".into(), r.epoch_year.into());
        p.insert("map_year".into(), r.map_year.into());
        p.insert(
            "stratum".into(),
            seg.and_then(|s| s.stratum).map_or(Value::Null, |s| s.as_str().into()),
        );
        p.insert("length_m".into(), opt_num(seg.map(|s| s.length_m())));
        p.insert("roi".into(), opt_num(has_roi(r).then_some(r.roi)));
        p.insert("n_cross_sections".into(), r.n_cross_sections.into());
        p.insert("oob_fraction".into(), r.oob_fraction.into());
        p.insert("valid".into(), r.valid.into());
        p.insert("status".into(), status(r, &self.rejected).into());
        p
    }

    fn geometry(&self, id: &str) -> Option<Vec<Point2D>> {
        self.segments.get(id).map(|s| s.vertices().to_vec())
    }
}

fn write_roi_outputs(out: &mut OutputDir, inputs: &Inputs, roi: &BTreeMap<i32, Vec<RoiRecord>>) -> Result<()> {
    let cols = RoiColumns::new(inputs);
    for (epoch, records) in roi {
        out.write_csv(&format!("roi_{epoch}.csv"), |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(RoiColumns::HEADER)?;
            for r in records {
                w.write_record(cols.csv_row(r))?;
            }
            w.flush()?;
            Ok(())
        })?;
        let features: Vec<OutFeature> = records
            .iter()
            .map(|r| OutFeature {
                geometry: cols.geometry(&r.segment_id),
                properties: cols.properties(r),
            })
            .collect();
        out.write(&format!("roi_{epoch}.geojson"), write_feature_collection(&features))?;
    }
    Ok(())
}

pub fn cluster_stage(cfg: &RunConfig, roi: &BTreeMap<i32, Vec<RoiRecord>>) -> BTreeMap<i32, ClusteringOutcome> {
    roi.iter()
        .map(|(&epoch, records)| (epoch, cluster_by_scope(records, cfg.scope)))
        .collect()
}

fn historical_value(label: ClassLabel) -> Value {
    match label {
        ClassLabel::Historical => true.into(),
        ClassLabel::Recent => false.into(),
        ClassLabel::Unclassified => Value::Null,
    }
}

fn historical_str(label: ClassLabel) -> &'static str {
    match label {
        ClassLabel::Historical => "true",
        ClassLabel::Recent => "false",
        ClassLabel::Unclassified => "NA",
    }
}

fn write_cluster_outputs(
    out: &mut OutputDir,
    cfg: &RunConfig,
    inputs: &Inputs,
    clusters: &BTreeMap<i32, ClusteringOutcome>,
) -> Result<()> {
    let cols = RoiColumns::new(inputs);
    let scope = scope_str(cfg.scope);
    for (epoch, outcome) in clusters {
        out.write_csv(&format!("clusters_{epoch}.csv"), |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let mut header = RoiColumns::HEADER.to_vec();
            header.extend(["cluster_scope", "group_id", "label", "historical", "silhouette"]);
            w.write_record(&header)?;
            for lr in &outcome.records {
                let mut row = cols.csv_row(&lr.record);
                row.extend([
                    scope.to_string(),
                    lr.group_id.clone(),
                    lr.label.as_str().to_string(),
                    historical_str(lr.label).to_string(),
                    opt_str(lr.silhouette),
                ]);
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })?;
        let features: Vec<OutFeature> = outcome
            .records
            .iter()
            .map(|lr| {
                let mut p = cols.properties(&lr.record);
                p.insert("cluster_scope".into(), scope.into());
                p.insert("group_id".into(), lr.group_id.clone().into());
                p.insert("label".into(), lr.label.as_str().into());
                p.insert("historical".into(), historical_value(lr.label));
                p.insert("silhouette".into(), opt_num(lr.silhouette));
                OutFeature {
                    geometry: cols.geometry(&lr.record.segment_id),
                    properties: p,
                }
            })
            .collect();
        out.write(&format!("clusters_{epoch}.geojson"), write_feature_collection(&features))?;
    }
    let groups: Vec<&GroupReport> = clusters.values().flat_map(|c| &c.groups).collect();
    out.write_csv("cluster_groups.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "epoch_year",
            "group_id",
            "sheet_id",
            "status",
            "n_records",
            "n_valid",
            "boundary",
            "means",
            "wcss",
            "mean_silhouette",
        ])?;
        for g in groups {
            let status = serde_json::to_value(g.status).expect("status serializes");
            w.write_record([
                g.epoch_year.to_string(),
                g.group_id.clone(),
                g.sheet_id.clone().unwrap_or_default(),
                status.as_str().unwrap_or_default().to_string(),
                g.n_records.to_string(),
                g.n_valid.to_string(),
                opt_str(g.boundary),
                g.means.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                opt_str(g.wcss),
                opt_str(g.mean_silhouette),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Built-up fraction per segment and map year, `None` when no grid
/// precedes the map year or the buffer cannot be measured.
#[derive(Debug, Clone, Default)]
pub struct BuaFractions {
    by_year: BTreeMap<i32, (Option<i32>, BTreeMap<String, f64>)>,
}

impl BuaFractions {
    pub fn compute(segments: &[RoadSegment], grids: &[BuaGrid], map_years: &BTreeSet<i32>, radius_m: f64) -> Self {
        let years: Vec<i32> = grids.iter().map(|g| g.year).collect();
        let buffers: Vec<_> = segments
            .iter()
            .map(|s| match buffer_segment(s, radius_m) {
                Ok(b) => Some(b),
                Err(e) => {
                    log::warn!("segment {}: buffer failed: {e}", s.id());
                    None
                }
            })
            .collect();
        let mut by_year = BTreeMap::new();
        for &year in map_years {
            let Ok(bua_year) = select_bua_epoch(&years, year) else {
                log::warn!("no built-up grid before {year}; segments on such sheets get no reference");
                by_year.insert(year, (None, BTreeMap::new()));
                continue;
            };
            let grid = grids.iter().find(|g| g.year == bua_year).expect("selected from grids");
            let mut fr = BTreeMap::new();
            for (seg, buf) in segments.iter().zip(&buffers) {
                if let Some(b) = buf {
                    match built_up_fraction(&b.ring, grid) {
                        Ok(f) => {
                            fr.insert(seg.id().to_string(), f);
                        }
                        Err(e) => log::warn!("segment {}: {e}", seg.id()),
                    }
                }
            }
            by_year.insert(year, (Some(bua_year), fr));
        }
        Self { by_year }
    }

    pub fn get(&self, id: &str, map_year: i32) -> Option<(i32, f64)> {
        let (bua_year, fr) = self.by_year.get(&map_year)?;
        Some(((*bua_year)?, *fr.get(id)?))
    }
}

/// Reference labels available for evaluation.
pub struct References {
    pub manual: Option<ManualLabels>,
    pub bua: Option<BuaFractions>,
    pub thresholds: Vec<f64>,
}

impl References {
    pub fn load(cfg: &RunConfig, inputs: &Inputs, roi: &BTreeMap<i32, Vec<RoiRecord>>) -> Result<Self> {
        let manual = cfg.labels.as_deref().map(load_labels).transpose()?;
        if let Some(m) = &manual {
            for y in m.epochs() {
                if !inputs.sheets.contains_key(&y) {
                    log::warn!("labels for {y} have no matching sheets");
                }
            }
        }
        let bua = match &cfg.bua_dir {
            Some(dir) => {
                let grids = load_bua_grids(dir)?;
                let map_years: BTreeSet<i32> = roi.values().flatten().map(|r| r.map_year).collect();
                Some(BuaFractions::compute(
                    &inputs.network.segments,
                    &grids,
                    &map_years,
                    cfg.buffer_radius_m,
                ))
            }
            None => None,
        };
        Ok(Self {
            manual,
            bua,
            thresholds: cfg.thresholds.clone(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.manual.is_none() && self.bua.is_none()
    }

    /// Reference names in output order.
    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.manual.is_some() {
            v.push("manual".to_string());
        }
        if self.bua.is_some() {
            v.extend(self.thresholds.iter().map(|t| format!("bua_{t}")));
        }
        v
    }

    fn label(&self, name: &str, rec: &RoiRecord) -> Option<bool> {
        if name == "manual" {
            return self.manual.as_ref()?.get(&rec.segment_id, rec.epoch_year);
        }
        let t: f64 = name.strip_prefix("bua_")?.parse().ok()?;
        let (_, f) = self.bua.as_ref()?.get(&rec.segment_id, rec.map_year)?;
        Some(crate::reference::label_from_fraction(f, t))
    }
}

fn eval_records(
    cfg: &RunConfig,
    inputs: &Inputs,
    clusters: &BTreeMap<i32, ClusteringOutcome>,
    refs: &References,
    name: &str,
) -> Vec<EvalRecord> {
    let segments = inputs.segment_map();
    let mut out = Vec::new();
    for outcome in clusters.values() {
        for lr in &outcome.records {
            if lr.label == ClassLabel::Unclassified {
                continue;
            }
            let Some(seg) = segments.get(lr.record.segment_id.as_str()) else {
                continue;
            };
            let Some(reference) = refs.label(name, &lr.record) else {
                continue;
            };
            out.push(EvalRecord {
                segment_id: lr.record.segment_id.clone(),
                study_area: cfg.study_area.clone(),
                sheet_id: lr.record.sheet_id.clone().unwrap_or_default(),
                stratum: seg.stratum,
                epoch_year: lr.record.epoch_year,
                length_km: seg.length_km(),
                roi: lr.record.roi,
                predicted: lr.label == ClassLabel::Historical,
                reference,
            });
        }
    }
    out
}

fn prefixed(name: &str, rows: Vec<MetricsRow>) -> impl Iterator<Item = MetricsRow> + '_ {
    rows.into_iter().map(move |mut r| {
        r.keys.insert(0, name.to_string());
        r
    })
}

fn write_evaluation_outputs(
    out: &mut OutputDir,
    cfg: &RunConfig,
    inputs: &Inputs,
    clusters: &BTreeMap<i32, ClusteringOutcome>,
    refs: &References,
) -> Result<()> {
    let mut by_stratum = Vec::new();
    let mut by_sheet = Vec::new();
    for name in refs.names() {
        let recs = eval_records(cfg, inputs, clusters, refs, &name);
        if recs.is_empty() {
            log::warn!("reference {name}: no evaluable segments");
            continue;
        }
        let pooled: Vec<EvalRecord> = recs.iter().cloned().map(|r| EvalRecord { stratum: None, ..r }).collect();
        let keys = [GroupBy::StudyArea, GroupBy::Epoch, GroupBy::Stratum];
        by_stratum.extend(prefixed(&name, grouped_report(&pooled, &keys)));
        by_stratum.extend(prefixed(&name, grouped_report(&recs, &keys)));
        by_sheet.extend(prefixed(
            &name,
            grouped_report(&recs, &[GroupBy::StudyArea, GroupBy::Epoch, GroupBy::Sheet]),
        ));
        for epoch in inputs.epochs() {
            let er: Vec<&EvalRecord> = recs.iter().filter(|r| r.epoch_year == epoch).collect();
            let scores: Vec<f64> = er.iter().map(|r| r.roi).collect();
            let labels: Vec<bool> = er.iter().map(|r| r.reference).collect();
            let Ok(curve) = roc(&scores, &labels) else {
                continue;
            };
            out.write_csv(&format!("roc_{name}_{epoch}.csv"), |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["fpr", "tpr", "threshold", "f1"])?;
                for p in &curve.points {
                    w.write_record([
                        p.fpr.to_string(),
                        p.tpr.to_string(),
                        p.threshold.to_string(),
                        p.f1.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            if cfg.svg {
                out.write(&format!("roc_{name}_{epoch}.svg"), roc_svg(&curve))?;
                out.write(&format!("f1_{name}_{epoch}.svg"), f1_threshold_svg(&curve))?;
            }
        }
    }
    out.write_csv("metrics.csv", |buf| {
        write_report_csv_with_columns(buf, &["reference", "study_area", "epoch_year", "stratum"], &by_stratum)
    })?;
    out.write_csv("metrics_by_sheet.csv", |buf| {
        write_report_csv_with_columns(buf, &["reference", "study_area", "epoch_year", "sheet_id"], &by_sheet)
    })?;

    let segments = inputs.segment_map();
    out.write_csv("evaluation_segments.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "segment_id",
            "epoch_year",
            "sheet_id",
            "map_year",
            "stratum",
            "length_km",
            "roi",
            "label",
            "manual",
            "bua_year",
            "bua_fraction",
        ])?;
        for outcome in clusters.values() {
            for lr in &outcome.records {
                let r = &lr.record;
                let seg = segments.get(r.segment_id.as_str());
                let manual = refs.manual.as_ref().and_then(|m| m.get(&r.segment_id, r.epoch_year));
                let bua = refs.bua.as_ref().and_then(|b| b.get(&r.segment_id, r.map_year));
                w.write_record([
                    r.segment_id.clone(),
                    r.epoch_year.to_string(),
                    r.sheet_id.clone().unwrap_or_default(),
                    r.map_year.to_string(),
                    seg.and_then(|s| s.stratum).map_or("", |s| s.as_str()).to_string(),
                    opt_str(seg.map(|s| s.length_km())),
                    opt_str(has_roi(r).then_some(r.roi)),
                    lr.label.as_str().to_string(),
                    manual.map_or("NA".into(), |m| u8::from(m).to_string()),
                    bua.map_or("NA".into(), |b| b.0.to_string()),
                    opt_str(bua.map(|b| b.1)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

const SCOPES: [(&str, Option<Stratum>); 3] = [("all", None), ("urban", Some(Stratum::Urban)), ("rural", Some(Stratum::Rural))];

fn write_temporal_outputs(
    out: &mut OutputDir,
    cfg: &RunConfig,
    inputs: &Inputs,
    clusters: &BTreeMap<i32, ClusteringOutcome>,
) -> Result<()> {
    let epochs: Vec<i32> = clusters.keys().copied().collect();
    if epochs.len() < 2 {
        log::warn!("temporal comparison needs two epochs, found {}", epochs.len());
    }
    let labels: BTreeMap<i32, BTreeMap<String, Option<bool>>> = clusters
        .iter()
        .map(|(&e, c)| {
            let m = c
                .records
                .iter()
                .map(|lr| {
                    let v = match lr.label {
                        ClassLabel::Historical => Some(true),
                        ClassLabel::Recent => Some(false),
                        ClassLabel::Unclassified => None,
                    };
                    (lr.record.segment_id.clone(), v)
                })
                .collect();
            (e, m)
        })
        .collect();
    let lengths_for = |stratum: Option<Stratum>| -> BTreeMap<String, f64> {
        inputs
            .network
            .segments
            .iter()
            .filter(|s| stratum.is_none() || s.stratum == stratum)
            .map(|s| (s.id().to_string(), s.length_km()))
            .collect()
    };
    let hist_km = |epoch: i32, lengths: &BTreeMap<String, f64>| {
        let l: BTreeMap<String, bool> = labels[&epoch]
            .iter()
            .filter_map(|(id, v)| v.map(|b| (id.clone(), b)))
            .collect();
        historical_km(&l, lengths)
    };

    out.write_csv("network_length.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["scope", "epoch_year", "historical_km", "n_historical", "n_unclassified", "total_km"])?;
        for (scope, stratum) in SCOPES {
            let lengths = lengths_for(stratum);
            let total: i128 = lengths.values().map(|&k| km_to_um(k)).sum();
            for &e in &epochs {
                let in_scope = |id: &String| lengths.contains_key(id);
                let n_hist = labels[&e].iter().filter(|(id, v)| in_scope(id) && **v == Some(true)).count();
                let n_uncl = labels[&e].iter().filter(|(id, v)| in_scope(id) && v.is_none()).count();
                w.write_record([
                    scope.to_string(),
                    e.to_string(),
                    hist_km(e, &lengths).to_string(),
                    n_hist.to_string(),
                    n_uncl.to_string(),
                    um_to_km(total).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;

    let mut pairs = Vec::new();
    for (i, &a) in epochs.iter().enumerate() {
        for &b in &epochs[i + 1..] {
            pairs.push((a, b));
        }
    }
    let mut tables = Vec::new();
    let mut changes = Vec::new();
    for &(a, b) in &pairs {
        for (scope, stratum) in SCOPES {
            let lengths = lengths_for(stratum);
            tables.push(cross_tabulate(&labels[&a], &labels[&b], &lengths, (a, b), scope));
            let (ka, kb) = (hist_km(a, &lengths), hist_km(b, &lengths));
            changes.push(LengthChangeRow {
                scope: scope.to_string(),
                epoch_t1: a,
                epoch_t2: b,
                km_t1: ka,
                km_t2: kb,
                change_pct: length_change(ka, kb),
            });
        }
    }
    out.write_csv("transitions.csv", |buf| write_transitions_csv(buf, &tables))?;
    out.write_csv("length_change.csv", |buf| write_length_change_csv(buf, &changes))?;

    for &(a, b) in &pairs {
        let roi_of = |e: i32| -> BTreeMap<&str, f64> {
            clusters[&e]
                .records
                .iter()
                .filter(|lr| lr.record.valid)
                .map(|lr| (lr.record.segment_id.as_str(), lr.record.roi))
                .collect()
        };
        let (ra, rb) = (roi_of(a), roi_of(b));
        let pts: Vec<(f64, f64)> = ra.iter().filter_map(|(id, &x)| rb.get(id).map(|&y| (x, y))).collect();
        match roi_bivariate_histogram(&pts, cfg.histogram_bins, cfg.histogram_binning) {
            Ok(h) => {
                out.write_csv(&format!("roi_histogram_{a}_{b}.csv"), |buf| write_histogram_csv(buf, &h))?;
                out.write_csv(&format!("roi_histogram_{a}_{b}_edges.csv"), |buf| {
                    let mut w = csv::Writer::from_writer(buf);
                    w.write_record(["bin", "t1_lo", "t1_hi", "t2_lo", "t2_hi"])?;
                    for i in 0..h.bins {
                        w.write_record([
                            i.to_string(),
                            h.edges_t1[i].to_string(),
                            h.edges_t1[i + 1].to_string(),
                            h.edges_t2[i].to_string(),
                            h.edges_t2[i + 1].to_string(),
                        ])?;
                    }
                    w.flush()?;
                    Ok(())
                })?;
            }
            Err(e) => log::warn!("histogram {a}-{b}: {e}"),
        }
    }

    let segments = inputs.segment_map();
    let ids = inputs.network.ids();
    out.write_csv("temporal_segments.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["segment_id".to_string(), "stratum".into(), "length_km".into()];
        header.extend(epochs.iter().map(|e| e.to_string()));
        w.write_record(&header)?;
        for id in &ids {
            let seg = segments.get(id.as_str());
            let mut row = vec![
                id.clone(),
                seg.and_then(|s| s.stratum).map_or("", |s| s.as_str()).to_string(),
                opt_str(seg.map(|s| s.length_km())),
            ];
            for e in &epochs {
                let label = clusters[e]
                    .records
                    .iter()
                    .find(|lr| &lr.record.segment_id == id)
                    .map_or(ClassLabel::Unclassified, |lr| lr.label);
                row.push(label.as_str().to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn file_name(p: &Path) -> Value {
    p.file_name()
        .map_or(Value::Null, |n| n.to_string_lossy().into_owned().into())
}

fn write_run_manifest(out: &mut OutputDir, command: &str, cfg: &RunConfig, inputs: &Inputs) -> Result<()> {
    let mut outputs = out.written();
    outputs.push("run_manifest.json".into());
    outputs.sort();
    let m = json!({
        "tool": "histroad",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "study_area": cfg.study_area,
        "scope": scope_str(cfg.scope),
        "sampling": cfg.sampling,
        "oob_limit": cfg.oob_limit,
        "percentile": cfg.percentile,
        "stratum_threshold_m": inputs.stratum_threshold_m,
        "thresholds": cfg.thresholds,
        "buffer_radius_m": cfg.buffer_radius_m,
        "histogram_bins": cfg.histogram_bins,
        "histogram_binning": cfg.histogram_binning,
        "epochs": inputs.epochs(),
        "n_segments": inputs.network.segments.len(),
        "n_rejected": inputs.network.rejected.len(),
        "inputs": {
            "roads": file_name(&cfg.roads),
            "manifest": file_name(&cfg.manifest),
            "footprints": cfg.footprints.as_deref().map_or(Value::Null, file_name),
            "bua_dir": cfg.bua_dir.as_deref().map_or(Value::Null, file_name),
            "labels": cfg.labels.as_deref().map_or(Value::Null, file_name),
        },
        "outputs": outputs,
    });
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    out.write("run_manifest.json", text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Roi,
    Cluster,
    Evaluate,
    Temporal,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Roi => "roi",
            Command::Cluster => "cluster",
            Command::Evaluate => "evaluate",
            Command::Temporal => "temporal",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<String>,
    /// (epoch, records, invalid records) per epoch.
    pub epochs: Vec<(i32, usize, usize)>,
    pub historical: BTreeMap<i32, usize>,
}

/// Runs one command. Upstream stages are recomputed in memory; only the
/// command's own tables are written (all of them for `Pipeline`).
pub fn run(cfg: &RunConfig, command: Command) -> Result<RunSummary> {
    let inputs = load_inputs(cfg)?;
    let mut out = OutputDir::create(&cfg.output)?;
    let writes = |c: Command| command == c || command == Command::Pipeline;

    let debug = (cfg.debug_dump && writes(Command::Roi)).then_some(&mut out);
    let roi = roi_stage(cfg, &inputs, debug)?;
    if writes(Command::Roi) {
        write_roi_outputs(&mut out, &inputs, &roi)?;
    }
    let mut historical = BTreeMap::new();
    if command != Command::Roi {
        let clusters = cluster_stage(cfg, &roi);
        for (e, c) in &clusters {
            historical.insert(
                *e,
                c.records.iter().filter(|r| r.label == ClassLabel::Historical).count(),
            );
        }
        if writes(Command::Cluster) {
            write_cluster_outputs(&mut out, cfg, &inputs, &clusters)?;
        }
        if writes(Command::Evaluate) {
            let refs = References::load(cfg, &inputs, &roi)?;
            if refs.is_empty() {
                if command == Command::Evaluate {
                    return Err(PipelineError::Config(
                        "evaluation needs `labels` or `bua_dir` in the config".into(),
                    ));
                }
                log::warn!("no reference data configured, evaluation skipped");
            } else {
                write_evaluation_outputs(&mut out, cfg, &inputs, &clusters, &refs)?;
            }
        }
        if writes(Command::Temporal) {
            write_temporal_outputs(&mut out, cfg, &inputs, &clusters)?;
        }
    }
    write_run_manifest(&mut out, command.name(), cfg, &inputs)?;
    Ok(RunSummary {
        outputs: out.written(),
        epochs: roi
            .iter()
            .map(|(&e, r)| (e, r.len(), r.iter().filter(|x| !x.valid).count()))
            .collect(),
        historical,
    })
}

/// Labels of one clustering outcome keyed by segment id.
pub fn labels_by_id(outcome: &ClusteringOutcome) -> BTreeMap<&str, &LabeledRecord> {
    outcome.records.iter().map(|r| (r.record.segment_id.as_str(), r)).collect()
}

/// Built-up grid for a synthetic epoch: a 250 m cell is built when it holds
/// the arc midpoint of a historical segment.
fn synthetic_bua(raster: &GeoRaster, segments: &[RoadSegment], historical: &BTreeSet<String>, year: i32) -> Result<GeoRaster> {
    let [tl, _, br, _] = raster.corners();
    let cs = BUA_CELL_SIZE_M;
    let x0 = (tl.x / cs).floor() * cs;
    let y1 = (tl.y / cs).ceil() * cs;
    let w = (((br.x - x0) / cs).ceil() as usize).max(1);
    let h = (((y1 - br.y) / cs).ceil() as usize).max(1);
    let t = AffineTransform::north_up(cs, Point2D::new(x0 + cs / 2.0, y1 - cs / 2.0))
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let mut px = vec![0u8; w * h];
    for s in segments.iter().filter(|s| historical.contains(s.id())) {
        let (c, r) = t.world_to_pixel(s.arc_midpoint());
        let (c, r) = (c.round(), r.round());
        if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
            px[r as usize * w + c as usize] = 255;
        }
    }
    GeoRaster::new(w, h, Bands::Gray, px, t)
        .map(|g| g.with_sheet("bua", year))
        .map_err(|e| PipelineError::Data(e.to_string()))
}

fn save(raster: &GeoRaster, out: &mut OutputDir, image: &str) -> Result<()> {
    let img = out.root().join(image);
    let world = world_file_for(&img);
    if let Some(parent) = img.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    save_raster(raster, &img, &world).map_err(|e| PipelineError::Data(e.to_string()))?;
    out.note(image);
    out.note(&world_file_for(Path::new(image)).to_string_lossy());
    Ok(())
}

/// Years between the BUA grid written for a synthetic epoch and the epoch.
pub const SYNTHETIC_BUA_LAG: i32 = 5;

/// Renders every epoch of a scenario and writes a ready-to-run study area:
/// sheets, world files, roads, manifest, ground truth, manual labels,
/// built-up grids and `config.toml`.
pub fn synth_fixture(scenario: &ScenarioFile, out_dir: &Path) -> Result<Vec<String>> {
    let (segments, scenarios) = scenario.build().map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut out = OutputDir::create(out_dir)?;
    out.write("roads.geojson", roads_to_geojson(&segments))?;
    let mut manifest = RasterManifest { sheets: Vec::new() };
    let mut labels: Vec<(String, i32, bool)> = Vec::new();
    for sc in &scenarios {
        let map = render(sc).map_err(|e| PipelineError::Config(e.to_string()))?;
        let image = format!("sheet_{}.pgm", sc.epoch_year);
        save(&map.raster, &mut out, &image)?;
        manifest.sheets.push(SheetEntry {
            sheet_id: sc.sheet_id.clone(),
            epoch_year: sc.epoch_year,
            map_year: None,
            image: image.into(),
            world_file: None,
            footprint: None,
        });
        out.write_csv(&format!("ground_truth_{}.csv", sc.epoch_year), |buf| {
            write_ground_truth_csv(buf, &map.ground_truth)
        })?;
        labels.extend(map.ground_truth.iter().map(|(id, &h)| (id.clone(), sc.epoch_year, h)));
        let bua_year = sc.epoch_year - SYNTHETIC_BUA_LAG;
        let bua = synthetic_bua(&map.raster, &segments, &sc.historical_ids, bua_year)?;
        save(&bua, &mut out, &format!("bua/bua_{bua_year}.pgm"))?;
    }
    out.write("sheets.json", manifest.to_json())?;
    out.write_csv("labels.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["segment_id", "epoch_year", "present"])?;
        for (id, y, h) in &labels {
            w.write_record([id.clone(), y.to_string(), u8::from(*h).to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let cfg = RunConfig::from_toml(&format!(
        "roads = \"roads.geojson\"\nmanifest = \"sheets.json\"\nbua_dir = \"bua\"\nlabels = \"labels.csv\"\noutput = \"out\"\nstudy_area = \"synthetic\"\nseed = {}\n",
        scenario.seed
    ))?;
    let text = toml::to_string(&cfg).map_err(|e| PipelineError::Data(e.to_string()))?;
    out.write("config.toml", text)?;
    Ok(out.written())
}

/// Sweeps sampling parameters over the first epoch of a scenario and writes
/// `sweep.csv`.
pub fn sweep_fixture(
    scenario: &ScenarioFile,
    grid: &SweepGrid,
    base: &RoiOptions,
    workers: usize,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let (segments, scenarios) = scenario.build().map_err(|e| PipelineError::Config(e.to_string()))?;
    let sc = &scenarios[0];
    let map = render(sc).map_err(|e| PipelineError::Config(e.to_string()))?;
    let pool = thread_pool(workers);
    let rows = sweep(&segments, &map, grid, base, &pool).map_err(|e| PipelineError::Config(e.to_string()))?;
    let base_run = run_synthetic(&segments, &map, base, &pool).map_err(|e| PipelineError::Data(e.to_string()))?;
    let mut out = OutputDir::create(out_dir)?;
    out.write_csv("sweep.csv", |buf| write_sweep_csv(buf, &rows))?;
    let mut outputs = out.written();
    outputs.push("sweep_manifest.json".into());
    let m = json!({
        "tool": "histroad",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "sweep",
        "seed": base.global_seed,
        "scenario_seed": scenario.seed,
        "epoch_year": sc.epoch_year,
        "base_sampling": base.params,
        "base_f1": base_run.instance.f1,
        "grid": grid,
        "outputs": outputs,
    });
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    out.write("sweep_manifest.json", text)?;
    Ok(out.written())
}
