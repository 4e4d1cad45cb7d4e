//! Input and output formats: GeoJSON road networks, the raster sheet
//! manifest and the TOML run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::ckmeans::Scope;
use crate::geometry::{Point2D, RoadSegment, SamplingParams};
use crate::reference::{DEFAULT_BUFFER_RADIUS_M, DEFAULT_THRESHOLDS};
use crate::roi::DEFAULT_OOB_LIMIT;
use crate::temporal::{Binning, DEFAULT_HISTOGRAM_BINS};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("GeoJSON: {0}")]
    GeoJson(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// A feature that could not be turned into a road segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedFeature {
    pub index: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadNetwork {
    pub segments: Vec<RoadSegment>,
    pub rejected: Vec<RejectedFeature>,
}

impl RoadNetwork {
    /// Ids of all features, accepted or not.
    pub fn ids(&self) -> BTreeSet<String> {
        self.segments
            .iter()
            .map(|s| s.id().to_string())
            .chain(self.rejected.iter().map(|r| r.id.clone()))
            .collect()
    }
}

fn feature_id(feature: &Map<String, Value>, index: usize) -> std::result::Result<String, String> {
    let props = feature.get("properties").and_then(Value::as_object);
    let candidates = [
        props.and_then(|p| p.get("segment_id")),
        props.and_then(|p| p.get("id")),
        feature.get("id"),
    ];
    for v in candidates.into_iter().flatten() {
        match v {
            Value::String(s) if !s.is_empty() => return Ok(s.clone()),
            Value::Number(n) => return Ok(n.to_string()),
            Value::Null => continue,
            other => return Err(format!("feature {index}: unusable id {other}")),
        }
    }
    Ok(format!("feature_{index}"))
}

fn parse_position(v: &Value) -> std::result::Result<Point2D, String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    if arr.len() < 2 {
        return Err("position needs at least two numbers".into());
    }
    let x = arr[0].as_f64().ok_or("non-numeric coordinate")?;
    let y = arr[1].as_f64().ok_or("non-numeric coordinate")?;
    Ok(Point2D::new(x, y))
}

fn line_coordinates(geometry: &Value) -> std::result::Result<Vec<Point2D>, String> {
    let kind = geometry.get("type").and_then(Value::as_str).ok_or("geometry without type")?;
    let coords = geometry.get("coordinates").ok_or("geometry without coordinates")?;
    let line = match kind {
        "LineString" => coords,
        "MultiLineString" => match coords.as_array().map(Vec::as_slice) {
            Some([single]) => single,
            _ => return Err("MultiLineString must have exactly one part".into()),
        },
        other => return Err(format!("unsupported geometry type {other}")),
    };
    line.as_array()
        .ok_or("coordinates are not an array")?
        .iter()
        .map(parse_position)
        .collect()
}

/// Reads a FeatureCollection of LineStrings. The segment id is taken from
/// `properties.segment_id`, `properties.id` or the feature id, in that order.
/// Features with unusable geometry are returned as rejected; duplicate ids
/// and structural problems are errors.
pub fn parse_roads_geojson(text: &str) -> Result<RoadNetwork> {
    let err = |m: String| IoError::GeoJson(m);
    let root: Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(err("top level must be a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| err("missing features array".into()))?;
    let mut net = RoadNetwork::default();
    let mut seen = BTreeSet::new();
    for (index, f) in features.iter().enumerate() {
        let f = f
            .as_object()
            .ok_or_else(|| err(format!("feature {index} is not an object")))?;
        let id = feature_id(f, index).map_err(err)?;
        if !seen.insert(id.clone()) {
            return Err(err(format!("duplicate segment id '{id}'")));
        }
        let segment = match f.get("geometry") {
            Some(g) if !g.is_null() => line_coordinates(g)
                .and_then(|pts| RoadSegment::new(id.clone(), pts).map_err(|e| e.to_string())),
            _ => Err("missing geometry".to_string()),
        };
        match segment {
            Ok(s) => net.segments.push(s),
            Err(reason) => net.rejected.push(RejectedFeature { index, id, reason }),
        }
    }
    Ok(net)
}

/// Sheet outlines keyed by `(sheet_id, year)`.
pub type FootprintSet = BTreeMap<(String, i32), Vec<Point2D>>;

fn polygon_ring(geometry: &Value) -> std::result::Result<Vec<Point2D>, String> {
    let kind = geometry.get("type").and_then(Value::as_str).ok_or("geometry without type")?;
    let coords = geometry.get("coordinates").ok_or("geometry without coordinates")?;
    let rings = match kind {
        "Polygon" => coords,
        "MultiPolygon" => match coords.as_array().map(Vec::as_slice) {
            Some([single]) => single,
            _ => return Err("MultiPolygon must have exactly one part".into()),
        },
        other => return Err(format!("unsupported geometry type {other}")),
    };
    let ring = match rings.as_array().map(Vec::as_slice) {
        Some([outer]) => outer,
        Some([_, _, ..]) => return Err("polygons with holes are not supported".into()),
        _ => return Err("polygon without rings".into()),
    };
    let mut pts: Vec<Point2D> = ring
        .as_array()
        .ok_or("ring is not an array")?
        .iter()
        .map(parse_position)
        .collect::<std::result::Result<_, _>>()?;
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 {
        return Err("ring needs 3 or more distinct vertices".into());
    }
    if pts.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err("non-finite coordinate".into());
    }
    Ok(pts)
}

/// Reads sheet outlines from a FeatureCollection of Polygon features with
/// `sheet_id` and `year` properties. The closing vertex is dropped.
pub fn parse_footprints_geojson(text: &str) -> Result<FootprintSet> {
    let err = |m: String| IoError::GeoJson(m);
    let root: Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(err("top level must be a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| err("missing features array".into()))?;
    let mut out = FootprintSet::new();
    for (index, f) in features.iter().enumerate() {
        let props = f.get("properties").and_then(Value::as_object);
        let sheet_id = props
            .and_then(|p| p.get("sheet_id"))
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| err(format!("footprint {index}: missing string sheet_id")))?;
        let year = props
            .and_then(|p| p.get("year"))
            .and_then(Value::as_i64)
            .and_then(|y| i32::try_from(y).ok())
            .ok_or_else(|| err(format!("footprint {index}: missing integer year")))?;
        let ring = f
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| "missing geometry".to_string())
            .and_then(polygon_ring)
            .map_err(|m| err(format!("footprint {index} ({sheet_id}): {m}")))?;
        if out.insert((sheet_id.to_string(), year), ring).is_some() {
            return Err(err(format!("duplicate footprint for {sheet_id} in {year}")));
        }
    }
    Ok(out)
}

/// Output feature; `None` geometry is written as `null`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutFeature {
    pub geometry: Option<Vec<Point2D>>,
    pub properties: Map<String, Value>,
}

/// Serializes features as a FeatureCollection, one feature per line.
pub fn write_feature_collection(features: &[OutFeature]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[\n");
    for (i, f) in features.iter().enumerate() {
        let geometry = match &f.geometry {
            Some(pts) => json!({
                "type": "LineString",
                "coordinates": pts.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            }),
            None => Value::Null,
        };
        let feature = json!({
            "type": "Feature",
            "geometry": geometry,
            "properties": Value::Object(f.properties.clone()),
        });
        out.push_str(&feature.to_string());
        out.push_str(if i + 1 < features.len() { ",\n" } else { "\n" });
    }
    out.push_str("]}\n");
    out
}

/// Road network with `segment_id` (and stratum, when known) properties.
pub fn roads_to_geojson(segments: &[RoadSegment]) -> String {
    let features: Vec<OutFeature> = segments
        .iter()
        .map(|s| {
            let mut properties = Map::new();
            properties.insert("segment_id".into(), s.id().into());
            if let Some(st) = s.stratum {
                properties.insert("stratum".into(), st.as_str().into());
            }
            OutFeature {
                geometry: Some(s.vertices().to_vec()),
                properties,
            }
        })
        .collect();
    write_feature_collection(&features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheetEntry {
    pub sheet_id: String,
    /// Analysis epoch the sheet belongs to.
    pub epoch_year: i32,
    /// Survey year printed on the sheet; defaults to the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_year: Option<i32>,
    pub image: PathBuf,
    /// Defaults to the image path with the usual world-file extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_file: Option<PathBuf>,
    /// Polygon used for segment assignment; defaults to the raster extent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<Vec<(f64, f64)>>,
}

impl SheetEntry {
    pub fn map_year(&self) -> i32 {
        self.map_year.unwrap_or(self.epoch_year)
    }

    pub fn world_file_path(&self) -> PathBuf {
        self.world_file.clone().unwrap_or_else(|| world_file_for(&self.image))
    }
}

/// First and last letter of the image extension plus `w` (`.tif` ->
/// `.tfw`, `.pgm` -> `.pmw`); `.wld` for short extensions.
pub fn world_file_for(image: &Path) -> PathBuf {
    let ext = image.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut chars = ext.chars();
    let world_ext = match (chars.next(), chars.last()) {
        (Some(a), Some(b)) if ext.len() >= 2 => format!("{a}{b}w"),
        _ => "wld".into(),
    };
    image.with_extension(world_ext)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterManifest {
    pub sheets: Vec<SheetEntry>,
}

impl RasterManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| IoError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IoError::Manifest(m));
        if self.sheets.is_empty() {
            return bad("no sheets listed".into());
        }
        let mut keys = BTreeSet::new();
        for s in &self.sheets {
            if s.sheet_id.is_empty() {
                return bad("empty sheet_id".into());
            }
            if !keys.insert((s.epoch_year, s.sheet_id.as_str())) {
                return bad(format!("sheet {} listed twice for {}", s.sheet_id, s.epoch_year));
            }
            if let Some(fp) = &s.footprint {
                if fp.len() < 3 {
                    return bad(format!("sheet {}: footprint needs 3 or more vertices", s.sheet_id));
                }
            }
        }
        Ok(())
    }

    /// Distinct epochs, ascending.
    pub fn epochs(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.sheets.iter().map(|s| s.epoch_year).collect();
        set.into_iter().collect()
    }
}

fn scope_from_str<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Scope, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn scope_name(scope: Scope) -> &'static str {
    match scope {
        Scope::PerSheet => "sheet",
        Scope::PerStudyArea => "area",
    }
}

fn scope_to_str<S: serde::Serializer>(scope: &Scope, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(scope_name(*scope))
}

/// Config-file name of a clustering scope.
pub fn scope_str(scope: Scope) -> &'static str {
    scope_name(scope)
}

/// Axial sampling layout as written in the config; the sample count per
/// cross-section equals `target_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub csd_m: f64,
    pub csl_m: f64,
    pub target_h: usize,
    pub target_w: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let p = SamplingParams::default();
        Self {
            csd_m: p.csd_m,
            csl_m: p.csl_m,
            target_h: p.target_h,
            target_w: p.target_w,
        }
    }
}

impl SamplingConfig {
    pub fn params(&self) -> SamplingParams {
        SamplingParams::with_shape(self.csd_m, self.csl_m, self.target_h, self.target_w)
    }
}

fn default_study_area() -> String {
    "study_area".into()
}
fn default_workers() -> usize {
    1
}
fn default_percentile() -> f64 {
    0.9
}
fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}
fn default_radius() -> f64 {
    DEFAULT_BUFFER_RADIUS_M
}
fn default_oob() -> f64 {
    DEFAULT_OOB_LIMIT
}
fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}
fn default_true() -> bool {
    true
}

/// Batch run configuration, read from TOML. Relative paths are resolved
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub roads: PathBuf,
    pub manifest: PathBuf,
    /// GeoJSON sheet outlines for sheets without one in the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprints: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bua_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default = "default_study_area")]
    pub study_area: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(
        default,
        deserialize_with = "scope_from_str",
        serialize_with = "scope_to_str"
    )]
    pub scope: Scope,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_radius")]
    pub buffer_radius_m: f64,
    #[serde(default = "default_oob")]
    pub oob_limit: f64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub histogram_binning: Binning,
    /// Write SVG curves next to the metrics tables.
    #[serde(default = "default_true")]
    pub svg: bool,
    /// Write axial images and column curves for every segment.
    #[serde(default)]
    pub debug_dump: bool,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub scope: Option<Scope>,
    pub csd_m: Option<f64>,
    pub csl_m: Option<f64>,
    pub target_h: Option<usize>,
    pub target_w: Option<usize>,
}

impl Overrides {
    pub fn apply_sampling(&self, s: &mut SamplingConfig) {
        if let Some(v) = self.csd_m {
            s.csd_m = v;
        }
        if let Some(v) = self.csl_m {
            s.csl_m = v;
        }
        if let Some(v) = self.target_h {
            s.target_h = v;
        }
        if let Some(v) = self.target_w {
            s.target_w = v;
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses TOML without touching the file system.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))
    }

    /// Reads, resolves paths, applies overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides);
        cfg.validate()?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.roads = resolve(base, &self.roads);
        self.manifest = resolve(base, &self.manifest);
        self.output = resolve(base, &self.output);
        self.footprints = self.footprints.as_deref().map(|p| resolve(base, p));
        self.bua_dir = self.bua_dir.as_deref().map(|p| resolve(base, p));
        self.labels = self.labels.as_deref().map(|p| resolve(base, p));
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.scope {
            self.scope = v;
        }
        o.apply_sampling(&mut self.sampling);
    }

    pub fn params(&self) -> SamplingParams {
        self.sampling.params()
    }

    /// Checks values only; see [`RunConfig::check_paths`] for files.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IoError::Config(m));
        if let Err(e) = self.params().validate() {
            return bad(e.to_string());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return bad(format!("percentile must lie in (0, 1], got {}", self.percentile));
        }
        if self.thresholds.is_empty() {
            return bad("thresholds must not be empty".into());
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return bad(format!("threshold {t} outside [0, 1]"));
        }
        if !(self.buffer_radius_m > 0.0 && self.buffer_radius_m.is_finite()) {
            return bad("buffer_radius_m must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.oob_limit) {
            return bad("oob_limit must lie in [0, 1]".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive".into());
        }
        if self.study_area.is_empty() {
            return bad("study_area must not be empty".into());
        }
        Ok(())
    }

    /// Referenced inputs exist and the output directory can be created.
    pub fn check_paths(&self) -> Result<()> {
        let missing = |what: &str, p: &Path| Err(IoError::Config(format!("{what} not found: {}", p.display())));
        if !self.roads.is_file() {
            return missing("roads file", &self.roads);
        }
        if !self.manifest.is_file() {
            return missing("raster manifest", &self.manifest);
        }
        if let Some(f) = &self.footprints {
            if !f.is_file() {
                return missing("footprints file", f);
            }
        }
        if let Some(d) = &self.bua_dir {
            if !d.is_dir() {
                return missing("BUA directory", d);
            }
        }
        if let Some(l) = &self.labels {
            if !l.is_file() {
                return missing("labels file", l);
            }
        }
        std::fs::create_dir_all(&self.output).map_err(|e| {
            IoError::Config(format!("cannot create output directory {}: {e}", self.output.display()))
        })?;
        Ok(())
    }
}
