//! Synthetic historical map sheets with known road-symbol placement.
//!
//! Historical roads are drawn as two hard parallel lines around the road
//! axis. Optional dashing, a global shift (simulated georeferencing error),
//! contour-like distractor lines and Gaussian noise degrade the sheet.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{roi_batch, Sheet};
use crate::ckmeans::{cluster_by_scope, ClassLabel, Scope};
use crate::geometry::{GeometryError, Point2D, RoadSegment, SamplingParams};
use crate::metrics::{confusion, prf, ConfusionCounts, Prf, Weighting};
use crate::raster::{AffineTransform, Bands, GeoRaster, RasterError};
use crate::roi::{segment_seed, RoiOptions, RoiRecord};

pub const DISTRACTOR_GRAY: u8 = 120;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymbolStyle {
    /// Distance between the two parallel lines.
    pub casing_gap_m: f64,
    pub line_width_px: usize,
    pub ink_gray: u8,
    pub background_gray: u8,
    /// `(on_m, off_m)` along each line.
    pub dash_pattern: Option<(f64, f64)>,
    /// Shift applied to every drawn road.
    pub offset_vec: (f64, f64),
    pub noise_sigma: f64,
    pub distractors: usize,
}

impl Default for SymbolStyle {
    fn default() -> Self {
        Self {
            casing_gap_m: 10.0,
            line_width_px: 1,
            ink_gray: 20,
            background_gray: 245,
            dash_pattern: None,
            offset_vec: (0.0, 0.0),
            noise_sigma: 5.0,
            distractors: 0,
        }
    }
}

impl SymbolStyle {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Invalid(m.into()));
        if !(self.casing_gap_m >= 0.0 && self.casing_gap_m.is_finite()) {
            return bad("casing_gap_m must be >= 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if self.line_width_px == 0 {
            return bad("line_width_px must be >= 1");
        }
        if !(self.offset_vec.0.is_finite() && self.offset_vec.1.is_finite()) {
            return bad("offset_vec must be finite");
        }
        if let Some((on, off)) = self.dash_pattern {
            if !(on > 0.0 && off >= 0.0 && on.is_finite() && off.is_finite()) {
                return bad("dash_pattern needs on > 0 and off >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub segments: Vec<RoadSegment>,
    pub historical_ids: BTreeSet<String>,
    pub style: SymbolStyle,
    pub pixel_size_m: f64,
    pub seed: u64,
    pub sheet_id: String,
    pub epoch_year: i32,
    /// Blank border around the network.
    pub margin_m: f64,
}

impl SyntheticScenario {
    pub fn new(segments: Vec<RoadSegment>, historical_ids: BTreeSet<String>) -> Self {
        Self {
            segments,
            historical_ids,
            style: SymbolStyle::default(),
            pixel_size_m: 5.0,
            seed: 0,
            sheet_id: "synthetic".into(),
            epoch_year: 1900,
            margin_m: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.style.validate()?;
        if !(self.pixel_size_m > 0.0 && self.pixel_size_m.is_finite()) {
            return Err(SynthError::Invalid("pixel_size_m must be positive".into()));
        }
        if self.segments.is_empty() {
            return Err(SynthError::Invalid("scenario has no segments".into()));
        }
        let ids: BTreeSet<&str> = self.segments.iter().map(|s| s.id()).collect();
        if ids.len() != self.segments.len() {
            return Err(SynthError::Invalid("duplicate segment ids".into()));
        }
        if let Some(missing) = self.historical_ids.iter().find(|h| !ids.contains(h.as_str())) {
            return Err(SynthError::Invalid(format!("historical id '{missing}' is not a segment")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMap {
    pub raster: GeoRaster,
    pub ground_truth: BTreeMap<String, bool>,
}

struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    transform: AffineTransform,
}

impl Canvas {
    fn stamp(&mut self, col: i64, row: i64, gray: u8, width: usize) {
        let lo = -((width as i64 - 1) / 2);
        for dr in lo..lo + width as i64 {
            for dc in lo..lo + width as i64 {
                let (c, r) = (col + dc, row + dr);
                if c >= 0 && r >= 0 && (c as usize) < self.width && (r as usize) < self.height {
                    self.pixels[r as usize * self.width + c as usize] = gray;
                }
            }
        }
    }

    /// Integer line traversal between the pixels nearest to `a` and `b`.
    fn line(&mut self, a: Point2D, b: Point2D, gray: u8, width: usize) {
        let to_px = |p: Point2D| {
            let (c, r) = self.transform.world_to_pixel(p);
            (c.round() as i64, r.round() as i64)
        };
        let ((mut x0, mut y0), (x1, y1)) = (to_px(a), to_px(b));
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.stamp(x0, y0, gray, width);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn polyline(&mut self, pts: &[Point2D], gray: u8, width: usize) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], gray, width);
        }
    }
}

/// Polyline offset to the left by `d` (right for negative `d`), with mitred
/// joins capped at four times the offset.
pub fn offset_polyline(pts: &[Point2D], d: f64) -> Vec<Point2D> {
    let normals: Vec<Point2D> = pts
        .windows(2)
        .map(|w| (w[1] - w[0]).normalized().unwrap_or_default().perp())
        .collect();
    let n = pts.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                return pts[0] + normals[0] * d;
            }
            if i == n - 1 {
                return pts[i] + normals[n - 2] * d;
            }
            let (a, b) = (normals[i - 1], normals[i]);
            match (a + b).normalized() {
                Some(m) => {
                    let scale = (d / m.dot(b)).clamp(-4.0 * d.abs(), 4.0 * d.abs());
                    pts[i] + m * scale
                }
                None => pts[i] + b * d,
            }
        })
        .collect()
}

/// Splits a polyline into the drawn pieces of an on/off dash pattern
/// measured by arc length from its start.
pub fn dash_pieces(pts: &[Point2D], on: f64, off: f64) -> Vec<Vec<Point2D>> {
    let period = on + off;
    let mut pieces: Vec<Vec<Point2D>> = Vec::new();
    let mut current: Vec<Point2D> = Vec::new();
    let mut s = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.distance(b);
        if len == 0.0 {
            continue;
        }
        let mut t = 0.0;
        while t < len {
            let phase = s % period;
            let drawing = phase < on;
            let step = if drawing { on - phase } else { period - phase };
            let t_next = (t + step).min(len);
            if drawing {
                let p0 = a.lerp(b, t / len);
                if current.last() != Some(&p0) {
                    current.push(p0);
                }
                current.push(a.lerp(b, t_next / len));
            } else if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            s += t_next - t;
            t = t_next;
        }
    }
    if current.len() >= 2 {
        pieces.push(current);
    }
    pieces.retain(|p| p.len() >= 2);
    pieces
}

fn network_bounds(segments: &[RoadSegment]) -> (Point2D, Point2D) {
    let mut lo = Point2D::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in segments {
        let (a, b) = s.bounds();
        lo = Point2D::new(lo.x.min(a.x), lo.y.min(a.y));
        hi = Point2D::new(hi.x.max(b.x), hi.y.max(b.y));
    }
    (lo, hi)
}

/// Contour-like random walk with slowly drifting heading.
fn distractor(rng: &mut ChaCha8Rng, lo: Point2D, hi: Point2D) -> Vec<Point2D> {
    let turn = Normal::new(0.0, 0.15).expect("valid sigma");
    let mut p = Point2D::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut pts = vec![p];
    for _ in 0..40 {
        heading += turn.sample(rng);
        p = p + Point2D::new(heading.cos(), heading.sin()) * 15.0;
        pts.push(p);
    }
    pts
}

/// Renders the sheet and the per-segment ground truth.
pub fn render(scenario: &SyntheticScenario) -> Result<SyntheticMap> {
    scenario.validate()?;
    let style = &scenario.style;
    let ps = scenario.pixel_size_m;
    let (lo, hi) = network_bounds(&scenario.segments);
    let x0 = ((lo.x - scenario.margin_m) / ps).floor() * ps;
    let y1 = ((hi.y + scenario.margin_m) / ps).ceil() * ps;
    let width = (((hi.x + scenario.margin_m) - x0) / ps).ceil().max(1.0) as usize;
    let height = ((y1 - (lo.y - scenario.margin_m)) / ps).ceil().max(1.0) as usize;
    if width.checked_mul(height).is_none_or(|n| n > MAX_CANVAS_PIXELS) {
        return Err(SynthError::Invalid(format!(
            "rendered sheet would be {width}x{height} pixels, more than {MAX_CANVAS_PIXELS}"
        )));
    }
    let transform = AffineTransform::north_up(ps, Point2D::new(x0 + ps / 2.0, y1 - ps / 2.0))?;
    let mut canvas = Canvas {
        width,
        height,
        pixels: vec![style.background_gray; width * height],
        transform,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let extent_lo = Point2D::new(x0, y1 - height as f64 * ps);
    let extent_hi = Point2D::new(x0 + width as f64 * ps, y1);
    for _ in 0..style.distractors {
        let pts = distractor(&mut rng, extent_lo, extent_hi);
        canvas.polyline(&pts, DISTRACTOR_GRAY, style.line_width_px);
    }

    let shift = Point2D::new(style.offset_vec.0, style.offset_vec.1);
    for seg in &scenario.segments {
        if !scenario.historical_ids.contains(seg.id()) {
            continue;
        }
        let axis: Vec<Point2D> = seg.vertices().iter().map(|&p| p + shift).collect();
        for side in [-0.5, 0.5] {
            let line = offset_polyline(&axis, side * style.casing_gap_m);
            match style.dash_pattern {
                Some((on, off)) => {
                    for piece in dash_pieces(&line, on, off) {
                        canvas.polyline(&piece, style.ink_gray, style.line_width_px);
                    }
                }
                None => canvas.polyline(&line, style.ink_gray, style.line_width_px),
            }
        }
    }

    if style.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, style.noise_sigma).expect("validated sigma");
        for p in canvas.pixels.iter_mut() {
            *p = (*p as f64 + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }

    let raster = GeoRaster::new(width, height, Bands::Gray, canvas.pixels, transform)?
        .with_sheet(scenario.sheet_id.clone(), scenario.epoch_year);
    let ground_truth = scenario
        .segments
        .iter()
        .map(|s| (s.id().to_string(), scenario.historical_ids.contains(s.id())))
        .collect();
    Ok(SyntheticMap {
        raster,
        ground_truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub n_segments: usize,
    pub nodes_x: usize,
    pub nodes_y: usize,
    pub min_gap_m: f64,
    pub max_gap_m: f64,
    pub jitter_m: f64,
    pub origin: (f64, f64),
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            n_segments: 200,
            nodes_x: 11,
            nodes_y: 11,
            min_gap_m: 200.0,
            max_gap_m: 600.0,
            jitter_m: 15.0,
            origin: (10_000.0, 20_000.0),
        }
    }
}

pub const MAX_GRID_NODES: usize = 1 << 20;
pub const MAX_CANVAS_PIXELS: usize = 1 << 28;

/// Irregular jittered street grid; segments are grid edges with a slight
/// bend at their midpoint. Ids are `r000`, `r001`, ...
pub fn generate_network(params: &NetworkParams, seed: u64) -> Result<Vec<RoadSegment>> {
    let (nx, ny) = (params.nodes_x, params.nodes_y);
    if nx < 2 || ny < 2 {
        return Err(SynthError::Invalid("network needs at least 2x2 nodes".into()));
    }
    if nx.checked_mul(ny).is_none_or(|n| n > MAX_GRID_NODES) {
        return Err(SynthError::Invalid(format!("network grid exceeds {MAX_GRID_NODES} nodes")));
    }
    let finite = [params.min_gap_m, params.max_gap_m, params.jitter_m, params.origin.0, params.origin.1]
        .iter()
        .all(|v| v.is_finite());
    if !(finite && params.jitter_m >= 0.0) {
        return Err(SynthError::Invalid("gaps, jitter and origin must be finite, jitter non-negative".into()));
    }
    if !(params.min_gap_m > 2.0 * params.jitter_m && params.max_gap_m >= params.min_gap_m) {
        return Err(SynthError::Invalid("gaps must exceed twice the jitter and be ordered".into()));
    }
    let n_edges = nx * (ny - 1) + ny * (nx - 1);
    if params.n_segments > n_edges {
        return Err(SynthError::Invalid(format!(
            "{} segments requested but the grid has only {n_edges} edges",
            params.n_segments
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axis = |n: usize, o: f64| {
        let mut v = vec![o];
        for _ in 1..n {
            let gap = rng.random_range(params.min_gap_m..=params.max_gap_m);
            v.push(v.last().unwrap() + gap);
        }
        v
    };
    let xs = axis(nx, params.origin.0);
    let ys = axis(ny, params.origin.1);
    let j = params.jitter_m;
    let nodes: Vec<Point2D> = (0..ny)
        .flat_map(|r| (0..nx).map(move |c| (r, c)))
        .map(|(r, c)| {
            Point2D::new(
                xs[c] + rng.random_range(-j..=j),
                ys[r] + rng.random_range(-j..=j),
            )
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n_edges);
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            if c + 1 < nx {
                edges.push((i, i + 1));
            }
            if r + 1 < ny {
                edges.push((i, i + nx));
            }
        }
    }
    let mut chosen: Vec<usize> = (0..edges.len()).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(params.n_segments);
    chosen.sort_unstable();
    chosen
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let (a, b) = (nodes[edges[e].0], nodes[edges[e].1]);
            let d = b - a;
            let bend = rng.random_range(-0.05..=0.05) * d.norm();
            let mid = a.lerp(b, 0.5) + d.normalized().unwrap_or_default().perp() * bend;
            Ok(RoadSegment::new(format!("r{k:03}"), vec![a, mid, b])?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub id: String,
    pub coordinates: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Generate(NetworkParams),
    Segments(Vec<SegmentSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSpec {
    pub year: i32,
    #[serde(default)]
    pub sheet_id: Option<String>,
    /// Share of segments drawn, taken from a fixed random order so that
    /// larger fractions contain smaller ones.
    #[serde(default)]
    pub historical_fraction: Option<f64>,
    #[serde(default)]
    pub historical_ids: Option<Vec<String>>,
    /// Replaces the scenario-wide style for this epoch.
    #[serde(default)]
    pub style: Option<SymbolStyle>,
}

/// Scenario description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pixel_size")]
    pub pixel_size_m: f64,
    #[serde(default)]
    pub style: SymbolStyle,
    pub network: NetworkSpec,
    pub epochs: Vec<EpochSpec>,
}

fn default_pixel_size() -> f64 {
    5.0
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Road network plus one renderable scenario per epoch.
    pub fn build(&self) -> Result<(Vec<RoadSegment>, Vec<SyntheticScenario>)> {
        if self.epochs.is_empty() {
            return Err(SynthError::Invalid("scenario has no epochs".into()));
        }
        let segments = match &self.network {
            NetworkSpec::Generate(p) => generate_network(p, self.seed)?,
            NetworkSpec::Segments(specs) => specs
                .iter()
                .map(|s| {
                    RoadSegment::new(s.id.clone(), s.coordinates.iter().map(|&p| p.into()).collect())
                        .map_err(|e| SynthError::Invalid(format!("segment {}: {e}", s.id)))
                })
                .collect::<Result<_>>()?,
        };
        let mut order: Vec<String> = segments.iter().map(|s| s.id().to_string()).collect();
        order.sort();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(segment_seed(self.seed, "historical-order")));

        let mut scenarios = Vec::with_capacity(self.epochs.len());
        for ep in &self.epochs {
            let historical_ids: BTreeSet<String> = match (&ep.historical_fraction, &ep.historical_ids) {
                (Some(f), None) => {
                    if !(0.0..=1.0).contains(f) {
                        return Err(SynthError::Invalid(format!(
                            "epoch {}: historical_fraction must lie in [0, 1]",
                            ep.year
                        )));
                    }
                    let n = (f * order.len() as f64).round() as usize;
                    order[..n].iter().cloned().collect()
                }
                (None, Some(ids)) => ids.iter().cloned().collect(),
                _ => {
                    return Err(SynthError::Invalid(format!(
                        "epoch {}: give exactly one of historical_fraction and historical_ids",
                        ep.year
                    )))
                }
            };
            let mut sc = SyntheticScenario::new(segments.clone(), historical_ids);
            sc.style = ep.style.clone().unwrap_or_else(|| self.style.clone());
            sc.pixel_size_m = self.pixel_size_m;
            sc.seed = segment_seed(self.seed, &ep.year.to_string());
            sc.sheet_id = ep.sheet_id.clone().unwrap_or_else(|| format!("synthetic_{}", ep.year));
            sc.epoch_year = ep.year;
            sc.validate()?;
            scenarios.push(sc);
        }
        Ok((segments, scenarios))
    }
}

pub fn write_ground_truth_csv<W: Write>(out: W, truth: &BTreeMap<String, bool>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["segment_id", "historical"])?;
    for (id, &h) in truth {
        w.write_record([id.as_str(), if h { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of the indicator and clustering pipeline on one synthetic sheet.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub records: Vec<RoiRecord>,
    pub predicted: BTreeSet<String>,
    pub counts: ConfusionCounts,
    pub instance: Prf,
}

pub fn run_synthetic(
    segments: &[RoadSegment],
    map: &SyntheticMap,
    opts: &RoiOptions,
    pool: &rayon::ThreadPool,
) -> Result<SyntheticRun> {
    let sheet = Sheet::from_raster(map.raster.clone())?;
    let records = roi_batch(segments, std::slice::from_ref(&sheet), opts, map.raster.epoch_year, pool);
    let clustered = cluster_by_scope(&records, Scope::PerSheet);
    let predicted: BTreeSet<String> = clustered
        .records
        .iter()
        .filter(|r| r.label == ClassLabel::Historical)
        .map(|r| r.record.segment_id.clone())
        .collect();
    let pred: Vec<bool> = records.iter().map(|r| predicted.contains(&r.segment_id)).collect();
    let truth: Vec<bool> = records
        .iter()
        .map(|r| map.ground_truth.get(&r.segment_id).copied().unwrap_or(false))
        .collect();
    let lengths: BTreeMap<&str, f64> = segments.iter().map(|s| (s.id(), s.length_km())).collect();
    let km: Vec<f64> = records.iter().map(|r| lengths[r.segment_id.as_str()]).collect();
    let counts = confusion(&pred, &truth, &km).expect("aligned inputs");
    Ok(SyntheticRun {
        records,
        predicted,
        counts,
        instance: prf(&counts, Weighting::Instance),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub csd_m: Vec<f64>,
    pub csl_m: Vec<f64>,
    pub target_h: Vec<usize>,
    /// Also the number of samples per cross-section.
    pub target_w: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            csd_m: vec![25.0, 50.0, 100.0],
            csl_m: vec![25.0, 50.0, 100.0, 200.0],
            target_h: vec![10, 20, 40],
            target_w: vec![10, 20, 40],
        }
    }
}

impl SweepGrid {
    pub fn combinations(&self) -> Vec<SamplingParams> {
        let mut out = Vec::new();
        for &csd in &self.csd_m {
            for &csl in &self.csl_m {
                for &h in &self.target_h {
                    for &w in &self.target_w {
                        out.push(SamplingParams::with_shape(csd, csl, h, w));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub csd_m: f64,
    pub csl_m: f64,
    pub target_h: usize,
    pub target_w: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub n_historical: usize,
    /// Overlap of the predicted historical set with the one obtained at
    /// the reference parameters.
    pub jaccard: f64,
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Runs the pipeline once per parameter combination on a rendered sheet.
pub fn sweep(
    segments: &[RoadSegment],
    map: &SyntheticMap,
    grid: &SweepGrid,
    base: &RoiOptions,
    pool: &rayon::ThreadPool,
) -> Result<Vec<SweepRow>> {
    let combos = grid.combinations();
    if combos.is_empty() {
        return Err(SynthError::Invalid("empty sweep grid".into()));
    }
    for p in &combos {
        p.validate()?;
    }
    let reference = run_synthetic(segments, map, base, pool)?.predicted;
    combos
        .into_iter()
        .map(|params| {
            let opts = RoiOptions { params, ..*base };
            let run = run_synthetic(segments, map, &opts, pool)?;
            Ok(SweepRow {
                csd_m: params.csd_m,
                csl_m: params.csl_m,
                target_h: params.target_h,
                target_w: params.target_w,
                precision: run.instance.precision,
                recall: run.instance.recall,
                f1: run.instance.f1,
                n_historical: run.predicted.len(),
                jaccard: jaccard(&run.predicted, &reference),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "csd_m", "csl_m", "target_h", "target_w", "precision", "recall", "f1", "n_historical", "jaccard",
    ])?;
    for r in rows {
        w.write_record([
            r.csd_m.to_string(),
            r.csl_m.to_string(),
            r.target_h.to_string(),
            r.target_w.to_string(),
            opt(r.precision),
            opt(r.recall),
            opt(r.f1),
            r.n_historical.to_string(),
            r.jaccard.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::thread_pool;

    fn straight() -> Vec<RoadSegment> {
        vec![RoadSegment::new("h", vec![Point2D::new(0.0, 102.5), Point2D::new(300.0, 102.5)]).unwrap()]
    }

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_historical_set_is_uniform() {
        let mut sc = SyntheticScenario::new(straight(), BTreeSet::new());
        sc.style.noise_sigma = 0.0;
        let m = render(&sc).unwrap();
        assert!(m.raster.pixels.iter().all(|&v| v == 245));
        assert_eq!(m.ground_truth["h"], false);
    }

    #[test]
    fn straight_road_gives_two_ink_rows() {
        let mut sc = SyntheticScenario::new(straight(), ids(&["h"]));
        sc.style.noise_sigma = 0.0;
        let m = render(&sc).unwrap();
        let r = &m.raster;
        let axis_row = r.pixel_index(Point2D::new(150.0, 102.5)).unwrap().1;
        let (c0, _) = r.pixel_index(Point2D::new(0.0, 102.5)).unwrap();
        let (c1, _) = r.pixel_index(Point2D::new(300.0, 102.5)).unwrap();
        for row in 0..r.height {
            for col in 0..r.width {
                let v = r.pixels[row * r.width + col];
                let on_line = (row == axis_row - 1 || row == axis_row + 1) && (c0..=c1).contains(&col);
                assert_eq!(v, if on_line { 20 } else { 245 }, "pixel ({col}, {row})");
            }
        }
        // the ink rows sit 5 m either side of the axis
        let up = r.transform.pixel_to_world(c0 as f64, (axis_row - 1) as f64);
        assert_eq!(up.y, 107.5);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut sc = SyntheticScenario::new(straight(), ids(&["h"]));
        sc.style.distractors = 3;
        sc.seed = 9;
        assert_eq!(render(&sc).unwrap(), render(&sc).unwrap());
        let mut other = sc.clone();
        other.seed = 10;
        assert_ne!(render(&sc).unwrap().raster.pixels, render(&other).unwrap().raster.pixels);
    }

    #[test]
    fn offset_and_dash() {
        let mut sc = SyntheticScenario::new(straight(), ids(&["h"]));
        sc.style.noise_sigma = 0.0;
        sc.style.offset_vec = (0.0, 20.0);
        sc.style.dash_pattern = Some((20.0, 20.0));
        let m = render(&sc).unwrap();
        let r = &m.raster;
        let row = r.pixel_index(Point2D::new(0.0, 127.5)).unwrap().1;
        let line: Vec<u8> = (0..r.width).map(|c| r.pixels[row * r.width + c]).collect();
        let ink = line.iter().filter(|&&v| v == 20).count();
        // about half of the 61 pixels along 300 m are drawn
        assert!((25..=40).contains(&ink), "{ink}");
        let axis_row = r.pixel_index(Point2D::new(0.0, 102.5)).unwrap().1;
        assert!((0..r.width).all(|c| r.pixels[(axis_row - 1) * r.width + c] == 245));
    }

    #[test]
    fn dash_pieces_cover_on_fraction() {
        let pts = vec![Point2D::new(0.0, 0.0), Point2D::new(50.0, 0.0), Point2D::new(50.0, 50.0)];
        let pieces = dash_pieces(&pts, 10.0, 5.0);
        let drawn: f64 = pieces
            .iter()
            .map(|p| p.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>())
            .sum();
        // 100 m: six full periods of 15 m plus 10 m of the seventh
        assert!((drawn - 70.0).abs() < 1e-9, "{drawn}");
        assert_eq!(pieces.len(), 7);
    }

    #[test]
    fn offset_polyline_keeps_distance() {
        let pts = vec![Point2D::new(0.0, 0.0), Point2D::new(100.0, 0.0), Point2D::new(100.0, 100.0)];
        let off = offset_polyline(&pts, 5.0);
        assert_eq!(off[0], Point2D::new(0.0, 5.0));
        assert!((off[1] - Point2D::new(95.0, 5.0)).norm() < 1e-9);
        assert_eq!(off[2], Point2D::new(95.0, 100.0));
    }

    #[test]
    fn generated_network_shape() {
        let segs = generate_network(&NetworkParams::default(), 4).unwrap();
        assert_eq!(segs.len(), 200);
        let ids: BTreeSet<&str> = segs.iter().map(|s| s.id()).collect();
        assert_eq!(ids.len(), 200);
        assert!(segs.iter().all(|s| s.length_m() > 80.0 && s.length_m() < 700.0));
        assert_eq!(segs, generate_network(&NetworkParams::default(), 4).unwrap());
        let huge = NetworkParams {
            nodes_x: 1 << 20,
            nodes_y: 1 << 20,
            ..NetworkParams::default()
        };
        assert!(generate_network(&huge, 4).is_err());
        let negative_jitter = NetworkParams {
            jitter_m: -1.0,
            ..NetworkParams::default()
        };
        assert!(generate_network(&negative_jitter, 4).is_err());
        let too_many = NetworkParams {
            n_segments: 1000,
            ..NetworkParams::default()
        };
        assert!(generate_network(&too_many, 4).is_err());
    }

    #[test]
    fn scenario_file_nested_epochs() {
        let json = r#"{
            "seed": 3,
            "network": {"generate": {"n_segments": 40, "nodes_x": 6, "nodes_y": 6}},
            "epochs": [
                {"year": 1900, "historical_fraction": 0.3},
                {"year": 1950, "historical_fraction": 0.6}
            ]
        }"#;
        let file = ScenarioFile::from_json(json).unwrap();
        let (segs, eps) = file.build().unwrap();
        assert_eq!(segs.len(), 40);
        assert_eq!(eps[0].historical_ids.len(), 12);
        assert_eq!(eps[1].historical_ids.len(), 24);
        assert!(eps[0].historical_ids.is_subset(&eps[1].historical_ids));
        assert_eq!(eps[1].sheet_id, "synthetic_1950");
    }

    #[test]
    fn scenario_file_errors() {
        let both = r#"{"network": {"segments": [{"id": "a", "coordinates": [[0,0],[10,0]]}]},
            "epochs": [{"year": 1900, "historical_fraction": 0.5, "historical_ids": ["a"]}]}"#;
        assert!(ScenarioFile::from_json(both).unwrap().build().is_err());
        let unknown = r#"{"network": {"segments": [{"id": "a", "coordinates": [[0,0],[10,0]]}]},
            "epochs": [{"year": 1900, "historical_ids": ["b"]}]}"#;
        assert!(ScenarioFile::from_json(unknown).unwrap().build().is_err());
        assert!(ScenarioFile::from_json(r#"{"network": {}, "epochs": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn small_clean_scenario_is_perfect() {
        let params = NetworkParams {
            n_segments: 30,
            nodes_x: 5,
            nodes_y: 5,
            ..NetworkParams::default()
        };
        let segs = generate_network(&params, 1).unwrap();
        let hist: BTreeSet<String> = segs.iter().step_by(2).map(|s| s.id().to_string()).collect();
        let mut sc = SyntheticScenario::new(segs.clone(), hist);
        sc.seed = 1;
        let map = render(&sc).unwrap();
        let run = run_synthetic(&segs, &map, &RoiOptions::default(), &thread_pool(2)).unwrap();
        assert_eq!(run.instance.f1, Some(1.0));
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard(&ids(&[]), &ids(&[])), 1.0);
        assert_eq!(jaccard(&ids(&["a", "b"]), &ids(&["b", "c"])), 1.0 / 3.0);
    }
}
