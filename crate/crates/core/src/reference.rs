//! Reference labels: built-up fractions inside road buffers, and manual
//! patch labels.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::polygon::{area, clip_to_rect};
use crate::geometry::{buffer_segment, GeometryError, Point2D, RoadSegment};
use crate::raster::{AffineTransform, BuaGrid, GeoRaster, RasterError};

/// Buffer radius around each road segment.
pub const DEFAULT_BUFFER_RADIUS_M: f64 = 125.0;

/// Thresholds applied to the built-up fraction.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.0, 0.10, 0.25, 0.50, 0.75, 0.90];

pub const DEFAULT_PATCH_SIZE_M: f64 = 500.0;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("no built-up layer earlier than {year} (available: {available:?})")]
    NoBuaEpoch { year: i32, available: Vec<i32> },
    #[error("buffer polygon has zero area")]
    ZeroArea,
    #[error("manual labels line {line}: {msg}")]
    Labels { line: u64, msg: String },
    #[error("segment {segment_id} midpoint lies outside raster {sheet_id}")]
    OutsideRaster { segment_id: String, sheet_id: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, ReferenceError>;

/// Latest available year strictly before `map_year`.
pub fn select_bua_epoch(available: &[i32], map_year: i32) -> Result<i32> {
    available
        .iter()
        .copied()
        .filter(|&y| y < map_year)
        .max()
        .ok_or_else(|| ReferenceError::NoBuaEpoch {
            year: map_year,
            available: available.to_vec(),
        })
}

/// Area of the ring inside each grid cell it touches, as `(col, row, area)`.
/// Cells beyond the grid extent are included.
pub fn cell_overlaps(ring: &[Point2D], grid: &BuaGrid) -> Vec<(i64, i64, f64)> {
    let (mut c0, mut r0, mut c1, mut r1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for &p in ring {
        let (c, r) = grid.world_to_cell(p);
        c0 = c0.min(c);
        c1 = c1.max(c);
        r0 = r0.min(r);
        r1 = r1.max(r);
    }
    let mut out = Vec::new();
    for row in r0..=r1 {
        for col in c0..=c1 {
            let clipped = clip_to_rect(ring, &grid.cell_rect(col, row));
            if clipped.len() >= 3 {
                let a = area(&clipped);
                if a > 0.0 {
                    out.push((col, row, a));
                }
            }
        }
    }
    out
}

/// Share of the ring's area lying in built cells.
pub fn built_up_fraction(ring: &[Point2D], grid: &BuaGrid) -> Result<f64> {
    let total = area(ring);
    if total <= 0.0 {
        return Err(ReferenceError::ZeroArea);
    }
    let built: f64 = cell_overlaps(ring, grid)
        .into_iter()
        .filter(|&(c, r, _)| grid.is_built(c, r))
        .map(|(_, _, a)| a)
        .sum();
    Ok((built / total).clamp(0.0, 1.0))
}

/// Presence label: strictly above the threshold.
pub fn label_from_fraction(fraction: f64, threshold: f64) -> bool {
    fraction > threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltUpFractionRecord {
    pub segment_id: String,
    pub epoch_year: i32,
    pub bua_year: i32,
    pub fraction: f64,
}

/// Built-up fraction for every segment against the grid preceding the
/// epoch. `grids` need not be sorted.
pub fn segment_fractions(
    segments: &[RoadSegment],
    grids: &[BuaGrid],
    epoch_year: i32,
    radius_m: f64,
) -> Result<Vec<BuiltUpFractionRecord>> {
    let years: Vec<i32> = grids.iter().map(|g| g.year).collect();
    let bua_year = select_bua_epoch(&years, epoch_year)?;
    let grid = grids.iter().find(|g| g.year == bua_year).expect("year taken from grids");
    segments
        .iter()
        .map(|seg| {
            let buffer = buffer_segment(seg, radius_m)?;
            Ok(BuiltUpFractionRecord {
                segment_id: seg.id().to_string(),
                epoch_year,
                bua_year,
                fraction: built_up_fraction(&buffer.ring, grid)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualLabel {
    pub segment_id: String,
    pub epoch_year: i32,
    pub present: bool,
}

/// Manual labels keyed by `(segment_id, epoch_year)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManualLabels {
    labels: BTreeMap<(String, i32), bool>,
}

impl ManualLabels {
    pub fn get(&self, segment_id: &str, epoch_year: i32) -> Option<bool> {
        self.labels.get(&(segment_id.to_string(), epoch_year)).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ManualLabel> + '_ {
        self.labels.iter().map(|((id, y), &p)| ManualLabel {
            segment_id: id.clone(),
            epoch_year: *y,
            present: p,
        })
    }

    pub fn epochs(&self) -> Vec<i32> {
        let mut e: Vec<i32> = self.labels.keys().map(|k| k.1).collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

/// Reads `segment_id,epoch_year,present` rows. Repeated rows must agree.
pub fn parse_manual_labels<R: Read>(reader: R) -> Result<ManualLabels> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let err = |line: u64, msg: String| ReferenceError::Labels { line, msg };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let expected = ["segment_id", "epoch_year", "present"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(err(1, format!("expected header {}", expected.join(","))));
    }
    let mut labels = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(err(line, "empty segment_id".into()));
        }
        let year: i32 = rec[1]
            .parse()
            .map_err(|_| err(line, format!("bad epoch_year '{}'", &rec[1])))?;
        let present = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(line, format!("present must be 0 or 1, got '{other}'"))),
        };
        if let Some(prev) = labels.insert((id.clone(), year), present) {
            if prev != present {
                return Err(err(line, format!("conflicting labels for {id} in {year}")));
            }
        }
    }
    Ok(ManualLabels { labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub raster: GeoRaster,
    /// Part of the window fell outside the source raster and was filled
    /// with white.
    pub padded: bool,
}

/// Square crop of about `size_m` centred on the segment's arc-length
/// midpoint, aligned to the raster's pixel grid.
pub fn export_patch(segment: &RoadSegment, raster: &GeoRaster, size_m: f64) -> Result<Patch> {
    let mid = segment.arc_midpoint();
    let Some((cc, cr)) = raster.pixel_index(mid) else {
        return Err(ReferenceError::OutsideRaster {
            segment_id: segment.id().to_string(),
            sheet_id: raster.sheet_id.clone(),
        });
    };
    let pixel_size = raster.transform.determinant().abs().sqrt();
    let n = ((size_m / pixel_size).round() as i64).max(1);
    let (c0, r0) = (cc as i64 - n / 2, cr as i64 - n / 2);
    let nb = raster.bands.count();
    let mut pixels = vec![255u8; (n * n) as usize * nb];
    let mut padded = false;
    for r in 0..n {
        for c in 0..n {
            let (sc, sr) = (c0 + c, r0 + r);
            if sc < 0 || sr < 0 || sc >= raster.width as i64 || sr >= raster.height as i64 {
                padded = true;
                continue;
            }
            let src = (sr as usize * raster.width + sc as usize) * nb;
            let dst = (r * n + c) as usize * nb;
            pixels[dst..dst + nb].copy_from_slice(&raster.pixels[src..src + nb]);
        }
    }
    let t = raster.transform;
    let origin = t.pixel_to_world(c0 as f64, r0 as f64);
    let transform = AffineTransform::new(t.a, t.d, t.b, t.e, origin.x, origin.y)?;
    let crop = GeoRaster::new(n as usize, n as usize, raster.bands, pixels, transform)?
        .with_sheet(raster.sheet_id.clone(), raster.epoch_year);
    if padded {
        log::warn!("patch for {} extends beyond sheet {}", segment.id(), raster.sheet_id);
    }
    Ok(Patch { raster: crop, padded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon::contains_point;
    use crate::raster::Bands;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `w` x `h` grid of 250 m cells with its top-left corner at (0, h*250).
    fn grid(w: usize, h: usize, built: impl Fn(usize, usize) -> bool) -> BuaGrid {
        let t = AffineTransform::north_up(250.0, Point2D::new(125.0, h as f64 * 250.0 - 125.0)).unwrap();
        let mut px = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                if built(c, r) {
                    px[r * w + c] = 255;
                }
            }
        }
        BuaGrid::new(GeoRaster::new(w, h, Bands::Gray, px, t).unwrap(), 1900).unwrap()
    }

    fn seg(id: &str, pts: &[(f64, f64)]) -> RoadSegment {
        RoadSegment::new(id, pts.iter().map(|&p| p.into()).collect()).unwrap()
    }

    /// Uniform points over the buffer's bounding box, kept if inside the ring.
    fn monte_carlo_fraction(ring: &[Point2D], grid: &BuaGrid, n: usize, seed: u64) -> f64 {
        let (mut lo, mut hi) = (ring[0], ring[0]);
        for p in ring {
            lo = Point2D::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2D::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut inside, mut built) = (0usize, 0usize);
        for _ in 0..n {
            let p = Point2D::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            if contains_point(ring, p) {
                inside += 1;
                let (c, r) = grid.world_to_cell(p);
                if grid.is_built(c, r) {
                    built += 1;
                }
            }
        }
        built as f64 / inside as f64
    }

    #[test]
    fn bua_epoch_is_strictly_earlier() {
        assert_eq!(select_bua_epoch(&[1890, 1895, 1900], 1899).unwrap(), 1895);
        assert_eq!(select_bua_epoch(&[1890, 1895, 1900], 1900).unwrap(), 1895);
        assert!(select_bua_epoch(&[1890, 1895], 1885).is_err());
    }

    #[test]
    fn thresholds_are_strict() {
        assert!(!label_from_fraction(0.0, 0.0));
        assert!(label_from_fraction(0.01, 0.0));
        assert!(!label_from_fraction(0.75, 0.75));
    }

    #[test]
    fn all_built_and_none_built() {
        let s = seg("a", &[(900.0, 1000.0), (1100.0, 1000.0)]);
        let b = buffer_segment(&s, 125.0).unwrap();
        assert_eq!(built_up_fraction(&b.ring, &grid(8, 8, |_, _| true)).unwrap(), 1.0);
        assert_eq!(built_up_fraction(&b.ring, &grid(8, 8, |_, _| false)).unwrap(), 0.0);
    }

    #[test]
    fn half_plane_matches_monte_carlo() {
        // west half built; the road runs along the boundary x = 1000
        let g = grid(8, 8, |c, _| c < 4);
        let s = seg("a", &[(1000.0, 600.0), (1000.0, 1400.0)]);
        let b = buffer_segment(&s, 125.0).unwrap();
        let exact = built_up_fraction(&b.ring, &g).unwrap();
        let mc = monte_carlo_fraction(&b.ring, &g, 1_000_000, 3);
        assert!((exact - 0.5).abs() < 1e-3, "{exact}");
        assert!((exact - mc).abs() < 1e-3, "{exact} vs {mc}");
    }

    #[test]
    fn random_layouts_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let cells: Vec<bool> = (0..64).map(|_| rng.random_bool(0.4)).collect();
            let g = grid(8, 8, |c, r| cells[r * 8 + c]);
            let pts: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.random_range(300.0..1700.0), rng.random_range(300.0..1700.0)))
                .collect();
            let s = seg("r", &pts);
            let b = buffer_segment(&s, 125.0).unwrap();
            let exact = built_up_fraction(&b.ring, &g).unwrap();
            let mc = monte_carlo_fraction(&b.ring, &g, 200_000, trial);
            assert!((exact - mc).abs() < 5e-3, "trial {trial}: {exact} vs {mc}");
        }
    }

    #[test]
    fn overlaps_partition_the_buffer() {
        // road partly beyond the grid edge
        let g = grid(4, 4, |c, r| (c + r) % 2 == 0);
        for pts in [
            vec![(-200.0, 500.0), (700.0, 800.0), (900.0, 1300.0)],
            vec![(100.0, 100.0), (133.0, 977.0)],
        ] {
            let b = buffer_segment(&seg("p", &pts), 125.0).unwrap();
            let sum: f64 = cell_overlaps(&b.ring, &g).iter().map(|o| o.2).sum();
            assert!((sum - b.area()).abs() <= 1e-6 * b.area(), "{sum} vs {}", b.area());
        }
    }

    #[test]
    fn fraction_monotone_in_built_cells() {
        let s = seg("m", &[(300.0, 300.0), (700.0, 650.0)]);
        let b = buffer_segment(&s, 125.0).unwrap();
        let mut built = [false; 16];
        let mut last = 0.0;
        for i in [5, 0, 10, 6, 1, 9, 15, 2] {
            built[i] = true;
            let f = built_up_fraction(&b.ring, &grid(4, 4, |c, r| built[r * 4 + c])).unwrap();
            assert!(f >= last);
            last = f;
        }
    }

    #[test]
    fn zero_area_buffer_rejected() {
        let g = grid(2, 2, |_, _| true);
        let ring = vec![Point2D::new(0.0, 0.0), Point2D::new(1.0, 1.0), Point2D::new(2.0, 2.0)];
        assert!(matches!(built_up_fraction(&ring, &g), Err(ReferenceError::ZeroArea)));
    }

    #[test]
    fn manual_labels_parse() {
        let csv = "segment_id,epoch_year,present\na,1900,1\nb,1900,0\na,1900,1\na,1950,0\n";
        let l = parse_manual_labels(csv.as_bytes()).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!(l.get("a", 1900), Some(true));
        assert_eq!(l.get("a", 1950), Some(false));
        assert_eq!(l.epochs(), vec![1900, 1950]);
    }

    #[test]
    fn manual_label_errors_have_lines() {
        let line_of = |csv: &str| match parse_manual_labels(csv.as_bytes()) {
            Err(ReferenceError::Labels { line, .. }) => line,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(line_of("segment_id,epoch_year,present\na,1900,2\n"), 2);
        assert_eq!(line_of("segment_id,epoch_year,present\na,1900,1\nb,x,1\n"), 3);
        assert_eq!(line_of("segment_id,epoch_year,present\na,1900,1\na,1900,0\n"), 3);
        assert_eq!(line_of("id,year,present\n"), 1);
        assert_eq!(line_of("segment_id,epoch_year,present\na,1900\n"), 2);
    }

    #[test]
    fn patch_crop_and_padding() {
        let t = AffineTransform::north_up(5.0, Point2D::new(2.5, 997.5)).unwrap();
        let mut r = GeoRaster::filled(200, 200, 0, t).unwrap().with_sheet("s", 1900);
        for (i, p) in r.pixels.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        let inner = seg("in", &[(400.0, 500.0), (600.0, 500.0)]);
        let p = export_patch(&inner, &r, 500.0).unwrap();
        assert!(!p.padded);
        assert_eq!((p.raster.width, p.raster.height), (100, 100));
        // every crop pixel equals the source pixel at the same world point
        for (c, row) in [(0, 0), (37, 81), (99, 99)] {
            let w = p.raster.transform.pixel_to_world(c as f64, row as f64);
            assert_eq!(p.raster.sample_rgb(w), r.sample_rgb(w));
        }
        let edge = seg("edge", &[(10.0, 500.0), (30.0, 500.0)]);
        let p = export_patch(&edge, &r, 500.0).unwrap();
        assert!(p.padded);
        assert_eq!(p.raster.pixel(0, 50), [255; 3]);
        let out = seg("out", &[(5000.0, 500.0), (5100.0, 500.0)]);
        assert!(matches!(export_patch(&out, &r, 500.0), Err(ReferenceError::OutsideRaster { .. })));
    }
}
