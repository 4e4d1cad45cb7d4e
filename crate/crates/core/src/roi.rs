//! Axial images and the road overlap indicator.
//!
//! For every segment the colors under each cross-section are stacked into an
//! axial image (rows follow the road axis, columns run across it). The image
//! is regularized to a fixed shape, converted to gray, and the west-east
//! gradient is summed per column. The indicator is the area under the
//! absolute column-sum curve.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{generate_cross_sections, GeometryError, RoadSegment, SamplingParams};
use crate::raster::{write_pnm, Bands, GeoRaster, PnmImage, Rgb};

pub const DEFAULT_OOB_LIMIT: f64 = 0.5;

/// Fill value for samples that fall outside the raster (map background).
pub const OOB_FILL: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct AxialImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Rgb>,
    pub oob_mask: Vec<bool>,
}

impl AxialImage {
    pub fn oob_fraction(&self) -> f64 {
        let n = self.oob_mask.len();
        if n == 0 {
            return 1.0;
        }
        self.oob_mask.iter().filter(|&&m| m).count() as f64 / n as f64
    }

    pub fn row(&self, r: usize) -> &[Rgb] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Gray matrix of the target shape, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl RegularizedImage {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "image size mismatch");
        Self { rows, cols, values }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.rows, self.cols, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Rec. 601 luminance.
pub fn luminance(rgb: Rgb) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

/// Samples the raster along every cross-section of the segment. Rows are in
/// arc order, columns from the negative to the positive normal offset.
pub fn build_axial_image(
    segment: &RoadSegment,
    raster: &GeoRaster,
    params: &SamplingParams,
) -> Result<AxialImage, GeometryError> {
    let sections = generate_cross_sections(segment, params)?;
    let cols = params.n_samples;
    let mut values = Vec::with_capacity(sections.len() * cols);
    let mut oob_mask = Vec::with_capacity(sections.len() * cols);
    for section in &sections {
        for &p in &section.samples {
            match raster.sample_rgb(p) {
                Some(rgb) => {
                    values.push(rgb);
                    oob_mask.push(false);
                }
                None => {
                    values.push([OOB_FILL; 3]);
                    oob_mask.push(true);
                }
            }
        }
    }
    Ok(AxialImage {
        rows: sections.len(),
        cols,
        values,
        oob_mask,
    })
}

/// Row index in `0..h` for a (possibly out-of-range) padded index, by
/// symmetric reflection that repeats the edge row: `.. r1 r0 | r0 r1 ..`.
fn reflect_index(i: i64, h: usize) -> usize {
    let period = 2 * h as i64;
    let m = i.rem_euclid(period) as usize;
    if m < h {
        m
    } else {
        2 * h - 1 - m
    }
}

/// Row indices of the source image used for each of the `target_h` rows.
pub fn regularized_row_indices(h: usize, target_h: usize, seed: u64) -> Vec<usize> {
    use std::cmp::Ordering;
    match h.cmp(&target_h) {
        Ordering::Equal => (0..h).collect(),
        Ordering::Greater => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, h, target_h).into_vec();
            idx.sort_unstable();
            idx
        }
        Ordering::Less => {
            let top = ((target_h - h) / 2) as i64;
            (0..target_h as i64)
                .map(|i| reflect_index(i - top, h))
                .collect()
        }
    }
}

/// Resamples the rows to `target_h` (random subset or centered reflection)
/// and converts to gray.
pub fn regularize(img: &AxialImage, target_h: usize, seed: u64) -> RegularizedImage {
    let rows = regularized_row_indices(img.rows, target_h, seed);
    let mut values = Vec::with_capacity(target_h * img.cols);
    for r in rows {
        values.extend(img.row(r).iter().map(|&rgb| luminance(rgb)));
    }
    RegularizedImage::new(target_h, img.cols, values)
}

/// West-east gradient by central differences, one-sided at the borders.
pub fn gradient_columns(img: &RegularizedImage) -> Vec<f64> {
    let (h, w) = (img.rows, img.cols);
    let mut g = vec![0.0; h * w];
    if w < 2 {
        return g;
    }
    for r in 0..h {
        let row = &img.values[r * w..(r + 1) * w];
        let out = &mut g[r * w..(r + 1) * w];
        out[0] = row[1] - row[0];
        out[w - 1] = row[w - 1] - row[w - 2];
        for c in 1..w - 1 {
            out[c] = (row[c + 1] - row[c - 1]) / 2.0;
        }
    }
    g
}

/// North-south sums of the west-east gradient, one value per column.
pub fn column_curve(img: &RegularizedImage) -> Vec<f64> {
    let g = gradient_columns(img);
    let mut curve = vec![0.0; img.cols];
    for r in 0..img.rows {
        for (c, s) in curve.iter_mut().enumerate() {
            *s += g[r * img.cols + c];
        }
    }
    curve
}

/// Area under the absolute column-sum curve (unit column width).
pub fn roi(img: &RegularizedImage) -> f64 {
    column_curve(img).iter().map(|s| s.abs()).sum()
}

/// Per-segment seed, independent of processing order.
pub fn segment_seed(global_seed: u64, segment_id: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in global_seed.to_le_bytes().iter().chain(segment_id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiOptions {
    pub params: SamplingParams,
    pub global_seed: u64,
    /// Records whose out-of-bounds fraction exceeds this are invalid.
    pub oob_limit: f64,
}

impl Default for RoiOptions {
    fn default() -> Self {
        Self {
            params: SamplingParams::default(),
            global_seed: 0,
            oob_limit: DEFAULT_OOB_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub segment_id: String,
    /// `None` when the segment is not covered by any sheet.
    pub sheet_id: Option<String>,
    pub epoch_year: i32,
    /// Survey year of the sheet the segment was sampled on.
    pub map_year: i32,
    pub roi: f64,
    pub n_cross_sections: usize,
    pub oob_fraction: f64,
    pub valid: bool,
}

impl RoiRecord {
    pub fn unassigned(segment_id: impl Into<String>, epoch_year: i32) -> Self {
        Self {
            segment_id: segment_id.into(),
            sheet_id: None,
            epoch_year,
            map_year: epoch_year,
            roi: 0.0,
            n_cross_sections: 0,
            oob_fraction: 1.0,
            valid: false,
        }
    }
}

/// Intermediate products of one indicator computation.
#[derive(Debug, Clone)]
pub struct RoiTrace {
    pub axial: AxialImage,
    pub regularized: RegularizedImage,
    pub curve: Vec<f64>,
    pub record: RoiRecord,
}

pub fn compute_roi_traced(
    segment: &RoadSegment,
    raster: &GeoRaster,
    opts: &RoiOptions,
    epoch_year: i32,
) -> Result<RoiTrace, GeometryError> {
    let axial = build_axial_image(segment, raster, &opts.params)?;
    let seed = segment_seed(opts.global_seed, segment.id());
    let regularized = regularize(&axial, opts.params.target_h, seed);
    let curve = column_curve(&regularized);
    let roi: f64 = curve.iter().map(|s| s.abs()).sum();
    let oob_fraction = axial.oob_fraction();
    let record = RoiRecord {
        segment_id: segment.id().to_string(),
        sheet_id: Some(raster.sheet_id.clone()),
        epoch_year,
        map_year: raster.epoch_year,
        roi,
        n_cross_sections: axial.rows,
        oob_fraction,
        valid: oob_fraction <= opts.oob_limit,
    };
    Ok(RoiTrace {
        axial,
        regularized,
        curve,
        record,
    })
}

/// Indicator record for one segment on one sheet.
pub fn compute_roi(
    segment: &RoadSegment,
    raster: &GeoRaster,
    opts: &RoiOptions,
    epoch_year: i32,
) -> Result<RoiRecord, GeometryError> {
    compute_roi_traced(segment, raster, opts, epoch_year).map(|t| t.record)
}

fn to_gray_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes `<id>_axial.pgm`, `<id>_regularized.pgm` and `<id>_curve.csv`.
pub fn write_debug_dump(dir: &Path, trace: &RoiTrace) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let id: String = trace
        .record
        .segment_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let axial = PnmImage {
        width: trace.axial.cols,
        height: trace.axial.rows,
        bands: Bands::Gray,
        pixels: trace.axial.values.iter().map(|&c| to_gray_byte(luminance(c))).collect(),
    };
    std::fs::write(dir.join(format!("{id}_axial.pgm")), write_pnm(&axial))?;
    let reg = PnmImage {
        width: trace.regularized.cols,
        height: trace.regularized.rows,
        bands: Bands::Gray,
        pixels: trace.regularized.values.iter().map(|&v| to_gray_byte(v)).collect(),
    };
    std::fs::write(dir.join(format!("{id}_regularized.pgm")), write_pnm(&reg))?;
    let mut f = std::fs::File::create(dir.join(format!("{id}_curve.csv")))?;
    writeln!(f, "column,gradient_sum")?;
    for (c, s) in trace.curve.iter().enumerate() {
        writeln!(f, "{c},{s}")?;
    }
    Ok(())
}
