//! Georeferenced rasters: world files, PNM images, nearest-neighbour sampling.

mod pnm;
mod world_file;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{Point2D, SheetFootprint};

pub use pnm::{parse_pnm, write_pnm, PnmImage};
pub use world_file::{format_world_file, parse_world_file};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("world file line {line}: {msg}")]
    WorldFile { line: usize, msg: String },
    #[error("singular affine transform (determinant {0})")]
    Singular(f64),
    #[error("PNM: {0}")]
    Pnm(String),
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RasterError>;

pub type Rgb = [u8; 3];

/// Six-parameter world transform. `(c, f)` is the centre of the top-left
/// pixel:
///
/// ```text
/// x = a*col + b*row + c
/// y = d*col + e*row + f
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub a: f64,
    pub d: f64,
    pub b: f64,
    pub e: f64,
    pub c: f64,
    pub f: f64,
}

impl AffineTransform {
    pub fn new(a: f64, d: f64, b: f64, e: f64, c: f64, f: f64) -> Result<Self> {
        let t = Self { a, d, b, e, c, f };
        t.validate()?;
        Ok(t)
    }

    /// North-up transform with square pixels.
    pub fn north_up(pixel_size: f64, top_left_center: Point2D) -> Result<Self> {
        Self::new(
            pixel_size,
            0.0,
            0.0,
            -pixel_size,
            top_left_center.x,
            top_left_center.y,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.determinant();
        if [self.a, self.b, self.c, self.d, self.e, self.f]
            .iter()
            .any(|v| !v.is_finite())
            || det == 0.0
            || !det.is_finite()
        {
            return Err(RasterError::Singular(det));
        }
        Ok(())
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> Point2D {
        Point2D::new(
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )
    }

    /// Fractional `(col, row)`; integer values are pixel centres.
    pub fn world_to_pixel(&self, p: Point2D) -> (f64, f64) {
        let det = self.determinant();
        let dx = p.x - self.c;
        let dy = p.y - self.f;
        (
            (self.e * dx - self.b * dy) / det,
            (-self.d * dx + self.a * dy) / det,
        )
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.b == 0.0 && self.d == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bands {
    Gray = 1,
    Rgb = 3,
}

impl Bands {
    pub fn count(self) -> usize {
        self as usize
    }
}

/// A scanned map sheet (or any 8-bit raster) with its world transform.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    pub width: usize,
    pub height: usize,
    pub bands: Bands,
    pub pixels: Vec<u8>,
    pub transform: AffineTransform,
    pub sheet_id: String,
    pub epoch_year: i32,
}

impl GeoRaster {
    pub fn new(
        width: usize,
        height: usize,
        bands: Bands,
        pixels: Vec<u8>,
        transform: AffineTransform,
    ) -> Result<Self> {
        transform.validate()?;
        if width == 0 || height == 0 {
            return Err(RasterError::Invalid("raster has zero extent".into()));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(bands.count()))
            .ok_or_else(|| RasterError::Invalid("raster too large".into()))?;
        if pixels.len() != expected {
            return Err(RasterError::Invalid(format!(
                "expected {expected} samples, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bands,
            pixels,
            transform,
            sheet_id: String::new(),
            epoch_year: 0,
        })
    }

    /// Raster filled with one gray value.
    pub fn filled(width: usize, height: usize, value: u8, transform: AffineTransform) -> Result<Self> {
        Self::new(width, height, Bands::Gray, vec![value; width * height], transform)
    }

    pub fn with_sheet(mut self, sheet_id: impl Into<String>, epoch_year: i32) -> Self {
        self.sheet_id = sheet_id.into();
        self.epoch_year = epoch_year;
        self
    }

    pub fn from_pnm(img: PnmImage, transform: AffineTransform) -> Result<Self> {
        Self::new(img.width, img.height, img.bands, img.pixels, transform)
    }

    pub fn to_pnm(&self) -> PnmImage {
        PnmImage {
            width: self.width,
            height: self.height,
            bands: self.bands,
            pixels: self.pixels.clone(),
        }
    }

    /// Color at an in-range pixel; gray bands are replicated.
    pub fn pixel(&self, col: usize, row: usize) -> Rgb {
        let idx = (row * self.width + col) * self.bands.count();
        match self.bands {
            Bands::Gray => {
                let v = self.pixels[idx];
                [v, v, v]
            }
            Bands::Rgb => [self.pixels[idx], self.pixels[idx + 1], self.pixels[idx + 2]],
        }
    }

    /// Nearest pixel index for a world point, `None` outside the raster.
    pub fn pixel_index(&self, p: Point2D) -> Option<(usize, usize)> {
        let (col, row) = self.transform.world_to_pixel(p);
        let (col, row) = (col.round(), row.round());
        if col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64 {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }

    /// Nearest-neighbour color sample; `None` when out of bounds.
    pub fn sample_rgb(&self, p: Point2D) -> Option<Rgb> {
        self.pixel_index(p).map(|(c, r)| self.pixel(c, r))
    }

    /// Outer corners of the raster in world coordinates, in pixel order
    /// top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point2D; 4] {
        let (w, h) = (self.width as f64 - 0.5, self.height as f64 - 0.5);
        [
            self.transform.pixel_to_world(-0.5, -0.5),
            self.transform.pixel_to_world(w, -0.5),
            self.transform.pixel_to_world(w, h),
            self.transform.pixel_to_world(-0.5, h),
        ]
    }

    /// Footprint polygon covering the raster extent.
    pub fn footprint(&self) -> crate::geometry::Result<SheetFootprint> {
        SheetFootprint::new(self.sheet_id.clone(), self.corners().to_vec(), self.epoch_year)
    }
}

/// Loads a PNM image and its world file.
pub fn load_raster(image_path: &Path, world_path: &Path) -> Result<GeoRaster> {
    let bytes = std::fs::read(image_path).map_err(|source| RasterError::Io {
        path: image_path.to_path_buf(),
        source,
    })?;
    let text = std::fs::read_to_string(world_path).map_err(|source| RasterError::Io {
        path: world_path.to_path_buf(),
        source,
    })?;
    let transform = parse_world_file(&text)?;
    let img = parse_pnm(&bytes).map_err(|e| match e {
        RasterError::Pnm(msg) => RasterError::Pnm(format!("{}: {msg}", image_path.display())),
        other => other,
    })?;
    GeoRaster::from_pnm(img, transform)
}

/// Writes the raster as PNM plus a world file.
pub fn save_raster(raster: &GeoRaster, image_path: &Path, world_path: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RasterError::Io { path, source }
    };
    std::fs::write(image_path, write_pnm(&raster.to_pnm())).map_err(io(image_path))?;
    std::fs::write(world_path, format_world_file(&raster.transform)).map_err(io(world_path))?;
    Ok(())
}

/// Binary built-up-area grid with 250 m cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BuaGrid {
    raster: GeoRaster,
    pub year: i32,
}

pub const BUA_CELL_SIZE_M: f64 = 250.0;

impl BuaGrid {
    pub fn new(raster: GeoRaster, year: i32) -> Result<Self> {
        let t = raster.transform;
        if !t.is_axis_aligned() {
            return Err(RasterError::Invalid("BUA grid must be axis-aligned".into()));
        }
        if (t.a.abs() - BUA_CELL_SIZE_M).abs() > 1e-6 || (t.e.abs() - BUA_CELL_SIZE_M).abs() > 1e-6 {
            return Err(RasterError::Invalid(format!(
                "BUA cell size must be {BUA_CELL_SIZE_M} m, got {} x {}",
                t.a.abs(),
                t.e.abs()
            )));
        }
        if raster.bands != Bands::Gray {
            return Err(RasterError::Invalid("BUA grid must be single-band".into()));
        }
        if let Some(v) = raster.pixels.iter().find(|&&v| v != 0 && v != 255) {
            return Err(RasterError::Invalid(format!(
                "BUA grid values must be 0 or 255, found {v}"
            )));
        }
        Ok(Self { raster, year })
    }

    pub fn raster(&self) -> &GeoRaster {
        &self.raster
    }

    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    /// Built flag for a cell; cells beyond the grid count as unbuilt.
    pub fn is_built(&self, col: i64, row: i64) -> bool {
        col >= 0
            && row >= 0
            && (col as usize) < self.raster.width
            && (row as usize) < self.raster.height
            && self.raster.pixels[row as usize * self.raster.width + col as usize] == 255
    }

    /// World-space rectangle of a cell (indices may lie outside the grid).
    pub fn cell_rect(&self, col: i64, row: i64) -> crate::geometry::polygon::Rect {
        let t = &self.raster.transform;
        let p0 = t.pixel_to_world(col as f64 - 0.5, row as f64 - 0.5);
        let p1 = t.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5);
        crate::geometry::polygon::Rect {
            min: Point2D::new(p0.x.min(p1.x), p0.y.min(p1.y)),
            max: Point2D::new(p0.x.max(p1.x), p0.y.max(p1.y)),
        }
    }

    pub fn world_to_cell(&self, p: Point2D) -> (i64, i64) {
        let (c, r) = self.raster.transform.world_to_pixel(p);
        (c.round() as i64, r.round() as i64)
    }
}
