//! Planar geometry of road segments.
//!
//! All coordinates are meters in a single projected (planar) reference
//! system. Nothing in this module reprojects.

mod buffer;
mod cross_section;
pub mod polygon;
mod sheet;
mod stratify;

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::{buffer_segment, BufferPolygon, CHORDS_PER_SEMICIRCLE};
pub use cross_section::{cross_section_count, generate_cross_sections, CrossSection, SamplingParams};
pub use sheet::{assign_segment_to_sheet, SheetFootprint};
pub use stratify::{stratify_segments, Stratification, Stratum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("arc position {s} outside [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("empty input")]
    Empty,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Planar point, easting/northing in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, other: Point2D) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn cross(self, other: Point2D) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Point2D) -> f64 {
        (other - self).norm()
    }

    /// Counter-clockwise rotation by 90 degrees.
    #[inline]
    pub fn perp(self) -> Point2D {
        Point2D::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Option<Point2D> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| Point2D::new(self.x / n, self.y / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Point2D, t: f64) -> Point2D {
        Point2D::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

impl Add for Point2D {
    type Output = Point2D;
    fn add(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2D {
    type Output = Point2D;
    fn sub(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2D {
    type Output = Point2D;
    fn mul(self, rhs: f64) -> Point2D {
        Point2D::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2D {
    type Output = Point2D;
    fn neg(self) -> Point2D {
        Point2D::new(-self.x, -self.y)
    }
}

impl From<(f64, f64)> for Point2D {
    fn from((x, y): (f64, f64)) -> Self {
        Point2D::new(x, y)
    }
}

/// Sum of Euclidean distances between consecutive vertices.
pub fn polyline_length(vertices: &[Point2D]) -> Result<f64> {
    if vertices.len() < 2 {
        return Err(GeometryError::InvalidGeometry(format!(
            "polyline needs at least 2 vertices, got {}",
            vertices.len()
        )));
    }
    Ok(vertices.windows(2).map(|w| w[0].distance(w[1])).sum())
}

/// Point and unit tangent at arc length `s` along the polyline.
///
/// At a shared vertex the tangent of the following chord is returned; at the
/// very end of the polyline the last chord's direction is used.
pub fn point_and_tangent_at(vertices: &[Point2D], s: f64) -> Result<(Point2D, Point2D)> {
    let length = polyline_length(vertices)?;
    if !(0.0..=length).contains(&s) {
        return Err(GeometryError::OutOfRange { s, length });
    }
    let last = vertices.len() - 2;
    let mut start = 0.0;
    for (i, w) in vertices.windows(2).enumerate() {
        let chord = w[0].distance(w[1]);
        let end = start + chord;
        if chord > 0.0 && (s < end || i == last) {
            let tangent = (w[1] - w[0]) * (1.0 / chord);
            let t = ((s - start) / chord).clamp(0.0, 1.0);
            return Ok((w[0].lerp(w[1], t), tangent));
        }
        start = end;
    }
    Err(GeometryError::InvalidGeometry(
        "polyline has zero length".to_string(),
    ))
}

/// A contemporary road segment, the analytical unit of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    id: String,
    vertices: Vec<Point2D>,
    length_m: f64,
    pub stratum: Option<Stratum>,
}

impl RoadSegment {
    /// Validates the polyline. Consecutive duplicate vertices are dropped.
    pub fn new(id: impl Into<String>, vertices: Vec<Point2D>) -> Result<Self> {
        let id = id.into();
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::InvalidGeometry(format!(
                "segment {id}: non-finite vertex ({}, {})",
                p.x, p.y
            )));
        }
        let mut clean: Vec<Point2D> = Vec::with_capacity(vertices.len());
        for p in vertices {
            if clean.last() != Some(&p) {
                clean.push(p);
            }
        }
        if clean.len() < 2 {
            return Err(GeometryError::InvalidGeometry(format!(
                "segment {id}: fewer than 2 distinct vertices"
            )));
        }
        let length_m = polyline_length(&clean)?;
        if !(length_m > 0.0) {
            return Err(GeometryError::InvalidGeometry(format!(
                "segment {id}: zero length"
            )));
        }
        Ok(Self {
            id,
            vertices: clean,
            length_m,
            stratum: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vertices(&self) -> &[Point2D] {
        &self.vertices
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }

    pub fn length_km(&self) -> f64 {
        self.length_m / 1000.0
    }

    pub fn point_and_tangent_at(&self, s: f64) -> Result<(Point2D, Point2D)> {
        point_and_tangent_at(&self.vertices, s)
    }

    /// Point halfway along the arc length.
    pub fn arc_midpoint(&self) -> Point2D {
        // s = length/2 is always in range for a valid segment
        self.point_and_tangent_at(self.length_m / 2.0)
            .map(|(p, _)| p)
            .unwrap_or(self.vertices[0])
    }

    pub fn bounds(&self) -> (Point2D, Point2D) {
        bounds(&self.vertices)
    }
}

pub(crate) fn bounds(points: &[Point2D]) -> (Point2D, Point2D) {
    let mut lo = Point2D::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2D> {
        v.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn length_of_simple_polylines() {
        assert_eq!(polyline_length(&pts(&[(0.0, 0.0), (3.0, 4.0)])).unwrap(), 5.0);
        assert_eq!(
            polyline_length(&pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])).unwrap(),
            2.0
        );
    }

    #[test]
    fn length_matches_pairwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v: Vec<Point2D> = (0..10)
                .map(|_| Point2D::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)))
                .collect();
            let mut oracle = 0.0;
            for i in 1..v.len() {
                let dx = v[i].x - v[i - 1].x;
                let dy = v[i].y - v[i - 1].y;
                oracle += (dx * dx + dy * dy).sqrt();
            }
            let got = polyline_length(&v).unwrap();
            assert!((got - oracle).abs() <= 1e-9 * oracle);
        }
    }

    #[test]
    fn length_requires_two_vertices() {
        assert!(matches!(
            polyline_length(&pts(&[(0.0, 0.0)])),
            Err(GeometryError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn point_and_tangent() {
        let line = pts(&[(0.0, 0.0), (10.0, 0.0)]);
        assert_eq!(
            point_and_tangent_at(&line, 5.0).unwrap(),
            (Point2D::new(5.0, 0.0), Point2D::new(1.0, 0.0))
        );
        let bent = pts(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]);
        assert_eq!(
            point_and_tangent_at(&bent, 15.0).unwrap(),
            (Point2D::new(10.0, 5.0), Point2D::new(0.0, 1.0))
        );
        // shared vertex takes the following chord
        assert_eq!(
            point_and_tangent_at(&bent, 10.0).unwrap(),
            (Point2D::new(10.0, 0.0), Point2D::new(0.0, 1.0))
        );
        // end of line keeps the last chord
        assert_eq!(
            point_and_tangent_at(&bent, 20.0).unwrap(),
            (Point2D::new(10.0, 10.0), Point2D::new(0.0, 1.0))
        );
    }

    #[test]
    fn point_out_of_range() {
        let line = pts(&[(0.0, 0.0), (10.0, 0.0)]);
        assert!(matches!(
            point_and_tangent_at(&line, 10.5),
            Err(GeometryError::OutOfRange { .. })
        ));
        assert!(point_and_tangent_at(&line, -0.1).is_err());
    }

    #[test]
    fn segment_drops_duplicate_vertices() {
        let seg = RoadSegment::new("a", pts(&[(0.0, 0.0), (0.0, 0.0), (5.0, 0.0)])).unwrap();
        assert_eq!(seg.vertices().len(), 2);
        assert_eq!(seg.length_m(), 5.0);
        assert!(RoadSegment::new("b", pts(&[(1.0, 1.0), (1.0, 1.0)])).is_err());
        assert!(RoadSegment::new("c", pts(&[(1.0, f64::NAN), (1.0, 1.0)])).is_err());
    }
}
