use std::f64::consts::PI;

use super::polygon::{convex_hull, is_simple, signed_area};
use super::{GeometryError, Point2D, Result, RoadSegment};

/// Arc discretization for caps and joins.
pub const CHORDS_PER_SEMICIRCLE: usize = 16;

const ARC_STEP: f64 = PI / CHORDS_PER_SEMICIRCLE as f64;

/// Buffer outline, counter-clockwise and open.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferPolygon {
    pub ring: Vec<Point2D>,
    /// Set when the traced outline self-intersected and the convex hull of
    /// the offset points was used instead.
    pub convex_fallback: bool,
}

impl BufferPolygon {
    pub fn area(&self) -> f64 {
        signed_area(&self.ring).abs()
    }
}

fn rotate(v: Point2D, angle: f64) -> Point2D {
    let (s, c) = angle.sin_cos();
    Point2D::new(v.x * c - v.y * s, v.x * s + v.y * c)
}

/// Interior points of the counter-clockwise arc from `center + from` to
/// `center + to` (both excluded).
fn push_arc(out: &mut Vec<Point2D>, center: Point2D, from: Point2D, to: Point2D) {
    let mut sweep = from.cross(to).atan2(from.dot(to));
    if sweep <= 0.0 {
        sweep += 2.0 * PI;
    }
    let chords = (sweep / ARC_STEP - 1e-9).ceil().max(1.0) as usize;
    let step = sweep / chords as f64;
    for k in 1..chords {
        out.push(center + rotate(from, step * k as f64));
    }
}

fn line_intersection(p: Point2D, d: Point2D, q: Point2D, e: Point2D) -> Option<Point2D> {
    let denom = d.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (q - p).cross(e) / denom;
    Some(p + d * t)
}

/// Offset polyline on the right-hand side of `path` at distance `radius`,
/// with round joins on outer corners and mitred inner corners.
fn right_offset(path: &[Point2D], radius: f64, out: &mut Vec<Point2D>) {
    let dirs: Vec<Point2D> = path
        .windows(2)
        .map(|w| (w[1] - w[0]).normalized().unwrap_or_default())
        .collect();
    let right = |d: Point2D| -d.perp() * radius;
    out.push(path[0] + right(dirs[0]));
    for i in 1..path.len() - 1 {
        let (din, dout) = (dirs[i - 1], dirs[i]);
        let turn = din.cross(dout);
        let v = path[i];
        if turn.abs() < 1e-12 && din.dot(dout) > 0.0 {
            out.push(v + right(dout));
        } else if turn > 0.0 || din.dot(dout) < 0.0 && turn.abs() < 1e-12 {
            // left turn: the right side is the outer side
            out.push(v + right(din));
            push_arc(out, v, right(din), right(dout));
            out.push(v + right(dout));
        } else {
            let p = v + right(din);
            let q = v + right(dout);
            out.push(line_intersection(p, din, q, dout).unwrap_or(q));
        }
    }
    let last = path.len() - 1;
    out.push(path[last] + right(dirs[last - 1]));
}

/// Round-capped, round-joined buffer of a segment.
pub fn buffer_segment(segment: &RoadSegment, radius_m: f64) -> Result<BufferPolygon> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(GeometryError::InvalidGeometry(format!(
            "buffer radius must be positive, got {radius_m}"
        )));
    }
    let fwd = segment.vertices();
    let rev: Vec<Point2D> = fwd.iter().rev().copied().collect();
    let mut ring = Vec::with_capacity(fwd.len() * 4 + 2 * CHORDS_PER_SEMICIRCLE);

    right_offset(fwd, radius_m, &mut ring);
    let end = *fwd.last().unwrap();
    let d_end = (end - fwd[fwd.len() - 2]).normalized().unwrap_or_default();
    push_arc(&mut ring, end, -d_end.perp() * radius_m, d_end.perp() * radius_m);

    right_offset(&rev, radius_m, &mut ring);
    let start = fwd[0];
    let d_start = (fwd[0] - fwd[1]).normalized().unwrap_or_default();
    push_arc(&mut ring, start, -d_start.perp() * radius_m, d_start.perp() * radius_m);

    if is_simple(&ring) && signed_area(&ring) > 0.0 {
        return Ok(BufferPolygon {
            ring,
            convex_fallback: false,
        });
    }
    log::warn!(
        "segment {}: buffer outline self-intersects, using convex hull",
        segment.id()
    );
    let mut pts = ring;
    for &v in fwd {
        for k in 0..2 * CHORDS_PER_SEMICIRCLE {
            pts.push(v + rotate(Point2D::new(radius_m, 0.0), ARC_STEP * k as f64));
        }
    }
    Ok(BufferPolygon {
        ring: convex_hull(&pts),
        convex_fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::super::polygon::contains_point;
    use super::*;

    fn seg(v: &[(f64, f64)]) -> RoadSegment {
        RoadSegment::new("b", v.iter().map(|&p| p.into()).collect()).unwrap()
    }

    #[test]
    fn stadium_area() {
        for (len, r) in [(100.0, 125.0), (500.0, 125.0), (10.0, 3.0), (1000.0, 5.0)] {
            let b = buffer_segment(&seg(&[(0.0, 0.0), (len, 0.0)]), r).unwrap();
            assert!(!b.convex_fallback);
            let oracle = 2.0 * len * r + PI * r * r;
            assert!((b.area() - oracle).abs() / oracle < 0.01, "len {len} r {r}");
        }
    }

    #[test]
    fn point_like_segment_is_a_disc() {
        let b = buffer_segment(&seg(&[(0.0, 0.0), (1.0, 0.0)]), 125.0).unwrap();
        let disc = PI * 125.0 * 125.0;
        assert!((b.area() - disc).abs() / disc < 0.01);
    }

    #[test]
    fn bent_segment_is_simple_and_contains_vertices() {
        let s = seg(&[(0.0, 0.0), (300.0, 0.0), (300.0, 300.0), (600.0, 350.0)]);
        let b = buffer_segment(&s, 125.0).unwrap();
        assert!(!b.convex_fallback);
        for v in s.vertices() {
            assert!(contains_point(&b.ring, *v));
        }
    }

    #[test]
    fn sharp_zigzag_falls_back_to_hull() {
        let s = seg(&[(0.0, 0.0), (100.0, 0.0), (0.0, 10.0), (100.0, 20.0)]);
        let b = buffer_segment(&s, 125.0).unwrap();
        assert!(b.convex_fallback);
        for v in s.vertices() {
            assert!(contains_point(&b.ring, *v));
        }
    }

    #[test]
    fn rejects_bad_radius() {
        let s = seg(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(buffer_segment(&s, 0.0).is_err());
        assert!(buffer_segment(&s, f64::NAN).is_err());
    }
}
