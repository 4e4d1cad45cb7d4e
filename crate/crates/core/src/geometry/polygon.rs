//! Ring utilities. Rings are stored open: the closing vertex is implied.

use super::Point2D;

/// Drops an explicit closing vertex if present.
pub fn open_ring(mut ring: Vec<Point2D>) -> Vec<Point2D> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point2D]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    // shift to the first vertex for precision with large coordinates
    let o = ring[0];
    let mut acc = 0.0;
    for i in 1..ring.len() - 1 {
        acc += (ring[i] - o).cross(ring[i + 1] - o);
    }
    acc / 2.0
}

pub fn area(ring: &[Point2D]) -> f64 {
    signed_area(ring).abs()
}

/// Even-odd point containment. Points exactly on an edge may go either way.
pub fn contains_point(ring: &[Point2D], p: Point2D) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: Point2D, b: Point2D, c: Point2D) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2D, b: Point2D, p: Point2D) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub fn segments_intersect(p1: Point2D, p2: Point2D, q1: Point2D, q2: Point2D) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent edges of the ring touch.
pub fn is_simple(ring: &[Point2D]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let edge = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        let (a1, a2) = edge(i);
        if a1 == a2 {
            return false;
        }
        for j in i + 1..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = edge(j);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point2D,
    pub max: Point2D,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

/// Sutherland–Hodgman clip of an arbitrary ring against a rectangle.
///
/// The output may contain zero-width slivers where a concave ring re-enters
/// the window, but its shoelace area equals the area of the intersection.
pub fn clip_to_rect(ring: &[Point2D], rect: &Rect) -> Vec<Point2D> {
    let mut out = ring.to_vec();
    // (axis, bound, keep_greater)
    let planes = [
        (0, rect.min.x, true),
        (0, rect.max.x, false),
        (1, rect.min.y, true),
        (1, rect.max.y, false),
    ];
    for (axis, bound, keep_greater) in planes {
        if out.is_empty() {
            break;
        }
        let coord = |p: &Point2D| if axis == 0 { p.x } else { p.y };
        let inside = |p: &Point2D| {
            if keep_greater {
                coord(p) >= bound
            } else {
                coord(p) <= bound
            }
        };
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            let (pin, cin) = (inside(&prev), inside(&cur));
            if cin {
                if !pin {
                    out.push(intersect_plane(prev, cur, axis, bound));
                }
                out.push(cur);
            } else if pin {
                out.push(intersect_plane(prev, cur, axis, bound));
            }
            prev = cur;
        }
    }
    out
}

fn intersect_plane(a: Point2D, b: Point2D, axis: usize, bound: f64) -> Point2D {
    if axis == 0 {
        let t = (bound - a.x) / (b.x - a.x);
        Point2D::new(bound, a.y + t * (b.y - a.y))
    } else {
        let t = (bound - a.y) / (b.y - a.y);
        Point2D::new(a.x + t * (b.x - a.x), bound)
    }
}

/// Andrew's monotone chain; counter-clockwise, no collinear points.
pub fn convex_hull(points: &[Point2D]) -> Vec<Point2D> {
    let mut pts: Vec<Point2D> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2D> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}
