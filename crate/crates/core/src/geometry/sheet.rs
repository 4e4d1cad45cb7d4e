use super::polygon::{contains_point, is_simple, open_ring, signed_area};
use super::{bounds, GeometryError, Point2D, Result, RoadSegment};

/// Extent of one scanned map sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetFootprint {
    pub sheet_id: String,
    polygon: Vec<Point2D>,
    pub epoch_year: i32,
    lo: Point2D,
    hi: Point2D,
}

impl SheetFootprint {
    pub fn new(sheet_id: impl Into<String>, polygon: Vec<Point2D>, epoch_year: i32) -> Result<Self> {
        let sheet_id = sheet_id.into();
        let polygon = open_ring(polygon);
        if polygon.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::InvalidGeometry(format!(
                "footprint {sheet_id}: non-finite vertex"
            )));
        }
        if !is_simple(&polygon) || !(signed_area(&polygon).abs() > 0.0) {
            return Err(GeometryError::InvalidGeometry(format!(
                "footprint {sheet_id}: polygon must be simple with positive area"
            )));
        }
        let (lo, hi) = bounds(&polygon);
        Ok(Self {
            sheet_id,
            polygon,
            epoch_year,
            lo,
            hi,
        })
    }

    /// Axis-aligned rectangle footprint.
    pub fn rectangle(sheet_id: impl Into<String>, lo: Point2D, hi: Point2D, epoch_year: i32) -> Result<Self> {
        Self::new(
            sheet_id,
            vec![lo, Point2D::new(hi.x, lo.y), hi, Point2D::new(lo.x, hi.y)],
            epoch_year,
        )
    }

    pub fn polygon(&self) -> &[Point2D] {
        &self.polygon
    }

    pub fn contains(&self, p: Point2D) -> bool {
        p.x >= self.lo.x
            && p.x <= self.hi.x
            && p.y >= self.lo.y
            && p.y <= self.hi.y
            && contains_point(&self.polygon, p)
    }
}

/// Sheet holding the largest share of the segment's length, sampled at
/// (at most) 1 m arc steps. Ties go to the earlier footprint. `None` when
/// the segment lies outside every footprint.
pub fn assign_segment_to_sheet<'a>(
    segment: &RoadSegment,
    footprints: &'a [SheetFootprint],
) -> Option<&'a str> {
    if footprints.is_empty() {
        return None;
    }
    let length = segment.length_m();
    let steps = length.ceil().max(1.0) as usize;
    let step = length / steps as f64;
    let mut counts = vec![0usize; footprints.len()];
    for k in 0..steps {
        let s = (k as f64 + 0.5) * step;
        let Ok((p, _)) = segment.point_and_tangent_at(s) else {
            continue;
        };
        for (i, fp) in footprints.iter().enumerate() {
            if fp.contains(p) {
                counts[i] += 1;
            }
        }
    }
    let mut best: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|b| c > counts[b]) {
            best = Some(i);
        }
    }
    best.map(|i| footprints[i].sheet_id.as_str())
}
