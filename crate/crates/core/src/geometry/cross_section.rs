use serde::{Deserialize, Serialize};

use super::{GeometryError, Point2D, Result, RoadSegment};

/// Cross-section layout and axial-image target shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    /// Distance between consecutive cross-sections along the road axis.
    pub csd_m: f64,
    /// Total length of a cross-section, perpendicular to the axis.
    pub csl_m: f64,
    /// Sampling points per cross-section.
    pub n_samples: usize,
    pub target_h: usize,
    pub target_w: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            csd_m: 25.0,
            csl_m: 100.0,
            n_samples: 20,
            target_h: 20,
            target_w: 20,
        }
    }
}

impl SamplingParams {
    /// Params with the axial width tied to the sample count.
    pub fn with_shape(csd_m: f64, csl_m: f64, target_h: usize, target_w: usize) -> Self {
        Self {
            csd_m,
            csl_m,
            n_samples: target_w,
            target_h,
            target_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GeometryError::InvalidParams(msg.to_string()));
        if !(self.csd_m > 0.0 && self.csd_m.is_finite()) {
            return bad("csd must be positive");
        }
        if !(self.csl_m > 0.0 && self.csl_m.is_finite()) {
            return bad("csl must be positive");
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if self.target_h == 0 {
            return bad("target_h must be positive");
        }
        if self.target_w != self.n_samples {
            return bad("target_w must equal n_samples");
        }
        Ok(())
    }

    /// Distance between adjacent sampling points on one cross-section.
    pub fn sample_spacing(&self) -> f64 {
        self.csl_m / self.n_samples as f64
    }

    /// Signed offsets along the normal, ascending and symmetric about zero.
    pub fn sample_offsets(&self) -> Vec<f64> {
        let spacing = self.sample_spacing();
        let mid = (self.n_samples as f64 - 1.0) / 2.0;
        (0..self.n_samples)
            .map(|j| (j as f64 - mid) * spacing)
            .collect()
    }
}

/// One sampling line perpendicular to the road axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub center: Point2D,
    pub normal: Point2D,
    pub samples: Vec<Point2D>,
    pub arc_pos: f64,
}

/// Number of cross-sections placed on a segment of the given length.
pub fn cross_section_count(length_m: f64, csd_m: f64) -> usize {
    if length_m < csd_m {
        1
    } else {
        ((length_m - csd_m / 2.0) / csd_m).floor() as usize + 1
    }
}

/// Cross-sections at arc positions `csd/2, 3csd/2, ...`; a segment shorter
/// than `csd` gets a single cross-section at its midpoint.
pub fn generate_cross_sections(
    segment: &RoadSegment,
    params: &SamplingParams,
) -> Result<Vec<CrossSection>> {
    params.validate()?;
    let length = segment.length_m();
    let count = cross_section_count(length, params.csd_m);
    let offsets = params.sample_offsets();
    let mut sections = Vec::with_capacity(count);
    for k in 0..count {
        let arc_pos = if length < params.csd_m {
            length / 2.0
        } else {
            (params.csd_m / 2.0 + k as f64 * params.csd_m).min(length)
        };
        let (center, tangent) = segment.point_and_tangent_at(arc_pos)?;
        let normal = tangent.perp();
        let samples = offsets.iter().map(|&o| center + normal * o).collect();
        sections.push(CrossSection {
            center,
            normal,
            samples,
            arc_pos,
        });
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64) -> RoadSegment {
        RoadSegment::new("s", vec![Point2D::new(0.0, 0.0), Point2D::new(len, 0.0)]).unwrap()
    }

    #[test]
    fn hundred_meter_east_segment() {
        let xs = generate_cross_sections(&straight(100.0), &SamplingParams::default()).unwrap();
        let arcs: Vec<f64> = xs.iter().map(|c| c.arc_pos).collect();
        assert_eq!(arcs, vec![12.5, 37.5, 62.5, 87.5]);
        for c in &xs {
            assert_eq!(c.normal, Point2D::new(0.0, 1.0));
            assert_eq!(c.samples.len(), 20);
            assert_eq!(c.samples[0], Point2D::new(c.center.x, -47.5));
            assert_eq!(c.samples[19], Point2D::new(c.center.x, 47.5));
            for w in c.samples.windows(2) {
                assert!((w[0].distance(w[1]) - 5.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn short_segment_gets_midpoint() {
        let xs = generate_cross_sections(&straight(10.0), &SamplingParams::default()).unwrap();
        assert_eq!(xs.len(), 1);
        assert_eq!(xs[0].arc_pos, 5.0);
        assert_eq!(xs[0].center, Point2D::new(5.0, 0.0));
    }

    #[test]
    fn offsets_for_defaults() {
        let o = SamplingParams::default().sample_offsets();
        assert_eq!(o.first(), Some(&-47.5));
        assert_eq!(o[9], -2.5);
        assert_eq!(o[10], 2.5);
        assert_eq!(o.last(), Some(&47.5));
    }

    #[test]
    fn params_validation() {
        let mut p = SamplingParams::default();
        p.target_w = 10;
        assert!(p.validate().is_err());
        let p = SamplingParams::with_shape(25.0, 100.0, 20, 1);
        assert!(p.validate().is_err());
        let p = SamplingParams::with_shape(0.0, 100.0, 20, 20);
        assert!(p.validate().is_err());
        assert!(SamplingParams::with_shape(50.0, 25.0, 10, 5).validate().is_ok());
    }

    #[test]
    fn counts() {
        assert_eq!(cross_section_count(24.9, 25.0), 1);
        assert_eq!(cross_section_count(25.0, 25.0), 1);
        assert_eq!(cross_section_count(37.5, 25.0), 2);
        assert_eq!(cross_section_count(100.0, 25.0), 4);
        assert_eq!(cross_section_count(512.5, 25.0), 21);
    }
}
