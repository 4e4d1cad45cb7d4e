use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GeometryError, Result, RoadSegment};

/// Length-based proxy for settlement density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Urban,
    Rural,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Urban => "urban",
            Stratum::Rural => "rural",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stratum {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "urban" => Ok(Stratum::Urban),
            "rural" => Ok(Stratum::Rural),
            other => Err(format!("unknown stratum '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratification {
    pub threshold_m: f64,
    pub labels: Vec<Stratum>,
}

/// Nearest-rank percentile threshold; a segment is rural iff its length is
/// at least the threshold.
pub fn stratify_lengths(lengths: &[f64], percentile: f64) -> Result<Stratification> {
    if lengths.is_empty() {
        return Err(GeometryError::Empty);
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(GeometryError::InvalidParams(format!(
            "percentile must be in (0, 1], got {percentile}"
        )));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the epsilon absorbs representation error in p*n (0.9*100 etc.)
    let rank = ((percentile * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let threshold_m = sorted[rank - 1];
    let labels = lengths
        .iter()
        .map(|&l| {
            if l >= threshold_m {
                Stratum::Rural
            } else {
                Stratum::Urban
            }
        })
        .collect();
    Ok(Stratification {
        threshold_m,
        labels,
    })
}

/// Labels every segment in place and returns the threshold.
pub fn stratify_segments(segments: &mut [RoadSegment], percentile: f64) -> Result<f64> {
    let lengths: Vec<f64> = segments.iter().map(RoadSegment::length_m).collect();
    let s = stratify_lengths(&lengths, percentile)?;
    for (seg, label) in segments.iter_mut().zip(s.labels) {
        seg.stratum = Some(label);
    }
    Ok(s.threshold_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_one_to_hundred() {
        let lengths: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = stratify_lengths(&lengths, 0.9).unwrap();
        assert_eq!(s.threshold_m, 90.0);
        // lengths 90..=100 are at or above the threshold
        assert_eq!(s.labels.iter().filter(|&&l| l == Stratum::Rural).count(), 11);
    }

    #[test]
    fn urban_counts_for_known_network_sizes() {
        // totals and urban counts per study area, distinct lengths assumed
        for (total, urban) in [(41_494usize, 37_344usize), (222_517, 200_265), (45_354, 40_818)] {
            let lengths: Vec<f64> = (0..total).map(|i| i as f64).collect();
            let s = stratify_lengths(&lengths, 0.9).unwrap();
            let got = s.labels.iter().filter(|&&l| l == Stratum::Urban).count();
            assert_eq!(got, urban);
        }
    }

    #[test]
    fn all_equal_lengths() {
        let s = stratify_lengths(&[42.0; 7], 0.9).unwrap();
        assert_eq!(s.threshold_m, 42.0);
        assert!(s.labels.iter().all(|&l| l == s.labels[0]));
    }

    #[test]
    fn empty_input() {
        assert_eq!(stratify_lengths(&[], 0.9), Err(GeometryError::Empty));
    }
}
