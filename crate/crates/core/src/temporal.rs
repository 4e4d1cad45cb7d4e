//! Multi-epoch plausibility: label transitions, network length change and
//! bivariate indicator histograms.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("histogram needs at least one pair")]
    Empty,
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("non-finite indicator value in pair {0}")]
    NonFinite(usize),
}

/// Lengths are summed in integer micrometres so that class totals add up
/// exactly regardless of summation order.
const UNITS_PER_KM: f64 = 1e9;

pub fn km_to_um(km: f64) -> i128 {
    (km * UNITS_PER_KM).round() as i128
}

pub fn um_to_km(units: i128) -> f64 {
    units as f64 / UNITS_PER_KM
}

/// Total length of the segments labelled historical.
pub fn historical_km(labels: &BTreeMap<String, bool>, lengths_km: &BTreeMap<String, f64>) -> f64 {
    um_to_km(
        labels
            .iter()
            .filter(|(_, &h)| h)
            .filter_map(|(id, _)| lengths_km.get(id))
            .map(|&km| km_to_um(km))
            .sum(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub epoch_t1: i32,
    pub epoch_t2: i32,
    pub scope: String,
    pub not_existent_km: f64,
    pub persistent_km: f64,
    pub newly_built_km: f64,
    pub disappeared_km: f64,
    /// Segments missing or unclassified in either epoch.
    pub n_excluded: usize,
    pub excluded_km: f64,
}

impl TransitionTable {
    /// Table from known class totals.
    pub fn from_km(epochs: (i32, i32), scope: impl Into<String>, km: [f64; 4]) -> Self {
        Self {
            epoch_t1: epochs.0,
            epoch_t2: epochs.1,
            scope: scope.into(),
            not_existent_km: km[0],
            persistent_km: km[1],
            newly_built_km: km[2],
            disappeared_km: km[3],
            n_excluded: 0,
            excluded_km: 0.0,
        }
    }

    /// Class totals in the order not existent, persistent, newly built,
    /// disappeared.
    pub fn km(&self) -> [f64; 4] {
        [
            self.not_existent_km,
            self.persistent_km,
            self.newly_built_km,
            self.disappeared_km,
        ]
    }

    pub fn total_km(&self) -> f64 {
        self.km().iter().sum()
    }

    /// Share of the contemporary network in each class, in percent.
    pub fn percents(&self) -> [f64; 4] {
        let total = self.total_km();
        self.km().map(|k| if total > 0.0 { k / total * 100.0 } else { 0.0 })
    }
}

/// Cross-tabulates two epochs of labels. `None` marks an unclassified
/// segment; such segments and those absent from either epoch are excluded.
pub fn cross_tabulate(
    labels_t1: &BTreeMap<String, Option<bool>>,
    labels_t2: &BTreeMap<String, Option<bool>>,
    lengths_km: &BTreeMap<String, f64>,
    epochs: (i32, i32),
    scope: impl Into<String>,
) -> TransitionTable {
    let mut units = [0i128; 4];
    let (mut n_excluded, mut excluded) = (0usize, 0i128);
    for (id, &km) in lengths_km {
        let l1 = labels_t1.get(id).copied().flatten();
        let l2 = labels_t2.get(id).copied().flatten();
        let u = km_to_um(km);
        match (l1, l2) {
            (Some(false), Some(false)) => units[0] += u,
            (Some(true), Some(true)) => units[1] += u,
            (Some(false), Some(true)) => units[2] += u,
            (Some(true), Some(false)) => units[3] += u,
            _ => {
                n_excluded += 1;
                excluded += u;
            }
        }
    }
    let mut t = TransitionTable::from_km(epochs, scope, units.map(um_to_km));
    t.n_excluded = n_excluded;
    t.excluded_km = um_to_km(excluded);
    t
}

/// Relative change from `t1_km` to `t2_km` in percent; `None` if `t1_km` is 0.
pub fn length_change(t1_km: f64, t2_km: f64) -> Option<f64> {
    (t1_km != 0.0).then(|| 100.0 * (t2_km - t1_km) / t1_km)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthChangeRow {
    pub scope: String,
    pub epoch_t1: i32,
    pub epoch_t2: i32,
    pub km_t1: f64,
    pub km_t2: f64,
    pub change_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Each epoch binned over its own value range.
    #[default]
    PerEpoch,
    /// Both epochs binned over the combined range.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateHistogram {
    pub bins: usize,
    pub edges_t1: Vec<f64>,
    pub edges_t2: Vec<f64>,
    /// Row-major; row = T1 bin, column = T2 bin.
    pub counts: Vec<u64>,
}

impl BivariateHistogram {
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.bins + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

/// Bin index against the written edges, top edge inclusive. A zero-width
/// range maps everything to bin 0.
fn bin_of(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    if edges[bins] <= edges[0] {
        return 0;
    }
    edges[1..bins].partition_point(|&e| e <= v)
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

pub fn roi_bivariate_histogram(
    pairs: &[(f64, f64)],
    bins: usize,
    binning: Binning,
) -> Result<BivariateHistogram, TemporalError> {
    if bins == 0 {
        return Err(TemporalError::ZeroBins);
    }
    if pairs.is_empty() {
        return Err(TemporalError::Empty);
    }
    if let Some(i) = pairs.iter().position(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(TemporalError::NonFinite(i));
    }
    let range = |it: &mut dyn Iterator<Item = f64>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (mut r1, mut r2) = (
        range(&mut pairs.iter().map(|p| p.0)),
        range(&mut pairs.iter().map(|p| p.1)),
    );
    if binning == Binning::Pooled {
        let pooled = (r1.0.min(r2.0), r1.1.max(r2.1));
        r1 = pooled;
        r2 = pooled;
    }
    let (edges_t1, edges_t2) = (edges(r1.0, r1.1, bins), edges(r2.0, r2.1, bins));
    let mut counts = vec![0u64; bins * bins];
    for &(a, b) in pairs {
        counts[bin_of(a, &edges_t1) * bins + bin_of(b, &edges_t2)] += 1;
    }
    Ok(BivariateHistogram {
        bins,
        edges_t1,
        edges_t2,
        counts,
    })
}

pub fn write_transitions_csv<W: Write>(out: W, tables: &[TransitionTable]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scope",
        "epoch_t1",
        "epoch_t2",
        "not_existent_km",
        "persistent_km",
        "newly_built_km",
        "disappeared_km",
        "not_existent_pct",
        "persistent_pct",
        "newly_built_pct",
        "disappeared_pct",
        "n_excluded",
        "excluded_km",
    ])?;
    for t in tables {
        let mut rec = vec![t.scope.clone(), t.epoch_t1.to_string(), t.epoch_t2.to_string()];
        rec.extend(t.km().iter().map(|k| k.to_string()));
        rec.extend(t.percents().iter().map(|p| format!("{p:.2}")));
        rec.push(t.n_excluded.to_string());
        rec.push(t.excluded_km.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_length_change_csv<W: Write>(out: W, rows: &[LengthChangeRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "epoch_t1", "epoch_t2", "km_t1", "km_t2", "change_pct"])?;
    for r in rows {
        w.write_record([
            r.scope.clone(),
            r.epoch_t1.to_string(),
            r.epoch_t2.to_string(),
            r.km_t1.to_string(),
            r.km_t2.to_string(),
            r.change_pct.map_or("NA".into(), |c| format!("{c:.2}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Count matrix, one line per T1 bin, no header.
pub fn write_histogram_csv<W: Write>(out: W, h: &BivariateHistogram) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..h.bins {
        w.write_record((0..h.bins).map(|j| h.get(i, j).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map<T: Copy>(pairs: &[(&str, T)]) -> BTreeMap<String, T> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn transition_percentages_from_km() {
        let t = TransitionTable::from_km((1900, 1930), "area", [3625.0, 3756.0, 2522.0, 605.0]);
        let expected = [34.50, 35.75, 24.00, 5.75];
        for (p, e) in t.percents().iter().zip(expected) {
            assert!((p - e).abs() <= 0.01, "{p} vs {e}");
        }
    }

    #[test]
    fn length_change_rate_from_totals() {
        let c = length_change(4359.0, 6142.0).unwrap();
        assert!((c - 40.9).abs() <= 0.05, "{c}");
        assert_eq!(length_change(10.0, 10.0), Some(0.0));
        assert_eq!(length_change(100.0, 50.0), Some(-50.0));
        assert_eq!(length_change(0.0, 5.0), None);
    }

    #[test]
    fn transitions_and_exclusions() {
        let lengths = map(&[("a", 1.0), ("b", 2.0), ("c", 4.0), ("d", 8.0), ("e", 16.0), ("f", 32.0)]);
        let t1 = map(&[("a", Some(false)), ("b", Some(true)), ("c", Some(false)), ("d", Some(true)), ("e", None)]);
        let t2 = map(&[("a", Some(false)), ("b", Some(true)), ("c", Some(true)), ("d", Some(false)), ("e", Some(true))]);
        let t = cross_tabulate(&t1, &t2, &lengths, (1900, 1950), "all");
        assert_eq!(t.km(), [1.0, 2.0, 4.0, 8.0]);
        assert_eq!(t.n_excluded, 2);
        assert_eq!(t.excluded_km, 48.0);
        let same = cross_tabulate(&t1, &t1, &lengths, (1900, 1900), "all");
        assert_eq!((same.newly_built_km, same.disappeared_km), (0.0, 0.0));
    }

    #[test]
    fn shift_lands_on_diagonal_per_epoch() {
        let pairs: Vec<(f64, f64)> = (0..200).map(|i| (i as f64, i as f64 + 37.0)).collect();
        let h = roi_bivariate_histogram(&pairs, 50, Binning::PerEpoch).unwrap();
        assert_eq!(h.total(), 200);
        assert_eq!((0..50).map(|i| h.get(i, i)).sum::<u64>(), 200);
    }

    #[test]
    fn shift_lands_off_diagonal_pooled() {
        // T1 over [0, 96], shift 32: pooled range [0, 128], 32 bins of width 4
        let pairs: Vec<(f64, f64)> = (0..=96).map(|i| (i as f64, i as f64 + 32.0)).collect();
        let h = roi_bivariate_histogram(&pairs, 32, Binning::Pooled).unwrap();
        let on_parallel: u64 = (0..24).map(|i| h.get(i, i + 8)).sum();
        // the maximum sits on the inclusive top edge, in the last column
        assert_eq!(on_parallel, 96);
        assert_eq!(h.get(24, 31), 1);
        assert_eq!(h.total(), 97);
    }

    #[test]
    fn identical_epochs_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<(f64, f64)> = (0..500)
            .map(|_| rng.random_range(0.0..5000.0))
            .map(|v| (v, v))
            .collect();
        for binning in [Binning::PerEpoch, Binning::Pooled] {
            let h = roi_bivariate_histogram(&pairs, 50, binning).unwrap();
            assert_eq!((0..50).map(|i| h.get(i, i)).sum::<u64>(), 500);
        }
    }

    #[test]
    fn histogram_errors() {
        assert_eq!(roi_bivariate_histogram(&[], 50, Binning::PerEpoch), Err(TemporalError::Empty));
        assert_eq!(
            roi_bivariate_histogram(&[(1.0, f64::NAN)], 50, Binning::PerEpoch),
            Err(TemporalError::NonFinite(0))
        );
        let h = roi_bivariate_histogram(&[(3.0, 3.0), (3.0, 3.0)], 50, Binning::PerEpoch).unwrap();
        assert_eq!(h.get(0, 0), 2);
    }

    #[test]
    fn csv_layouts() {
        let t = TransitionTable::from_km((1900, 1930), "area", [3625.0, 3756.0, 2522.0, 605.0]);
        let mut buf = Vec::new();
        write_transitions_csv(&mut buf, &[t]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "area,1900,1930,3625,3756,2522,605,34.50,35.74,24.00,5.76,0,0"
        );
        let h = roi_bivariate_histogram(&[(0.0, 0.0), (1.0, 1.0)], 3, Binning::PerEpoch).unwrap();
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, &h).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0,0\n0,0,0\n0,0,1\n");
    }

    /// Bin by scanning the edges rather than by arithmetic. A zero-width
    /// range puts everything in the first bin.
    fn scan_bin(v: f64, edges: &[f64]) -> usize {
        let bins = edges.len() - 1;
        if edges[bins] <= edges[0] {
            return 0;
        }
        (0..bins).find(|&i| v < edges[i + 1]).unwrap_or(bins - 1)
    }

    proptest! {
        #[test]
        fn counts_match_edge_scan(
            pairs in prop::collection::vec((0u16..1000, 0u16..1000), 1..300),
            pooled in any::<bool>(),
        ) {
            let pairs: Vec<(f64, f64)> = pairs.into_iter().map(|(a, b)| (a as f64, b as f64)).collect();
            let binning = if pooled { Binning::Pooled } else { Binning::PerEpoch };
            let h = roi_bivariate_histogram(&pairs, 50, binning).unwrap();
            prop_assert_eq!(h.total(), pairs.len() as u64);
            let mut oracle = vec![0u64; 2500];
            for &(a, b) in &pairs {
                oracle[scan_bin(a, &h.edges_t1) * 50 + scan_bin(b, &h.edges_t2)] += 1;
            }
            prop_assert_eq!(h.counts, oracle);
        }

        #[test]
        fn class_totals_are_exact(
            segs in prop::collection::vec((0.001f64..25.0, any::<bool>(), any::<bool>()), 1..200)
        ) {
            let lengths: BTreeMap<String, f64> = segs.iter().enumerate().map(|(i, s)| (i.to_string(), s.0)).collect();
            let t1: BTreeMap<String, bool> = segs.iter().enumerate().map(|(i, s)| (i.to_string(), s.1)).collect();
            let t2: BTreeMap<String, bool> = segs.iter().enumerate().map(|(i, s)| (i.to_string(), s.2)).collect();
            let wrap = |m: &BTreeMap<String, bool>| m.iter().map(|(k, &v)| (k.clone(), Some(v))).collect();
            let t = cross_tabulate(&wrap(&t1), &wrap(&t2), &lengths, (1, 2), "all");
            prop_assert_eq!(km_to_um(t.persistent_km) + km_to_um(t.disappeared_km), km_to_um(historical_km(&t1, &lengths)));
            prop_assert_eq!(km_to_um(t.persistent_km) + km_to_um(t.newly_built_km), km_to_um(historical_km(&t2, &lengths)));
            let total: f64 = t.percents().iter().sum();
            prop_assert!((total - 100.0).abs() < 0.01);
        }
    }
}
