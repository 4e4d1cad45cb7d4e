//! Confusion counts, precision/recall/F1 (per instance and per kilometre),
//! ROC curves and grouped reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Stratum;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
    #[error("ROC needs both classes (positives {pos}, negatives {neg})")]
    SingleClass { pos: usize, neg: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub tp_len: f64,
    pub fp_len: f64,
    pub fn_len: f64,
    pub tn_len: f64,
}

impl ConfusionCounts {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn km(&self) -> f64 {
        self.tp_len + self.fp_len + self.fn_len + self.tn_len
    }

    pub fn add(&mut self, pred: bool, truth: bool, km: f64) {
        match (pred, truth) {
            (true, true) => {
                self.tp += 1;
                self.tp_len += km;
            }
            (true, false) => {
                self.fp += 1;
                self.fp_len += km;
            }
            (false, true) => {
                self.fn_ += 1;
                self.fn_len += km;
            }
            (false, false) => {
                self.tn += 1;
                self.tn_len += km;
            }
        }
    }
}

pub fn confusion(pred: &[bool], truth: &[bool], lengths_km: &[f64]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() || pred.len() != lengths_km.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "pred {}, reference {}, lengths {}",
            pred.len(),
            truth.len(),
            lengths_km.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &t), &l) in pred.iter().zip(truth).zip(lengths_km) {
        c.add(p, t, l);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Instance,
    Length,
}

/// Metrics with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn prf(c: &ConfusionCounts, weighting: Weighting) -> Prf {
    let (tp, fp, fn_) = match weighting {
        Weighting::Instance => (c.tp as f64, c.fp as f64, c.fn_ as f64),
        Weighting::Length => (c.tp_len, c.fp_len, c.fn_len),
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => Some(f1_score(p, r)),
        _ => None,
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Predictions are `score >= threshold`; the first point uses +inf.
    pub threshold: f64,
    pub f1: f64,
}

/// `num / den` rounded half-to-even onto the grid of multiples of 2^-53.
/// Every grid point in [0, 1] is a double and so is its complement, which
/// makes `unit_fraction(den - num, den) == 1.0 - unit_fraction(num, den)`
/// hold bit for bit.
fn unit_fraction(num: u128, den: u128) -> f64 {
    const SCALE: u128 = 1 << 53;
    debug_assert!(num <= den && den > 0);
    let Some(scaled) = num.checked_mul(SCALE) else {
        return num as f64 / den as f64;
    };
    let (q, r) = (scaled / den, scaled % den);
    let q = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    };
    q as f64 / SCALE as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub f1_max: f64,
    pub threshold_at_f1_max: f64,
    pub n_pos: u64,
    pub n_neg: u64,
    /// Twice the Mann-Whitney U statistic; `auc = u2 / (2 * n_pos * n_neg)`.
    pub u2: u128,
}

pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "scores {}, labels {}",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass {
            pos: n_pos as usize,
            neg: n_neg as usize,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (n_pos as f64, n_neg as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
        f1: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut u2: u128 = 0;
    let mut f1_max = 0.0;
    let mut thr_at_max = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        let (mut gp, mut gn) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        // trapezoid under this step, in units of 1/(2PN)
        u2 += gn as u128 * (2 * tp as u128 + gp as u128);
        tp += gp;
        fp += gn;
        let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + (n_pos - tp) as f64);
        if f1 > f1_max {
            f1_max = f1;
            thr_at_max = thr;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold: thr,
            f1,
        });
    }
    let auc = unit_fraction(u2, 2 * n_pos as u128 * n_neg as u128);
    Ok(RocCurve {
        points,
        auc,
        f1_max,
        threshold_at_f1_max: thr_at_max,
        n_pos,
        n_neg,
        u2,
    })
}

/// One evaluated segment/epoch pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub segment_id: String,
    pub study_area: String,
    pub sheet_id: String,
    pub stratum: Option<Stratum>,
    pub epoch_year: i32,
    pub length_km: f64,
    pub roi: f64,
    pub predicted: bool,
    pub reference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    StudyArea,
    Sheet,
    Stratum,
    Epoch,
}

impl GroupBy {
    pub fn column(self) -> &'static str {
        match self {
            GroupBy::StudyArea => "study_area",
            GroupBy::Sheet => "sheet_id",
            GroupBy::Stratum => "stratum",
            GroupBy::Epoch => "epoch_year",
        }
    }

    fn key(self, r: &EvalRecord) -> String {
        match self {
            GroupBy::StudyArea => r.study_area.clone(),
            GroupBy::Sheet => r.sheet_id.clone(),
            GroupBy::Stratum => r.stratum.map_or("all".into(), |s| s.as_str().into()),
            GroupBy::Epoch => r.epoch_year.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub keys: Vec<String>,
    pub n: u64,
    pub km: f64,
    pub counts: ConfusionCounts,
    pub instance: Prf,
    pub length: Prf,
    /// `None` when the group holds only one reference class.
    pub auc: Option<f64>,
    pub f1_max: Option<f64>,
    pub threshold_at_f1_max: Option<f64>,
}

pub fn evaluate_group(keys: Vec<String>, records: &[&EvalRecord]) -> MetricsRow {
    let mut counts = ConfusionCounts::default();
    for r in records {
        counts.add(r.predicted, r.reference, r.length_km);
    }
    let scores: Vec<f64> = records.iter().map(|r| r.roi).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.reference).collect();
    let curve = roc(&scores, &labels).ok();
    MetricsRow {
        keys,
        n: counts.n(),
        km: counts.km(),
        counts,
        instance: prf(&counts, Weighting::Instance),
        length: prf(&counts, Weighting::Length),
        auc: curve.as_ref().map(|c| c.auc),
        f1_max: curve.as_ref().map(|c| c.f1_max),
        threshold_at_f1_max: curve.as_ref().map(|c| c.threshold_at_f1_max),
    }
}

/// One row per combination of group keys, sorted by key.
pub fn grouped_report(records: &[EvalRecord], group_by: &[GroupBy]) -> Vec<MetricsRow> {
    let mut groups: BTreeMap<Vec<String>, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let key = group_by.iter().map(|g| g.key(r)).collect();
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(keys, recs)| evaluate_group(keys, &recs))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_report_csv<W: Write>(out: W, group_by: &[GroupBy], rows: &[MetricsRow]) -> csv::Result<()> {
    let columns: Vec<&str> = group_by.iter().map(|g| g.column()).collect();
    write_report_csv_with_columns(out, &columns, rows)
}

/// Like [`write_report_csv`] with arbitrary key column names; each row must
/// carry one key per column.
pub fn write_report_csv_with_columns<W: Write>(out: W, key_columns: &[&str], rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = key_columns.to_vec();
    header.extend([
        "n", "km", "P_i", "R_i", "F1_i", "P_L", "R_L", "F1_L", "AUC", "F1_MAX", "thr_at_F1_MAX",
    ]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.keys.clone();
        rec.push(r.n.to_string());
        rec.push(r.km.to_string());
        for prf in [r.instance, r.length] {
            rec.push(fmt_opt(prf.precision));
            rec.push(fmt_opt(prf.recall));
            rec.push(fmt_opt(prf.f1));
        }
        rec.push(fmt_opt(r.auc));
        rec.push(fmt_opt(r.f1_max));
        rec.push(fmt_opt(r.threshold_at_f1_max));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const SVG_SIZE: f64 = 320.0;
const SVG_MARGIN: f64 = 30.0;

fn svg_plot(title: &str, xs: &[f64], ys: &[f64], x_range: (f64, f64), diagonal: bool) -> String {
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let (x0, x1) = x_range;
    let sx = |x: f64| SVG_MARGIN + if x1 > x0 { (x - x0) / (x1 - x0) * span } else { 0.0 };
    let sy = |y: f64| SVG_SIZE - SVG_MARGIN - y * span;
    let mut d = String::new();
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
    }
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n",
        s = SVG_SIZE
    );
    let _ = writeln!(svg, "<title>{title}</title>");
    let _ = writeln!(
        svg,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{span}\" height=\"{span}\" fill=\"none\" stroke=\"#888\"/>",
        m = SVG_MARGIN
    );
    if diagonal {
        let _ = writeln!(
            svg,
            "<path d=\"M{:.2},{:.2} L{:.2},{:.2}\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>",
            sx(x0),
            sy(0.0),
            sx(x1),
            sy(1.0)
        );
    }
    let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"#c03\" stroke-width=\"1.5\"/>", d.trim_end());
    svg.push_str("</svg>\n");
    svg
}

pub fn roc_svg(curve: &RocCurve) -> String {
    let xs: Vec<f64> = curve.points.iter().map(|p| p.fpr).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.tpr).collect();
    svg_plot(&format!("ROC (AUC {:.3})", curve.auc), &xs, &ys, (0.0, 1.0), true)
}

pub fn f1_threshold_svg(curve: &RocCurve) -> String {
    let pts: Vec<&RocPoint> = curve.points.iter().filter(|p| p.threshold.is_finite()).collect();
    let xs: Vec<f64> = pts.iter().rev().map(|p| p.threshold).collect();
    let ys: Vec<f64> = pts.iter().rev().map(|p| p.f1).collect();
    let range = (
        xs.first().copied().unwrap_or(0.0),
        xs.last().copied().unwrap_or(1.0),
    );
    svg_plot(
        &format!("F1 vs threshold (max {:.3})", curve.f1_max),
        &xs,
        &ys,
        range,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// P(s+ > s-) + 0.5 P(s+ = s-) over all pairs.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn confusion_examples() {
        let t = [true, false, true, false];
        let c = confusion(&t, &t, &[1.0; 4]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&[true; 4], &t, &[1.0; 4]).unwrap();
        assert_eq!(prf(&c, Weighting::Instance).precision, Some(0.5));
        assert_eq!(prf(&c, Weighting::Length).precision, Some(0.5));
        assert!(confusion(&[true], &[true, false], &[1.0]).is_err());
    }

    #[test]
    fn confusion_matches_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.5)).collect();
        let truth: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.3)).collect();
        let len: Vec<f64> = (0..1000).map(|_| rng.random_range(0.01..3.0)).collect();
        let c = confusion(&pred, &truth, &len).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        let mut tp_len = 0.0;
        for i in 0..1000 {
            match (pred[i], truth[i]) {
                (true, true) => {
                    tp += 1;
                    tp_len += len[i];
                }
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        assert_eq!(c.tp_len, tp_len);
        assert!((c.km() - len.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn undefined_metrics_are_none() {
        let c = confusion(&[false, false], &[false, true], &[1.0, 1.0]).unwrap();
        let m = prf(&c, Weighting::Instance);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        let c = confusion(&[true, false], &[false, true], &[1.0, 1.0]).unwrap();
        assert_eq!(prf(&c, Weighting::Instance).f1, Some(0.0));
    }

    #[test]
    fn f1_from_equal_p_and_r() {
        assert_eq!(f1_score(0.5, 0.5), 0.5);
    }

    #[test]
    fn length_f1_uses_length_precision_and_recall() {
        // one long true positive, one short false positive, one short miss
        let c = confusion(&[true, true, false], &[true, false, true], &[8.0, 1.0, 1.0]).unwrap();
        let l = prf(&c, Weighting::Length);
        assert_eq!(l.precision, Some(8.0 / 9.0));
        assert_eq!(l.recall, Some(8.0 / 9.0));
        assert_eq!(l.f1, Some(f1_score(8.0 / 9.0, 8.0 / 9.0)));
        assert_eq!(prf(&c, Weighting::Instance).f1, Some(0.5));
    }

    #[test]
    fn roc_examples() {
        let r = roc(&[2.0, 3.0, 0.0, 1.0], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.f1_max, 1.0);
        assert_eq!(r.threshold_at_f1_max, 2.0);
        let r = roc(&[5.0; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.len(), 2);
        assert!(roc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn roc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.4)).collect();
        // coarse scores so that ties occur
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| (rng.random_range(0.0..10.0f64) + if l { 2.0 } else { 0.0 }).round())
            .collect();
        let r = roc(&scores, &labels).unwrap();
        assert!((r.auc - pairwise_auc(&scores, &labels)).abs() < 1e-9);
        let last = r.points.last().unwrap();
        assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn report_groups_and_csv() {
        let rec = |id: &str, sheet: &str, roi: f64, pred: bool, truth: bool| EvalRecord {
            segment_id: id.into(),
            study_area: "area".into(),
            sheet_id: sheet.into(),
            stratum: Some(Stratum::Urban),
            epoch_year: 1900,
            length_km: 1.0,
            roi,
            predicted: pred,
            reference: truth,
        };
        let recs = vec![
            rec("a", "s1", 9.0, true, true),
            rec("b", "s1", 1.0, false, false),
            rec("c", "s2", 5.0, true, true),
        ];
        let rows = grouped_report(&recs, &[GroupBy::Sheet]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].keys, vec!["s1"]);
        assert_eq!(rows[0].auc, Some(1.0));
        assert_eq!(rows[1].auc, None);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[GroupBy::Sheet], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sheet_id,n,km,P_i,R_i,F1_i,P_L,R_L,F1_L,AUC,F1_MAX,thr_at_F1_MAX"
        );
        assert_eq!(lines.nth(1).unwrap(), "s2,1,1,1,1,1,1,1,1,NA,NA,NA");
    }

    #[test]
    fn svg_has_paths() {
        let r = roc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!(roc_svg(&r).contains("<path d=\"M"));
        assert!(f1_threshold_svg(&r).contains("<path d=\"M"));
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        prop::collection::vec((0u8..20, any::<bool>()), 2..150)
            .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
            .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64, l)).unzip())
    }

    proptest! {
        #[test]
        fn auc_bounds_and_reversal((scores, labels) in scored_labels()) {
            let r = roc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.auc));
            let rev: Vec<bool> = labels.iter().map(|l| !l).collect();
            let rr = roc(&scores, &rev).unwrap();
            prop_assert_eq!(r.u2 + rr.u2, 2 * r.n_pos as u128 * r.n_neg as u128);
            prop_assert_eq!(rr.auc.to_bits(), (1.0 - r.auc).to_bits());
            prop_assert!((r.auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn curve_is_monotone((scores, labels) in scored_labels()) {
            let r = roc(&scores, &labels).unwrap();
            for w in r.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr);
                // lower threshold never lowers recall
                prop_assert!(w[1].tpr >= w[0].tpr);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
        }

        #[test]
        fn f1_identity(pred in prop::collection::vec(any::<bool>(), 1..100), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<bool> = pred.iter().map(|_| rng.random_bool(0.5)).collect();
            let c = confusion(&pred, &truth, &vec![1.0; pred.len()]).unwrap();
            let m = prf(&c, Weighting::Instance);
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                prop_assert!(f <= 1.0);
                prop_assert_eq!(f > 0.0, c.tp > 0);
                if p + r > 0.0 {
                    prop_assert_eq!(f, 2.0 * p * r / (p + r));
                }
            }
        }

        #[test]
        fn equal_lengths_make_weightings_identical(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200),
            len in prop::sample::select(vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.75]),
        ) {
            // dyadic lengths keep the kilometre sums exact
            let (pred, truth): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let c = confusion(&pred, &truth, &vec![len; pred.len()]).unwrap();
            prop_assert_eq!(prf(&c, Weighting::Instance), prf(&c, Weighting::Length));
        }
    }
}
