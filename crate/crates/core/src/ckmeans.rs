//! Optimal one-dimensional k-means by dynamic programming, plus
//! silhouette scores and the per-group historical/recent labelling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roi::RoiRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {k} values, got {n}")]
    TooFew { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("labels and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster index per input value, in input order. Index 0 has the
    /// smallest mean.
    pub labels: Vec<usize>,
    pub means: Vec<f64>,
    pub wcss: f64,
    /// Smallest value of every cluster but the first.
    pub boundaries: Vec<f64>,
    /// All values equal: a single cluster with label 0.
    pub degenerate: bool,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Lower edge of the highest cluster.
    pub fn boundary(&self) -> Option<f64> {
        self.boundaries.last().copied()
    }
}

/// Prefix sums over sorted unique values with multiplicities, shifted by
/// the median for numerical stability.
struct Prefix {
    w: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Prefix {
    fn new(uniq: &[f64], weights: &[f64]) -> Self {
        let shift = uniq[uniq.len() / 2];
        let n = uniq.len();
        let (mut w, mut s1, mut s2) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
        for i in 0..n {
            let d = uniq[i] - shift;
            w[i + 1] = w[i] + weights[i];
            s1[i + 1] = s1[i] + weights[i] * d;
            s2[i + 1] = s2[i] + weights[i] * d * d;
        }
        Self { w, s1, s2 }
    }

    /// Sum of squared deviations of unique values `i..=j` (weighted).
    fn cost(&self, i: usize, j: usize) -> f64 {
        let w = self.w[j + 1] - self.w[i];
        let s1 = self.s1[j + 1] - self.s1[i];
        let s2 = self.s2[j + 1] - self.s2[i];
        (s2 - s1 * s1 / w).max(0.0)
    }
}

/// Fills `cur[j]`/`arg[j]` for `j` in `lo..=hi`, given that the optimal start
/// of the last cluster lies in `opt_lo..=opt_hi`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [usize],
    prefix: &Prefix,
    q: usize,
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let mut best = f64::INFINITY;
    let mut best_i = opt_lo.max(q);
    for i in opt_lo.max(q)..=opt_hi.min(mid) {
        let c = prev[i - 1] + prefix.cost(i, mid);
        if c < best {
            best = c;
            best_i = i;
        }
    }
    cur[mid] = best;
    arg[mid] = best_i;
    if mid > lo {
        fill_layer(prev, cur, arg, prefix, q, lo, mid - 1, opt_lo, best_i);
    }
    fill_layer(prev, cur, arg, prefix, q, mid + 1, hi, best_i, opt_hi);
}

/// Globally optimal partition of `values` into `k` contiguous clusters.
///
/// Works on the sorted distinct values so equal values always share a
/// label. If there are fewer than `k` distinct values, every distinct value
/// becomes its own cluster.
pub fn ckmeans(values: &[f64], k: usize) -> Result<ClusterResult, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if values.len() < k {
        return Err(ClusterError::TooFew { n: values.len(), k });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &v in &sorted {
        if uniq.last() == Some(&v) {
            *weights.last_mut().unwrap() += 1.0;
        } else {
            uniq.push(v);
            weights.push(1.0);
        }
    }
    let m = uniq.len();
    if m == 1 {
        return Ok(ClusterResult {
            labels: vec![0; values.len()],
            means: vec![uniq[0]],
            wcss: 0.0,
            boundaries: Vec::new(),
            degenerate: true,
        });
    }
    let k = k.min(m);
    let prefix = Prefix::new(&uniq, &weights);

    // starts[q][j]: first unique index of cluster q in the best split of 0..=j
    let mut starts: Vec<Vec<usize>> = vec![vec![0; m]; k];
    let mut prev: Vec<f64> = (0..m).map(|j| prefix.cost(0, j)).collect();
    for q in 1..k {
        let mut cur = vec![f64::INFINITY; m];
        fill_layer(&prev, &mut cur, &mut starts[q], &prefix, q, q, m - 1, q, m - 1);
        prev = cur;
    }

    let mut cluster_start = vec![0usize; k];
    let mut j = m - 1;
    for q in (1..k).rev() {
        let i = starts[q][j];
        cluster_start[q] = i;
        j = i - 1;
    }
    let boundaries: Vec<f64> = cluster_start[1..].iter().map(|&i| uniq[i]).collect();

    let label_of = |v: f64| boundaries.partition_point(|&b| b <= v);
    let labels: Vec<usize> = values.iter().map(|&v| label_of(v)).collect();

    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&v, &l) in values.iter().zip(&labels) {
        sums[l] += v;
        counts[l] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let wcss = values
        .iter()
        .zip(&labels)
        .map(|(&v, &l)| (v - means[l]).powi(2))
        .sum();
    Ok(ClusterResult {
        labels,
        means,
        wcss,
        boundaries,
        degenerate: false,
    })
}

/// Historical flag per value: membership in the cluster with the greatest
/// mean. A degenerate result marks nothing as historical.
pub fn assign_historical(result: &ClusterResult) -> Vec<bool> {
    if result.degenerate || result.k() < 2 {
        return vec![false; result.labels.len()];
    }
    let top = result.k() - 1;
    result.labels.iter().map(|&l| l == top).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteScores {
    pub scores: Vec<f64>,
    /// Fewer than two non-empty clusters; all scores are zero.
    pub flagged: bool,
}

impl SilhouetteScores {
    pub fn mean(&self) -> Option<f64> {
        if self.scores.is_empty() {
            None
        } else {
            Some(self.scores.iter().sum::<f64>() / self.scores.len() as f64)
        }
    }
}

/// Sorted members of a cluster with prefix sums for O(log n) mean
/// absolute distance queries.
struct SortedCluster {
    xs: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedCluster {
    fn new(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(xs.len() + 1);
        prefix.push(0.0);
        for &x in &xs {
            prefix.push(prefix.last().unwrap() + x);
        }
        Self { xs, prefix }
    }

    fn total_distance(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let lo = self.xs.partition_point(|&v| v < x);
        let below = x * lo as f64 - self.prefix[lo];
        let above = (self.prefix[n] - self.prefix[lo]) - x * (n - lo) as f64;
        below + above
    }
}

/// Silhouette coefficient for each value under absolute distance.
pub fn silhouette(values: &[f64], labels: &[usize]) -> Result<SilhouetteScores, ClusterError> {
    if values.len() != labels.len() {
        return Err(ClusterError::LengthMismatch(values.len(), labels.len()));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&v, &l) in values.iter().zip(labels) {
        members[l].push(v);
    }
    let clusters: Vec<SortedCluster> = members.into_iter().map(SortedCluster::new).collect();
    let non_empty = clusters.iter().filter(|c| !c.xs.is_empty()).count();
    if non_empty < 2 {
        return Ok(SilhouetteScores {
            scores: vec![0.0; values.len()],
            flagged: true,
        });
    }
    let scores = values
        .iter()
        .zip(labels)
        .map(|(&x, &l)| {
            let own = &clusters[l];
            if own.xs.len() < 2 {
                return 0.0;
            }
            let a = own.total_distance(x) / (own.xs.len() - 1) as f64;
            let b = clusters
                .iter()
                .enumerate()
                .filter(|(i, c)| *i != l && !c.xs.is_empty())
                .map(|(_, c)| c.total_distance(x) / c.xs.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                ((b - a) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(SilhouetteScores {
        scores,
        flagged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    PerSheet,
    PerStudyArea,
}

impl std::str::FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sheet" | "per_sheet" => Ok(Scope::PerSheet),
            "area" | "study_area" | "per_study_area" => Ok(Scope::PerStudyArea),
            other => Err(format!("unknown clustering scope '{other}' (expected sheet or area)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Historical,
    Recent,
    Unclassified,
}

impl ClassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Historical => "historical",
            ClassLabel::Recent => "recent",
            ClassLabel::Unclassified => "unclassified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record: RoiRecord,
    pub group_id: String,
    pub label: ClassLabel,
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupStatus {
    Clustered,
    Degenerate,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group_id: String,
    pub epoch_year: i32,
    pub sheet_id: Option<String>,
    pub n_records: usize,
    pub n_valid: usize,
    pub status: GroupStatus,
    pub boundary: Option<f64>,
    pub means: Vec<f64>,
    pub wcss: Option<f64>,
    pub mean_silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringOutcome {
    /// One entry per input record, in input order.
    pub records: Vec<LabeledRecord>,
    pub groups: Vec<GroupReport>,
}

fn group_key(rec: &RoiRecord, scope: Scope) -> (i32, Option<String>) {
    match scope {
        Scope::PerSheet => (rec.epoch_year, rec.sheet_id.clone()),
        Scope::PerStudyArea => (rec.epoch_year, None),
    }
}

fn group_name(key: &(i32, Option<String>), scope: Scope) -> String {
    match (scope, &key.1) {
        (Scope::PerStudyArea, _) => format!("{}:area", key.0),
        (Scope::PerSheet, Some(s)) => format!("{}:{}", key.0, s),
        (Scope::PerSheet, None) => format!("{}:unassigned", key.0),
    }
}

/// Splits each group (epoch and sheet, or epoch alone) into historical and
/// recent segments. Invalid records stay unclassified.
pub fn cluster_by_scope(records: &[RoiRecord], scope: Scope) -> ClusteringOutcome {
    let mut groups: BTreeMap<(i32, Option<String>), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(group_key(r, scope)).or_default().push(i);
    }
    let mut out: Vec<Option<LabeledRecord>> = vec![None; records.len()];
    let mut reports = Vec::with_capacity(groups.len());
    for (key, idx) in &groups {
        let group_id = group_name(key, scope);
        let valid: Vec<usize> = idx.iter().copied().filter(|&i| records[i].valid).collect();
        let mut report = GroupReport {
            group_id: group_id.clone(),
            epoch_year: key.0,
            sheet_id: key.1.clone(),
            n_records: idx.len(),
            n_valid: valid.len(),
            status: GroupStatus::Skipped,
            boundary: None,
            means: Vec::new(),
            wcss: None,
            mean_silhouette: None,
        };
        for &i in idx {
            out[i] = Some(LabeledRecord {
                record: records[i].clone(),
                group_id: group_id.clone(),
                label: ClassLabel::Unclassified,
                silhouette: None,
            });
        }
        if valid.len() < 2 || key.1.is_none() && scope == Scope::PerSheet {
            log::warn!(
                "group {group_id}: {} valid records, skipped",
                valid.len()
            );
            reports.push(report);
            continue;
        }
        let values: Vec<f64> = valid.iter().map(|&i| records[i].roi).collect();
        let result = ckmeans(&values, 2).expect("finite values, n >= 2");
        report.means = result.means.clone();
        report.wcss = Some(result.wcss);
        if result.degenerate {
            log::warn!("group {group_id}: all indicator values equal, split skipped, no historical roads");
            report.status = GroupStatus::Degenerate;
            for &i in &valid {
                out[i].as_mut().unwrap().label = ClassLabel::Recent;
            }
            reports.push(report);
            continue;
        }
        report.status = GroupStatus::Clustered;
        report.boundary = result.boundary();
        let hist = assign_historical(&result);
        let sil = silhouette(&values, &result.labels).expect("lengths match");
        report.mean_silhouette = sil.mean();
        for (n, &i) in valid.iter().enumerate() {
            let rec = out[i].as_mut().unwrap();
            rec.label = if hist[n] {
                ClassLabel::Historical
            } else {
                ClassLabel::Recent
            };
            rec.silhouette = Some(sil.scores[n]);
        }
        reports.push(report);
    }
    ClusteringOutcome {
        records: out.into_iter().map(|r| r.unwrap()).collect(),
        groups: reports,
    }
}
