//! Detection metrics and MoE analyses: overall and per-CWE scores, head/tail
//! split, routing accuracy, the ideal-routing bound and the expert
//! specialization matrix.
//!
//! Non-vulnerable code carries no CWE, so group precision counts every
//! negative against every group. Recall is the primary per-group figure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{eval_groups, CodeSample, CweEvalGroup, HeadTailPartition};
use crate::error::{Error, Result};
use crate::features::{Encoder, FeatureVector};
use crate::moe::{featurize_all, run_parallel, MoeModel, RoutedPrediction};
use crate::taxonomy::{CategoryId, CweId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (p, a) in pairs {
            c.add(p, a);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1, with every 0/0 taken as 0.
pub fn metrics(counts: ConfusionCounts) -> Metrics {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
        counts,
    }
}

/// Metrics over the samples accepted by `keep`.
pub fn metrics_where(samples: &[&CodeSample], predicted: &[bool], keep: impl Fn(&CodeSample) -> bool) -> Metrics {
    metrics(ConfusionCounts::from_pairs(
        samples
            .iter()
            .zip(predicted)
            .filter(|(s, _)| keep(s))
            .map(|(s, &p)| (p, s.is_vulnerable())),
    ))
}

/// Metrics for a subset of vulnerable samples plus all negatives.
fn vulnerable_subset_metrics(
    samples: &[&CodeSample],
    predicted: &[bool],
    member: impl Fn(usize, &CodeSample) -> bool,
) -> Metrics {
    metrics(ConfusionCounts::from_pairs(
        samples
            .iter()
            .zip(predicted)
            .enumerate()
            .filter(|(i, (s, _))| !s.is_vulnerable() || member(*i, s))
            .map(|(_, (s, &p))| (p, s.is_vulnerable())),
    ))
}

/// Recall of each group over its own vulnerable samples. Groups without
/// vulnerable samples are omitted.
pub fn per_cwe_recall(samples: &[&CodeSample], predicted: &[bool], groups: &CweEvalGroup) -> BTreeMap<String, f64> {
    per_cwe_metrics(samples, predicted, groups)
        .into_iter()
        .map(|(g, m)| (g, m.recall))
        .collect()
}

pub fn per_cwe_metrics(
    samples: &[&CodeSample],
    predicted: &[bool],
    groups: &CweEvalGroup,
) -> BTreeMap<String, Metrics> {
    groups
        .groups
        .iter()
        .filter_map(|(label, members)| {
            let m = vulnerable_subset_metrics(samples, predicted, |_, s| {
                s.vuln_cwe().is_some_and(|c| members.contains(c))
            });
            (m.counts.tp + m.counts.fn_ > 0).then(|| (label.clone(), m))
        })
        .collect()
}

/// Head and tail metrics: each over its annotated vulnerable samples plus
/// all negatives. CWE ids outside the partition count as tail.
pub fn head_tail_metrics(
    samples: &[&CodeSample],
    predicted: &[bool],
    partition: &HeadTailPartition,
) -> (Metrics, Metrics) {
    let head = vulnerable_subset_metrics(samples, predicted, |_, s| {
        s.vuln_cwe().is_some_and(|c| partition.is_head(c))
    });
    let tail = vulnerable_subset_metrics(samples, predicted, |_, s| {
        s.vuln_cwe().is_some_and(|c| !partition.is_head(c))
    });
    (head, tail)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub k: usize,
    pub correct_fraction: f64,
    /// Vulnerable samples with a known category.
    pub evaluated: usize,
    pub metrics_when_correct: Metrics,
    pub metrics_when_wrong: Metrics,
}

/// True roster index of each sample, if it is vulnerable and its CWE
/// resolves under the model's policy.
pub fn true_categories(moe: &MoeModel, samples: &[&CodeSample]) -> Vec<Option<usize>> {
    samples
        .iter()
        .map(|s| {
            s.vuln_cwe()
                .and_then(|c| moe.category_map.resolve_index(c, moe.unknown_policy).ok())
        })
        .collect()
}

/// Routing accuracy of the selections recorded in `preds`: a sample is
/// correctly routed when its true category is among the selected experts.
pub fn routing_report(
    k: usize,
    roster: &[CategoryId],
    samples: &[&CodeSample],
    truth: &[Option<usize>],
    preds: &[RoutedPrediction],
) -> RoutingReport {
    let correct: Vec<Option<bool>> = truth
        .iter()
        .zip(preds)
        .map(|(t, p)| t.map(|t| p.selected.iter().any(|s| s.category == roster[t])))
        .collect();
    let evaluated = correct.iter().flatten().count();
    let hits = correct.iter().flatten().filter(|&&c| c).count();
    let decided: Vec<bool> = preds.iter().map(RoutedPrediction::is_vulnerable).collect();
    RoutingReport {
        k,
        correct_fraction: ratio(hits as u64, evaluated as u64),
        evaluated,
        metrics_when_correct: vulnerable_subset_metrics(samples, &decided, |i, _| correct[i] == Some(true)),
        metrics_when_wrong: vulnerable_subset_metrics(samples, &decided, |i, _| correct[i] == Some(false)),
    }
}

/// Test samples with their features, computed once and shared by every
/// analysis.
pub struct TestSet<'a> {
    pub samples: Vec<&'a CodeSample>,
    pub features: Vec<FeatureVector>,
}

impl<'a> TestSet<'a> {
    pub fn new(samples: Vec<&'a CodeSample>, encoder: &dyn Encoder, workers: usize) -> Self {
        let codes: Vec<&str> = samples.iter().map(|s| s.code.as_str()).collect();
        let features = featurize_all(encoder, &codes, workers);
        TestSet { samples, features }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Applies `f` to every sample index on up to `workers` threads, in order.
pub fn map_samples<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    const CHUNK: usize = 64;
    let chunks = n.div_ceil(CHUNK);
    let parts = run_parallel(chunks, workers, |c| {
        (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).collect::<Result<Vec<T>>>()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn predict_all(moe: &MoeModel, test: &TestSet, k: usize, workers: usize) -> Result<Vec<RoutedPrediction>> {
    map_samples(test.len(), workers, |i| moe.predict_features_k(&test.features[i], k))
}

pub fn decisions(preds: &[RoutedPrediction]) -> Vec<bool> {
    preds.iter().map(RoutedPrediction::is_vulnerable).collect()
}

/// Vulnerable samples with a known category go straight to their true
/// expert with weight 1; everything else keeps the learned prediction.
pub fn ideal_routing_predictions(
    moe: &MoeModel,
    test: &TestSet,
    learned: &[RoutedPrediction],
    workers: usize,
) -> Result<Vec<RoutedPrediction>> {
    let truth = true_categories(moe, &test.samples);
    map_samples(test.len(), workers, |i| match truth[i] {
        Some(c) => moe.predict_with_expert(&test.features[i], c),
        None => Ok(learned[i].clone()),
    })
}

pub fn ideal_routing_eval(
    moe: &MoeModel,
    test: &TestSet,
    learned: &[RoutedPrediction],
    workers: usize,
) -> Result<Metrics> {
    let preds = ideal_routing_predictions(moe, test, learned, workers)?;
    Ok(metrics_where(&test.samples, &decisions(&preds), |_| true))
}

/// F1 of each expert alone (rows) on each category's vulnerable samples
/// plus all negatives (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertMatrix {
    pub roster: Vec<CategoryId>,
    pub f1: Vec<Vec<f64>>,
    /// Vulnerable test samples per column.
    pub support: Vec<usize>,
}

impl ExpertMatrix {
    /// Experts whose own category does not strictly beat every other
    /// column with support.
    pub fn non_dominant_rows(&self) -> Vec<usize> {
        (0..self.roster.len())
            .filter(|&e| {
                (0..self.roster.len()).any(|c| c != e && self.support[c] > 0 && self.f1[e][c] >= self.f1[e][e])
            })
            .collect()
    }
}

pub fn expert_matrix(moe: &MoeModel, test: &TestSet, workers: usize) -> Result<ExpertMatrix> {
    let truth = true_categories(moe, &test.samples);
    let n_cat = moe.roster().len();
    let mut support = vec![0; n_cat];
    for c in truth.iter().flatten() {
        support[*c] += 1;
    }
    let f1 = map_samples(n_cat, workers, |e| {
        let fired = (0..test.len())
            .map(|i| Ok(moe.expert_prob(e, &test.features[i])? >= moe.threshold))
            .collect::<Result<Vec<bool>>>()?;
        Ok((0..n_cat)
            .map(|c| vulnerable_subset_metrics(&test.samples, &fired, |i, _| truth[i] == Some(c)).f1)
            .collect())
    })?;
    Ok(ExpertMatrix {
        roster: moe.roster().to_vec(),
        f1,
        support,
    })
}

/// One comparison row: the full MoE, an ablation variant or the
/// ideal-routing bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub routing_correct_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub threshold: f64,
    pub samples: usize,
    pub overall: Metrics,
    pub per_cwe: BTreeMap<String, Metrics>,
    pub groups: CweEvalGroup,
    pub head_tail: HeadTailPartition,
    pub head: Metrics,
    pub tail: Metrics,
    pub routing: RoutingReport,
    pub expert_matrix: ExpertMatrix,
    pub variants: Vec<VariantRow>,
    pub notes: Vec<String>,
}

pub const GROUP_PRECISION_NOTE: &str =
    "per-CWE and head/tail precision count every non-vulnerable sample against each group; recall is the primary per-group figure";

/// The standard report for `moe` on `test`. `partition` decides head and
/// tail; pass one derived from the training data.
pub fn evaluate(
    moe: &MoeModel,
    test: &TestSet,
    partition: &HeadTailPartition,
    workers: usize,
) -> Result<(EvalReport, Vec<RoutedPrediction>)> {
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let preds = predict_all(moe, test, moe.k, workers)?;
    let predicted = decisions(&preds);
    let groups = eval_groups(test.samples.iter().copied());
    let (head, tail) = head_tail_metrics(&test.samples, &predicted, partition);
    let truth = true_categories(moe, &test.samples);
    let overall = metrics_where(&test.samples, &predicted, |_| true);
    let report = EvalReport {
        k: moe.k,
        threshold: moe.threshold,
        samples: test.len(),
        overall,
        per_cwe: per_cwe_metrics(&test.samples, &predicted, &groups),
        groups,
        head_tail: partition.clone(),
        head,
        tail,
        routing: routing_report(moe.k, moe.roster(), &test.samples, &truth, &preds),
        expert_matrix: expert_matrix(moe, test, workers)?,
        variants: vec![VariantRow {
            variant: "moe".into(),
            metrics: overall,
            routing_correct_fraction: None,
            note: None,
        }],
        notes: vec![GROUP_PRECISION_NOTE.into()],
    };
    Ok((report, preds))
}

fn round4(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::json!((x * 1e4).round() / 1e4);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round4),
        serde_json::Value::Object(o) => o.values_mut().for_each(round4),
        _ => {}
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metric_cells(m: &Metrics) -> String {
    format!(
        "{:.4},{:.4},{:.4},{},{},{},{}",
        m.precision, m.recall, m.f1, m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_
    )
}

const METRIC_HEADER: &str = "precision,recall,f1,tp,fp,tn,fn";

impl EvalReport {
    /// Pretty JSON with every float rounded to four decimals.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        round4(&mut v);
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn csv_tables(&self) -> Vec<(&'static str, String)> {
        let mut overall = format!("variant,{METRIC_HEADER},routing_correct_fraction\n");
        for r in &self.variants {
            let rc = r.routing_correct_fraction.map(|f| format!("{f:.4}")).unwrap_or_default();
            let _ = writeln!(overall, "{},{},{rc}", csv_field(&r.variant), metric_cells(&r.metrics));
        }
        let mut per_cwe = format!("group,{METRIC_HEADER}\n");
        for (g, m) in &self.per_cwe {
            let _ = writeln!(per_cwe, "{},{}", csv_field(g), metric_cells(m));
        }
        let mut head_tail = format!("group,{METRIC_HEADER}\n");
        let _ = writeln!(head_tail, "head,{}", metric_cells(&self.head));
        let _ = writeln!(head_tail, "tail,{}", metric_cells(&self.tail));
        let mut routing = format!("subset,k,correct_fraction,{METRIC_HEADER}\n");
        let r = &self.routing;
        for (name, m) in [("correct", &r.metrics_when_correct), ("wrong", &r.metrics_when_wrong)] {
            let _ = writeln!(routing, "{name},{},{:.4},{}", r.k, r.correct_fraction, metric_cells(m));
        }
        let mut matrix = String::from("expert");
        for c in &self.expert_matrix.roster {
            let _ = write!(matrix, ",{}", csv_field(c.as_str()));
        }
        matrix.push('\n');
        for (c, row) in self.expert_matrix.roster.iter().zip(&self.expert_matrix.f1) {
            matrix.push_str(&csv_field(c.as_str()));
            for v in row {
                let _ = write!(matrix, ",{v:.4}");
            }
            matrix.push('\n');
        }
        vec![
            ("overall.csv", overall),
            ("per_cwe.csv", per_cwe),
            ("head_tail.csv", head_tail),
            ("routing.csv", routing),
            ("expert_matrix.csv", matrix),
        ]
    }

    /// Writes `report.json` and the CSV tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut files = vec![("report.json", self.to_json())];
        files.extend(self.csv_tables());
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Threshold maximizing F1 of `score >= t` against `labels`, with its F1.
/// Candidates are midpoints between consecutive distinct scores; ties go
/// to the larger threshold.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let (mut best_t, mut best_f1) = (0.5, -1.0);
    let (mut tp, mut fp) = (0u64, 0u64);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let next = order.get(rank + 1).map(|&j| scores[j]);
        if next == Some(scores[i]) {
            continue;
        }
        let f1 = metrics(ConfusionCounts { tp, fp, tn: 0, fn_: positives - tp }).f1;
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = match next {
                Some(n) => (scores[i] + n) / 2.0,
                None => scores[i],
            };
        }
    }
    (best_t, best_f1.max(0.0))
}

/// Test-set vulnerable counts per CWE id.
pub fn test_cwe_counts(samples: &[&CodeSample]) -> BTreeMap<CweId, u64> {
    let mut counts = BTreeMap::new();
    for s in samples {
        if let Some(c) = s.vuln_cwe() {
            *counts.entry(c.clone()).or_default() += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{head_tail_from_counts, Label};
    use proptest::prelude::*;

    fn c(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn metric_examples() {
        let m = metrics(c(1, 0, 0, 0));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = metrics(c(0, 0, 5, 0));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = metrics(c(30, 40, 0, 35));
        assert!((m.precision - 3.0 / 7.0).abs() < 1e-12);
        assert!((m.recall - 30.0 / 65.0).abs() < 1e-12);
        assert!((m.f1 - 0.4444).abs() < 1e-4);
    }

    fn s(id: usize, vuln: bool, cwe: Option<&str>) -> CodeSample {
        CodeSample {
            sample_id: id.to_string(),
            code: String::new(),
            label: if vuln { Label::Vulnerable } else { Label::NonVulnerable },
            cwe: cwe.map(|c| c.parse().unwrap()),
            project: None,
        }
    }

    #[test]
    fn per_cwe_pooled_group() {
        // A: 4 vulns, 3 detected. B: 1/4, C: 2/5 pooled below ten.
        let mut samples = Vec::new();
        let mut pred = Vec::new();
        for (cwe, n, hit) in [("CWE-1", 4, 3), ("CWE-2", 4, 1), ("CWE-3", 5, 2)] {
            for i in 0..n {
                samples.push(s(samples.len(), true, Some(cwe)));
                pred.push(i < hit);
            }
        }
        let a: CweId = "CWE-1".parse().unwrap();
        let groups = CweEvalGroup {
            groups: [
                ("CWE-1".to_string(), [a].into()),
                ("CWE-N≤10".to_string(), ["CWE-2".parse().unwrap(), "CWE-3".parse().unwrap()].into()),
                ("CWE-9".to_string(), ["CWE-9".parse().unwrap()].into()),
            ]
            .into(),
        };
        let refs: Vec<&CodeSample> = samples.iter().collect();
        let r = per_cwe_recall(&refs, &pred, &groups);
        assert_eq!(r.len(), 2);
        assert_eq!(r["CWE-1"], 0.75);
        assert!((r["CWE-N≤10"] - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn head_tail_pools_to_overall_recall() {
        let samples = vec![
            s(0, true, Some("CWE-1")),
            s(1, true, Some("CWE-1")),
            s(2, true, Some("CWE-2")),
            s(3, false, None),
            s(4, true, Some("CWE-3")),
        ];
        let pred = [true, false, true, true, false];
        let refs: Vec<&CodeSample> = samples.iter().collect();
        let part = head_tail_from_counts([("CWE-1".parse().unwrap(), 2), ("CWE-2".parse().unwrap(), 1)]).unwrap();
        let (h, t) = head_tail_metrics(&refs, &pred, &part);
        let all = metrics_where(&refs, &pred, |_| true);
        assert_eq!(h.counts.tp + t.counts.tp, all.counts.tp);
        assert_eq!(h.counts.fn_ + t.counts.fn_, all.counts.fn_);
        assert_eq!(h.counts.fp, 1);
        assert_eq!(t.counts.fp, 1);
    }

    #[test]
    fn json_rounds_to_four_places() {
        let mut v = serde_json::json!({"a": 0.123456, "b": [2.0 / 3.0], "c": 3});
        round4(&mut v);
        assert_eq!(v.to_string(), r#"{"a":0.1235,"b":[0.6667],"c":3}"#);
    }

    #[test]
    fn csv_quotes_when_needed() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("CWE-N≤10"), "CWE-N≤10");
    }

    #[test]
    fn map_samples_keeps_order() {
        let v = map_samples(200, 3, |i| Ok(i * 2)).unwrap();
        assert_eq!(v, (0..200).map(|i| i * 2).collect::<Vec<_>>());
        assert!(map_samples(10, 2, |i| if i == 7 { Err(Error::Config("x".into())) } else { Ok(i) }).is_err());
    }

    #[test]
    fn best_threshold_examples() {
        let (t, f1) = best_threshold(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]);
        assert_eq!(f1, 1.0);
        assert!((t - 0.55).abs() < 1e-12);
        let (_, f1) = best_threshold(&[0.1, 0.1], &[false, false]);
        assert_eq!(f1, 0.0);
    }

    proptest! {
        #[test]
        fn best_threshold_is_optimal(
            data in proptest::collection::vec((0u8..20, any::<bool>()), 1..40),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let (t, f1) = best_threshold(&scores, &labels);
            let at = |t: f64| metrics(ConfusionCounts::from_pairs(scores.iter().map(|&s| s >= t).zip(labels.iter().copied()))).f1;
            prop_assert!((at(t) - f1).abs() < 1e-12);
            for c in 0..=21 {
                prop_assert!(at(c as f64 / 20.0) <= f1 + 1e-12);
            }
        }

        #[test]
        fn metric_bounds(tp in 0u64..100, fp in 0u64..100, tn in 0u64..100, fn_ in 0u64..100) {
            let m = metrics(c(tp, fp, tn, fn_));
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.f1 == 0.0, m.precision == 0.0 || m.recall == 0.0);
            let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
            prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
            prop_assert_eq!(m.counts.total(), tp + fp + tn + fn_);
        }
    }
}
