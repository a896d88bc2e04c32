//! Function-level samples, the train/valid/test split, and the label views
//! each model is trained on.
//!
//! Views are index lists into the shared sample store; nothing is copied.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{CategoryId, CategoryMap, CweId, UnknownPolicy};

pub const SMALL_GROUP_LABEL: &str = "CWE-N≤10";
pub const SMALL_GROUP_THRESHOLD: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Vulnerable,
    NonVulnerable,
}

impl Label {
    pub fn is_vulnerable(self) -> bool {
        self == Label::Vulnerable
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeSample {
    pub sample_id: String,
    pub code: String,
    pub label: Label,
    pub cwe: Option<CweId>,
    pub project: Option<String>,
}

impl CodeSample {
    pub fn is_vulnerable(&self) -> bool {
        self.label.is_vulnerable()
    }

    /// CWE id of a vulnerable sample, if annotated.
    pub fn vuln_cwe(&self) -> Option<&CweId> {
        if self.is_vulnerable() {
            self.cwe.as_ref()
        } else {
            None
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    func: Option<String>,
    target: Option<serde_json::Value>,
    cwe: Option<serde_json::Value>,
    project: Option<serde_json::Value>,
}

/// A record read from a dataset or prediction input line. `label` is `None`
/// when the line carries no `target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub func: String,
    pub label: Option<Label>,
    pub cwe: Option<CweId>,
    pub project: Option<String>,
}

fn opt_string(v: Option<serde_json::Value>, field: &str, line: usize) -> Result<Option<String>> {
    match v {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(Error::parse(line, format!("`{field}` must be a string, got {other}"))),
    }
}

/// Parses one JSON-lines record. `line` is used for error context only.
pub fn parse_record(text: &str, line: usize) -> Result<Record> {
    let raw: RawRecord = serde_json::from_str(text)
        .map_err(|e| Error::parse(line, format!("invalid JSON object: {e}")))?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err(Error::parse(line, "`id` must be a non-empty string")),
        None => return Err(Error::parse(line, "missing required field `id`")),
    };
    let func = raw
        .func
        .ok_or_else(|| Error::parse(line, "missing required field `func`"))?;
    let label = match raw.target {
        None | Some(serde_json::Value::Null) => None,
        Some(t) => match t.as_u64() {
            Some(0) => Some(Label::NonVulnerable),
            Some(1) => Some(Label::Vulnerable),
            _ => return Err(Error::parse(line, format!("`target` must be 0 or 1, got {t}"))),
        },
    };
    let cwe = opt_string(raw.cwe, "cwe", line)?
        .map(|s| s.parse::<CweId>())
        .transpose()
        .map_err(|e| Error::parse(line, e.to_string()))?;
    let project = opt_string(raw.project, "project", line)?;
    Ok(Record {
        id,
        func,
        label,
        cwe,
        project,
    })
}

/// Reads a labeled JSON-lines dataset. Blank lines are skipped.
pub fn ingest(source: &str) -> Result<Vec<CodeSample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, text) in source.lines().enumerate() {
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let rec = parse_record(text, line)?;
        let label = rec
            .label
            .ok_or_else(|| Error::parse(line, "missing required field `target`"))?;
        if rec.func.trim().is_empty() {
            return Err(Error::parse(line, "`func` is empty"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Ingestion(format!(
                "duplicate sample id {:?} at line {line}",
                rec.id
            )));
        }
        out.push(CodeSample {
            sample_id: rec.id,
            code: rec.func,
            label,
            cwe: rec.cwe,
            project: rec.project,
        });
    }
    Ok(out)
}

/// Sample ids per partition, as read from or written to a split file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn from_json(source: &str) -> Result<Self> {
        Ok(serde_json::from_str(source)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

/// Shared sample store plus index lists for each partition.
#[derive(Clone, Debug)]
pub struct SplitCorpus {
    samples: Vec<CodeSample>,
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
    pub seed: Option<u64>,
}

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded 80/10/10 split. Samples are ordered by id before shuffling, so
/// membership does not depend on input order.
pub fn split(samples: Vec<CodeSample>, seed: u64) -> Result<SplitCorpus> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = (n as f64 * SPLIT_RATIOS.0).round() as usize;
    let n_valid = (n as f64 * SPLIT_RATIOS.1).round() as usize;
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    Ok(SplitCorpus {
        samples,
        train: order,
        valid,
        test,
        seed: Some(seed),
    })
}

/// Split following an explicit manifest. Every sample must be listed
/// exactly once.
pub fn split_from_manifest(samples: Vec<CodeSample>, manifest: &SplitManifest) -> Result<SplitCorpus> {
    let index: BTreeMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sample_id.as_str(), i))
        .collect();
    let mut used = vec![false; samples.len()];
    let mut resolve = |ids: &[String], part: &str| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                let &i = index
                    .get(id.as_str())
                    .ok_or_else(|| Error::Config(format!("split file {part} id {id:?} not in dataset")))?;
                if std::mem::replace(&mut used[i], true) {
                    return Err(Error::Config(format!("split file lists {id:?} more than once")));
                }
                Ok(i)
            })
            .collect()
    };
    let train = resolve(&manifest.train, "train")?;
    let valid = resolve(&manifest.valid, "valid")?;
    let test = resolve(&manifest.test, "test")?;
    if let Some(missing) = used.iter().position(|u| !u) {
        return Err(Error::Config(format!(
            "split file does not list sample {:?}",
            samples[missing].sample_id
        )));
    }
    Ok(SplitCorpus {
        samples,
        train,
        valid,
        test,
        seed: None,
    })
}

impl SplitCorpus {
    pub fn samples(&self) -> &[CodeSample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &CodeSample {
        &self.samples[index]
    }

    pub fn indices(&self, part: Partition) -> &[usize] {
        match part {
            Partition::Train => &self.train,
            Partition::Valid => &self.valid,
            Partition::Test => &self.test,
        }
    }

    pub fn iter(&self, part: Partition) -> impl Iterator<Item = &CodeSample> + '_ {
        self.indices(part).iter().map(move |&i| &self.samples[i])
    }

    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[usize]| v.iter().map(|&i| self.samples[i].sample_id.clone()).collect();
        SplitManifest {
            train: ids(&self.train),
            valid: ids(&self.valid),
            test: ids(&self.test),
        }
    }

    /// Vulnerable counts per raw CWE id over a partition.
    pub fn vuln_counts(&self, part: Partition) -> BTreeMap<CweId, u64> {
        let mut counts = BTreeMap::new();
        for s in self.iter(part) {
            if let Some(cwe) = s.vuln_cwe() {
                *counts.entry(cwe.clone()).or_default() += 1;
            }
        }
        counts
    }
}

/// Which samples serve as negatives when training an expert.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Non-vulnerable code and vulnerable code of other categories.
    #[default]
    AllNegatives,
    /// Non-vulnerable code only; other categories' vulnerable code is dropped.
    NonvulnOnlyNegatives,
}

/// Binary training view for one expert: `(sample index, y)` pairs.
#[derive(Clone, Debug)]
pub struct ExpertView {
    pub category: CategoryId,
    pub mode: NegativeMode,
    pub entries: Vec<(usize, f64)>,
    /// Vulnerable samples without a CWE annotation that were not used as
    /// positives.
    pub unannotated: usize,
}

impl ExpertView {
    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.1 == 1.0).count()
    }
}

pub fn expert_view(
    split: &SplitCorpus,
    map: &CategoryMap,
    category: &CategoryId,
    mode: NegativeMode,
    policy: UnknownPolicy,
    seed: u64,
) -> Result<ExpertView> {
    if map.index_of(category).is_none() {
        return Err(Error::Config(format!("{category} is not in the category roster")));
    }
    let mut entries = Vec::new();
    let mut unannotated = 0;
    for &i in &split.train {
        let s = &split.samples[i];
        if !s.is_vulnerable() {
            entries.push((i, 0.0));
            continue;
        }
        match &s.cwe {
            Some(cwe) => {
                if &map.resolve(cwe, policy)? == category {
                    entries.push((i, 1.0));
                } else if mode == NegativeMode::AllNegatives {
                    entries.push((i, 0.0));
                }
            }
            None => {
                unannotated += 1;
                if mode == NegativeMode::AllNegatives {
                    entries.push((i, 0.0));
                }
            }
        }
    }
    if !entries.iter().any(|e| e.1 == 1.0) {
        return Err(Error::TrainingData(format!(
            "category {category} has no vulnerable training samples"
        )));
    }
    entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ExpertView {
        category: category.clone(),
        mode,
        entries,
        unannotated,
    })
}

/// Multi-class view for the router over vulnerable, annotated training code.
#[derive(Clone, Debug)]
pub struct RouterView {
    /// `(sample index, roster index)` pairs.
    pub entries: Vec<(usize, usize)>,
    /// Inverse class fraction per roster index.
    pub class_weights: Vec<f64>,
    pub unannotated: usize,
}

pub fn router_view(split: &SplitCorpus, map: &CategoryMap, policy: UnknownPolicy) -> Result<RouterView> {
    let mut entries = Vec::new();
    let mut unannotated = 0;
    for &i in &split.train {
        let s = &split.samples[i];
        if !s.is_vulnerable() {
            continue;
        }
        match &s.cwe {
            Some(cwe) => entries.push((i, map.resolve_index(cwe, policy)?)),
            None => unannotated += 1,
        }
    }
    let mut counts = vec![0usize; map.roster().len()];
    for &(_, c) in &entries {
        counts[c] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::TrainingData(format!(
            "category {} has no vulnerable training samples for the router",
            map.roster()[empty]
        )));
    }
    let total = entries.len() as f64;
    let class_weights = counts.iter().map(|&c| total / c as f64).collect();
    Ok(RouterView {
        entries,
        class_weights,
        unannotated,
    })
}

/// Frequent-CWE head group and long-tail remainder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTailPartition {
    /// Head ids in descending frequency order.
    pub head: Vec<CweId>,
    pub tail: Vec<CweId>,
    pub head_fraction: f64,
}

impl HeadTailPartition {
    pub fn is_head(&self, id: &CweId) -> bool {
        self.head.contains(id)
    }
}

/// Smallest prefix of CWE ids (by descending vulnerable count, ties by id)
/// covering at least half of all annotated vulnerable samples.
pub fn head_tail<'a>(samples: impl IntoIterator<Item = &'a CodeSample>) -> Result<HeadTailPartition> {
    let mut counts: BTreeMap<&CweId, u64> = BTreeMap::new();
    for s in samples {
        if let Some(cwe) = s.vuln_cwe() {
            *counts.entry(cwe).or_default() += 1;
        }
    }
    head_tail_from_counts(counts.into_iter().map(|(k, v)| (k.clone(), v)))
}

pub fn head_tail_from_counts(counts: impl IntoIterator<Item = (CweId, u64)>) -> Result<HeadTailPartition> {
    let mut ranked: Vec<(CweId, u64)> = counts.into_iter().filter(|c| c.1 > 0).collect();
    if ranked.is_empty() {
        return Err(Error::Config("no annotated vulnerable samples".into()));
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: u64 = ranked.iter().map(|c| c.1).sum();
    let mut cum = 0u64;
    let mut cut = 0;
    for (i, (_, c)) in ranked.iter().enumerate() {
        cum += c;
        if 2 * cum >= total {
            cut = i + 1;
            break;
        }
    }
    let tail = ranked.split_off(cut).into_iter().map(|c| c.0).collect();
    Ok(HeadTailPartition {
        head: ranked.into_iter().map(|c| c.0).collect(),
        tail,
        head_fraction: cum as f64 / total as f64,
    })
}

/// Per-CWE evaluation groups: CWE ids with fewer than ten vulnerable test
/// samples are pooled under [`SMALL_GROUP_LABEL`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweEvalGroup {
    pub groups: BTreeMap<String, BTreeSet<CweId>>,
}

impl CweEvalGroup {
    pub fn group_of(&self, id: &CweId) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, members)| members.contains(id))
            .map(|(label, _)| label.as_str())
    }
}

pub fn eval_groups<'a>(test: impl IntoIterator<Item = &'a CodeSample>) -> CweEvalGroup {
    let mut counts: BTreeMap<&CweId, usize> = BTreeMap::new();
    for s in test {
        if let Some(cwe) = s.vuln_cwe() {
            *counts.entry(cwe).or_default() += 1;
        }
    }
    let mut groups: BTreeMap<String, BTreeSet<CweId>> = BTreeMap::new();
    for (id, n) in counts {
        let label = if n < SMALL_GROUP_THRESHOLD {
            SMALL_GROUP_LABEL.to_string()
        } else {
            id.to_string()
        };
        groups.entry(label).or_default().insert(id.clone());
    }
    CweEvalGroup { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{build_categories, load_tree};
    use proptest::prelude::*;

    fn sample(id: &str, vuln: bool, cwe: Option<&str>) -> CodeSample {
        CodeSample {
            sample_id: id.into(),
            code: format!("int {id}(){{return 0;}}"),
            label: if vuln { Label::Vulnerable } else { Label::NonVulnerable },
            cwe: cwe.map(|c| c.parse().unwrap()),
            project: None,
        }
    }

    fn corpus(n: usize) -> Vec<CodeSample> {
        (0..n).map(|i| sample(&format!("s{i:03}"), i % 3 == 0, Some("CWE-1"))).collect()
    }

    #[test]
    fn ingest_minimal_and_annotated() {
        let src = r#"{"id":"a","func":"int f(){return 0;}","target":0}
{"id":"b","func":"void g(char *p){strcpy(p, q);}","target":1,"cwe":"cwe-119","project":"linux"}
"#;
        let s = ingest(src).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, Label::NonVulnerable);
        assert_eq!(s[0].cwe, None);
        assert_eq!(s[1].label, Label::Vulnerable);
        assert_eq!(s[1].cwe.as_ref().unwrap().as_str(), "CWE-119");
        assert_eq!(s[1].project.as_deref(), Some("linux"));
    }

    #[test]
    fn ingest_rejects_duplicates_and_missing_fields() {
        let dup = "{\"id\":\"a\",\"func\":\"x\",\"target\":0}\n{\"id\":\"a\",\"func\":\"y\",\"target\":1}\n";
        assert!(matches!(ingest(dup), Err(Error::Ingestion(_))));

        let missing = "{\"id\":\"a\",\"func\":\"x\",\"target\":0}\n\n{\"id\":\"b\",\"target\":0}\n";
        assert!(matches!(ingest(missing), Err(Error::Parse { line: Some(3), .. })));

        for bad in [
            r#"{"id":"a","func":"x"}"#,
            r#"{"id":"a","func":"x","target":2}"#,
            r#"{"id":"a","func":"   ","target":0}"#,
            r#"{"id":"a","func":"x","target":1,"cwe":"buffer"}"#,
            r#"{"func":"x","target":0}"#,
            r#"[1,2]"#,
            "not json",
        ] {
            assert!(matches!(ingest(bad), Err(Error::Parse { line: Some(1), .. })), "{bad}");
        }
    }

    #[test]
    fn empty_cwe_string_is_absent() {
        let s = ingest(r#"{"id":"a","func":"x","target":0,"cwe":""}"#).unwrap();
        assert_eq!(s[0].cwe, None);
    }

    #[test]
    fn split_exact_ratios_for_ten() {
        let sc = split(corpus(10), 7).unwrap();
        assert_eq!(sc.indices(Partition::Train).len(), 8);
        assert_eq!(sc.indices(Partition::Valid).len(), 1);
        assert_eq!(sc.indices(Partition::Test).len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_order_independent() {
        let a = split(corpus(57), 3).unwrap().manifest();
        let b = split(corpus(57), 3).unwrap().manifest();
        assert_eq!(a, b);
        let mut rev = corpus(57);
        rev.reverse();
        assert_eq!(split(rev, 3).unwrap().manifest(), a);
        assert_ne!(split(corpus(57), 4).unwrap().manifest(), a);
    }

    #[test]
    fn split_needs_ten_samples() {
        assert!(matches!(split(corpus(9), 1), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_override_is_exact() {
        let m = SplitManifest {
            train: vec!["s002".into(), "s000".into()],
            valid: vec!["s001".into()],
            test: vec!["s003".into()],
        };
        let sc = split_from_manifest(corpus(4), &m).unwrap();
        assert_eq!(sc.manifest(), m);

        let mut missing = m.clone();
        missing.test.clear();
        assert!(split_from_manifest(corpus(4), &missing).is_err());
        let mut twice = m.clone();
        twice.test.push("s000".into());
        assert!(split_from_manifest(corpus(4), &twice).is_err());
        let mut unknown = m;
        unknown.valid.push("zzz".into());
        assert!(split_from_manifest(corpus(4), &unknown).is_err());
    }

    fn two_root_map() -> CategoryMap {
        let tree = load_tree("CWE-1\tCWE-11\nCWE-2\tCWE-21\n").unwrap();
        let counts = [("CWE-11", 1u64), ("CWE-21", 1)]
            .iter()
            .map(|(k, v)| (k.parse().unwrap(), *v))
            .collect();
        build_categories(&tree, &counts, 1).unwrap()
    }

    fn train_only(samples: Vec<CodeSample>) -> SplitCorpus {
        let m = SplitManifest {
            train: samples.iter().map(|s| s.sample_id.clone()).collect(),
            ..Default::default()
        };
        split_from_manifest(samples, &m).unwrap()
    }

    #[test]
    fn expert_view_modes() {
        let sc = train_only(vec![
            sample("v1", true, Some("CWE-11")),
            sample("v2", true, Some("CWE-21")),
            sample("n1", false, None),
        ]);
        let map = two_root_map();
        let cat: CategoryId = "CWE-1".parse().unwrap();
        let labels = |v: &ExpertView| -> BTreeMap<String, f64> {
            v.entries
                .iter()
                .map(|&(i, y)| (sc.sample(i).sample_id.clone(), y))
                .collect()
        };
        let all = expert_view(&sc, &map, &cat, NegativeMode::AllNegatives, UnknownPolicy::Reject, 0).unwrap();
        assert_eq!(
            labels(&all),
            BTreeMap::from([("v1".into(), 1.0), ("v2".into(), 0.0), ("n1".into(), 0.0)])
        );
        let nv = expert_view(&sc, &map, &cat, NegativeMode::NonvulnOnlyNegatives, UnknownPolicy::Reject, 0)
            .unwrap();
        assert_eq!(labels(&nv), BTreeMap::from([("v1".into(), 1.0), ("n1".into(), 0.0)]));
    }

    #[test]
    fn expert_view_without_positives_errors() {
        let sc = train_only(vec![sample("v2", true, Some("CWE-21")), sample("n1", false, None)]);
        let err = expert_view(
            &sc,
            &two_root_map(),
            &"CWE-1".parse().unwrap(),
            NegativeMode::AllNegatives,
            UnknownPolicy::Reject,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::TrainingData(ref m) if m.contains("CWE-1")));
    }

    #[test]
    fn unannotated_vulnerables_are_negatives_only_in_all_mode() {
        let sc = train_only(vec![
            sample("v1", true, Some("CWE-11")),
            sample("u", true, None),
            sample("n1", false, None),
        ]);
        let cat: CategoryId = "CWE-1".parse().unwrap();
        let map = two_root_map();
        let all = expert_view(&sc, &map, &cat, NegativeMode::AllNegatives, UnknownPolicy::Reject, 0).unwrap();
        assert_eq!(all.entries.len(), 3);
        assert_eq!(all.unannotated, 1);
        let nv = expert_view(&sc, &map, &cat, NegativeMode::NonvulnOnlyNegatives, UnknownPolicy::Reject, 0)
            .unwrap();
        assert_eq!(nv.entries.len(), 2);
    }

    #[test]
    fn router_view_weights() {
        let map = two_root_map();
        let sc = train_only(vec![
            sample("a", true, Some("CWE-11")),
            sample("b", true, Some("CWE-11")),
            sample("c", true, Some("CWE-21")),
            sample("d", true, Some("CWE-21")),
            sample("n", false, None),
        ]);
        let rv = router_view(&sc, &map, UnknownPolicy::Reject).unwrap();
        assert_eq!(rv.class_weights, vec![2.0, 2.0]);
        assert_eq!(rv.entries.len(), 4);

        let sc = train_only(vec![
            sample("a", true, Some("CWE-11")),
            sample("b", true, Some("CWE-11")),
            sample("c", true, Some("CWE-11")),
            sample("d", true, Some("CWE-21")),
            sample("n", false, None),
            sample("m", false, None),
        ]);
        let rv = router_view(&sc, &map, UnknownPolicy::Reject).unwrap();
        let cw = &rv.class_weights;
        assert!((cw[map.index_of(&"CWE-1".parse().unwrap()).unwrap()] - 4.0 / 3.0).abs() < 1e-12);
        assert!((cw[map.index_of(&"CWE-2".parse().unwrap()).unwrap()] - 4.0).abs() < 1e-12);
        assert!(rv.entries.iter().all(|&(i, _)| sc.sample(i).is_vulnerable()));
    }

    #[test]
    fn router_view_missing_category_errors() {
        let sc = train_only(vec![sample("a", true, Some("CWE-11")), sample("n", false, None)]);
        let err = router_view(&sc, &two_root_map(), UnknownPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::TrainingData(ref m) if m.contains("CWE-2")));
    }

    fn counted(pairs: &[(&str, u64)]) -> Vec<(CweId, u64)> {
        pairs.iter().map(|(k, v)| (k.parse().unwrap(), *v)).collect()
    }

    #[test]
    fn head_tail_minimal_prefix() {
        let p = head_tail_from_counts(counted(&[("CWE-1", 30), ("CWE-2", 25), ("CWE-3", 45)])).unwrap();
        let ids: Vec<&str> = p.head.iter().map(CweId::as_str).collect();
        assert_eq!(ids, ["CWE-3", "CWE-1"]);
        assert_eq!(p.tail.len(), 1);
        assert!((p.head_fraction - 0.75).abs() < 1e-12);

        let p = head_tail_from_counts(counted(&[("CWE-9", 4)])).unwrap();
        assert_eq!(p.head.len(), 1);
        assert!(p.tail.is_empty());
        assert!(head_tail_from_counts(Vec::new()).is_err());
    }

    #[test]
    fn head_tail_from_samples_ignores_negatives_and_unannotated() {
        let s = vec![
            sample("a", true, Some("CWE-1")),
            sample("b", true, Some("CWE-1")),
            sample("c", true, Some("CWE-2")),
            sample("d", true, None),
            sample("e", false, Some("CWE-2")),
        ];
        let p = head_tail(&s).unwrap();
        assert_eq!(p.head, vec!["CWE-1".parse::<CweId>().unwrap()]);
        assert!((p.head_fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    fn grouped(counts: &[(&str, usize)]) -> CweEvalGroup {
        let mut s = Vec::new();
        for (cwe, n) in counts {
            for i in 0..*n {
                s.push(sample(&format!("{cwe}-{i}"), true, Some(cwe)));
            }
        }
        eval_groups(&s)
    }

    #[test]
    fn eval_group_threshold() {
        let g = grouped(&[("CWE-1", 12), ("CWE-2", 4), ("CWE-3", 9)]);
        assert_eq!(g.groups.len(), 2);
        assert_eq!(g.groups["CWE-1"].len(), 1);
        assert_eq!(g.groups[SMALL_GROUP_LABEL].len(), 2);

        let g = grouped(&[("CWE-1", 12), ("CWE-2", 10)]);
        assert!(!g.groups.contains_key(SMALL_GROUP_LABEL));

        let g = grouped(&[("CWE-1", 10)]);
        assert_eq!(g.group_of(&"CWE-1".parse().unwrap()), Some("CWE-1"));
    }

    proptest! {
        #[test]
        fn expert_labels_are_the_indicator(spec in proptest::collection::vec((0u8..4, any::<bool>()), 1..40), pick in 0usize..2) {
            // cwe code 0 = unannotated, 1 = CWE-11, 2 = CWE-21, 3 = CWE-11 (dup bucket)
            let samples: Vec<CodeSample> = spec.iter().enumerate().map(|(i, &(c, v))| {
                let cwe = match c { 0 => None, 2 => Some("CWE-21"), _ => Some("CWE-11") };
                sample(&format!("x{i}"), v, cwe)
            }).collect();
            prop_assume!(samples.iter().any(|s| s.is_vulnerable() && s.cwe.is_some()));
            let sc = train_only(samples);
            let map = two_root_map();
            let cat = map.roster()[pick].clone();
            if let Ok(view) = expert_view(&sc, &map, &cat, NegativeMode::AllNegatives, UnknownPolicy::Reject, 9) {
                prop_assert_eq!(view.entries.len(), sc.indices(Partition::Train).len());
                for &(i, y) in &view.entries {
                    let s = sc.sample(i);
                    let expect = s.vuln_cwe().map(|c| map.category_of(c).unwrap() == &cat).unwrap_or(false);
                    prop_assert_eq!(y == 1.0, expect);
                }
            }
        }

        #[test]
        fn router_weights_inverse_fraction_identity(n1 in 1usize..20, n2 in 1usize..20) {
            let mut s = Vec::new();
            for i in 0..n1 { s.push(sample(&format!("a{i}"), true, Some("CWE-11"))); }
            for i in 0..n2 { s.push(sample(&format!("b{i}"), true, Some("CWE-21"))); }
            let sc = train_only(s);
            let rv = router_view(&sc, &two_root_map(), UnknownPolicy::Reject).unwrap();
            let total = (n1 + n2) as f64;
            let mut counts = [0usize; 2];
            for &(_, c) in &rv.entries { counts[c] += 1; }
            let identity: f64 = counts.iter().zip(&rv.class_weights).map(|(&c, w)| c as f64 / total * w).sum();
            prop_assert!((identity - 2.0).abs() < 1e-9);
        }

        #[test]
        fn head_tail_minimality(counts in proptest::collection::vec(1u64..200, 1..15)) {
            let pairs: Vec<(CweId, u64)> = counts.iter().enumerate().map(|(i, &c)| (CweId::numbered(i as u32 + 1), c)).collect();
            let total: u64 = counts.iter().sum();
            let p = head_tail_from_counts(pairs.clone()).unwrap();
            let of = |id: &CweId| pairs.iter().find(|x| &x.0 == id).unwrap().1;
            let head_sum: u64 = p.head.iter().map(of).sum();
            prop_assert!(2 * head_sum >= total);
            let without_last = head_sum - of(p.head.last().unwrap());
            prop_assert!(2 * without_last < total);
            prop_assert_eq!(p.head.len() + p.tail.len(), pairs.len());
        }

        #[test]
        fn split_partitions_input(n in 10usize..120, seed in any::<u64>()) {
            let sc = split(corpus(n), seed).unwrap();
            let mut all: Vec<usize> = [Partition::Train, Partition::Valid, Partition::Test]
                .iter().flat_map(|&p| sc.indices(p).to_vec()).collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (p, r) in [(Partition::Train, 0.8), (Partition::Valid, 0.1), (Partition::Test, 0.1)] {
                prop_assert!((sc.indices(p).len() as f64 - r * n as f64).abs() <= 1.0);
            }
        }
    }
}
