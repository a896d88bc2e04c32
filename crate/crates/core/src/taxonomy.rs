//! CWE hierarchy and the category split used to assign experts.
//!
//! The hierarchy is read from a tab-separated edge list (`parent<TAB>child`).
//! Every CWE id is mapped to a top-level ancestor; top-level types with too
//! few vulnerable training samples are pooled into a single `CWE-agg`
//! category. The resulting [`CategoryMap`] fixes the expert roster.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOINFO: &str = "CWE-noinfo";
pub const AGG: &str = "CWE-agg";
pub const CATEGORY_MAP_VERSION: u32 = 1;

/// A CWE identifier in canonical form: `CWE-<digits>` (no leading zeros) or
/// `CWE-noinfo`. Ordering is lexicographic on the canonical string.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CweId(String);

impl CweId {
    pub fn noinfo() -> Self {
        CweId(NOINFO.to_string())
    }

    pub fn numbered(n: u32) -> Self {
        CweId(format!("CWE-{n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_noinfo(&self) -> bool {
        self.0 == NOINFO
    }
}

impl FromStr for CweId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Parse {
            line: None,
            message: format!("invalid CWE id {s:?}"),
        };
        if t.len() < 4 || !t.is_char_boundary(4) || !t[..4].eq_ignore_ascii_case("cwe-") {
            return Err(bad());
        }
        let rest = &t[4..];
        if rest.eq_ignore_ascii_case("noinfo") {
            return Ok(CweId::noinfo());
        }
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let digits = rest.trim_start_matches('0');
        let digits = if digits.is_empty() { "0" } else { digits };
        Ok(CweId(format!("CWE-{digits}")))
    }
}

impl TryFrom<String> for CweId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CweId> for String {
    fn from(id: CweId) -> String {
        id.0
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An expert category: a retained top-level CWE id or `CWE-agg`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(String);

impl CategoryId {
    pub fn agg() -> Self {
        CategoryId(AGG.to_string())
    }

    pub fn is_agg(&self) -> bool {
        self.0 == AGG
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&CweId> for CategoryId {
    fn from(id: &CweId) -> Self {
        CategoryId(id.0.clone())
    }
}

impl FromStr for CategoryId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == AGG {
            Ok(CategoryId::agg())
        } else {
            s.parse::<CweId>().map(|id| CategoryId::from(&id))
        }
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parent-of relation over CWE ids. Acyclic; may be a DAG.
#[derive(Clone, Debug, Default)]
pub struct CweTree {
    nodes: BTreeSet<CweId>,
    parents: BTreeMap<CweId, BTreeSet<CweId>>,
    children: BTreeMap<CweId, BTreeSet<CweId>>,
}

impl CweTree {
    /// Builds a tree from explicit nodes and `(parent, child)` edges.
    /// Edge endpoints are added to the node set.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = CweId>,
        edges: impl IntoIterator<Item = (CweId, CweId)>,
    ) -> Result<Self> {
        let mut tree = CweTree::default();
        tree.nodes.extend(nodes);
        for (parent, child) in edges {
            tree.add_edge(parent, child)?;
        }
        tree.check_acyclic()?;
        Ok(tree)
    }

    fn add_edge(&mut self, parent: CweId, child: CweId) -> Result<()> {
        if parent.is_noinfo() || child.is_noinfo() {
            return Err(Error::Taxonomy(format!(
                "{NOINFO} cannot take part in an edge ({parent} -> {child})"
            )));
        }
        if parent == child {
            return Err(Error::Taxonomy(format!("cycle edge {parent} -> {child}")));
        }
        self.nodes.insert(parent.clone());
        self.nodes.insert(child.clone());
        self.parents
            .entry(child.clone())
            .or_default()
            .insert(parent.clone());
        self.children.entry(parent).or_default().insert(child);
        Ok(())
    }

    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let mut marks: BTreeMap<&CweId, Mark> = BTreeMap::new();
        for start in &self.nodes {
            if marks.contains_key(start) {
                continue;
            }
            // Iterative DFS along child edges; a child that is still open
            // closes a cycle.
            let mut stack: Vec<(&CweId, Vec<&CweId>)> = vec![(start, self.children_of(start))];
            marks.insert(start, Mark::Open);
            while let Some((node, pending)) = stack.last_mut() {
                let node: &CweId = node;
                match pending.pop() {
                    Some(child) => match marks.get(child) {
                        Some(Mark::Open) => {
                            return Err(Error::Taxonomy(format!("cycle edge {node} -> {child}")))
                        }
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(child, Mark::Open);
                            stack.push((child, self.children_of(child)));
                        }
                    },
                    None => {
                        marks.insert(node, Mark::Done);
                        stack.pop();
                    }
                }
            }
        }
        Ok(())
    }

    fn children_of(&self, id: &CweId) -> Vec<&CweId> {
        self.children
            .get(id)
            .map(|c| c.iter().rev().collect())
            .unwrap_or_default()
    }

    pub fn contains(&self, id: &CweId) -> bool {
        self.nodes.contains(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CweId> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parents(&self, id: &CweId) -> impl Iterator<Item = &CweId> {
        self.parents.get(id).into_iter().flatten()
    }

    pub fn children(&self, id: &CweId) -> impl Iterator<Item = &CweId> {
        self.children.get(id).into_iter().flatten()
    }

    pub fn roots(&self) -> BTreeSet<CweId> {
        self.nodes
            .iter()
            .filter(|n| !self.parents.contains_key(*n))
            .cloned()
            .collect()
    }

    /// All roots reachable from `id` by following parent edges.
    pub fn top_level_of(&self, id: &CweId) -> Result<BTreeSet<CweId>> {
        if id.is_noinfo() {
            return Ok(BTreeSet::from([id.clone()]));
        }
        if !self.nodes.contains(id) {
            return Err(Error::UnknownCwe(id.to_string()));
        }
        let mut roots = BTreeSet::new();
        let mut seen = BTreeSet::from([id]);
        let mut queue = VecDeque::from([id]);
        while let Some(n) = queue.pop_front() {
            match self.parents.get(n) {
                None => {
                    roots.insert(n.clone());
                }
                Some(ps) => {
                    for p in ps {
                        if seen.insert(p) {
                            queue.push_back(p);
                        }
                    }
                }
            }
        }
        Ok(roots)
    }
}

/// Parses a taxonomy edge list.
///
/// One `parent<TAB>child` pair per line; blank lines and `#` comments are
/// skipped. A line holding a single id declares an isolated node.
pub fn load_tree(source: &str) -> Result<CweTree> {
    let mut tree = CweTree::default();
    for (i, raw) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| {
            s.parse::<CweId>()
                .map_err(|_| Error::parse(lineno, format!("invalid CWE id {s:?}")))
        };
        match fields.as_slice() {
            [single] => {
                tree.nodes.insert(parse(single)?);
            }
            [parent, child] => {
                let (p, c) = (parse(parent)?, parse(child)?);
                tree.add_edge(p, c).map_err(|e| match e {
                    Error::Taxonomy(m) => Error::Taxonomy(format!("line {lineno}: {m}")),
                    other => other,
                })?;
            }
            _ => {
                return Err(Error::parse(
                    lineno,
                    format!("expected `parent<TAB>child`, found {} fields", fields.len()),
                ))
            }
        }
    }
    tree.check_acyclic()?;
    Ok(tree)
}

/// How lookups treat CWE ids the map has never seen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// Route unknown ids to `CWE-agg` (requires `CWE-agg` in the roster).
    #[default]
    FallbackToAgg,
    Reject,
}

/// Assignment of CWE ids to expert categories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub version: u32,
    pub min_instances: u64,
    /// Expert roster: descending vulnerable count, ties by id.
    pub categories: Vec<CategoryId>,
    pub assignment: BTreeMap<CweId, CategoryId>,
    pub agg_members: BTreeSet<CweId>,
}

/// Builds the category split from per-id vulnerable training counts.
///
/// Ids missing from the tree are treated as their own top level. A DAG node
/// with several roots goes to the root with the largest aggregated count,
/// then the lexicographically smallest id. Zero-count tree nodes are assigned
/// too, so that test-time ids under a retained root resolve without fallback.
pub fn build_categories(
    tree: &CweTree,
    vuln_counts: &BTreeMap<CweId, u64>,
    min_instances: u64,
) -> Result<CategoryMap> {
    if vuln_counts.is_empty() {
        return Err(Error::Config("vulnerable CWE counts are empty".into()));
    }
    if min_instances == 0 {
        return Err(Error::Config("min_instances must be at least 1".into()));
    }

    let universe: BTreeSet<&CweId> = tree.nodes().chain(vuln_counts.keys()).collect();
    let roots_of = |id: &CweId| -> BTreeSet<CweId> {
        if tree.contains(id) || id.is_noinfo() {
            tree.top_level_of(id).expect("id is in tree")
        } else {
            BTreeSet::from([id.clone()])
        }
    };
    let ancestry: BTreeMap<&CweId, BTreeSet<CweId>> =
        universe.iter().map(|&id| (id, roots_of(id))).collect();

    let mut root_total: BTreeMap<&CweId, u64> = BTreeMap::new();
    for (id, roots) in &ancestry {
        let c = vuln_counts.get(*id).copied().unwrap_or(0);
        for r in roots {
            *root_total.entry(r).or_default() += c;
        }
    }
    let total_of = |r: &CweId| root_total.get(r).copied().unwrap_or(0);

    let mut top: BTreeMap<&CweId, CweId> = BTreeMap::new();
    for (id, roots) in &ancestry {
        let best = roots
            .iter()
            .min_by(|a, b| total_of(b).cmp(&total_of(a)).then_with(|| a.cmp(b)))
            .expect("every id has at least one root");
        top.insert(id, best.clone());
    }

    let mut category_total: BTreeMap<CweId, u64> = BTreeMap::new();
    for (id, root) in &top {
        *category_total.entry(root.clone()).or_default() +=
            vuln_counts.get(*id).copied().unwrap_or(0);
    }

    let mut agg_total = 0u64;
    let mut retained: Vec<(CategoryId, u64)> = Vec::new();
    for (root, &total) in &category_total {
        if total >= min_instances {
            retained.push((CategoryId::from(root), total));
        } else {
            agg_total += total;
        }
    }
    if agg_total > 0 {
        retained.push((CategoryId::agg(), agg_total));
    }
    retained.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let categories: Vec<CategoryId> = retained.into_iter().map(|(c, _)| c).collect();
    let roster: BTreeSet<&CategoryId> = categories.iter().collect();

    let mut assignment = BTreeMap::new();
    let mut agg_members = BTreeSet::new();
    for (id, root) in top {
        let cat = CategoryId::from(&root);
        let cat = if roster.contains(&cat) {
            cat
        } else {
            CategoryId::agg()
        };
        if !roster.contains(&cat) {
            continue;
        }
        if cat.is_agg() {
            agg_members.insert(id.clone());
        }
        assignment.insert(id.clone(), cat);
    }

    Ok(CategoryMap {
        version: CATEGORY_MAP_VERSION,
        min_instances,
        categories,
        assignment,
        agg_members,
    })
}

impl CategoryMap {
    pub fn roster(&self) -> &[CategoryId] {
        &self.categories
    }

    pub fn index_of(&self, category: &CategoryId) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }

    pub fn has_agg(&self) -> bool {
        self.categories.iter().any(CategoryId::is_agg)
    }

    /// Strict lookup.
    pub fn category_of(&self, id: &CweId) -> Result<&CategoryId> {
        self.assignment
            .get(id)
            .ok_or_else(|| Error::UnknownCwe(id.to_string()))
    }

    /// Lookup honoring `policy` for ids absent from the map.
    pub fn resolve(&self, id: &CweId, policy: UnknownPolicy) -> Result<CategoryId> {
        match self.assignment.get(id) {
            Some(c) => Ok(c.clone()),
            None if policy == UnknownPolicy::FallbackToAgg && self.has_agg() => {
                Ok(CategoryId::agg())
            }
            None => Err(Error::UnknownCwe(id.to_string())),
        }
    }

    /// Roster index for `id` under `policy`.
    pub fn resolve_index(&self, id: &CweId, policy: UnknownPolicy) -> Result<usize> {
        let cat = self.resolve(id, policy)?;
        Ok(self.index_of(&cat).expect("assigned categories are in the roster"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("category map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(source: &str) -> Result<Self> {
        let map: CategoryMap = serde_json::from_str(source)?;
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        if self.version != CATEGORY_MAP_VERSION {
            return Err(Error::Format(format!(
                "unsupported category map version {}",
                self.version
            )));
        }
        let roster: BTreeSet<&CategoryId> = self.categories.iter().collect();
        if roster.len() != self.categories.len() {
            return Err(Error::Format("duplicate category in roster".into()));
        }
        if roster.is_empty() {
            return Err(Error::Format("empty category roster".into()));
        }
        for (id, cat) in &self.assignment {
            if !roster.contains(cat) {
                return Err(Error::Format(format!("{id} assigned to unknown category {cat}")));
            }
            if cat.is_agg() != self.agg_members.contains(id) {
                return Err(Error::Format(format!("agg membership of {id} is inconsistent")));
            }
        }
        if self.agg_members.iter().any(|m| !self.assignment.contains_key(m)) {
            return Err(Error::Format("agg member without assignment".into()));
        }
        Ok(())
    }
}
