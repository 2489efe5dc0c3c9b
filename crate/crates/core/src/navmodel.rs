//! Navigation probabilities.
//!
//! A user looking for topic `X` starts at the root and moves to a child with
//! softmax probability over `(γ/|ch(s)|)·κ(child, X)`. Reach probabilities
//! follow from propagating along a topological order; a table is discovered
//! when any of its attributes is, and effectiveness is the mean over tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::TopicVector;
use crate::error::{Error, Result};
use crate::organization::{Organization, State, StateId, StateKind, Universe};
use crate::vector::dot;

pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_THETA: f64 = 0.9;
/// Path-enumeration guard for [`brute_force_reach`].
pub const MAX_ENUMERATED_PATHS: u64 = 1_000_000;

/// The subject a user navigates towards, as a unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTopic {
    unit: Vec<f64>,
}

impl QueryTopic {
    pub fn new(topic: &TopicVector) -> Result<Self> {
        topic
            .unit()
            .map(|unit| QueryTopic { unit })
            .ok_or(Error::UndefinedSimilarity)
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        crate::vector::normalized(v)
            .map(|unit| QueryTopic { unit })
            .ok_or(Error::UndefinedSimilarity)
    }

    pub fn unit(&self) -> &[f64] {
        &self.unit
    }
}

#[inline]
fn kappa(state: &State, x: &[f64]) -> f64 {
    if state.unit.is_empty() || x.is_empty() {
        0.0
    } else {
        dot(&state.unit, x)
    }
}

/// Transition probabilities from `s` to each of its children (in child order).
pub(crate) fn transition_probs_into(org: &Organization, s: &State, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    if s.children.is_empty() {
        return;
    }
    let scale = org.gamma() / s.children.len() as f64;
    out.extend(s.children.iter().map(|c| scale * kappa(org.state(*c), x)));
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

pub fn transition_probs(org: &Organization, s: StateId, x: &QueryTopic) -> Vec<f64> {
    let mut out = Vec::new();
    transition_probs_into(org, org.state(s), &x.unit, &mut out);
    out
}

pub fn transition_prob(org: &Organization, s: StateId, c: StateId, x: &QueryTopic) -> Result<f64> {
    let pos = org
        .children(s)
        .iter()
        .position(|x| *x == c)
        .ok_or_else(|| Error::InvalidArgument(format!("state {c} is not a child of {s}")))?;
    Ok(transition_probs(org, s, x)[pos])
}

/// Reach probability of every state (indexed by state id) for query `x`.
pub fn reach_probs(org: &Organization, x: &QueryTopic) -> Result<Vec<f64>> {
    let order = org.topo_order()?;
    let mut reach = vec![0.0; org.capacity()];
    let mut probs = Vec::new();
    reach[org.root().index()] = 1.0;
    propagate_full(org, &order, &x.unit, true, &mut reach, &mut probs);
    Ok(reach)
}

fn propagate_full(
    org: &Organization,
    order: &[StateId],
    x: &[f64],
    include_leaves: bool,
    reach: &mut [f64],
    probs: &mut Vec<f64>,
) {
    for &id in order {
        let s = org.state(id);
        let r = reach[id.index()];
        if r == 0.0 || (!include_leaves && s.kind == StateKind::Tag) {
            continue;
        }
        transition_probs_into(org, s, x, probs);
        for (c, p) in s.children.iter().zip(probs.iter()) {
            reach[c.index()] += p * r;
        }
    }
}

/// Sum over all root→`s` paths of the product of transition probabilities,
/// by explicit enumeration. Refuses organizations with more than
/// [`MAX_ENUMERATED_PATHS`] such paths.
pub fn brute_force_reach(org: &Organization, s: StateId, x: &QueryTopic) -> Result<f64> {
    let order = org.topo_order()?;
    // number of root→v paths, saturating past the guard
    let mut paths = vec![0u64; org.capacity()];
    paths[org.root().index()] = 1;
    for &v in &order {
        let n = paths[v.index()];
        for &c in org.children(v) {
            paths[c.index()] = (paths[c.index()] + n).min(MAX_ENUMERATED_PATHS + 1);
        }
    }
    if paths[s.index()] > MAX_ENUMERATED_PATHS {
        return Err(Error::TooManyPaths {
            limit: MAX_ENUMERATED_PATHS as usize,
        });
    }
    let useful = org.ancestors(s);
    let mut total = 0.0;
    let mut stack = vec![(org.root(), 1.0f64)];
    while let Some((v, p)) = stack.pop() {
        if v == s {
            total += p;
            continue;
        }
        let st = org.state(v);
        if st.children.is_empty() {
            continue;
        }
        // plain softmax, independent of the propagation code path
        let scale = org.gamma() / st.children.len() as f64;
        let weights: Vec<f64> = st
            .children
            .iter()
            .map(|c| (scale * kappa(org.state(*c), &x.unit)).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        for (c, w) in st.children.iter().zip(weights) {
            if useful.contains(c) {
                stack.push((*c, p * w / z));
            }
        }
    }
    Ok(total)
}

// ---- query sets and evaluation ------------------------------------------------

/// A query direction and the attributes whose discovery it stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub unit: Vec<f64>,
    pub members: Vec<u32>,
}

/// The query topics an evaluation propagates. Exact evaluation uses one
/// query per attribute; approximate evaluation one per representative.
#[derive(Debug, Clone)]
pub struct QuerySet {
    queries: Vec<Query>,
    of_attr: Vec<Option<u32>>,
}

impl QuerySet {
    /// One query per organized attribute, its own topic.
    pub fn exact(org: &Organization) -> Self {
        let u = org.universe();
        let blocks = org
            .organized_attributes()
            .into_iter()
            .map(|a| (u.attribute_unit(a).to_vec(), vec![a]))
            .collect();
        QuerySet::from_blocks(org, blocks)
    }

    /// Queries from `(direction, members)` blocks. Members without a leaf in
    /// `org` are dropped, as are blocks left empty.
    pub fn from_blocks(org: &Organization, blocks: Vec<(Vec<f64>, Vec<u32>)>) -> Self {
        let organized = org.leaf_index();
        let mut of_attr = vec![None; organized.len()];
        let mut queries = Vec::with_capacity(blocks.len());
        for (unit, members) in blocks {
            let members: Vec<u32> = members
                .into_iter()
                .filter(|a| organized[*a as usize].is_some() && of_attr[*a as usize].is_none())
                .collect();
            if members.is_empty() {
                continue;
            }
            for &a in &members {
                of_attr[a as usize] = Some(queries.len() as u32);
            }
            queries.push(Query { unit, members });
        }
        QuerySet { queries, of_attr }
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query_of(&self, attr: u32) -> Option<usize> {
        self.of_attr.get(attr as usize).copied().flatten().map(|q| q as usize)
    }

    pub fn n_members(&self) -> usize {
        self.queries.iter().map(|q| q.members.len()).sum()
    }
}

/// Discovery probabilities of every organized attribute and table.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// By universe attribute index; `None` for attributes without a leaf.
    pub attr_discovery: Vec<Option<f64>>,
    /// By universe table index; `None` for tables without organized attributes.
    pub table_discovery: Vec<Option<f64>>,
    pub effectiveness: f64,
}

/// Work done by an incremental re-evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalStats {
    pub queries: usize,
    pub attributes: usize,
}

/// `1 − ∏(1 − p)`, folded as `q + p(1 − q)` so a single term is returned
/// unchanged and a certain term makes the result exactly 1.
pub fn any_prob<I: IntoIterator<Item = f64>>(probs: I) -> f64 {
    probs.into_iter().fold(0.0, union)
}

#[inline]
fn union(q: f64, p: f64) -> f64 {
    if p >= 1.0 {
        1.0
    } else {
        q + p * (1.0 - q)
    }
}

impl Evaluation {
    fn from_attributes(u: &Universe, attr_discovery: Vec<Option<f64>>) -> Self {
        let mut table_discovery: Vec<Option<f64>> = vec![None; u.n_tables()];
        for (a, p) in attr_discovery.iter().enumerate() {
            if let Some(p) = p {
                let t = &mut table_discovery[u.attribute_table(a as u32) as usize];
                *t = Some(union(t.unwrap_or(0.0), *p));
            }
        }
        let scored: Vec<f64> = table_discovery.iter().flatten().copied().collect();
        let effectiveness = if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        Evaluation {
            attr_discovery,
            table_discovery,
            effectiveness,
        }
    }
}

#[derive(Default)]
struct Scratch {
    reach: Vec<f64>,
    mark: Vec<bool>,
    stack: Vec<StateId>,
    set: Vec<StateId>,
    probs: Vec<f64>,
}

/// Reach of each target under `x`, propagating only over their ancestors.
fn reach_targets(
    org: &Organization,
    rank: &[u32],
    targets: &[StateId],
    x: &[f64],
    sc: &mut Scratch,
) -> Vec<f64> {
    if sc.reach.len() < org.capacity() {
        sc.reach.resize(org.capacity(), 0.0);
        sc.mark.resize(org.capacity(), false);
    }
    sc.set.clear();
    sc.stack.clear();
    sc.stack.extend_from_slice(targets);
    while let Some(id) = sc.stack.pop() {
        if !sc.mark[id.index()] {
            sc.mark[id.index()] = true;
            sc.set.push(id);
            sc.stack.extend_from_slice(&org.state(id).parents);
        }
    }
    sc.set.sort_unstable_by_key(|s| rank[s.index()]);
    let root = org.root();
    if sc.mark[root.index()] {
        sc.reach[root.index()] = 1.0;
    }
    for i in 0..sc.set.len() {
        let s = org.state(sc.set[i]);
        let r = sc.reach[s.id.index()];
        if r == 0.0 || s.children.is_empty() {
            continue;
        }
        transition_probs_into(org, s, x, &mut sc.probs);
        for (c, p) in s.children.iter().zip(sc.probs.iter()) {
            if sc.mark[c.index()] {
                sc.reach[c.index()] += p * r;
            }
        }
    }
    let out = targets.iter().map(|t| sc.reach[t.index()]).collect();
    for s in &sc.set {
        sc.reach[s.index()] = 0.0;
        sc.mark[s.index()] = false;
    }
    out
}

fn topo_rank(org: &Organization) -> Result<Vec<u32>> {
    let mut rank = vec![u32::MAX; org.capacity()];
    for (i, id) in org.topo_order()?.into_iter().enumerate() {
        rank[id.index()] = i as u32;
    }
    Ok(rank)
}

fn discover_queries(
    org: &Organization,
    qs: &QuerySet,
    which: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let rank = topo_rank(org)?;
    let leaf = org.leaf_index();
    Ok(which
        .par_iter()
        .map_init(Scratch::default, |sc, &qi| {
            let q = &qs.queries[qi];
            let targets: Vec<StateId> = q
                .members
                .iter()
                .map(|a| leaf[*a as usize].expect("query member has a leaf"))
                .collect();
            reach_targets(org, &rank, &targets, &q.unit, sc)
        })
        .collect())
}

/// Discovery probability of every organized attribute via the query set.
pub fn evaluate(org: &Organization, qs: &QuerySet) -> Result<Evaluation> {
    let all: Vec<usize> = (0..qs.len()).collect();
    let results = discover_queries(org, qs, &all)?;
    let mut attr = vec![None; org.universe().n_attributes()];
    for (q, probs) in qs.queries.iter().zip(results) {
        for (a, p) in q.members.iter().zip(probs) {
            attr[*a as usize] = Some(p);
        }
    }
    Ok(Evaluation::from_attributes(org.universe(), attr))
}

/// Re-evaluates only the queries with a member among `affected` attributes,
/// reusing `prev` for the rest.
pub fn reevaluate(
    org: &Organization,
    qs: &QuerySet,
    prev: &Evaluation,
    affected: &BTreeSet<u32>,
) -> Result<(Evaluation, EvalStats)> {
    let which: BTreeSet<usize> = affected.iter().filter_map(|a| qs.query_of(*a)).collect();
    let which: Vec<usize> = which.into_iter().collect();
    let results = discover_queries(org, qs, &which)?;
    let mut attr = prev.attr_discovery.clone();
    let mut stats = EvalStats {
        queries: which.len(),
        attributes: 0,
    };
    for (&qi, probs) in which.iter().zip(results) {
        let q = &qs.queries[qi];
        stats.attributes += q.members.len();
        for (a, p) in q.members.iter().zip(probs) {
            attr[*a as usize] = Some(p);
        }
    }
    Ok((Evaluation::from_attributes(org.universe(), attr), stats))
}

/// Mean reach of every state over the query set, each query weighted by its
/// member count. Indexed by state id. Reach of leaves is computed only when
/// `include_leaves` is set.
pub fn state_reachability(org: &Organization, qs: &QuerySet, include_leaves: bool) -> Result<Vec<f64>> {
    const CHUNK: usize = 32;
    let order = org.topo_order()?;
    let cap = org.capacity();
    let partials: Vec<Vec<f64>> = qs
        .queries
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; cap];
            let mut reach = vec![0.0; cap];
            let mut probs = Vec::new();
            for q in chunk {
                reach.iter_mut().for_each(|r| *r = 0.0);
                reach[org.root().index()] = 1.0;
                propagate_full(org, &order, &q.unit, include_leaves, &mut reach, &mut probs);
                let w = q.members.len() as f64;
                for (a, r) in acc.iter_mut().zip(&reach) {
                    *a += w * r;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; cap];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let weight = qs.n_members() as f64;
    if weight > 0.0 {
        total.iter_mut().for_each(|t| *t /= weight);
    }
    Ok(total)
}

/// Mean reach of `s` over every organized attribute's topic.
pub fn reachability(org: &Organization, s: StateId) -> Result<f64> {
    Ok(state_reachability(org, &QuerySet::exact(org), true)?[s.index()])
}

fn attribute_index(org: &Organization, attr: &str) -> Result<u32> {
    org.universe()
        .attribute_index(attr)
        .filter(|a| org.leaf_index()[*a as usize].is_some())
        .ok_or_else(|| Error::NotFound {
            kind: "attribute",
            id: attr.to_string(),
        })
}

/// Reach of the attribute's leaf when navigating towards the attribute itself.
pub fn discovery_prob_attribute(org: &Organization, attr: &str) -> Result<f64> {
    let a = attribute_index(org, attr)?;
    let leaf = org.leaf_of(a).expect("organized attribute has a leaf");
    let rank = topo_rank(org)?;
    let unit = org.universe().attribute_unit(a).to_vec();
    Ok(reach_targets(org, &rank, &[leaf], &unit, &mut Scratch::default())[0])
}

fn table_index(org: &Organization, table: &str) -> Result<u32> {
    let u = org.universe();
    (0..u.n_tables() as u32)
        .find(|t| u.table_id(*t) == table)
        .ok_or_else(|| Error::NotFound {
            kind: "table",
            id: table.to_string(),
        })
}

/// Probability that at least one of the table's organized attributes is
/// discovered. Errors for tables without organized attributes.
pub fn discovery_prob_table(org: &Organization, table: &str) -> Result<f64> {
    let t = table_index(org, table)?;
    let eval = evaluate(org, &QuerySet::exact(org))?;
    eval.table_discovery[t as usize].ok_or_else(|| {
        Error::InvalidArgument(format!("table {table} has no organized attributes"))
    })
}

// ---- success probabilities ----------------------------------------------------

/// For every organized attribute, the organized attributes at cosine ≥ θ
/// (always including itself).
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    theta: f64,
    neighbors: Vec<Vec<u32>>,
}

impl SimilarityIndex {
    pub fn new(org: &Organization, theta: f64) -> Self {
        let u = org.universe();
        let organized: Vec<u32> = org.organized_attributes().into_iter().collect();
        let mut neighbors = vec![Vec::new(); u.n_attributes()];
        let rows: Vec<Vec<u32>> = organized
            .par_iter()
            .map(|&a| {
                let ua = u.attribute_unit(a);
                organized
                    .iter()
                    .copied()
                    .filter(|&b| {
                        b == a || {
                            let ub = u.attribute_unit(b);
                            !ua.is_empty() && !ub.is_empty() && dot(ua, ub) >= theta
                        }
                    })
                    .collect()
            })
            .collect();
        for (a, row) in organized.into_iter().zip(rows) {
            neighbors[a as usize] = row;
        }
        SimilarityIndex { theta, neighbors }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn neighbors(&self, attr: u32) -> &[u32] {
        &self.neighbors[attr as usize]
    }

    /// Success probabilities from discovery probabilities, by attribute.
    pub fn success(&self, discovery: &[Option<f64>]) -> Vec<Option<f64>> {
        discovery
            .iter()
            .enumerate()
            .map(|(a, p)| {
                p.map(|_| {
                    any_prob(self.neighbors[a].iter().map(|b| discovery[*b as usize].unwrap_or(0.0)))
                })
            })
            .collect()
    }
}

pub fn success_prob_attribute(org: &Organization, attr: &str, theta: f64) -> Result<f64> {
    let a = attribute_index(org, attr)?;
    let report = EvalReport::exact(org, theta)?;
    Ok(report.attr_success[org.universe().attribute_id(a)])
}

pub fn success_prob_table(org: &Organization, table: &str, theta: f64) -> Result<f64> {
    table_index(org, table)?;
    let report = EvalReport::exact(org, theta)?;
    report.table_success.get(table).copied().ok_or_else(|| {
        Error::InvalidArgument(format!("table {table} has no organized attributes"))
    })
}

/// Probability of discovering a table in any of several dimensions, given
/// its probability in each (`None` where the dimension lacks the table).
pub fn multidim_prob(per_dimension: &[Option<f64>]) -> f64 {
    any_prob(per_dimension.iter().map(|p| p.unwrap_or(0.0)))
}

/// [`multidim_prob`] of a table's discovery probability across organizations.
pub fn multidim_table_prob(orgs: &[Organization], table: &str) -> Result<f64> {
    let mut per = Vec::with_capacity(orgs.len());
    let mut found = false;
    for org in orgs {
        let p = match table_index(org, table) {
            Ok(t) => evaluate(org, &QuerySet::exact(org))?.table_discovery[t as usize],
            Err(_) => None,
        };
        found |= p.is_some();
        per.push(p);
    }
    if !found {
        return Err(Error::NotFound {
            kind: "table",
            id: table.to_string(),
        });
    }
    Ok(multidim_prob(&per))
}

// ---- reports --------------------------------------------------------------------

/// Per-attribute and per-table discovery and success probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attr_discovery: BTreeMap<String, f64>,
    pub attr_success: BTreeMap<String, f64>,
    pub table_discovery: BTreeMap<String, f64>,
    pub table_success: BTreeMap<String, f64>,
    pub effectiveness: f64,
    pub mean_success: f64,
    /// Mean reach per state id; empty unless requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub state_reachability: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub effectiveness: f64,
    pub mean_success: f64,
    pub n_tables: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn new(org: &Organization, eval: &Evaluation, sims: &SimilarityIndex) -> Self {
        let u = org.universe();
        let success = sims.success(&eval.attr_discovery);
        let mut attr_discovery = BTreeMap::new();
        let mut attr_success = BTreeMap::new();
        let mut table_hit: Vec<Option<f64>> = vec![None; u.n_tables()];
        for (a, p) in eval.attr_discovery.iter().enumerate() {
            if let (Some(p), Some(s)) = (p, success[a]) {
                let id = u.attribute_id(a as u32).to_string();
                attr_discovery.insert(id.clone(), *p);
                attr_success.insert(id, s);
                let t = &mut table_hit[u.attribute_table(a as u32) as usize];
                *t = Some(union(t.unwrap_or(0.0), s));
            }
        }
        let mut table_discovery = BTreeMap::new();
        let mut table_success = BTreeMap::new();
        for t in 0..u.n_tables() {
            match (eval.table_discovery[t], table_hit[t]) {
                (Some(d), Some(s)) => {
                    table_discovery.insert(u.table_id(t as u32).to_string(), d);
                    table_success.insert(u.table_id(t as u32).to_string(), s);
                }
                _ => log::warn!(
                    "table {} has no organized attributes; excluded from effectiveness",
                    u.table_id(t as u32)
                ),
            }
        }
        EvalReport {
            effectiveness: eval.effectiveness,
            mean_success: mean(table_success.values().copied()),
            attr_discovery,
            attr_success,
            table_discovery,
            table_success,
            state_reachability: BTreeMap::new(),
        }
    }

    /// Exact evaluation with success probabilities at threshold `theta`.
    pub fn exact(org: &Organization, theta: f64) -> Result<Self> {
        let eval = evaluate(org, &QuerySet::exact(org))?;
        Ok(EvalReport::new(org, &eval, &SimilarityIndex::new(org, theta)))
    }

    /// Adds mean per-state reach over the query set.
    pub fn with_reachability(mut self, org: &Organization, qs: &QuerySet) -> Result<Self> {
        let r = state_reachability(org, qs, true)?;
        self.state_reachability = org.ids().map(|id| (id.0, r[id.index()])).collect();
        Ok(self)
    }

    /// Combines reports of several dimensions: every probability becomes the
    /// probability of discovery in any dimension. Per-state caches are dropped.
    pub fn combine(reports: &[EvalReport]) -> EvalReport {
        fn merge(maps: Vec<&BTreeMap<String, f64>>) -> BTreeMap<String, f64> {
            let mut hit: BTreeMap<String, f64> = BTreeMap::new();
            for m in maps {
                for (k, p) in m {
                    let q = hit.entry(k.clone()).or_insert(0.0);
                    *q = union(*q, *p);
                }
            }
            hit
        }
        let table_discovery = merge(reports.iter().map(|r| &r.table_discovery).collect());
        let table_success = merge(reports.iter().map(|r| &r.table_success).collect());
        EvalReport {
            attr_discovery: merge(reports.iter().map(|r| &r.attr_discovery).collect()),
            attr_success: merge(reports.iter().map(|r| &r.attr_success).collect()),
            effectiveness: mean(table_discovery.values().copied()),
            mean_success: mean(table_success.values().copied()),
            table_discovery,
            table_success,
            state_reachability: BTreeMap::new(),
        }
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            effectiveness: self.effectiveness,
            mean_success: self.mean_success,
            n_tables: self.table_discovery.len(),
        }
    }

    /// `table_id,discovery_prob,success_prob`, one row per table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["table_id", "discovery_prob", "success_prob"])?;
        for (t, d) in &self.table_discovery {
            let s = self.table_success.get(t).copied().unwrap_or(*d);
            w.write_record([t.as_str(), &d.to_string(), &s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &self.summary())?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}
