//! Local search over organizations.
//!
//! Each iteration picks a state (shallow, poorly reachable states first),
//! builds the ADD_PARENT and DELETE_PARENT candidates for it, keeps the more
//! effective one and accepts it with the Metropolis rule `min(1, p'/p)`.
//! Candidates are re-evaluated only for queries whose leaves sit below a
//! changed transition.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::select_representatives;
use crate::error::{Error, Result};
use crate::kmedoids::{kmedoids, DistMatrix};
use crate::lake::DataLake;
use crate::navmodel::{self, EvalReport, EvalStats, Evaluation, QuerySet, SimilarityIndex};
use crate::organization::{initial_org, Levels, Organization, StateId, StateKind, Universe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub gamma: f64,
    pub max_iterations: usize,
    /// Iterations without significant improvement before stopping.
    pub plateau_window: usize,
    /// Relative improvement of the best-seen effectiveness that counts as significant.
    pub plateau_epsilon: f64,
    pub rng_seed: u64,
    pub use_representatives: bool,
    pub representative_fraction: f64,
    pub dimensions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            gamma: navmodel::DEFAULT_GAMMA,
            max_iterations: 1000,
            plateau_window: 50,
            plateau_epsilon: 1e-4,
            rng_seed: 0,
            use_representatives: true,
            representative_fraction: 0.10,
            dimensions: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.representative_fraction > 0.0 && self.representative_fraction <= 1.0) {
            return bad("representative_fraction must be in (0, 1]");
        }
        if self.plateau_window == 0 {
            return bad("plateau_window must be at least 1");
        }
        if self.dimensions == 0 {
            return bad("dimensions must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    AddParent,
    DeleteParent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    /// No significant gain within the window, or no state admits either
    /// operation.
    Plateau,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub state: StateId,
    pub operation: Operation,
    pub effectiveness_before: f64,
    pub effectiveness_after: f64,
    pub accepted: bool,
    pub best_effectiveness: f64,
    pub states_reevaluated: usize,
    pub attributes_reevaluated: usize,
    pub states_total: usize,
    pub attributes_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub iterations: Vec<IterationRecord>,
    pub exit: ExitReason,
    pub initial_effectiveness: f64,
    pub best_effectiveness: f64,
}

impl SearchTrace {
    pub fn accepted(&self) -> usize {
        self.iterations.iter().filter(|r| r.accepted).count()
    }

    /// Mean fraction of states re-evaluated per candidate.
    pub fn mean_visited_states(&self) -> f64 {
        mean(self.iterations.iter().map(|r| r.states_reevaluated as f64 / r.states_total.max(1) as f64))
    }

    /// Mean fraction of attributes re-evaluated per candidate.
    pub fn mean_visited_attributes(&self) -> f64 {
        mean(
            self.iterations
                .iter()
                .map(|r| r.attributes_reevaluated as f64 / r.attributes_total.max(1) as f64),
        )
    }

    /// One JSON object per iteration, then a summary line.
    pub fn write_ndjson(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.iterations {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut *out,
            &serde_json::json!({
                "exit": self.exit,
                "iterations": self.iterations.len(),
                "accepted": self.accepted(),
                "initial_effectiveness": self.initial_effectiveness,
                "best_effectiveness": self.best_effectiveness,
            }),
        )?;
        out.write_all(b"\n")
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Metropolis acceptance: always for improvements (or when `p_old` is 0),
/// otherwise with probability `p_new / p_old`.
pub fn accept<R: Rng + ?Sized>(p_new: f64, p_old: f64, rng: &mut R) -> bool {
    if p_old <= 0.0 || p_new >= p_old {
        return true;
    }
    rng.random::<f64>() < p_new / p_old
}

// ---- state selection ------------------------------------------------------------

/// Non-leaf, non-root states by level, then ascending reachability, then id.
pub fn state_to_modify(org: &Organization, levels: &Levels, reach: &[f64]) -> Vec<StateId> {
    let mut states: Vec<StateId> = org
        .states()
        .filter(|s| !matches!(s.kind, StateKind::Leaf | StateKind::Root))
        .map(|s| s.id)
        .collect();
    states.sort_by(|a, b| {
        levels
            .of(*a)
            .cmp(&levels.of(*b))
            .then(reach[a.index()].total_cmp(&reach[b.index()]))
            .then(a.cmp(b))
    });
    states
}

// ---- operations -------------------------------------------------------------------

/// Adds to `s` the most reachable eligible parent one level above it and
/// repairs inclusion upwards. `None` when no eligible parent exists.
pub fn op_add_parent(org: &Organization, levels: &Levels, reach: &[f64], s: StateId) -> Option<Organization> {
    let st = org.state(s);
    if matches!(st.kind, StateKind::Root | StateKind::Leaf) {
        return None;
    }
    let l = levels.of(s);
    if l < 2 {
        return None;
    }
    let below = org.descendants(s);
    let n = org
        .states()
        .filter(|c| {
            c.kind == StateKind::Interior
                && levels.get(c.id) == Some(l - 1)
                && !st.parents.contains(&c.id)
                && !below.contains(&c.id)
        })
        .max_by(|a, b| {
            reach[a.id.index()]
                .total_cmp(&reach[b.id.index()])
                .then(b.id.cmp(&a.id))
        })?
        .id;
    let mut next = org.clone();
    next.add_edge(n, s);
    let (attrs, tags) = (st.attributes.clone(), st.tags.clone());
    next.grow_ancestors(n, &attrs, &tags);
    Some(next)
}

/// Removes the least reachable non-root parent `r` of `s` together with
/// r's siblings holding more than one tag, lifting their children to their
/// parents. The root, tag states, leaves and `s` itself are never removed.
pub fn op_delete_parent(org: &Organization, reach: &[f64], s: StateId) -> Option<Organization> {
    let st = org.state(s);
    let r = st
        .parents
        .iter()
        .copied()
        .filter(|p| org.state(*p).kind == StateKind::Interior)
        .min_by(|a, b| reach[a.index()].total_cmp(&reach[b.index()]).then(a.cmp(b)))?;
    let mut doomed: BTreeSet<StateId> = BTreeSet::from([r]);
    for &g in org.parents(r) {
        for &sib in org.children(g) {
            let x = org.state(sib);
            if sib != s && x.kind == StateKind::Interior && x.tags.len() != 1 {
                doomed.insert(sib);
            }
        }
    }
    let mut next = org.clone();
    for e in doomed {
        eliminate(&mut next, e);
    }
    Some(next)
}

/// Connects the children of `e` to its parents and removes it.
fn eliminate(org: &mut Organization, e: StateId) {
    let parents = org.parents(e).to_vec();
    let children = org.children(e).to_vec();
    org.remove_state(e);
    for &p in &parents {
        for &c in &children {
            org.add_edge(p, c);
        }
    }
}

/// States whose reach may differ between `old` and `new`, and the
/// attributes at their leaves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affected {
    pub states: BTreeSet<StateId>,
    pub attributes: BTreeSet<u32>,
}

/// The region of `new` below any changed transition: states whose child
/// list changed, and parents of states whose topic changed, together with
/// all their descendants.
pub fn affected_subgraph(old: &Organization, new: &Organization) -> Affected {
    let mut roots = BTreeSet::new();
    for s in new.states() {
        match old.get(s.id) {
            None => {
                roots.insert(s.id);
            }
            Some(o) => {
                if o.children != s.children {
                    roots.insert(s.id);
                }
                if o.unit != s.unit {
                    roots.extend(s.parents.iter().copied());
                }
            }
        }
    }
    let states = new.closure(roots, |s| &s.children);
    let attributes = states
        .iter()
        .map(|id| new.state(*id))
        .filter(|s| s.kind == StateKind::Leaf)
        .flat_map(|s| s.attributes.iter().copied())
        .collect();
    Affected { states, attributes }
}

/// A proposed organization with its evaluation.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub org: Organization,
    pub eval: Evaluation,
    pub operation: Operation,
    pub stats: EvalStats,
    pub states_reevaluated: usize,
}

fn score(
    cur: &Organization,
    cur_eval: &Evaluation,
    qs: &QuerySet,
    next: Organization,
    operation: Operation,
) -> Result<Candidate> {
    let affected = affected_subgraph(cur, &next);
    let (eval, stats) = navmodel::reevaluate(&next, qs, cur_eval, &affected.attributes)?;
    Ok(Candidate {
        org: next,
        eval,
        operation,
        stats,
        states_reevaluated: affected.states.len(),
    })
}

/// Builds both candidates for `s` and returns the more effective; ties go
/// to DELETE_PARENT. `None` when neither operation applies.
pub fn choose_apply_op(
    cur: &Organization,
    cur_eval: &Evaluation,
    qs: &QuerySet,
    levels: &Levels,
    reach: &[f64],
    s: StateId,
) -> Result<Option<Candidate>> {
    let add = op_add_parent(cur, levels, reach, s)
        .map(|o| score(cur, cur_eval, qs, o, Operation::AddParent))
        .transpose()?;
    let del = op_delete_parent(cur, reach, s)
        .map(|o| score(cur, cur_eval, qs, o, Operation::DeleteParent))
        .transpose()?;
    Ok(match (add, del) {
        (Some(a), Some(d)) => Some(if a.eval.effectiveness > d.eval.effectiveness { a } else { d }),
        (a, d) => a.or(d),
    })
}

// ---- search -----------------------------------------------------------------------

/// Runs the local search from `init`, navigating with representatives when
/// `cfg.use_representatives` is set. Returns the best organization seen.
pub fn organize(lake: &DataLake, init: &Organization, cfg: &SearchConfig) -> Result<(Organization, SearchTrace)> {
    organize_stream(lake, init, cfg, 0)
}

fn organize_stream(
    lake: &DataLake,
    init: &Organization,
    cfg: &SearchConfig,
    stream: u64,
) -> Result<(Organization, SearchTrace)> {
    let qs = if cfg.use_representatives {
        select_representatives(lake, cfg.representative_fraction)?.query_set(init)?
    } else {
        QuerySet::exact(init)
    };
    organize_with(init, cfg, &qs, stream)
}

/// The search loop over an explicit query set.
pub fn organize_with(
    init: &Organization,
    cfg: &SearchConfig,
    qs: &QuerySet,
    stream: u64,
) -> Result<(Organization, SearchTrace)> {
    let mut search = Search::new(init, cfg, qs, stream)?;
    while search.step()?.is_some() {}
    Ok(search.finish())
}

/// Stepwise form of the search loop; [`organize_with`] drives it to the end.
pub struct Search<'a> {
    cfg: &'a SearchConfig,
    qs: &'a QuerySet,
    rng: ChaCha8Rng,
    cur: Organization,
    cur_eval: Evaluation,
    best: Organization,
    best_p: f64,
    initial_effectiveness: f64,
    levels: Levels,
    reach: Vec<f64>,
    order: Vec<StateId>,
    pos: usize,
    proposed_in_sweep: bool,
    records: Vec<IterationRecord>,
    last_gain: usize,
    exit: Option<ExitReason>,
}

impl<'a> Search<'a> {
    pub fn new(init: &Organization, cfg: &'a SearchConfig, qs: &'a QuerySet, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let violations = init.validate();
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidOrganization(msg.join("; ")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(stream);
        let cur_eval = navmodel::evaluate(init, qs)?;
        let levels = init.levels()?;
        let reach = navmodel::state_reachability(init, qs, false)?;
        let order = state_to_modify(init, &levels, &reach);
        Ok(Search {
            cfg,
            qs,
            rng,
            cur: init.clone(),
            best: init.clone(),
            best_p: cur_eval.effectiveness,
            initial_effectiveness: cur_eval.effectiveness,
            cur_eval,
            levels,
            reach,
            order,
            pos: 0,
            proposed_in_sweep: false,
            records: Vec::new(),
            last_gain: 0,
            exit: None,
        })
    }

    /// The organization the walk currently sits on.
    pub fn current(&self) -> &Organization {
        &self.cur
    }

    /// States in the order they are proposed from the current organization.
    pub fn order(&self) -> &[StateId] {
        &self.order
    }

    pub fn exit(&self) -> Option<ExitReason> {
        self.exit
    }

    /// Proposes and decides one move. `None` once the search has stopped.
    pub fn step(&mut self) -> Result<Option<&IterationRecord>> {
        if self.exit.is_some() {
            return Ok(None);
        }
        let iteration = self.records.len();
        if iteration >= self.cfg.max_iterations {
            self.exit = Some(ExitReason::MaxIterations);
            return Ok(None);
        }
        // inapplicable states are skipped without counting as iterations
        let (s, cand) = loop {
            if self.pos == self.order.len() {
                if !self.proposed_in_sweep {
                    log::debug!("no applicable move in a full sweep");
                    self.exit = Some(ExitReason::Plateau);
                    return Ok(None);
                }
                self.pos = 0;
                self.proposed_in_sweep = false;
            }
            let s = self.order[self.pos];
            self.pos += 1;
            if let Some(c) = choose_apply_op(&self.cur, &self.cur_eval, self.qs, &self.levels, &self.reach, s)? {
                break (s, c);
            }
        };
        debug_assert!(cand.org.is_valid(), "{:?}", cand.org.validate());
        self.proposed_in_sweep = true;
        let p_old = self.cur_eval.effectiveness;
        let p_new = cand.eval.effectiveness;
        let accepted = accept(p_new, p_old, &mut self.rng);
        let mut record = IterationRecord {
            iteration,
            state: s,
            operation: cand.operation,
            effectiveness_before: p_old,
            effectiveness_after: p_new,
            accepted,
            best_effectiveness: self.best_p,
            states_reevaluated: cand.states_reevaluated,
            attributes_reevaluated: cand.stats.attributes,
            states_total: cand.org.n_states(),
            attributes_total: self.qs.n_members(),
        };
        if accepted {
            self.cur = cand.org;
            self.cur_eval = cand.eval;
            if p_new > self.best_p * (1.0 + self.cfg.plateau_epsilon) {
                self.best = self.cur.clone();
                self.best_p = p_new;
                self.last_gain = iteration;
            }
            self.levels = self.cur.levels()?;
            self.reach = navmodel::state_reachability(&self.cur, self.qs, false)?;
            self.order = state_to_modify(&self.cur, &self.levels, &self.reach);
            self.pos = 0;
            self.proposed_in_sweep = false;
        }
        record.best_effectiveness = self.best_p;
        log::debug!(
            "iteration {iteration}: {:?} on {s} {p_old:.5} -> {p_new:.5} accepted={accepted}",
            record.operation
        );
        self.records.push(record);
        if iteration + 1 - self.last_gain >= self.cfg.plateau_window {
            self.exit = Some(ExitReason::Plateau);
        }
        Ok(self.records.last())
    }

    /// The best organization seen and the trace.
    pub fn finish(self) -> (Organization, SearchTrace) {
        (
            self.best,
            SearchTrace {
                iterations: self.records,
                exit: self.exit.unwrap_or(ExitReason::MaxIterations),
                initial_effectiveness: self.initial_effectiveness,
                best_effectiveness: self.best_p,
            },
        )
    }
}

// ---- multiple dimensions ----------------------------------------------------------

/// Groups the lake's tags into `k` clusters by k-medoids over tag topic
/// vectors (cosine distance). Groups are sorted and listed by first tag.
pub fn partition_tags(lake: &DataLake, k: usize, seed: u64) -> Result<Vec<BTreeSet<String>>> {
    let n = lake.n_tags();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot partition {n} tags into {k} groups"
        )));
    }
    let universe = Universe::from_lake(lake);
    let members = universe.tag_members();
    let units: Vec<Vec<f64>> = members
        .iter()
        .map(|m| universe.topic_of(m).unit().unwrap_or_default())
        .collect();
    let clustering = kmedoids(&DistMatrix::cosine(&units), k, seed, 100)?;
    let mut groups: Vec<BTreeSet<String>> = clustering
        .members()
        .into_iter()
        .map(|g| g.into_iter().map(|t| universe.tag_name(t as u32).to_string()).collect())
        .collect();
    groups.sort();
    Ok(groups)
}

/// One organized dimension.
#[derive(Debug, Clone)]
pub struct Dimension {
    pub tags: BTreeSet<String>,
    pub lake: DataLake,
    pub org: Organization,
    pub trace: SearchTrace,
}

/// Partitions the tags into `cfg.dimensions` groups and organizes each
/// group's sub-lake independently.
pub fn build_multidim(lake: &DataLake, cfg: &SearchConfig) -> Result<Vec<Dimension>> {
    cfg.validate()?;
    let groups = if cfg.dimensions == 1 {
        vec![lake.tags().map(str::to_string).collect()]
    } else {
        partition_tags(lake, cfg.dimensions, cfg.rng_seed)?
    };
    groups
        .into_par_iter()
        .enumerate()
        .map(|(i, tags)| {
            let sub = lake.restrict_to_tags(&tags);
            let init = initial_org(&sub, cfg.gamma)?;
            let (org, trace) = organize_stream(&sub, &init, cfg, i as u64)?;
            Ok(Dimension {
                tags,
                lake: sub,
                org,
                trace,
            })
        })
        .collect()
}

/// Exact evaluation of every dimension, combined per table.
pub fn evaluate_dimensions(orgs: &[&Organization], theta: f64) -> Result<EvalReport> {
    let reports = orgs
        .iter()
        .map(|o| EvalReport::exact(o, theta))
        .collect::<Result<Vec<_>>>()?;
    Ok(if reports.len() == 1 {
        reports.into_iter().next().unwrap()
    } else {
        EvalReport::combine(&reports)
    })
}

/// Like [`evaluate_dimensions`] but through representative queries.
pub fn evaluate_dimensions_with(
    orgs: &[&Organization],
    query_sets: &[QuerySet],
    theta: f64,
) -> Result<EvalReport> {
    let reports = orgs
        .iter()
        .zip(query_sets)
        .map(|(o, qs)| Ok(EvalReport::new(o, &navmodel::evaluate(o, qs)?, &SimilarityIndex::new(o, theta))))
        .collect::<Result<Vec<_>>>()?;
    Ok(if reports.len() == 1 {
        reports.into_iter().next().unwrap()
    } else {
        EvalReport::combine(&reports)
    })
}

pub fn write_trace(trace: &SearchTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    trace.write_ndjson(&mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_lake, random_organization, rng, RandomOrgSpec};
    use crate::navmodel::evaluate;

    fn spec() -> RandomOrgSpec {
        RandomOrgSpec {
            n_tags: 8,
            n_attributes: 20,
            n_tables: 6,
            ..RandomOrgSpec::default()
        }
    }

    fn exact_cfg() -> SearchConfig {
        SearchConfig {
            use_representatives: false,
            max_iterations: 60,
            plateau_window: 20,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn acceptance_frequency_matches_ratio() {
        let mut r = rng(11);
        let hits = (0..10_000).filter(|_| accept(0.1, 0.2, &mut r)).count();
        assert!((hits as f64 / 10_000.0 - 0.5).abs() <= 0.02, "{hits}");
    }

    #[test]
    fn improvements_and_zero_baselines_always_accepted() {
        let mut r = rng(1);
        for (new, old) in [(0.3, 0.2), (0.2, 0.2), (0.0, 0.0), (0.5, 0.0)] {
            assert!(accept(new, old, &mut r));
        }
        assert!((0..1000).all(|_| !accept(0.0, 0.4, &mut r)));
    }

    #[test]
    fn states_are_ordered_by_level_then_reachability() {
        let org = random_organization(&mut rng(3), &spec());
        let qs = QuerySet::exact(&org);
        let levels = org.levels().unwrap();
        let reach = navmodel::state_reachability(&org, &qs, false).unwrap();
        let order = state_to_modify(&org, &levels, &reach);
        let expected = org.states().filter(|s| !matches!(s.kind, StateKind::Leaf | StateKind::Root)).count();
        assert_eq!(order.len(), expected);
        for w in order.windows(2) {
            let key = |s: StateId| (levels.of(s), reach[s.index()]);
            let (a, b) = (key(w[0]), key(w[1]));
            assert!(a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1), "{a:?} before {b:?}");
        }
    }

    #[test]
    fn add_parent_links_the_most_reachable_state_above() {
        let mut applied = 0;
        for seed in 0..30 {
            let org = random_organization(&mut rng(seed), &spec());
            let qs = QuerySet::exact(&org);
            let levels = org.levels().unwrap();
            let reach = navmodel::state_reachability(&org, &qs, false).unwrap();
            for s in state_to_modify(&org, &levels, &reach) {
                let Some(next) = op_add_parent(&org, &levels, &reach, s) else {
                    continue;
                };
                applied += 1;
                assert!(next.validate().is_empty(), "{:?}", next.validate());
                let added: Vec<StateId> = next
                    .parents(s)
                    .iter()
                    .copied()
                    .filter(|p| !org.parents(s).contains(p))
                    .collect();
                assert_eq!(added.len(), 1);
                let n = added[0];
                let l = levels.of(s);
                assert_eq!(levels.of(n), l - 1);
                let below = org.descendants(s);
                for c in org.states() {
                    if c.kind == StateKind::Interior
                        && levels.get(c.id) == Some(l - 1)
                        && !org.parents(s).contains(&c.id)
                        && !below.contains(&c.id)
                    {
                        assert!(reach[c.id.index()] <= reach[n.index()]);
                    }
                }
                for a in std::iter::once(n).chain(next.ancestors(n)) {
                    assert!(next.state(a).attributes.is_superset(&org.state(s).attributes));
                }
            }
        }
        assert!(applied > 30);
    }

    #[test]
    fn delete_parent_lifts_children_of_eliminated_states() {
        let mut applied = 0;
        for seed in 0..30 {
            let org = random_organization(&mut rng(seed), &spec());
            let qs = QuerySet::exact(&org);
            let levels = org.levels().unwrap();
            let reach = navmodel::state_reachability(&org, &qs, false).unwrap();
            for s in state_to_modify(&org, &levels, &reach) {
                let Some(next) = op_delete_parent(&org, &reach, s) else {
                    continue;
                };
                applied += 1;
                assert!(next.validate().is_empty(), "{:?}", next.validate());
                assert!(next.get(s).is_some());
                let r = org
                    .parents(s)
                    .iter()
                    .copied()
                    .filter(|p| org.state(*p).kind == StateKind::Interior)
                    .min_by(|a, b| reach[a.index()].total_cmp(&reach[b.index()]).then(a.cmp(b)))
                    .unwrap();
                assert!(next.get(r).is_none());
                for e in org.states().filter(|x| next.get(x.id).is_none()) {
                    assert_eq!(e.kind, StateKind::Interior);
                    assert!(e.id == r || e.tags.len() != 1);
                    for &c in &e.children {
                        if next.get(c).is_some() {
                            assert!(!next.parents(c).is_empty());
                        }
                    }
                }
                // single-tag siblings of r survive
                for &g in org.parents(r) {
                    for &sib in org.children(g) {
                        if sib != r && org.state(sib).tags.len() == 1 {
                            assert!(next.get(sib).is_some());
                        }
                    }
                }
            }
        }
        assert!(applied > 30);
    }

    #[test]
    fn pruned_reevaluation_matches_full_evaluation() {
        for seed in 0..20 {
            let org = random_organization(&mut rng(100 + seed), &spec());
            let qs = QuerySet::exact(&org);
            let base = evaluate(&org, &qs).unwrap();
            let levels = org.levels().unwrap();
            let reach = navmodel::state_reachability(&org, &qs, false).unwrap();
            for s in state_to_modify(&org, &levels, &reach) {
                let cands = [
                    op_add_parent(&org, &levels, &reach, s),
                    op_delete_parent(&org, &reach, s),
                ];
                for next in cands.into_iter().flatten() {
                    let affected = affected_subgraph(&org, &next);
                    let (fast, _) = navmodel::reevaluate(&next, &qs, &base, &affected.attributes).unwrap();
                    let full = evaluate(&next, &QuerySet::exact(&next)).unwrap();
                    assert!((fast.effectiveness - full.effectiveness).abs() < 1e-9);
                    for (x, y) in fast.attr_discovery.iter().zip(&full.attr_discovery) {
                        assert!((x.unwrap_or(0.0) - y.unwrap_or(0.0)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn single_tag_lake_keeps_the_initial_organization() {
        let lake = random_lake(&mut rng(5), &RandomOrgSpec { n_tags: 1, ..RandomOrgSpec::default() });
        let init = initial_org(&lake, 10.0).unwrap();
        let (org, trace) = organize(&lake, &init, &exact_cfg()).unwrap();
        assert_eq!(org, init);
        assert_eq!(trace.exit, ExitReason::Plateau);
        assert_eq!(trace.accepted(), 0);
    }

    #[test]
    fn infinite_epsilon_returns_the_initial_organization() {
        let org = random_organization(&mut rng(8), &spec());
        let cfg = SearchConfig {
            plateau_epsilon: f64::INFINITY,
            ..exact_cfg()
        };
        let (best, trace) = organize_with(&org, &cfg, &QuerySet::exact(&org), 0).unwrap();
        assert_eq!(best, org);
        assert_eq!(trace.exit, ExitReason::Plateau);
        assert!(trace.iterations.len() <= cfg.plateau_window);
        assert_eq!(trace.best_effectiveness, trace.initial_effectiveness);
    }

    #[test]
    fn best_seen_is_never_worse_than_init() {
        for seed in 0..10 {
            let org = random_organization(&mut rng(seed), &spec());
            let qs = QuerySet::exact(&org);
            let (best, trace) = organize_with(&org, &exact_cfg(), &qs, 0).unwrap();
            let p = evaluate(&best, &qs).unwrap().effectiveness;
            assert!(p >= trace.initial_effectiveness);
            assert!((p - trace.best_effectiveness).abs() < 1e-12);
            assert!(best.validate().is_empty());
        }
    }

    #[test]
    fn search_is_deterministic() {
        let org = random_organization(&mut rng(9), &spec());
        let qs = QuerySet::exact(&org);
        let cfg = SearchConfig { rng_seed: 4, ..exact_cfg() };
        let (a, ta) = organize_with(&org, &cfg, &qs, 0).unwrap();
        let (b, tb) = organize_with(&org, &cfg, &qs, 0).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.to_file(), b.to_file());
    }

    #[test]
    fn scan_restarts_after_each_accepted_move() {
        let org = random_organization(&mut rng(12), &spec());
        let qs = QuerySet::exact(&org);
        let cfg = exact_cfg();
        let mut search = Search::new(&org, &cfg, &qs, 0).unwrap();
        let mut checked = 0;
        let mut restart = false;
        loop {
            let expected = restart.then(|| {
                let cur = search.current();
                let levels = cur.levels().unwrap();
                let reach = navmodel::state_reachability(cur, &qs, false).unwrap();
                search
                    .order()
                    .iter()
                    .copied()
                    .find(|s| op_add_parent(cur, &levels, &reach, *s).is_some() || op_delete_parent(cur, &reach, *s).is_some())
            });
            let Some(rec) = search.step().unwrap() else {
                assert!(matches!(expected, None | Some(None)));
                break;
            };
            if let Some(e) = expected {
                let e = e.unwrap();
                assert_eq!(rec.state, e);
                checked += 1;
            }
            restart = rec.accepted;
        }
        assert!(checked > 0);
    }

    #[test]
    fn trace_reports_partial_visits() {
        let mut fractions = Vec::new();
        for seed in 0..10 {
            let org = random_organization(&mut rng(200 + seed), &spec());
            let (_, trace) = organize_with(&org, &exact_cfg(), &QuerySet::exact(&org), 0).unwrap();
            fractions.push(trace.mean_visited_attributes());
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!(mean < 1.0, "{fractions:?}");
    }

    #[test]
    fn trace_serializes_one_line_per_iteration() {
        let org = random_organization(&mut rng(13), &spec());
        let (_, trace) = organize_with(&org, &exact_cfg(), &QuerySet::exact(&org), 0).unwrap();
        let mut buf = Vec::new();
        trace.write_ndjson(&mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), trace.iterations.len() + 1);
        assert_eq!(lines.last().unwrap()["iterations"], trace.iterations.len());
    }

    #[test]
    fn tag_partition_covers_every_tag_once() {
        let lake = random_lake(&mut rng(14), &RandomOrgSpec { n_tags: 9, n_attributes: 30, ..RandomOrgSpec::default() });
        let groups = partition_tags(&lake, 3, 0).unwrap();
        assert_eq!(groups.len(), 3);
        let mut all: Vec<&String> = groups.iter().flatten().collect();
        all.sort();
        let tags: Vec<&str> = lake.tags().collect();
        assert_eq!(all.len(), tags.len());
        assert!(all.iter().zip(&tags).all(|(a, b)| a.as_str() == *b));
        assert_eq!(partition_tags(&lake, 3, 0).unwrap(), groups);
        assert!(partition_tags(&lake, 0, 0).is_err());
        assert!(partition_tags(&lake, 10, 0).is_err());
    }

    #[test]
    fn dimensions_organize_disjoint_tag_groups() {
        let lake = random_lake(&mut rng(15), &RandomOrgSpec { n_tags: 8, n_attributes: 40, ..RandomOrgSpec::default() });
        let cfg = SearchConfig { dimensions: 2, ..exact_cfg() };
        let dims = build_multidim(&lake, &cfg).unwrap();
        assert_eq!(dims.len(), 2);
        assert!(dims[0].tags.is_disjoint(&dims[1].tags));
        for d in &dims {
            assert!(d.org.validate().is_empty());
            assert_eq!(d.lake.tags().count(), d.tags.len());
        }
        let orgs: Vec<&Organization> = dims.iter().map(|d| &d.org).collect();
        let report = evaluate_dimensions(&orgs, 0.9).unwrap();
        assert_eq!(report.table_success.len(), lake.tables().len());
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        for bad in [
            SearchConfig { representative_fraction: 0.0, ..SearchConfig::default() },
            SearchConfig { plateau_window: 0, ..SearchConfig::default() },
            SearchConfig { dimensions: 0, ..SearchConfig::default() },
            SearchConfig { gamma: 0.0, ..SearchConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
