//! Organizations: rooted DAGs of attribute sets used for navigation.
//!
//! Leaves hold a single attribute, tag states gather the attributes of one
//! tag, and interior states hold unions of their children. States live in an
//! arena addressed by [`StateId`]; removed states leave a hole so ids stay
//! stable while the optimizer edits the graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::TopicVector;
use crate::error::{Error, Result};
use crate::lake::DataLake;
use crate::vector::add_scaled;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Root,
    Interior,
    Tag,
    Leaf,
}

/// One attribute as seen by an organization.
#[derive(Debug, Clone)]
pub struct UniverseAttribute {
    pub id: String,
    pub table: String,
    pub topic: TopicVector,
    pub tags: Vec<String>,
}

/// Attribute ids, topic vectors, tables and tag names an organization
/// refers to by index.
#[derive(Debug, Clone)]
pub struct Universe {
    attr_ids: Vec<String>,
    topics: Vec<TopicVector>,
    sums: Vec<Vec<f64>>,
    units: Vec<Vec<f64>>,
    tags: Vec<String>,
    tag_pos: HashMap<String, u32>,
    attr_pos: HashMap<String, u32>,
    attr_tags: Vec<Vec<u32>>,
    tables: Vec<String>,
    attr_table: Vec<u32>,
    dim: usize,
}

impl Universe {
    pub fn new(dim: usize, attrs: Vec<UniverseAttribute>) -> Self {
        let tags: BTreeSet<String> = attrs.iter().flat_map(|a| a.tags.iter().cloned()).collect();
        let tags: Vec<String> = tags.into_iter().collect();
        let tag_pos: HashMap<String, u32> =
            tags.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut u = Universe {
            attr_ids: Vec::with_capacity(attrs.len()),
            topics: Vec::with_capacity(attrs.len()),
            sums: Vec::with_capacity(attrs.len()),
            units: Vec::with_capacity(attrs.len()),
            tags,
            tag_pos,
            attr_pos: HashMap::with_capacity(attrs.len()),
            attr_tags: Vec::with_capacity(attrs.len()),
            tables: Vec::new(),
            attr_table: Vec::with_capacity(attrs.len()),
            dim,
        };
        let mut table_pos: HashMap<String, u32> = HashMap::new();
        for (i, a) in attrs.into_iter().enumerate() {
            assert_eq!(a.topic.dim(), dim, "attribute '{}' has the wrong dimension", a.id);
            let next = u.tables.len() as u32;
            let t = *table_pos.entry(a.table.clone()).or_insert_with(|| {
                u.tables.push(a.table.clone());
                next
            });
            u.attr_table.push(t);
            u.attr_pos.insert(a.id.clone(), i as u32);
            u.attr_ids.push(a.id);
            u.sums.push(a.topic.sum());
            u.units.push(a.topic.unit().unwrap_or_default());
            u.topics.push(a.topic);
            let mut t: Vec<u32> = a.tags.iter().map(|g| u.tag_pos[g]).collect();
            t.sort_unstable();
            t.dedup();
            u.attr_tags.push(t);
        }
        u
    }

    pub fn from_lake(lake: &DataLake) -> Self {
        Universe::new(
            lake.dim(),
            lake.attributes()
                .iter()
                .map(|a| UniverseAttribute {
                    id: a.id.clone(),
                    table: a.table_id.clone(),
                    topic: a.topic.clone(),
                    tags: a.tags.iter().cloned().collect(),
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_attributes(&self) -> usize {
        self.attr_ids.len()
    }
    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }
    pub fn attribute_id(&self, a: u32) -> &str {
        &self.attr_ids[a as usize]
    }
    pub fn attribute_topic(&self, a: u32) -> &TopicVector {
        &self.topics[a as usize]
    }
    /// Unit direction of the attribute's topic; empty when uncovered.
    pub fn attribute_unit(&self, a: u32) -> &[f64] {
        &self.units[a as usize]
    }
    pub fn attribute_table(&self, a: u32) -> u32 {
        self.attr_table[a as usize]
    }
    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }
    pub fn table_id(&self, t: u32) -> &str {
        &self.tables[t as usize]
    }
    pub fn attribute_tags(&self, a: u32) -> &[u32] {
        &self.attr_tags[a as usize]
    }
    pub fn attribute_index(&self, id: &str) -> Option<u32> {
        self.attr_pos.get(id).copied()
    }
    pub fn tag_name(&self, t: u32) -> &str {
        &self.tags[t as usize]
    }
    pub fn tag_index(&self, name: &str) -> Option<u32> {
        self.tag_pos.get(name).copied()
    }

    /// Attributes associated with each tag.
    pub fn tag_members(&self) -> Vec<Vec<u32>> {
        let mut m = vec![Vec::new(); self.tags.len()];
        for (a, tags) in self.attr_tags.iter().enumerate() {
            for &t in tags {
                m[t as usize].push(a as u32);
            }
        }
        m
    }

    /// Topic vector of a union of attributes, weighted by support.
    pub fn topic_of<'a>(&self, attrs: impl IntoIterator<Item = &'a u32>) -> TopicVector {
        let mut sum = vec![0.0; self.dim];
        let mut support = 0;
        for &a in attrs {
            add_scaled(&mut sum, &self.sums[a as usize], 1.0);
            support += self.topics[a as usize].support;
        }
        TopicVector::from_sum(&sum, support)
    }
}

#[derive(Debug, Clone)]
pub struct State {
    pub id: StateId,
    pub kind: StateKind,
    /// Tag indices (`M_s`).
    pub tags: BTreeSet<u32>,
    /// Attribute indices (`D_s`).
    pub attributes: BTreeSet<u32>,
    pub topic: TopicVector,
    /// Unit direction of `topic`; empty when the topic is uncovered.
    pub unit: Vec<f64>,
    /// Sorted by id.
    pub children: Vec<StateId>,
    /// Sorted by id.
    pub parents: Vec<StateId>,
}

impl State {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A rooted DAG over attribute sets, with the transition sharpness `gamma`.
#[derive(Debug, Clone)]
pub struct Organization {
    gamma: f64,
    root: StateId,
    states: Vec<Option<State>>,
    universe: Arc<Universe>,
}

/// Structural equality: ids, kinds, member sets and edges. Topic vectors are
/// derived from the member sets and are not compared.
impl PartialEq for Organization {
    fn eq(&self, other: &Self) -> bool {
        self.gamma == other.gamma
            && self.root == other.root
            && self.states.len() == other.states.len()
            && self.states.iter().zip(&other.states).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.id == b.id
                        && a.kind == b.kind
                        && a.tags == b.tags
                        && a.attributes == b.attributes
                        && a.children == b.children
                        && a.parents == b.parents
                }
                _ => false,
            })
    }
}

impl Organization {
    /// An organization holding only a root placeholder; use the raw builders
    /// below and [`Organization::set_root`] to assemble a graph.
    pub fn empty(universe: Arc<Universe>, gamma: f64) -> Self {
        Organization {
            gamma,
            root: StateId(0),
            states: Vec::new(),
            universe,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
    }

    pub fn root(&self) -> StateId {
        self.root
    }

    pub fn universe(&self) -> &Arc<Universe> {
        &self.universe
    }

    /// Arena size, including removed slots.
    pub fn capacity(&self) -> usize {
        self.states.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.iter().flatten().count()
    }

    pub fn get(&self, id: StateId) -> Option<&State> {
        self.states.get(id.index()).and_then(Option::as_ref)
    }

    pub fn state(&self, id: StateId) -> &State {
        self.get(id)
            .unwrap_or_else(|| panic!("state {id} does not exist"))
    }

    pub fn states(&self) -> impl Iterator<Item = &State> {
        self.states.iter().flatten()
    }

    pub fn ids(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states().map(|s| s.id)
    }

    pub fn children(&self, id: StateId) -> &[StateId] {
        &self.state(id).children
    }

    pub fn parents(&self, id: StateId) -> &[StateId] {
        &self.state(id).parents
    }

    pub fn leaves(&self) -> impl Iterator<Item = &State> {
        self.states().filter(|s| s.kind == StateKind::Leaf)
    }

    /// Attribute index → leaf holding it.
    pub fn leaf_index(&self) -> Vec<Option<StateId>> {
        let mut out = vec![None; self.universe.n_attributes()];
        for s in self.leaves() {
            if let Some(&a) = s.attributes.iter().next() {
                out[a as usize] = Some(s.id);
            }
        }
        out
    }

    pub fn leaf_of(&self, attr: u32) -> Option<StateId> {
        self.leaves()
            .find(|s| s.attributes.len() == 1 && s.attributes.contains(&attr))
            .map(|s| s.id)
    }

    /// Attributes organized by this organization (those with a leaf).
    pub fn organized_attributes(&self) -> BTreeSet<u32> {
        self.leaves().flat_map(|s| s.attributes.iter().copied()).collect()
    }

    // ---- raw construction and mutation -------------------------------------
    //
    // These maintain parent/child symmetry but not the inclusion property or
    // topic vectors; callers finish with `refresh_topic`/`refresh_all`.

    fn push(&mut self, kind: StateKind, tags: BTreeSet<u32>, attributes: BTreeSet<u32>) -> StateId {
        let id = StateId(self.states.len() as u32);
        let topic = self.universe.topic_of(&attributes);
        let unit = topic.unit().unwrap_or_default();
        self.states.push(Some(State {
            id,
            kind,
            tags,
            attributes,
            topic,
            unit,
            children: Vec::new(),
            parents: Vec::new(),
        }));
        id
    }

    /// Adds a leaf for attribute `attr`.
    pub fn add_leaf(&mut self, attr: u32) -> StateId {
        let tags = self.universe.attribute_tags(attr).iter().copied().collect();
        self.push(StateKind::Leaf, tags, BTreeSet::from([attr]))
    }

    /// Adds a tag state for `tag` over the given leaves.
    pub fn add_tag_state(&mut self, tag: u32, leaves: &[StateId]) -> StateId {
        let attrs = leaves
            .iter()
            .flat_map(|l| self.state(*l).attributes.iter().copied())
            .collect();
        let id = self.push(StateKind::Tag, BTreeSet::from([tag]), attrs);
        for &l in leaves {
            self.add_edge(id, l);
        }
        id
    }

    /// Adds a state whose members are the union of its children's.
    pub fn add_union_state(&mut self, kind: StateKind, children: &[StateId]) -> StateId {
        let mut tags = BTreeSet::new();
        let mut attrs = BTreeSet::new();
        for c in children {
            let c = self.state(*c);
            tags.extend(c.tags.iter().copied());
            attrs.extend(c.attributes.iter().copied());
        }
        let id = self.push(kind, tags, attrs);
        for &c in children {
            self.add_edge(id, c);
        }
        id
    }

    pub fn set_root(&mut self, root: StateId) {
        self.root = root;
    }

    pub fn state_mut(&mut self, id: StateId) -> &mut State {
        self.states[id.index()]
            .as_mut()
            .unwrap_or_else(|| panic!("state {id} does not exist"))
    }

    /// Adds `parent → child`; returns false if the edge already existed.
    pub fn add_edge(&mut self, parent: StateId, child: StateId) -> bool {
        let p = self.state_mut(parent);
        match p.children.binary_search(&child) {
            Ok(_) => return false,
            Err(pos) => p.children.insert(pos, child),
        }
        let c = self.state_mut(child);
        if let Err(pos) = c.parents.binary_search(&parent) {
            c.parents.insert(pos, parent);
        }
        true
    }

    pub fn remove_edge(&mut self, parent: StateId, child: StateId) {
        let p = self.state_mut(parent);
        if let Ok(pos) = p.children.binary_search(&child) {
            p.children.remove(pos);
        }
        let c = self.state_mut(child);
        if let Ok(pos) = c.parents.binary_search(&parent) {
            c.parents.remove(pos);
        }
    }

    /// Detaches and removes a state.
    pub fn remove_state(&mut self, id: StateId) {
        let s = self.state(id).clone();
        for p in s.parents {
            self.remove_edge(p, id);
        }
        for c in s.children {
            self.remove_edge(id, c);
        }
        self.states[id.index()] = None;
    }

    /// Recomputes the topic vector of `id` from its member attributes.
    pub fn refresh_topic(&mut self, id: StateId) {
        let topic = self.universe.topic_of(&self.state(id).attributes);
        let s = self.state_mut(id);
        s.unit = topic.unit().unwrap_or_default();
        s.topic = topic;
    }

    /// Re-derives `D_s`, `M_s` and topics of every non-leaf, non-tag state
    /// bottom-up from the children.
    pub fn refresh_all(&mut self) -> Result<()> {
        let order = self.topo_order()?;
        for &id in order.iter().rev() {
            let s = self.state(id);
            if matches!(s.kind, StateKind::Leaf) {
                continue;
            }
            let mut attrs = BTreeSet::new();
            let mut tags = BTreeSet::new();
            for c in &s.children {
                let c = self.state(*c);
                attrs.extend(c.attributes.iter().copied());
                if s.kind != StateKind::Tag {
                    tags.extend(c.tags.iter().copied());
                }
            }
            let s = self.state_mut(id);
            s.attributes = attrs;
            if s.kind != StateKind::Tag {
                s.tags = tags;
            }
            self.refresh_topic(id);
        }
        Ok(())
    }

    /// Adds `attrs` and `tags` to `from` and every ancestor of it that lacks
    /// them (tag states keep their single tag). Returns the states that grew,
    /// with refreshed topics.
    pub fn grow_ancestors(
        &mut self,
        from: StateId,
        attrs: &BTreeSet<u32>,
        tags: &BTreeSet<u32>,
    ) -> Vec<StateId> {
        let mut grown = Vec::new();
        for id in self.ancestors(from) {
            let s = self.state_mut(id);
            let before = s.attributes.len();
            s.attributes.extend(attrs.iter().copied());
            let grew_attrs = s.attributes.len() != before;
            if s.kind != StateKind::Tag {
                s.tags.extend(tags.iter().copied());
            }
            if grew_attrs {
                self.refresh_topic(id);
                grown.push(id);
            }
        }
        grown
    }

    // ---- graph queries ------------------------------------------------------

    /// States in topological order (parents first), ties broken by id.
    pub fn topo_order(&self) -> Result<Vec<StateId>> {
        let mut indeg = vec![0usize; self.states.len()];
        for s in self.states() {
            indeg[s.id.index()] = s.parents.len();
        }
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<StateId>> = self
            .states()
            .filter(|s| s.parents.is_empty())
            .map(|s| std::cmp::Reverse(s.id))
            .collect();
        let mut order = Vec::with_capacity(self.n_states());
        while let Some(std::cmp::Reverse(id)) = ready.pop() {
            order.push(id);
            for &c in &self.state(id).children {
                indeg[c.index()] -= 1;
                if indeg[c.index()] == 0 {
                    ready.push(std::cmp::Reverse(c));
                }
            }
        }
        if order.len() != self.n_states() {
            return Err(Error::InvalidOrganization("organization contains a cycle".into()));
        }
        Ok(order)
    }

    /// Shortest discovery-path length from the root to every state.
    pub fn levels(&self) -> Result<Levels> {
        let mut level = vec![u32::MAX; self.states.len()];
        let mut queue = VecDeque::from([self.root]);
        level[self.root.index()] = 0;
        while let Some(id) = queue.pop_front() {
            let next = level[id.index()] + 1;
            for &c in &self.state(id).children {
                if level[c.index()] == u32::MAX {
                    level[c.index()] = next;
                    queue.push_back(c);
                }
            }
        }
        if let Some(s) = self.states().find(|s| level[s.id.index()] == u32::MAX) {
            return Err(Error::InvalidOrganization(format!(
                "state {} is unreachable from the root",
                s.id
            )));
        }
        Ok(Levels(level))
    }

    /// All states reachable from `id`, including `id`.
    pub fn descendants(&self, id: StateId) -> BTreeSet<StateId> {
        self.closure(std::iter::once(id), |s| &s.children)
    }

    /// All states from which `id` is reachable, including `id`.
    pub fn ancestors(&self, id: StateId) -> BTreeSet<StateId> {
        self.closure(std::iter::once(id), |s| &s.parents)
    }

    pub(crate) fn closure<I, F>(&self, start: I, next: F) -> BTreeSet<StateId>
    where
        I: IntoIterator<Item = StateId>,
        F: Fn(&State) -> &Vec<StateId>,
    {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<StateId> = start.into_iter().collect();
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                stack.extend(next(self.state(id)).iter().copied());
            }
        }
        seen
    }

    // ---- invariants -----------------------------------------------------------

    /// Every violated structural invariant; empty iff the organization is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let roots: Vec<StateId> = self
            .states()
            .filter(|s| s.parents.is_empty())
            .map(|s| s.id)
            .collect();
        match self.get(self.root) {
            None => out.push(Violation::MissingRoot),
            Some(r) => {
                if !r.parents.is_empty() {
                    out.push(Violation::RootHasParents);
                }
                if r.kind != StateKind::Root {
                    out.push(Violation::WrongKind {
                        state: r.id,
                        detail: "root state is not of kind root".into(),
                    });
                }
            }
        }
        if roots.len() > 1 {
            out.push(Violation::MultipleRoots(roots));
        }
        let structural = out.len();
        for s in self.states() {
            for &c in &s.children {
                match self.get(c) {
                    None => out.push(Violation::Dangling { state: s.id, missing: c }),
                    Some(cs) if cs.parents.binary_search(&s.id).is_err() => {
                        out.push(Violation::AsymmetricEdge { parent: s.id, child: c })
                    }
                    _ => {}
                }
            }
            for &p in &s.parents {
                match self.get(p) {
                    None => out.push(Violation::Dangling { state: s.id, missing: p }),
                    Some(ps) if ps.children.binary_search(&s.id).is_err() => {
                        out.push(Violation::AsymmetricEdge { parent: p, child: s.id })
                    }
                    _ => {}
                }
            }
        }
        if out.len() > structural {
            return out;
        }
        if self.topo_order().is_err() {
            out.push(Violation::Cycle);
            return out;
        }
        if let Err(Error::InvalidOrganization(msg)) = self.levels() {
            out.push(Violation::Unreachable(msg));
        }
        let mut seen_attr: HashMap<u32, StateId> = HashMap::new();
        for s in self.states() {
            let leaf_shape = s.children.is_empty();
            if leaf_shape != (s.kind == StateKind::Leaf) || (leaf_shape && s.attributes.len() != 1) {
                out.push(Violation::WrongKind {
                    state: s.id,
                    detail: format!(
                        "kind {:?} with {} children and {} attributes",
                        s.kind,
                        s.children.len(),
                        s.attributes.len()
                    ),
                });
            }
            match s.kind {
                StateKind::Leaf => {
                    if let Some(&a) = s.attributes.iter().next() {
                        if let Some(prev) = seen_attr.insert(a, s.id) {
                            out.push(Violation::DuplicateLeaf {
                                attribute: self.universe.attribute_id(a).to_string(),
                                leaves: (prev, s.id),
                            });
                        }
                    }
                    for &p in &s.parents {
                        if self.state(p).kind != StateKind::Tag {
                            out.push(Violation::LeafParentNotTag { leaf: s.id, parent: p });
                        }
                    }
                }
                StateKind::Tag => {
                    if s.tags.len() != 1 {
                        out.push(Violation::WrongKind {
                            state: s.id,
                            detail: format!("tag state with {} tags", s.tags.len()),
                        });
                    }
                    if s.children.iter().any(|c| self.state(*c).kind != StateKind::Leaf) {
                        out.push(Violation::WrongKind {
                            state: s.id,
                            detail: "tag state with a non-leaf child".into(),
                        });
                    }
                }
                StateKind::Interior | StateKind::Root => {
                    let tags: BTreeSet<u32> = s
                        .children
                        .iter()
                        .flat_map(|c| self.state(*c).tags.iter().copied())
                        .collect();
                    if tags != s.tags {
                        out.push(Violation::TagMismatch(s.id));
                    }
                }
            }
            if !leaf_shape {
                let union: BTreeSet<u32> = s
                    .children
                    .iter()
                    .flat_map(|c| self.state(*c).attributes.iter().copied())
                    .collect();
                if union != s.attributes {
                    out.push(Violation::Inclusion(s.id));
                }
            }
            let support: usize = s
                .attributes
                .iter()
                .map(|a| self.universe.attribute_topic(*a).support)
                .sum();
            if support != s.topic.support {
                out.push(Violation::StaleTopic(s.id));
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    // ---- serialization ------------------------------------------------------

    /// Children in presentation order: descending attribute count, then id.
    pub fn ordered_children(&self, id: StateId) -> Vec<StateId> {
        let mut ch = self.state(id).children.clone();
        ch.sort_by(|a, b| {
            self.state(*b)
                .attributes
                .len()
                .cmp(&self.state(*a).attributes.len())
                .then(a.cmp(b))
        });
        ch
    }

    pub fn to_file(&self) -> OrganizationFile {
        OrganizationFile {
            gamma: self.gamma,
            root: self.root.0,
            states: self
                .states()
                .map(|s| StateRecord {
                    id: s.id.0,
                    kind: s.kind,
                    tags: s.tags.iter().map(|t| self.universe.tag_name(*t).to_string()).collect(),
                    attributes: s
                        .attributes
                        .iter()
                        .map(|a| self.universe.attribute_id(*a).to_string())
                        .collect(),
                    children: self.ordered_children(s.id).into_iter().map(|c| c.0).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds an organization from its file form; topic vectors are derived
    /// from the lake.
    pub fn from_file(file: &OrganizationFile, lake: &DataLake) -> Result<Self> {
        let universe = Arc::new(Universe::from_lake(lake));
        let invalid = |m: String| Error::InvalidOrganization(m);
        let cap = file.states.iter().map(|s| s.id as usize + 1).max().unwrap_or(0);
        let mut states: Vec<Option<State>> = vec![None; cap];
        for r in &file.states {
            if states[r.id as usize].is_some() {
                return Err(invalid(format!("duplicate state id {}", r.id)));
            }
            let tags = r
                .tags
                .iter()
                .map(|t| {
                    universe
                        .tag_index(t)
                        .ok_or_else(|| invalid(format!("state {} names unknown tag '{t}'", r.id)))
                })
                .collect::<Result<BTreeSet<u32>>>()?;
            let attributes = r
                .attributes
                .iter()
                .map(|a| {
                    universe.attribute_index(a).ok_or_else(|| {
                        invalid(format!("state {} names unknown attribute '{a}'", r.id))
                    })
                })
                .collect::<Result<BTreeSet<u32>>>()?;
            states[r.id as usize] = Some(State {
                id: StateId(r.id),
                kind: r.kind,
                tags,
                attributes,
                topic: TopicVector::uncovered(universe.dim()),
                unit: Vec::new(),
                children: Vec::new(),
                parents: Vec::new(),
            });
        }
        let mut org = Organization {
            gamma: file.gamma,
            root: StateId(file.root),
            states,
            universe,
        };
        if org.get(org.root).is_none() {
            return Err(invalid(format!("root {} is not a state", file.root)));
        }
        for r in &file.states {
            for &c in &r.children {
                if org.get(StateId(c)).is_none() {
                    return Err(invalid(format!("state {} has dangling child {c}", r.id)));
                }
                org.add_edge(StateId(r.id), StateId(c));
            }
        }
        let ids: Vec<StateId> = org.ids().collect();
        for id in ids {
            org.refresh_topic(id);
        }
        Ok(org)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &self.to_file())?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, lake: &DataLake) -> Result<Self> {
        Organization::from_file(&OrganizationFile::read(path)?, lake)
    }
}

/// Level (shortest path length from the root) per state id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Levels(Vec<u32>);

impl Levels {
    pub fn get(&self, id: StateId) -> Option<u32> {
        self.0.get(id.index()).copied().filter(|l| *l != u32::MAX)
    }

    pub fn of(&self, id: StateId) -> u32 {
        self.get(id).expect("state has a level")
    }

    pub fn max_level(&self) -> u32 {
        self.0.iter().copied().filter(|l| *l != u32::MAX).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingRoot,
    RootHasParents,
    MultipleRoots(Vec<StateId>),
    Dangling { state: StateId, missing: StateId },
    AsymmetricEdge { parent: StateId, child: StateId },
    Cycle,
    Unreachable(String),
    WrongKind { state: StateId, detail: String },
    LeafParentNotTag { leaf: StateId, parent: StateId },
    DuplicateLeaf { attribute: String, leaves: (StateId, StateId) },
    Inclusion(StateId),
    TagMismatch(StateId),
    StaleTopic(StateId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingRoot => write!(f, "root state is missing"),
            Violation::RootHasParents => write!(f, "root has parents"),
            Violation::MultipleRoots(r) => write!(f, "multiple parentless states: {r:?}"),
            Violation::Dangling { state, missing } => {
                write!(f, "state {state} references missing state {missing}")
            }
            Violation::AsymmetricEdge { parent, child } => {
                write!(f, "edge {parent} -> {child} is not mirrored")
            }
            Violation::Cycle => write!(f, "graph contains a cycle"),
            Violation::Unreachable(m) => write!(f, "{m}"),
            Violation::WrongKind { state, detail } => write!(f, "state {state}: {detail}"),
            Violation::LeafParentNotTag { leaf, parent } => {
                write!(f, "leaf {leaf} has non-tag parent {parent}")
            }
            Violation::DuplicateLeaf { attribute, leaves } => {
                write!(f, "attribute {attribute} has leaves {} and {}", leaves.0, leaves.1)
            }
            Violation::Inclusion(s) => {
                write!(f, "state {s}: attributes differ from the union of its children")
            }
            Violation::TagMismatch(s) => {
                write!(f, "state {s}: tags differ from the union of its children")
            }
            Violation::StaleTopic(s) => write!(f, "state {s}: topic vector is out of date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganizationFile {
    pub gamma: f64,
    pub root: u32,
    pub states: Vec<StateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: u32,
    pub kind: StateKind,
    pub tags: Vec<String>,
    pub attributes: Vec<String>,
    pub children: Vec<u32>,
}

impl OrganizationFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// The tags the organization covers, i.e. the root's.
    pub fn tags(&self) -> BTreeSet<String> {
        self.states
            .iter()
            .find(|s| s.id == self.root)
            .map(|s| s.tags.iter().cloned().collect())
            .unwrap_or_default()
    }
}

/// Loads an organization over the part of `lake` it covers: attributes with
/// one of its tags, their tag sets narrowed to those. This is how a single
/// dimension of a multi-dimensional build is read back.
pub fn load_organization(path: &Path, lake: &DataLake) -> Result<(Organization, DataLake)> {
    let file = OrganizationFile::read(path)?;
    let sub = lake.restrict_to_tags(&file.tags());
    let org = Organization::from_file(&file, &sub)?;
    Ok((org, sub))
}

// ---- builders ----------------------------------------------------------------

/// Leaves for every tagged attribute plus one tag state per tag.
fn leaves_and_tag_states(org: &mut Organization) -> Vec<StateId> {
    let u = org.universe.clone();
    let mut leaf = vec![None; u.n_attributes()];
    for a in 0..u.n_attributes() as u32 {
        if !u.attribute_tags(a).is_empty() {
            leaf[a as usize] = Some(org.add_leaf(a));
        }
    }
    u.tag_members()
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(t, members)| {
            let leaves: Vec<StateId> = members.iter().filter_map(|a| leaf[*a as usize]).collect();
            org.add_tag_state(t as u32, &leaves)
        })
        .collect()
}

/// Root → one tag state per tag → attribute leaves.
pub fn flat_org(lake: &DataLake, gamma: f64) -> Result<Organization> {
    if lake.n_tags() == 0 {
        return Err(Error::Tagless);
    }
    let mut org = Organization::empty(Arc::new(Universe::from_lake(lake)), gamma);
    let tag_states = leaves_and_tag_states(&mut org);
    let root = org.add_union_state(StateKind::Root, &tag_states);
    org.set_root(root);
    Ok(org)
}

/// Binary merge tree over tag states built by average-linkage agglomerative
/// clustering under cosine distance. Lakes with a single tag get the flat
/// organization.
pub fn initial_org(lake: &DataLake, gamma: f64) -> Result<Organization> {
    if lake.n_tags() < 2 {
        return flat_org(lake, gamma);
    }
    let mut org = Organization::empty(Arc::new(Universe::from_lake(lake)), gamma);
    let tag_states = leaves_and_tag_states(&mut org);
    let units: Vec<Vec<f64>> = tag_states.iter().map(|s| org.state(*s).unit.clone()).collect();
    let merges = average_linkage(&units);
    let mut cluster_state: Vec<StateId> = tag_states;
    let last = merges.len() - 1;
    for (i, (a, b)) in merges.into_iter().enumerate() {
        let kind = if i == last { StateKind::Root } else { StateKind::Interior };
        let s = org.add_union_state(kind, &[cluster_state[a], cluster_state[b]]);
        cluster_state.push(s);
    }
    org.set_root(*cluster_state.last().expect("at least one merge"));
    Ok(org)
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Points are unit vectors. Returns the merge sequence as pairs of cluster
/// ids, where ids `0..n` are the points and merge `i` creates cluster `n + i`.
/// The closest pair is merged first; ties go to the lowest cluster ids.
pub fn average_linkage(units: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = units.len();
    if n < 2 {
        return Vec::new();
    }
    // dist[i][j] for active clusters, indexed by slot; slot i holds cluster id ids[i]
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 1.0 - crate::vector::dot(&units[i], &units[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                let (lo, hi) = if ids[i] < ids[j] { (ids[i], ids[j]) } else { (ids[j], ids[i]) };
                let cand = (dist[i][j], lo, hi, i, j);
                let better = match best {
                    None => true,
                    Some(b) => (cand.0, cand.1, cand.2) < (b.0, b.1, b.2),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (_, lo, hi, i, j) = best.expect("two active clusters");
        merges.push((lo, hi));
        // merged cluster lives in slot i
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let d = (si * dist[i][k] + sj * dist[j][k]) / (si + sj);
                dist[i][k] = d;
                dist[k][i] = d;
            }
        }
        size[i] += size[j];
        active[j] = false;
        ids[i] = n + step;
    }
    merges
}

// ---- labels -------------------------------------------------------------------

/// Display labels for every state.
///
/// Leaves show their table name, tag states their tag, the root "root", and
/// other states the two most frequent tags among their attributes, skipping
/// a second tag that shares a child label with the first when another exists.
pub fn labels(org: &Organization, lake: &DataLake) -> Result<BTreeMap<StateId, String>> {
    let order = org.topo_order()?;
    let u = org.universe();
    // label tag sets, so parents can test "same child label"
    let mut label_tags: HashMap<StateId, Vec<u32>> = HashMap::new();
    let mut out = BTreeMap::new();
    for &id in order.iter().rev() {
        let s = org.state(id);
        let (text, tags) = match s.kind {
            StateKind::Leaf => {
                let attr = *s.attributes.iter().next().expect("leaf has an attribute");
                let name = lake
                    .attribute_index(u.attribute_id(attr))
                    .map(|i| lake.tables()[lake.table_of(i)].name.clone())
                    .unwrap_or_else(|| u.attribute_id(attr).to_string());
                (name, Vec::new())
            }
            StateKind::Tag => {
                let t: Vec<u32> = s.tags.iter().copied().collect();
                (t.iter().map(|t| u.tag_name(*t)).collect::<Vec<_>>().join(", "), t)
            }
            StateKind::Root => ("root".to_string(), Vec::new()),
            StateKind::Interior => {
                let picked = pick_label_tags(org, s, &label_tags);
                let text = picked.iter().map(|t| u.tag_name(*t)).collect::<Vec<_>>().join(", ");
                (text, picked)
            }
        };
        label_tags.insert(id, tags);
        out.insert(id, text);
    }
    Ok(out)
}

pub fn label(org: &Organization, id: StateId, lake: &DataLake) -> Result<String> {
    labels(org, lake)?
        .remove(&id)
        .ok_or_else(|| Error::NotFound {
            kind: "state",
            id: id.to_string(),
        })
}

fn pick_label_tags(
    org: &Organization,
    s: &State,
    child_labels: &HashMap<StateId, Vec<u32>>,
) -> Vec<u32> {
    let u = org.universe();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &a in &s.attributes {
        for &t in u.attribute_tags(a) {
            if s.tags.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| u.tag_name(a.0).cmp(u.tag_name(b.0)))
    });
    let Some(&(first, _)) = ranked.first() else {
        return Vec::new();
    };
    let same_child = |t: u32| {
        s.children.iter().any(|c| {
            child_labels
                .get(c)
                .is_some_and(|l| l.contains(&first) && l.contains(&t))
        })
    };
    let second = ranked[1..]
        .iter()
        .map(|(t, _)| *t)
        .find(|t| !same_child(*t))
        .or_else(|| ranked.get(1).map(|(t, _)| *t));
    std::iter::once(first).chain(second).collect()
}
