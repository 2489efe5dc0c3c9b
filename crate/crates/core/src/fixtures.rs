//! Seeded random lakes and organizations for tests and benchmarks.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::TopicVector;
use crate::lake::{Attribute, DataLake, Table};
use crate::organization::{Organization, StateId, StateKind, Universe, UniverseAttribute};

#[derive(Debug, Clone)]
pub struct RandomOrgSpec {
    pub n_tags: usize,
    pub n_attributes: usize,
    pub n_tables: usize,
    pub dim: usize,
    /// Upper bound on tags per attribute (at least one).
    pub max_tags_per_attribute: usize,
    /// Maximum children per merged interior state.
    pub max_branching: usize,
    /// Extra parent edges added after the tree is built.
    pub extra_edges: usize,
    /// Noise scale around tag centers; large values give unrelated topics.
    pub noise: f64,
    pub gamma: f64,
}

impl Default for RandomOrgSpec {
    fn default() -> Self {
        RandomOrgSpec {
            n_tags: 5,
            n_attributes: 12,
            n_tables: 4,
            dim: 8,
            max_tags_per_attribute: 2,
            max_branching: 3,
            extra_edges: 3,
            noise: 0.6,
            gamma: 10.0,
        }
    }
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Attributes scattered around random tag centers; every tag is used.
pub fn random_universe<R: Rng + ?Sized>(rng: &mut R, spec: &RandomOrgSpec) -> Universe {
    assert!(spec.n_attributes >= spec.n_tags && spec.n_tags > 0);
    let centers: Vec<Vec<f64>> = (0..spec.n_tags).map(|_| gaussian_vector(rng, spec.dim)).collect();
    let attrs = (0..spec.n_attributes)
        .map(|i| {
            // the first n_tags attributes cover every tag once
            let first = if i < spec.n_tags { i } else { rng.random_range(0..spec.n_tags) };
            let extra = rng.random_range(0..spec.max_tags_per_attribute.max(1));
            let mut tags = BTreeSet::from([first]);
            for _ in 0..extra {
                tags.insert(rng.random_range(0..spec.n_tags));
            }
            let mut v = gaussian_vector(rng, spec.dim);
            for (x, c) in v.iter_mut().zip(&centers[first]) {
                *x = c + spec.noise * *x;
            }
            let support = rng.random_range(1..20);
            let mean = crate::vector::normalized(&v).unwrap_or_else(|| vec![1.0; spec.dim]);
            UniverseAttribute {
                id: format!("a{i:03}"),
                table: format!("t{:02}", i % spec.n_tables.max(1)),
                topic: TopicVector { mean, support },
                tags: tags.into_iter().map(|t| format!("tag{t:02}")).collect(),
            }
        })
        .collect();
    Universe::new(spec.dim, attrs)
}

/// A lake with the attributes of [`random_universe`]. Attribute ids are
/// `<table>.<k>` and every attribute holds a single distinct value.
pub fn random_lake<R: Rng + ?Sized>(rng: &mut R, spec: &RandomOrgSpec) -> DataLake {
    let u = random_universe(rng, spec);
    let mut tables: Vec<Table> = Vec::new();
    let mut attrs = Vec::new();
    for i in 0..u.n_attributes() as u32 {
        let tid = u.table_id(u.attribute_table(i)).to_string();
        let t = match tables.iter().position(|t| t.id == tid) {
            Some(t) => t,
            None => {
                tables.push(Table {
                    id: tid.clone(),
                    name: format!("table {tid}"),
                    attribute_ids: Vec::new(),
                    tags: BTreeSet::new(),
                });
                tables.len() - 1
            }
        };
        let id = format!("{tid}.{}", tables[t].attribute_ids.len());
        let tags: BTreeSet<String> = u.attribute_tags(i).iter().map(|&g| u.tag_name(g).to_string()).collect();
        tables[t].attribute_ids.push(id.clone());
        tables[t].tags.extend(tags.iter().cloned());
        attrs.push(Attribute {
            id,
            table_id: tid,
            name: format!("c{i}"),
            values: BTreeSet::from([format!("v{i}")]),
            topic: TopicVector {
                mean: u.attribute_unit(i).to_vec(),
                support: 1,
            },
            tags,
        });
    }
    DataLake::new(tables, attrs).expect("generated lake is consistent")
}

/// A valid organization over a random universe: leaves, tag states, random
/// merges up to the root, then extra parent edges repaired for inclusion.
pub fn random_organization<R: Rng + ?Sized>(rng: &mut R, spec: &RandomOrgSpec) -> Organization {
    let universe = Arc::new(random_universe(rng, spec));
    let mut org = Organization::empty(universe.clone(), spec.gamma);
    let leaves: Vec<StateId> = (0..universe.n_attributes() as u32).map(|a| org.add_leaf(a)).collect();
    let mut frontier: Vec<StateId> = universe
        .tag_members()
        .iter()
        .enumerate()
        .map(|(t, members)| {
            let ls: Vec<StateId> = members.iter().map(|a| leaves[*a as usize]).collect();
            org.add_tag_state(t as u32, &ls)
        })
        .collect();
    while frontier.len() > spec.max_branching.max(2) {
        let k = rng.random_range(2..=spec.max_branching.max(2));
        let mut picked: Vec<usize> = sample(rng, frontier.len(), k).into_vec();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        let group: Vec<StateId> = picked.iter().map(|i| frontier.remove(*i)).collect();
        let s = org.add_union_state(StateKind::Interior, &group);
        frontier.push(s);
    }
    let root = org.add_union_state(StateKind::Root, &frontier);
    org.set_root(root);
    for _ in 0..spec.extra_edges {
        add_random_edge(rng, &mut org);
    }
    org
}

/// Adds one random inclusion-preserving parent edge, if any is possible.
pub fn add_random_edge<R: Rng + ?Sized>(rng: &mut R, org: &mut Organization) -> bool {
    let parents: Vec<StateId> = org
        .states()
        .filter(|s| matches!(s.kind, StateKind::Interior | StateKind::Root))
        .map(|s| s.id)
        .collect();
    let children: Vec<StateId> = org
        .states()
        .filter(|s| matches!(s.kind, StateKind::Interior | StateKind::Tag))
        .map(|s| s.id)
        .collect();
    for _ in 0..50 {
        let n = parents[rng.random_range(0..parents.len())];
        let s = children[rng.random_range(0..children.len())];
        if n == s || org.children(n).contains(&s) || org.descendants(s).contains(&n) {
            continue;
        }
        org.add_edge(n, s);
        let st = org.state(s);
        let (attrs, tags) = (st.attributes.clone(), st.tags.clone());
        org.grow_ancestors(n, &attrs, &tags);
        return true;
    }
    false
}

/// Convenience: a seeded ChaCha generator.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
