//! Approximate evaluation through attribute representatives, error bounds
//! on approximated transitions, and the staleness check for changed lakes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, TopicVector};
use crate::error::{Error, Result};
use crate::kmedoids::{kmedoids, DistMatrix};
use crate::lake::DataLake;
use crate::navmodel::{self, Evaluation, QuerySet, QueryTopic};
use crate::organization::{Organization, StateId};
use crate::vector::dot;

/// Seed of the farthest-point initialization used for representatives.
const REPRESENTATIVE_SEED: u64 = 0;
const MAX_SWAP_PASSES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepBlock {
    pub rep_attribute_id: String,
    pub members: Vec<String>,
}

/// A partition of the tagged attributes, each block summarized by one
/// member (its medoid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representatives {
    pub fraction: f64,
    pub blocks: Vec<RepBlock>,
}

impl Representatives {
    /// Attribute id → representative attribute id.
    pub fn assignment(&self) -> BTreeMap<&str, &str> {
        self.blocks
            .iter()
            .flat_map(|b| b.members.iter().map(move |m| (m.as_str(), b.rep_attribute_id.as_str())))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Queries for evaluating `org`: one per block, in the direction of its
    /// representative's topic.
    pub fn query_set(&self, org: &Organization) -> Result<QuerySet> {
        let u = org.universe();
        let index = |id: &str| {
            u.attribute_index(id).ok_or_else(|| Error::NotFound {
                kind: "attribute",
                id: id.to_string(),
            })
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let rep = index(&b.rep_attribute_id)?;
            let members = b.members.iter().map(|m| index(m)).collect::<Result<Vec<u32>>>()?;
            blocks.push((u.attribute_unit(rep).to_vec(), members));
        }
        Ok(QuerySet::from_blocks(org, blocks))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Number of blocks for a fraction of `n` attributes, `⌈fraction·n⌉`.
pub fn representative_count(n: usize, fraction: f64) -> usize {
    // guard against 0.1·2650 = 265.00000000000003
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1.min(n), n)
}

/// k-medoids blocks over the topic vectors of the lake's tagged attributes.
pub fn select_representatives(lake: &DataLake, fraction: f64) -> Result<Representatives> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "representative fraction must be in (0, 1], got {fraction}"
        )));
    }
    let attrs: Vec<usize> = (0..lake.attributes().len())
        .filter(|i| !lake.attribute(*i).tags.is_empty())
        .collect();
    let id = |i: usize| lake.attribute(i).id.clone();
    let k = representative_count(attrs.len(), fraction);
    if k == attrs.len() {
        return Ok(Representatives {
            fraction,
            blocks: attrs
                .iter()
                .map(|&i| RepBlock {
                    rep_attribute_id: id(i),
                    members: vec![id(i)],
                })
                .collect(),
        });
    }
    let units: Vec<Vec<f64>> = attrs
        .iter()
        .map(|&i| lake.attribute(i).topic.unit().unwrap_or_default())
        .collect();
    let clustering = kmedoids(&DistMatrix::cosine(&units), k, REPRESENTATIVE_SEED, MAX_SWAP_PASSES)?;
    let mut blocks: Vec<(usize, RepBlock)> = clustering
        .members()
        .into_iter()
        .zip(&clustering.medoids)
        .map(|(members, &m)| {
            (
                attrs[m],
                RepBlock {
                    rep_attribute_id: id(attrs[m]),
                    members: members.into_iter().map(|p| id(attrs[p])).collect(),
                },
            )
        })
        .collect();
    blocks.sort_by_key(|(rep, _)| *rep);
    Ok(Representatives {
        fraction,
        blocks: blocks.into_iter().map(|(_, b)| b).collect(),
    })
}

/// Discovery probabilities where each attribute is navigated towards with
/// its representative's topic.
pub fn approx_effectiveness(org: &Organization, reps: &Representatives) -> Result<Evaluation> {
    navmodel::evaluate(org, &reps.query_set(org)?)
}

// ---- bounds -------------------------------------------------------------------

/// `p·(1 − e^{−γ′(1−κ)})`.
pub fn bound_factor(p: f64, gamma_prime: f64, kappa: f64) -> f64 {
    // rounding can push a cosine of unit vectors past 1
    p * (1.0 - (-gamma_prime * (1.0 - kappa.min(1.0))).exp())
}

fn child_position(org: &Organization, m: StateId, s: StateId) -> Result<usize> {
    org.children(m)
        .iter()
        .position(|c| *c == s)
        .ok_or_else(|| Error::InvalidArgument(format!("state {s} is not a child of {m}")))
}

fn gamma_prime(org: &Organization, m: StateId) -> f64 {
    org.gamma() / org.children(m).len() as f64
}

/// `P(s|m,A) − P(s|m,ρ)`: the error of navigating with ρ in place of A.
pub fn transition_error(
    org: &Organization,
    m: StateId,
    s: StateId,
    a: &QueryTopic,
    rho: &QueryTopic,
) -> Result<f64> {
    let i = child_position(org, m, s)?;
    Ok(navmodel::transition_probs(org, m, a)[i] - navmodel::transition_probs(org, m, rho)[i])
}

/// Bound on [`transition_error`]: `P(s|m,A)·(1 − e^{−γ′(1−κ(ρ,A))})` with
/// `γ′ = γ/|ch(m)|`.
pub fn transition_error_bound(
    org: &Organization,
    m: StateId,
    s: StateId,
    a: &QueryTopic,
    rho: &QueryTopic,
) -> Result<f64> {
    let i = child_position(org, m, s)?;
    let p = navmodel::transition_probs(org, m, a)[i];
    Ok(bound_factor(p, gamma_prime(org, m), dot(a.unit(), rho.unit())))
}

fn check_path(org: &Organization, path: &[StateId]) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if path.len() < 2 || path[0] != org.root() {
        return bad("a discovery path starts at the root and has at least one step".into());
    }
    for w in path.windows(2) {
        if org.get(w[0]).is_none() || org.get(w[1]).is_none() {
            return bad(format!("path names a missing state among {:?}", w));
        }
        if !org.children(w[0]).contains(&w[1]) {
            return bad(format!("{} is not a child of {}", w[1], w[0]));
        }
    }
    if !org.children(*path.last().unwrap()).is_empty() {
        return bad("a discovery path ends at a leaf".into());
    }
    Ok(())
}

/// Probability of following `path` towards each query: `(∏P(·|A), ∏P(·|ρ))`.
pub fn path_probs(
    org: &Organization,
    path: &[StateId],
    a: &QueryTopic,
    rho: &QueryTopic,
) -> Result<(f64, f64)> {
    check_path(org, path)?;
    let mut pa = 1.0;
    let mut pr = 1.0;
    for w in path.windows(2) {
        let i = child_position(org, w[0], w[1])?;
        pa *= navmodel::transition_probs(org, w[0], a)[i];
        pr *= navmodel::transition_probs(org, w[0], rho)[i];
    }
    Ok((pa, pr))
}

/// Bound on the error of a whole root-to-leaf path:
/// `∏ P(sᵢ|sᵢ₋₁,A) · ∏ (1 − e^{−γ′ᵢ(1−κ(ρ,A))})`, each step with its own `γ′`.
pub fn path_error_bound(
    org: &Organization,
    path: &[StateId],
    a: &QueryTopic,
    rho: &QueryTopic,
) -> Result<f64> {
    check_path(org, path)?;
    let kappa = dot(a.unit(), rho.unit());
    let mut prob = 1.0;
    let mut factor = 1.0;
    for w in path.windows(2) {
        let i = child_position(org, w[0], w[1])?;
        prob *= navmodel::transition_probs(org, w[0], a)[i];
        factor *= bound_factor(1.0, gamma_prime(org, w[0]), kappa);
    }
    Ok(prob * factor)
}

/// Bound on the change of a transition probability `p` (into a state whose
/// topic moved from `old` to `new`) under branching-scaled sharpness `γ′`.
pub fn staleness_bound(p: f64, gamma_prime: f64, old: &TopicVector, new: &TopicVector) -> Result<f64> {
    Ok(bound_factor(p, gamma_prime, cosine(old, new)?))
}

pub const DEFAULT_STALENESS_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessReport {
    /// Largest relative bound `1 − e^{−γ′(1−κ(old,new))}` over states and parents.
    pub max_relative_bound: f64,
    pub worst_state: Option<StateId>,
    pub rebuild: bool,
}

/// Re-derives `org`'s topic vectors from an updated lake and reports whether
/// any transition may have moved by more than `threshold` of its value.
pub fn staleness_check(org: &Organization, updated: &DataLake, threshold: f64) -> Result<StalenessReport> {
    let refreshed = Organization::from_file(&org.to_file(), updated)?;
    let mut worst = (0.0f64, None);
    for s in org.states() {
        let new = &refreshed.state(s.id).topic;
        if !s.topic.is_covered() || !new.is_covered() {
            continue;
        }
        for &m in &s.parents {
            let rel = staleness_bound(1.0, gamma_prime(org, m), &s.topic, new)?;
            if rel > worst.0 {
                worst = (rel, Some(s.id));
            }
        }
    }
    Ok(StalenessReport {
        max_relative_bound: worst.0,
        worst_state: worst.1,
        rebuild: worst.0 > threshold,
    })
}

/// Attributes of `lake` not covered by any block.
pub fn uncovered_attributes<'a>(reps: &Representatives, lake: &'a DataLake) -> BTreeSet<&'a str> {
    let assigned = reps.assignment();
    lake.attributes()
        .iter()
        .filter(|a| !a.tags.is_empty() && !assigned.contains_key(a.id.as_str()))
        .map(|a| a.id.as_str())
        .collect()
}
