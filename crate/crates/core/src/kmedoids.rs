//! k-medoids clustering under an arbitrary dissimilarity.
//!
//! Farthest-point seeding followed by eager PAM swaps: for each non-medoid
//! candidate the best medoid to replace is found in O(n) from cached nearest
//! and second-nearest assignments, and any improving swap is applied at once.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vector::dot;

/// Symmetric dissimilarities stored as a strict lower triangle.
#[derive(Debug, Clone)]
pub struct DistMatrix {
    n: usize,
    lower: Vec<f64>,
}

impl DistMatrix {
    pub fn from_fn(n: usize, mut d: impl FnMut(usize, usize) -> f64) -> Self {
        let mut lower = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 1..n {
            for j in 0..i {
                lower.push(d(i, j));
            }
        }
        DistMatrix { n, lower }
    }

    /// `1 − cos` between unit vectors; empty vectors are at distance 1 from
    /// everything but themselves.
    pub fn cosine(units: &[Vec<f64>]) -> Self {
        DistMatrix::from_fn(units.len(), |i, j| {
            if units[i].is_empty() || units[j].is_empty() {
                1.0
            } else {
                (1.0 - dot(&units[i], &units[j])).max(0.0)
            }
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => 0.0,
            Greater => self.lower[i * (i - 1) / 2 + j],
            Less => self.lower[j * (j - 1) / 2 + i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Point index of each medoid.
    pub medoids: Vec<usize>,
    /// Cluster (index into `medoids`) of each point.
    pub assignment: Vec<usize>,
    /// Sum of distances to the assigned medoid.
    pub loss: f64,
    pub swaps: usize,
}

impl Clustering {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.medoids.len()];
        for (p, c) in self.assignment.iter().enumerate() {
            out[*c].push(p);
        }
        out
    }
}

#[derive(Clone, Copy)]
struct Rec {
    near: usize,
    d1: f64,
    sec: usize,
    d2: f64,
}

pub fn kmedoids(dist: &DistMatrix, k: usize, seed: u64, max_passes: usize) -> Result<Clustering> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let mut medoids = farthest_point_seeds(dist, k, seed);
    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    let mut recs: Vec<Rec> = (0..n).map(|o| assign(dist, &medoids, o)).collect();
    let mut removal = removal_loss(&recs, k);
    let mut swaps = 0;
    if k < n {
        let mut last_swap = n;
        'passes: for _ in 0..max_passes {
            for j in 0..n {
                if j == last_swap {
                    break 'passes;
                }
                if is_medoid[j] {
                    continue;
                }
                let (delta, i) = best_swap(dist, &removal, &recs, j);
                if delta >= -1e-12 {
                    continue;
                }
                is_medoid[medoids[i]] = false;
                is_medoid[j] = true;
                medoids[i] = j;
                apply_swap(dist, &medoids, &mut recs, i, j);
                removal = removal_loss(&recs, k);
                swaps += 1;
                last_swap = j;
            }
            if last_swap == n {
                break;
            }
        }
    }
    let assignment: Vec<usize> = recs.iter().map(|r| r.near).collect();
    let loss = recs.iter().map(|r| r.d1).sum();
    Ok(Clustering {
        medoids,
        assignment,
        loss,
        swaps,
    })
}

/// First medoid drawn from the seed, then repeatedly the point farthest from
/// its nearest medoid (ties to the lowest index).
fn farthest_point_seeds(dist: &DistMatrix, k: usize, seed: u64) -> Vec<usize> {
    let n = dist.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|o| dist.get(o, first)).collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    while medoids.len() < k {
        let mut best = None;
        for o in 0..n {
            if chosen[o] {
                continue;
            }
            if best.is_none_or(|b: usize| nearest[o] > nearest[b]) {
                best = Some(o);
            }
        }
        let m = best.expect("k ≤ n");
        chosen[m] = true;
        medoids.push(m);
        for o in 0..n {
            nearest[o] = nearest[o].min(dist.get(o, m));
        }
    }
    medoids
}

fn assign(dist: &DistMatrix, medoids: &[usize], o: usize) -> Rec {
    let mut r = Rec {
        near: 0,
        d1: f64::INFINITY,
        sec: 0,
        d2: f64::INFINITY,
    };
    for (i, &m) in medoids.iter().enumerate() {
        let d = dist.get(o, m);
        if d < r.d1 {
            r.sec = r.near;
            r.d2 = r.d1;
            r.near = i;
            r.d1 = d;
        } else if d < r.d2 {
            r.sec = i;
            r.d2 = d;
        }
    }
    r
}

fn removal_loss(recs: &[Rec], k: usize) -> Vec<f64> {
    let mut loss = vec![0.0; k];
    for r in recs {
        // with a single medoid there is no second-nearest; removal is never considered
        if r.d2.is_finite() {
            loss[r.near] += r.d2 - r.d1;
        }
    }
    loss
}

/// Change in total loss of swapping candidate `j` in, for the best medoid out.
fn best_swap(dist: &DistMatrix, removal: &[f64], recs: &[Rec], j: usize) -> (f64, usize) {
    let mut ploss = removal.to_vec();
    let mut acc = 0.0;
    for (o, r) in recs.iter().enumerate() {
        let d = dist.get(o, j);
        if !r.d2.is_finite() {
            // single medoid: every point moves to j when it is swapped out
            if d < r.d1 {
                acc += d - r.d1;
            } else {
                ploss[r.near] += d - r.d1;
            }
        } else if d < r.d1 {
            acc += d - r.d1;
            ploss[r.near] += r.d1 - r.d2;
        } else if d < r.d2 {
            ploss[r.near] += d - r.d2;
        }
    }
    let (i, best) = ploss
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if *v < bv { (i, *v) } else { (bi, bv) });
    (best + acc, i)
}

fn apply_swap(dist: &DistMatrix, medoids: &[usize], recs: &mut [Rec], i: usize, j: usize) {
    for (o, r) in recs.iter_mut().enumerate() {
        let d = dist.get(o, j);
        if r.near == i {
            if d <= r.d2 {
                r.d1 = d;
            } else {
                r.near = r.sec;
                r.d1 = r.d2;
                second(dist, medoids, o, r, i, d);
            }
        } else if d < r.d1 {
            r.sec = r.near;
            r.d2 = r.d1;
            r.near = i;
            r.d1 = d;
        } else if d < r.d2 {
            r.sec = i;
            r.d2 = d;
        } else if r.sec == i {
            second(dist, medoids, o, r, i, d);
        }
    }
}

/// Recomputes the second-nearest medoid of `o`, knowing the distance to the
/// medoid in slot `i`.
fn second(dist: &DistMatrix, medoids: &[usize], o: usize, r: &mut Rec, i: usize, di: f64) {
    r.d2 = f64::INFINITY;
    for (m, &p) in medoids.iter().enumerate() {
        if m == r.near {
            continue;
        }
        let d = if m == i { di } else { dist.get(o, p) };
        if d < r.d2 {
            r.sec = m;
            r.d2 = d;
        }
    }
}
