//! Tag transfer between lakes: one logistic classifier per tag, trained on
//! attribute topic vectors of a tagged lake and applied to an untagged one.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lake::DataLake;
use crate::vector::dot;
use crate::{Error, Result};

pub const DEFAULT_LAMBDAS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub min_positives: usize,
    /// Negatives sampled per positive.
    pub neg_ratio: usize,
    pub folds: usize,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Full-batch gradient steps per fit.
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            min_positives: 10,
            neg_ratio: 9,
            folds: 10,
            seed: 0,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            epochs: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_positives == 0 || self.neg_ratio == 0 || self.folds < 2 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "min_positives, neg_ratio and epochs must be positive and folds at least 2".into(),
            ));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("lambdas must be a non-empty list of non-negative values".into()));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidArgument("thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub positives: usize,
    pub negatives: usize,
    pub cv_f1: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagClassifier {
    pub tag: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub stats: TrainingStats,
}

impl TagClassifier {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Probability that a unit topic vector belongs to the tag.
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) >= self.threshold
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression by gradient descent. Features are
/// unit vectors, so a step of 1/(0.25·2 + λ) is safe.
fn fit(xs: &[&[f64]], ys: &[bool], lambda: f64, epochs: usize) -> (Vec<f64>, f64) {
    let dim = xs.first().map_or(0, |x| x.len());
    let n = xs.len() as f64;
    let step = 1.0 / (0.5 + lambda);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut gw = vec![0.0; dim];
    for _ in 0..epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let r = sigmoid(dot(&w, x) + b) - if y { 1.0 } else { 0.0 };
            for (g, xi) in gw.iter_mut().zip(x.iter()) {
                *g += r * xi;
            }
            gb += r;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * (g / n + lambda * *wi);
        }
        b -= step * gb / n;
    }
    (w, b)
}

fn f1(scores: &[f64], ys: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(ys) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// Trains one classifier for `tag` over the given unit vectors. Returns
/// `None` when the tag has fewer than `min_positives` distinct positives.
fn train_tag(
    lake: &DataLake,
    units: &[Option<Vec<f64>>],
    tag: &str,
    stream: u64,
    cfg: &TrainConfig,
) -> Option<TagClassifier> {
    let members = lake.tag_members(tag);
    let mut seen: HashSet<&BTreeSet<String>> = HashSet::new();
    let positives: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| units[i].is_some() && seen.insert(&lake.attribute(i).values))
        .collect();
    if positives.len() < cfg.min_positives {
        return None;
    }
    let member_set: HashSet<usize> = members.iter().copied().collect();
    let pool: Vec<usize> = (0..units.len())
        .filter(|i| units[*i].is_some() && !member_set.contains(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let n_neg = (positives.len() * cfg.neg_ratio).min(pool.len());
    let mut negatives: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), n_neg)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    negatives.sort_unstable();

    let mut pos = positives.clone();
    pos.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    // stratified folds: deal each class round-robin
    let folds = cfg.folds.min(pos.len());
    let mut samples: Vec<(usize, bool, usize)> = Vec::with_capacity(pos.len() + negatives.len());
    samples.extend(pos.iter().enumerate().map(|(k, &i)| (i, true, k % folds)));
    samples.extend(negatives.iter().enumerate().map(|(k, &i)| (i, false, k % folds)));
    let xs: Vec<&[f64]> = samples.iter().map(|s| units[s.0].as_deref().unwrap()).collect();
    let ys: Vec<bool> = samples.iter().map(|s| s.1).collect();

    let mut best: Option<(f64, f64, f64)> = None;
    for &lambda in &cfg.lambdas {
        let mut oof = vec![0.0; samples.len()];
        for f in 0..folds {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&k| samples[k].2 != f);
            let tx: Vec<&[f64]> = train.iter().map(|&k| xs[k]).collect();
            let ty: Vec<bool> = train.iter().map(|&k| ys[k]).collect();
            let (w, b) = fit(&tx, &ty, lambda, cfg.epochs);
            for k in test {
                oof[k] = sigmoid(dot(&w, xs[k]) + b);
            }
        }
        for &t in &cfg.thresholds {
            let score = f1(&oof, &ys, t);
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, lambda, t));
            }
        }
    }
    let (cv_f1, lambda, threshold) = best?;
    let (weights, bias) = fit(&xs, &ys, lambda, cfg.epochs);
    Some(TagClassifier {
        tag: tag.to_string(),
        weights,
        bias,
        threshold,
        stats: TrainingStats {
            positives: positives.len(),
            negatives: negatives.len(),
            cv_f1,
            lambda,
        },
    })
}

/// One classifier per tag with enough distinct positive attributes, in tag
/// order. Tags are trained in parallel; each draws from its own RNG stream.
pub fn train_classifiers(lake: &DataLake, cfg: &TrainConfig) -> Result<Vec<TagClassifier>> {
    cfg.validate()?;
    if lake.n_tags() == 0 {
        return Err(Error::Tagless);
    }
    let units: Vec<Option<Vec<f64>>> = lake.attributes().iter().map(|a| a.topic.unit()).collect();
    let tags: Vec<&str> = lake.tags().collect();
    let classifiers: Vec<TagClassifier> = tags
        .par_iter()
        .enumerate()
        .filter_map(|(k, tag)| train_tag(lake, &units, tag, k as u64, cfg))
        .collect();
    if classifiers.is_empty() {
        log::warn!("no tag has {} distinct positive attributes; nothing trained", cfg.min_positives);
    }
    Ok(classifiers)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Attributes newly labeled, per tag. Every classifier appears.
    pub labeled: BTreeMap<String, usize>,
    /// Attributes that gained at least one tag.
    pub attributes_labeled: usize,
}

impl TransferReport {
    pub fn tags_used(&self) -> usize {
        self.labeled.values().filter(|n| **n > 0).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tag", "n_attributes_labeled"])?;
        for (tag, n) in &self.labeled {
            w.write_record([tag.as_str(), &n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Labels every covered attribute of `target` with each tag whose classifier
/// fires. Tags already present are left alone, so repeating is a no-op.
pub fn transfer_tags(classifiers: &[TagClassifier], target: &DataLake) -> Result<(DataLake, TransferReport)> {
    let dim = target.dim();
    if let Some(c) = classifiers.iter().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            found: dim,
        });
    }
    let added: Vec<BTreeSet<String>> = target
        .attributes()
        .par_iter()
        .map(|a| match a.topic.unit() {
            None => BTreeSet::new(),
            Some(u) => classifiers
                .iter()
                .filter(|c| !a.tags.contains(&c.tag) && c.predict(&u))
                .map(|c| c.tag.clone())
                .collect(),
        })
        .collect();
    let mut report = TransferReport {
        labeled: classifiers.iter().map(|c| (c.tag.clone(), 0)).collect(),
        attributes_labeled: added.iter().filter(|s| !s.is_empty()).count(),
    };
    for tag in added.iter().flatten() {
        *report.labeled.get_mut(tag).expect("tag comes from a classifier") += 1;
    }
    Ok((target.with_added_tags(&added), report))
}

pub fn save_classifiers(classifiers: &[TagClassifier], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, classifiers)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_classifiers(path: &Path) -> Result<Vec<TagClassifier>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
