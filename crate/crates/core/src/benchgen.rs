//! Seeded synthetic lakes with known generating tags.
//!
//! Tags are mutually dissimilar words of an embedding vocabulary; each
//! attribute takes one tag and, as values, the tag word's nearest
//! neighbours. Attribute counts per table follow a truncated Zipf law.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{knn_indices, topic_vector, EmbeddingStore};
use crate::error::{Error, Result};
use crate::fixtures::gaussian_vector;
use crate::lake::{write_lake, Attribute, DataLake, Table};
use crate::vector::{dot, normalized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub n_tags: usize,
    pub n_tables: usize,
    pub min_values: usize,
    pub max_values: usize,
    pub min_attributes: usize,
    pub max_attributes: usize,
    pub zipf_exponent: f64,
    /// Upper bound on the cosine between any two chosen tag words.
    pub tag_min_separation: f64,
    /// Also tag every attribute with its closest other tag.
    pub extra_tag_per_attribute: bool,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n_tags: 365,
            n_tables: 369,
            min_values: 10,
            max_values: 1000,
            min_attributes: 1,
            max_attributes: 50,
            zipf_exponent: 1.3,
            tag_min_separation: 0.5,
            extra_tag_per_attribute: false,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self, vocabulary: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.min_values == 0 || self.min_values > self.max_values {
            return bad(format!("bad value-count range [{}, {}]", self.min_values, self.max_values));
        }
        if self.min_attributes == 0 || self.min_attributes > self.max_attributes {
            return bad(format!(
                "bad attribute-count range [{}, {}]",
                self.min_attributes, self.max_attributes
            ));
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf exponent must be positive".into());
        }
        if self.n_tags == 0 || self.n_tags > vocabulary {
            return bad(format!("{} tags from a vocabulary of {vocabulary}", self.n_tags));
        }
        if self.max_values > vocabulary {
            return bad(format!("{} values from a vocabulary of {vocabulary}", self.max_values));
        }
        Ok(())
    }
}

/// Truncated Zipf law on `[a, b]`: `P(k) ∝ k^(−s)`, sampled by inverse CDF.
#[derive(Debug, Clone)]
pub struct Zipf {
    a: usize,
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(a: usize, b: usize, exponent: f64) -> Result<Self> {
        if a == 0 || a > b || !(exponent >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "zipf needs 1 ≤ a ≤ b and exponent ≥ 0, got [{a}, {b}] and {exponent}"
            )));
        }
        let weights: Vec<f64> = (a..=b).map(|k| (k as f64).powf(-exponent)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Zipf { a, cdf })
    }

    /// `P(k)` for every `k` in the support, in order.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|c| {
                let p = c - prev;
                prev = *c;
                p
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|c| *c < u).min(self.cdf.len() - 1);
        self.a + i
    }
}

pub fn zipf_sample<R: Rng + ?Sized>(a: usize, b: usize, exponent: f64, rng: &mut R) -> Result<usize> {
    Ok(Zipf::new(a, b, exponent)?.sample(rng))
}

/// Shape of a synthetic embedding vocabulary: words cluster around topics,
/// topics around super-topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSpec {
    pub dim: usize,
    pub super_topics: usize,
    pub topics_per_super: usize,
    pub words_per_topic: usize,
    pub super_weight: f64,
    pub topic_weight: f64,
    /// Per-word noise weight is drawn uniformly from this range.
    pub noise_min: f64,
    pub noise_max: f64,
    pub seed: u64,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            dim: 48,
            super_topics: 20,
            topics_per_super: 24,
            words_per_topic: 56,
            super_weight: 0.6,
            topic_weight: 0.8,
            noise_min: 0.3,
            noise_max: 1.0,
            seed: 0,
        }
    }
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        if let Some(v) = normalized(&gaussian_vector(rng, dim)) {
            return v;
        }
    }
}

/// Words named `s<super>t<topic>w<word>`, each the normalized sum of its
/// super-topic, topic and noise directions.
pub fn synthetic_vocabulary(spec: &VocabSpec) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = EmbeddingStore::new(spec.dim);
    for si in 0..spec.super_topics {
        let sup = unit_gaussian(&mut rng, spec.dim);
        for ti in 0..spec.topics_per_super {
            let topic = unit_gaussian(&mut rng, spec.dim);
            for wi in 0..spec.words_per_topic {
                let noise = unit_gaussian(&mut rng, spec.dim);
                let c = rng.random_range(spec.noise_min..=spec.noise_max);
                let v: Vec<f64> = (0..spec.dim)
                    .map(|d| spec.super_weight * sup[d] + spec.topic_weight * topic[d] + c * noise[d])
                    .collect();
                store
                    .insert(&format!("s{si:02}t{ti:02}w{wi:02}"), &v)
                    .expect("dimension matches");
            }
        }
    }
    store
}

/// A generated lake and the tags that generated each attribute.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub lake: DataLake,
    /// `(attribute id, tag)`; two rows per attribute in the enriched variant,
    /// the generating tag first.
    pub ground_truth: Vec<(String, String)>,
    pub tag_words: Vec<String>,
}

impl Benchmark {
    /// Generating tag of each attribute.
    pub fn primary_tags(&self) -> BTreeMap<&str, &str> {
        let mut out = BTreeMap::new();
        for (a, t) in &self.ground_truth {
            out.entry(a.as_str()).or_insert(t.as_str());
        }
        out
    }
}

/// Greedy rejection sampling over a seeded shuffle of the vocabulary.
fn pick_tags<R: Rng + ?Sized>(store: &EmbeddingStore, n: usize, cap: f64, rng: &mut R) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for w in order {
        let v = store.vector(w);
        if chosen.iter().all(|c| dot(store.vector(*c), v) < cap) {
            chosen.push(w);
            if chosen.len() == n {
                return Ok(chosen);
            }
        }
    }
    Err(Error::Benchmark(format!(
        "found only {} of {n} tag words with pairwise cosine below {cap}; \
         use a larger vocabulary or a looser separation cap",
        chosen.len()
    )))
}

pub fn generate(store: &EmbeddingStore, spec: &BenchSpec) -> Result<Benchmark> {
    spec.validate(store.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tags = pick_tags(store, spec.n_tags, spec.tag_min_separation, &mut rng)?;
    let tag_words: Vec<String> = tags.iter().map(|t| store.token(*t).to_string()).collect();
    // value lists are prefixes of each tag's neighbour ranking
    let neighbours: Vec<Vec<usize>> = tags
        .iter()
        .map(|t| knn_indices(store, store.vector(*t), spec.max_values))
        .collect::<Result<_>>()?;
    let zipf = Zipf::new(spec.min_attributes, spec.max_attributes, spec.zipf_exponent)?;

    let mut tables = Vec::with_capacity(spec.n_tables);
    let mut attributes = Vec::new();
    let mut ground_truth = Vec::new();
    for ti in 0..spec.n_tables {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(ti as u64 + 1);
        let table_id = format!("t{ti:04}");
        let n_attrs = zipf.sample(&mut rng);
        let mut ids = Vec::with_capacity(n_attrs);
        let mut table_tags = BTreeSet::new();
        let mut first_tag = None;
        for col in 0..n_attrs {
            let tag = rng.random_range(0..tags.len());
            first_tag.get_or_insert(tag);
            let n_values = rng.random_range(spec.min_values..=spec.max_values);
            let values: BTreeSet<String> = neighbours[tag][..n_values]
                .iter()
                .map(|w| store.token(*w).to_string())
                .collect();
            let topic = topic_vector(values.iter().map(String::as_str), store);
            let id = format!("{table_id}.{col}");
            let mut attr_tags = BTreeSet::from([tag_words[tag].clone()]);
            ground_truth.push((id.clone(), tag_words[tag].clone()));
            if spec.extra_tag_per_attribute {
                let unit = topic.unit().expect("values come from the vocabulary");
                let other = (0..tags.len()).filter(|t| *t != tag).max_by(|a, b| {
                    dot(store.vector(tags[*a]), &unit)
                        .total_cmp(&dot(store.vector(tags[*b]), &unit))
                        .then(b.cmp(a))
                });
                if let Some(o) = other {
                    attr_tags.insert(tag_words[o].clone());
                    ground_truth.push((id.clone(), tag_words[o].clone()));
                }
            }
            table_tags.extend(attr_tags.iter().cloned());
            ids.push(id.clone());
            attributes.push(Attribute {
                id,
                table_id: table_id.clone(),
                name: format!("col{col}"),
                values,
                topic,
                tags: attr_tags,
            });
        }
        tables.push(Table {
            id: table_id,
            name: format!("{} records {ti}", tag_words[first_tag.expect("at least one attribute")]),
            attribute_ids: ids,
            tags: table_tags,
        });
    }
    Ok(Benchmark {
        lake: DataLake::new(tables, attributes)?,
        ground_truth,
        tag_words,
    })
}

/// Writes the lake (`tables/`, `metadata.jsonl`) and `ground_truth.csv`.
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_lake(&bench.lake, dir)?;
    let path = dir.join("ground_truth.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["attribute_id", "tag"])?;
    for (a, t) in &bench.ground_truth {
        w.write_record([a, t])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zipf_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(zipf_sample(7, 7, 1.0, &mut rng).unwrap(), 7);
        }
        let z = Zipf::new(1, 50, 1.3).unwrap();
        assert_abs_diff_eq!(z.probabilities().iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        let flat = Zipf::new(1, 5, 0.0).unwrap();
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[flat.sample(&mut rng) - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.2).abs() < 0.02, "{counts:?}");
        }

        let z = Zipf::new(1, 50, 1.0).unwrap();
        let mut counts = [0usize; 51];
        for _ in 0..10_000 {
            counts[z.sample(&mut rng)] += 1;
        }
        assert!(counts[1] > counts[2]);
        assert!(counts[2] > counts[4] && counts[4] > counts[10] && counts[10] > counts[40]);
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let spec = VocabSpec {
            super_topics: 2,
            topics_per_super: 3,
            words_per_topic: 4,
            ..VocabSpec::default()
        };
        let a = synthetic_vocabulary(&spec);
        let b = synthetic_vocabulary(&spec);
        assert_eq!(a.len(), 24);
        assert_eq!(a.tokens(), b.tokens());
        assert_eq!(a.vector(5), b.vector(5));
    }

    #[test]
    fn small_benchmark_invariants() {
        let store = synthetic_vocabulary(&VocabSpec {
            super_topics: 4,
            topics_per_super: 6,
            words_per_topic: 20,
            ..VocabSpec::default()
        });
        let spec = BenchSpec {
            n_tags: 12,
            n_tables: 20,
            max_values: 100,
            max_attributes: 8,
            seed: 3,
            ..BenchSpec::default()
        };
        let bench = generate(&store, &spec).unwrap();
        assert_eq!(bench.lake.tables().len(), 20);
        assert_eq!(bench.ground_truth.len(), bench.lake.attributes().len());
        for a in bench.lake.attributes() {
            assert!((10..=100).contains(&a.values.len()));
            assert_eq!(a.tags.len(), 1);
        }
        for t in bench.lake.tables() {
            assert!((1..=8).contains(&t.attribute_ids.len()));
        }
        let again = generate(&store, &spec).unwrap();
        assert_eq!(again.lake, bench.lake);

        let enriched = generate(
            &store,
            &BenchSpec {
                extra_tag_per_attribute: true,
                ..spec.clone()
            },
        )
        .unwrap();
        assert_eq!(enriched.ground_truth.len(), 2 * enriched.lake.attributes().len());
        assert!(enriched.lake.attributes().iter().all(|a| a.tags.len() == 2));
    }

    #[test]
    fn impossible_separation_is_reported() {
        let store = synthetic_vocabulary(&VocabSpec {
            super_topics: 1,
            topics_per_super: 2,
            words_per_topic: 5,
            ..VocabSpec::default()
        });
        let spec = BenchSpec {
            n_tags: 8,
            max_values: 10,
            tag_min_separation: 0.01,
            ..BenchSpec::default()
        };
        assert!(matches!(generate(&store, &spec), Err(Error::Benchmark(_))));
    }
}
