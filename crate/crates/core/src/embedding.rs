//! Word embeddings, value tokenization and topic vectors.
//!
//! An [`EmbeddingStore`] maps tokens to unit-length vectors. Attribute and
//! state semantics are captured by [`TopicVector`]s, the arithmetic mean of the
//! embedding vectors of every embedded token found in a set of values.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, norm};

/// Immutable token → unit vector map.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    tokens: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
    skipped: usize,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    /// Inserts `token`, normalizing `vector` to unit length.
    ///
    /// Zero vectors are skipped and counted; a token already present keeps its
    /// first vector. Returns whether the token was stored.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        let n = norm(vector);
        if n == 0.0 || !n.is_finite() {
            self.skipped += 1;
            return Ok(false);
        }
        if self.index.contains_key(token) {
            return Ok(false);
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.data.extend(vector.iter().map(|x| x / n));
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of records skipped at load time because their vector had zero norm.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vector(i))
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Writes the store in the whitespace text format with a `count dim` header.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "{} {}", self.len(), self.dim)?;
            for (i, token) in self.tokens.iter().enumerate() {
                write!(out, "{token}")?;
                for x in self.vector(i) {
                    write!(out, " {x:.6}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

/// Loads a whitespace-separated embedding file.
///
/// Each record is `token c1 ... cd`. An optional first line `count dim` is
/// recognised as a header. Vectors are normalized; zero vectors are skipped.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut store: Option<EmbeddingStore> = None;
    let mut buf = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if line_no == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(dim)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                if dim == 0 {
                    return Err(parse_error(path, line_no, "header declares dimension 0"));
                }
                store = Some(EmbeddingStore::new(dim));
                continue;
            }
        }
        buf.clear();
        for field in &rest {
            let x = field.parse::<f64>().map_err(|_| {
                parse_error(path, line_no, &format!("not a number: '{field}'"))
            })?;
            buf.push(x);
        }
        if buf.is_empty() {
            return Err(parse_error(path, line_no, "record has no vector components"));
        }
        let store = store.get_or_insert_with(|| EmbeddingStore::new(buf.len()));
        if buf.len() != store.dim {
            return Err(Error::DimensionMismatch {
                expected: store.dim,
                found: buf.len(),
            });
        }
        store.insert(token, &buf)?;
    }
    let store = store.ok_or_else(|| parse_error(path, 0, "empty embedding file"))?;
    if store.skipped > 0 {
        log::warn!(
            "{}: skipped {} zero-norm vectors",
            path.display(),
            store.skipped
        );
    }
    Ok(store)
}

fn parse_error(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Splits a value into lowercased maximal runs of alphanumeric characters.
pub fn tokenize(value: &str) -> Vec<String> {
    value
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sample mean of the embedding vectors of a set of values.
///
/// `support` counts the embedded tokens that contributed. A zero-support
/// vector is "uncovered" and its mean is all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicVector {
    pub mean: Vec<f64>,
    pub support: usize,
}

impl TopicVector {
    pub fn uncovered(dim: usize) -> Self {
        TopicVector {
            mean: vec![0.0; dim],
            support: 0,
        }
    }

    /// Builds a topic vector from an un-normalized sum of `support` vectors.
    pub fn from_sum(sum: &[f64], support: usize) -> Self {
        if support == 0 {
            return TopicVector::uncovered(sum.len());
        }
        let w = support as f64;
        TopicVector {
            mean: sum.iter().map(|x| x / w).collect(),
            support,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_covered(&self) -> bool {
        self.support > 0
    }

    /// The sum of the contributing vectors (`mean * support`).
    pub fn sum(&self) -> Vec<f64> {
        let w = self.support as f64;
        self.mean.iter().map(|x| x * w).collect()
    }

    /// Direction of the mean, used for cosine computations.
    pub fn unit(&self) -> Option<Vec<f64>> {
        if self.support == 0 {
            return None;
        }
        crate::vector::normalized(&self.mean)
    }
}

/// Topic vector of a set of values. Values are deduplicated, tokens are not.
pub fn topic_vector<'a, I>(values: I, store: &EmbeddingStore) -> TopicVector
where
    I: IntoIterator<Item = &'a str>,
{
    let distinct: BTreeSet<&str> = values.into_iter().collect();
    let mut sum = vec![0.0; store.dim()];
    let mut support = 0;
    for value in distinct {
        for token in tokenize(value) {
            if let Some(v) = store.get(&token) {
                crate::vector::add_scaled(&mut sum, v, 1.0);
                support += 1;
            }
        }
    }
    TopicVector::from_sum(&sum, support)
}

/// Cosine similarity of two topic vectors.
pub fn cosine(u: &TopicVector, v: &TopicVector) -> Result<f64> {
    if !u.is_covered() || !v.is_covered() {
        return Err(Error::UndefinedSimilarity);
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let denom = norm(&u.mean) * norm(&v.mean);
    if denom == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot(&u.mean, &v.mean) / denom).clamp(-1.0, 1.0))
}

/// Indices of the `k` vocabulary tokens most cosine-similar to `query`,
/// best first, ties broken by token order.
pub fn knn_indices(store: &EmbeddingStore, query: &[f64], k: usize) -> Result<Vec<usize>> {
    if query.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            found: query.len(),
        });
    }
    if k == 0 || k > store.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            store.len()
        )));
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    let mut scored: Vec<(f64, usize)> = (0..store.len())
        .map(|i| (dot(store.vector(i), query) / qn, i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0)
            .then_with(|| store.token(a.1).cmp(store.token(b.1)))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// The `k` tokens most similar to `query` under cosine similarity.
pub fn knn(store: &EmbeddingStore, query: &[f64], k: usize) -> Result<Vec<String>> {
    Ok(knn_indices(store, query, k)?
        .into_iter()
        .map(|i| store.token(i).to_string())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn store3() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(3);
        s.insert("a", &[1.0, 0.0, 0.0]).unwrap();
        s.insert("b", &[0.0, 1.0, 0.0]).unwrap();
        s.insert("c", &[1.0, 1.0, 0.0]).unwrap();
        s
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_normalizes_and_skips_zero_vectors() {
        let f = write_tmp("3 3\na 1 0 0\nb 3 0 4\nc 0 0 0\n");
        let store = load_embeddings(f.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.dim(), 3);
        assert_eq!(store.get("a").unwrap(), &[1.0, 0.0, 0.0]);
        let b = store.get("b").unwrap();
        assert!((b[0] - 0.6).abs() < 1e-12 && b[1] == 0.0 && (b[2] - 0.8).abs() < 1e-12);
        assert!(store.get("c").is_none());
        assert_eq!(store.skipped(), 1);
    }

    #[test]
    fn load_without_header() {
        let f = write_tmp("a 1 0 0\nb 0 2 0\n");
        let store = load_embeddings(f.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("b").unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn load_reports_line_of_malformed_record() {
        let f = write_tmp("a 1 0 0\nb 0 x 0\n");
        match load_embeddings(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_inconsistent_dimension() {
        let f = write_tmp("a 1 0 0\nb 0 1\n");
        assert!(matches!(
            load_embeddings(f.path()),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let store = store3();
        let f = tempfile::NamedTempFile::new().unwrap();
        store.write(f.path()).unwrap();
        let back = load_embeddings(f.path()).unwrap();
        assert_eq!(back.tokens(), store.tokens());
        for t in store.tokens() {
            for (x, y) in back.get(t).unwrap().iter().zip(store.get(t).unwrap()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Olympia Oysters, Ostrea"),
            vec!["olympia", "oysters", "ostrea"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("CFIA-2015 list"), vec!["cfia", "2015", "list"]);
    }

    #[test]
    fn topic_vector_examples() {
        let s = store3();
        let t = topic_vector(["a"], &s);
        assert_eq!(t.mean, vec![1.0, 0.0, 0.0]);
        assert_eq!(t.support, 1);

        let t = topic_vector(["a", "b"], &s);
        assert_eq!(t.mean, vec![0.5, 0.5, 0.0]);
        assert_eq!(t.support, 2);

        let t = topic_vector(["a", "zzz-not-in-vocab"], &s);
        assert_eq!(t.mean, vec![1.0, 0.0, 0.0]);
        assert_eq!(t.support, 1);

        // duplicate values collapse, repeated tokens inside one value do not
        let t = topic_vector(["a", "a", "a b"], &s);
        assert_eq!(t.support, 3);

        let t = topic_vector(["nothing"], &s);
        assert!(!t.is_covered());
        assert!(t.mean.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn cosine_examples() {
        let s = store3();
        let a = topic_vector(["a"], &s);
        let b = topic_vector(["b"], &s);
        let ab = topic_vector(["a", "b"], &s);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        // (1,0,0)·(0.5,0.5,0) / (1 * sqrt(0.5)) = 1/sqrt(2)
        assert!((cosine(&a, &ab).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        let none = TopicVector::uncovered(3);
        assert!(matches!(cosine(&a, &none), Err(Error::UndefinedSimilarity)));
    }

    #[test]
    fn knn_examples() {
        let s = store3();
        assert_eq!(knn(&s, s.get("a").unwrap(), 1).unwrap(), vec!["a"]);
        // cos to a: a=1, c=0.707, b=0
        assert_eq!(knn(&s, s.get("a").unwrap(), 3).unwrap(), vec!["a", "c", "b"]);
        assert!(matches!(
            knn(&s, s.get("a").unwrap(), 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn knn_ties_break_lexicographically() {
        let mut s = EmbeddingStore::new(2);
        s.insert("zeta", &[0.0, 1.0]).unwrap();
        s.insert("alpha", &[1.0, 0.0]).unwrap();
        s.insert("mid", &[0.0, 1.0]).unwrap();
        let q = [1.0, 1.0];
        assert_eq!(knn(&s, &q, 3).unwrap(), vec!["alpha", "mid", "zeta"]);
    }
}
