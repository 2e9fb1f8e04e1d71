//! Corpus ingestion, tokenization, corpus statistics and TF-IDF weighting.
//!
//! Term weights follow the classic Lucene recipe: `sqrt(tf) * idf` with
//! `idf = ln(N_d / (N_term + 1)) + 1`. Queries are weighted with the same
//! global statistics as documents, which keeps scores comparable across every
//! index built from the same [`Collection`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub type Stopwords = HashSet<String>;

/// Document identifier. Ordering is lexicographic and is the tie-break order
/// used by every ranking in the crate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DocId(Arc<str>);

impl DocId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(Arc::from(s))
    }
}

impl From<String> for DocId {
    fn from(s: String) -> Self {
        DocId(Arc::from(s))
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One input record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Lowercases `text`, splits on non-alphanumeric characters and drops
/// stopwords. Token order is preserved.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect()
}

fn term_frequencies(text: &str, stopwords: &Stopwords) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for token in tokenize(text, stopwords) {
        *tf.entry(token).or_insert(0) += 1;
    }
    tf
}

/// Document count and per-term document frequencies.
#[derive(Clone, Debug, Default)]
pub struct CorpusStats {
    n_docs: usize,
    doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    /// Counts documents and document frequencies. Duplicate ids are rejected.
    pub fn build(docs: &[RawDocument], stopwords: &Stopwords) -> Result<Self> {
        let mut seen = HashSet::with_capacity(docs.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            if doc.id.is_empty() {
                return Err(Error::InvalidParameter("document id must be nonempty".into()));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            for term in term_frequencies(&doc.text, stopwords).into_keys() {
                *doc_freq.entry(term).or_insert(0) += 1;
            }
        }
        Ok(Self {
            n_docs: docs.len(),
            doc_freq,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Number of documents containing `term`; zero for unseen terms.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn vocabulary_len(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, usize)> {
        self.doc_freq.iter().map(|(t, &c)| (t.as_str(), c))
    }

    /// `ln(N_d / (N_term + 1)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        idf(self.n_docs, self.doc_freq(term))
    }
}

pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    (n_docs as f64 / (doc_freq as f64 + 1.0)).ln() + 1.0
}

/// `sqrt(tf) * idf`.
pub fn tf_idf(tf: u32, n_docs: usize, doc_freq: usize) -> f64 {
    f64::from(tf).sqrt() * idf(n_docs, doc_freq)
}

fn weigh(tf: BTreeMap<String, u32>, stats: &CorpusStats) -> Vec<(String, f64)> {
    tf.into_iter()
        .map(|(term, count)| {
            let w = tf_idf(count, stats.n_docs, stats.doc_freq(&term));
            (term, w)
        })
        .collect()
}

/// Sparse TF-IDF vector of one document. Terms are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDocument {
    id: DocId,
    weights: Vec<(String, f64)>,
    norm: f64,
}

impl WeightedDocument {
    /// Builds a document vector from explicit weights. Terms are sorted and
    /// must be unique; weights must be finite and nonnegative.
    pub fn new(id: impl Into<DocId>, mut weights: Vec<(String, f64)>) -> Result<Self> {
        let id = id.into();
        if weights.is_empty() {
            return Err(Error::EmptyDocument(id.to_string()));
        }
        if let Some((t, w)) = weights.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight of `{t}` in `{id}` is {w}"
            )));
        }
        weights.sort_by(|a, b| a.0.cmp(&b.0));
        if weights.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter(format!("repeated term in `{id}`")));
        }
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        Ok(Self { id, weights, norm })
    }

    pub fn id(&self) -> &DocId {
        &self.id
    }

    pub fn weights(&self) -> &[(String, f64)] {
        &self.weights
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn weight(&self, term: &str) -> Option<f64> {
        self.weights
            .binary_search_by(|(t, _)| t.as_str().cmp(term))
            .ok()
            .map(|i| self.weights[i].1)
    }
}

/// TF-IDF weights `doc` against global `stats`.
pub fn weight_document(
    doc: &RawDocument,
    stats: &CorpusStats,
    stopwords: &Stopwords,
) -> Result<WeightedDocument> {
    let tf = term_frequencies(&doc.text, stopwords);
    if tf.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    WeightedDocument::new(doc.id.as_str(), weigh(tf, stats))
}

/// Query term vector, weighted like documents. May be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryVector {
    pub id: String,
    weights: Vec<(String, f64)>,
}

impl QueryVector {
    pub fn new(id: impl Into<String>, mut weights: Vec<(String, f64)>) -> Self {
        weights.sort_by(|a, b| a.0.cmp(&b.0));
        weights.dedup_by(|a, b| a.0 == b.0);
        Self {
            id: id.into(),
            weights,
        }
    }

    /// Terms in lexicographic order. Scoring accumulates in this order.
    pub fn weights(&self) -> &[(String, f64)] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Weights a query with the corpus statistics. Terms unseen in the corpus
/// get `idf` computed with a document frequency of zero.
pub fn weight_query(query: &RawDocument, stats: &CorpusStats, stopwords: &Stopwords) -> QueryVector {
    let tf = term_frequencies(&query.text, stopwords);
    QueryVector::new(query.id.clone(), weigh(tf, stats))
}

/// A weighted corpus: global statistics plus every document vector, sorted
/// by id.
#[derive(Clone, Debug)]
pub struct Collection {
    stats: CorpusStats,
    docs: Arc<[WeightedDocument]>,
    stopwords: Stopwords,
}

impl Collection {
    pub fn build(raw: &[RawDocument], stopwords: &Stopwords) -> Result<Self> {
        let stats = CorpusStats::build(raw, stopwords)?;
        let mut docs = raw
            .iter()
            .map(|d| weight_document(d, &stats, stopwords))
            .collect::<Result<Vec<_>>>()?;
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            stats,
            docs: docs.into(),
            stopwords: stopwords.clone(),
        })
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn docs(&self) -> &Arc<[WeightedDocument]> {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn weight_query(&self, query: &RawDocument) -> QueryVector {
        weight_query(query, &self.stats, &self.stopwords)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One `{"id": ..., "text": ...}` object per line.
    #[default]
    Jsonl,
    /// `id<TAB>text` per line.
    Tsv,
}

/// Reads a corpus or query file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = match format {
            CorpusFormat::Jsonl => serde_json::from_str::<RawDocument>(&line)
                .map_err(|e| malformed(line_no, e.to_string()))?,
            CorpusFormat::Tsv => {
                let (id, text) = line
                    .split_once('\t')
                    .ok_or_else(|| malformed(line_no, "expected `id<TAB>text`".into()))?;
                RawDocument::new(id, text)
            }
        };
        if doc.id.is_empty() {
            return Err(malformed(line_no, "empty id".into()));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Parameters of the synthetic topic-clustered corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_clusters: usize,
    pub doc_len_mean: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 10_000,
            vocab_size: 5_000,
            n_clusters: 2_000,
            doc_len_mean: 20.0,
            seed: 1,
        }
    }
}

/// Probability that a token comes from the document's cluster topic rather
/// than the background distribution.
const TOPIC_MIX: f64 = 0.75;

fn zipf_weights(len: usize) -> Vec<f64> {
    (0..len).map(|r| 1.0 / (r as f64 + 1.0)).collect()
}

pub fn synthetic_term(idx: usize) -> String {
    format!("w{idx}")
}

/// Generates a topic-clustered corpus.
///
/// Each cluster owns a random topic vocabulary with Zipfian term popularity.
/// A document picks one cluster, opens with that cluster's anchor term and
/// draws the rest of its tokens from the topic (with probability 0.75) or a
/// corpus-wide Zipfian background.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<RawDocument>> {
    if spec.n_docs == 0 || spec.vocab_size == 0 || spec.n_clusters == 0 {
        return Err(Error::InvalidParameter(
            "synthetic corpus needs n_docs, vocab_size and n_clusters >= 1".into(),
        ));
    }
    if !(spec.doc_len_mean.is_finite() && spec.doc_len_mean >= 1.0) {
        return Err(Error::InvalidParameter("doc_len_mean must be >= 1".into()));
    }
    let topic_size = (2 * spec.vocab_size / spec.n_clusters).clamp(4.min(spec.vocab_size), spec.vocab_size);
    let topics: Vec<Vec<usize>> = (0..spec.n_clusters)
        .map(|c| {
            let mut rng = seed::rng(seed::derive_many(spec.seed, &[1, c as u64]));
            rand::seq::index::sample(&mut rng, spec.vocab_size, topic_size).into_vec()
        })
        .collect();
    let topic_dist = WeightedIndex::new(zipf_weights(topic_size)).expect("nonempty weights");
    let background = WeightedIndex::new(zipf_weights(spec.vocab_size)).expect("nonempty weights");
    let extra_len = Poisson::new(spec.doc_len_mean - 1.0).ok();

    let width = spec.n_docs.to_string().len();
    let mut rng = seed::rng(seed::derive(spec.seed, 0));
    let mut docs = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let cluster = rng.random_range(0..spec.n_clusters);
        let topic = &topics[cluster];
        let len = 1 + extra_len.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut tokens = Vec::with_capacity(len);
        tokens.push(synthetic_term(topic[0]));
        for _ in 1..len {
            let term = if rng.random_bool(TOPIC_MIX) {
                topic[topic_dist.sample(&mut rng)]
            } else {
                background.sample(&mut rng)
            };
            tokens.push(synthetic_term(term));
        }
        docs.push(RawDocument::new(format!("d{i:0width$}"), tokens.join(" ")));
    }
    Ok(docs)
}

/// Samples `n` distinct documents as queries, in sampling order. Query ids
/// are `q-<doc id>`.
pub fn sample_queries(docs: &[RawDocument], n: usize, seed: u64) -> Vec<RawDocument> {
    let n = n.min(docs.len());
    let mut rng = seed::rng(seed::derive(seed, 0x5155));
    rand::seq::index::sample(&mut rng, docs.len(), n)
        .into_iter()
        .map(|i| RawDocument::new(format!("q-{}", docs[i].id), docs[i].text.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn none() -> Stopwords {
        Stopwords::new()
    }

    #[test]
    fn tokenize_examples() {
        let stop: Stopwords = ["the".to_string()].into_iter().collect();
        assert_eq!(tokenize("The cat sat", &stop), vec!["cat", "sat"]);
        assert!(tokenize("", &none()).is_empty());
        assert_eq!(tokenize("Cat cat CAT", &none()), vec!["cat", "cat", "cat"]);
        assert_eq!(tokenize("a-b,,c42", &none()), vec!["a", "b", "c42"]);
    }

    #[test]
    fn stats_counting() {
        let docs = vec![RawDocument::new("a", "x y"), RawDocument::new("b", "x")];
        let stats = CorpusStats::build(&docs, &none()).unwrap();
        assert_eq!(stats.n_docs(), 2);
        assert_eq!(stats.doc_freq("x"), 2);
        assert_eq!(stats.doc_freq("y"), 1);

        let stats = CorpusStats::build(&[RawDocument::new("e", "")], &none()).unwrap();
        assert_eq!(stats.n_docs(), 1);
        assert_eq!(stats.vocabulary_len(), 0);
    }

    #[test]
    fn stats_doc_freq_matches_brute_force_count() {
        let docs: Vec<_> = (0..100)
            .map(|i| {
                let text = if i % 10 == 3 { format!("a{i} z z b") } else { format!("a{i} b") };
                RawDocument::new(format!("d{i}"), text)
            })
            .collect();
        let stats = CorpusStats::build(&docs, &none()).unwrap();
        let brute = docs
            .iter()
            .filter(|d| tokenize(&d.text, &none()).iter().any(|t| t == "z"))
            .count();
        assert_eq!(brute, 10);
        assert_eq!(stats.doc_freq("z"), 10);
        assert_eq!(stats.doc_freq("b"), 100);
        for (_, df) in stats.terms() {
            assert!(df >= 1 && df <= stats.n_docs());
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let docs = vec![RawDocument::new("a", "x"), RawDocument::new("a", "y")];
        assert!(matches!(
            CorpusStats::build(&docs, &none()),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn tf_idf_hand_values() {
        // sqrt(4) * (ln(100 / 10) + 1)
        let w = tf_idf(4, 100, 9);
        assert!((w - 2.0 * (10f64.ln() + 1.0)).abs() < 1e-12);
        assert!((w - 6.6052).abs() < 1e-4);
        assert_eq!(tf_idf(1, 10, 9), 1.0);
    }

    #[test]
    fn weight_document_uses_global_stats() {
        let docs = vec![
            RawDocument::new("a", "x x x x y"),
            RawDocument::new("b", "y"),
            RawDocument::new("c", "the"),
        ];
        let stop: Stopwords = ["the".to_string()].into_iter().collect();
        let stats = CorpusStats::build(&docs, &stop).unwrap();
        let d = weight_document(&docs[0], &stats, &stop).unwrap();
        assert!((d.weight("x").unwrap() - 2.0 * ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);
        assert!((d.weight("y").unwrap() - ((3.0f64 / 3.0).ln() + 1.0)).abs() < 1e-12);
        let norm2: f64 = d.weights().iter().map(|(_, w)| w * w).sum();
        assert!((d.norm() * d.norm() - norm2).abs() <= 1e-9 * norm2);

        assert!(matches!(
            weight_document(&docs[2], &stats, &stop),
            Err(Error::EmptyDocument(id)) if id == "c"
        ));
    }

    #[test]
    fn unseen_query_terms_use_zero_doc_freq() {
        let docs = vec![RawDocument::new("a", "x"), RawDocument::new("b", "y")];
        let stats = CorpusStats::build(&docs, &none()).unwrap();
        let q = weight_query(&RawDocument::new("q", "novel"), &stats, &none());
        assert_eq!(q.weights().len(), 1);
        assert!((q.weights()[0].1 - (2f64.ln() + 1.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weight_monotone_in_tf(a in 1u32..1000, b in 1u32..1000, n in 1usize..10_000, df_frac in 0.0f64..1.0) {
            let df = ((n as f64) * df_frac) as usize;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(tf_idf(lo, n, df) <= tf_idf(hi, n, df));
        }

        #[test]
        fn stored_norm_matches_weights(words in proptest::collection::vec("[a-e]{1,2}", 1..30)) {
            let text = words.join(" ");
            let docs = vec![RawDocument::new("d", text.clone()), RawDocument::new("e", "a b")];
            let stats = CorpusStats::build(&docs, &none()).unwrap();
            let d1 = weight_document(&docs[0], &stats, &none()).unwrap();
            let d2 = weight_document(&docs[0], &stats, &none()).unwrap();
            prop_assert_eq!(&d1, &d2);
            let norm2: f64 = d1.weights().iter().map(|(_, w)| w * w).sum();
            prop_assert!((d1.norm().powi(2) - norm2).abs() <= 1e-9 * norm2);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            n_docs: 200,
            vocab_size: 300,
            n_clusters: 5,
            doc_len_mean: 20.0,
            seed: 9,
        };
        let a = generate_synthetic_corpus(&spec).unwrap();
        let b = generate_synthetic_corpus(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        let other = generate_synthetic_corpus(&SyntheticSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn single_cluster_shares_core_term() {
        let spec = SyntheticSpec {
            n_docs: 300,
            vocab_size: 500,
            n_clusters: 1,
            doc_len_mean: 10.0,
            seed: 3,
        };
        let docs = generate_synthetic_corpus(&spec).unwrap();
        let stats = CorpusStats::build(&docs, &none()).unwrap();
        let common: Vec<_> = stats.terms().filter(|&(_, df)| df == docs.len()).collect();
        assert!(!common.is_empty());
    }

    #[test]
    fn load_reports_malformed_line() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for i in 0..6 {
            writeln!(file, r#"{{"id": "d{i}", "text": "hello world"}}"#).unwrap();
        }
        writeln!(file, "{{not json").unwrap();
        let err = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap_err();
        match err {
            Error::Malformed { line, .. } => assert_eq!(line, 7),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn load_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"id": "a", "text": "x y"}}"#).unwrap();
        writeln!(file).unwrap();
        writeln!(file, r#"{{"id": "b", "text": "z"}}"#).unwrap();
        let docs = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(docs, vec![RawDocument::new("a", "x y"), RawDocument::new("b", "z")]);

        let mut tsv = tempfile::NamedTempFile::new().unwrap();
        writeln!(tsv, "a\tx y").unwrap();
        let docs = load_corpus(tsv.path(), CorpusFormat::Tsv).unwrap();
        assert_eq!(docs, vec![RawDocument::new("a", "x y")]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_corpus(Path::new("/nonexistent/corpus.jsonl"), CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }
}
