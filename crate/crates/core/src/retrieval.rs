//! In-memory inverted index with top-k scoring.
//!
//! `score(q, d) = sum_t w_q(t) * w_d(t) / ||d||`. The query norm is left out
//! since it does not change the ranking. Partial sums are accumulated in query
//! term order, so a document scores the exact same `f64` in every index that
//! contains it; shard results and the centralized ranking can be merged and
//! compared without tolerance.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::corpus::{DocId, QueryVector, WeightedDocument};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredResult {
    pub doc_id: DocId,
    pub score: f64,
}

/// Ranking order: score descending, then doc id ascending.
pub fn rank_order(a: &ScoredResult, b: &ScoredResult) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Clone, Debug, Default)]
pub struct InvertedIndex {
    /// Sorted; a document's position is its local ordinal.
    doc_ids: Vec<DocId>,
    doc_norms: Vec<f64>,
    /// Term -> (local ordinal, weight), sorted by ordinal.
    postings: HashMap<String, Vec<(u32, f64)>>,
}

impl InvertedIndex {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a WeightedDocument>) -> Result<Self> {
        let mut docs: Vec<&WeightedDocument> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.id().cmp(b.id()));
        if let Some(w) = docs.windows(2).find(|w| w[0].id() == w[1].id()) {
            return Err(Error::DuplicateId(w[0].id().to_string()));
        }
        let mut postings: HashMap<String, Vec<(u32, f64)>> = HashMap::new();
        for (ord, doc) in docs.iter().enumerate() {
            for (term, w) in doc.weights() {
                postings.entry(term.clone()).or_default().push((ord as u32, *w));
            }
        }
        Ok(Self {
            doc_ids: docs.iter().map(|d| d.id().clone()).collect(),
            doc_norms: docs.iter().map(|d| d.norm()).collect(),
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[DocId] {
        &self.doc_ids
    }

    pub fn contains(&self, id: &DocId) -> bool {
        self.doc_ids.binary_search(id).is_ok()
    }

    pub fn norm(&self, id: &DocId) -> Option<f64> {
        self.doc_ids.binary_search(id).ok().map(|i| self.doc_norms[i])
    }

    pub fn postings(&self, term: &str) -> &[(u32, f64)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    /// Top-`k` documents sharing at least one term with `query`.
    pub fn search(&self, query: &QueryVector, k: usize) -> Vec<ScoredResult> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut acc = vec![0.0f64; self.len()];
        let mut touched: Vec<u32> = Vec::new();
        let mut hit = vec![false; self.len()];
        for (term, wq) in query.weights() {
            for &(ord, wd) in self.postings(term) {
                let o = ord as usize;
                if !hit[o] {
                    hit[o] = true;
                    touched.push(ord);
                }
                acc[o] += wq * wd;
            }
        }
        let norm_score = |ord: u32| acc[ord as usize] / self.doc_norms[ord as usize];
        // Within one index ordinal order equals doc id order.
        let cmp = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let mut scored: Vec<(f64, u32)> = touched.into_iter().map(|o| (norm_score(o), o)).collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored
            .into_iter()
            .map(|(score, ord)| ScoredResult {
                doc_id: self.doc_ids[ord as usize].clone(),
                score,
            })
            .collect()
    }
}

/// `S_C^m(q)`: the centralized top-`m` doc ids, in rank order.
pub fn centralized_topm(full_index: &InvertedIndex, query: &QueryVector, m: usize) -> Vec<DocId> {
    full_index
        .search(query, m)
        .into_iter()
        .map(|r| r.doc_id)
        .collect()
}

/// Unions result lists, drops duplicate doc ids, ranks and keeps the top `m`.
pub fn merge_results<'a>(
    lists: impl IntoIterator<Item = &'a [ScoredResult]>,
    m: usize,
) -> Vec<ScoredResult> {
    let mut seen = HashSet::new();
    let mut merged: Vec<ScoredResult> = lists
        .into_iter()
        .flatten()
        .filter(|r| seen.insert(r.doc_id.clone()))
        .cloned()
        .collect();
    merged.sort_by(rank_order);
    merged.truncate(m);
    merged
}
