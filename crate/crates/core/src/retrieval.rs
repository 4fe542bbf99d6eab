//! Lexical relevance scoring shared by tool and example retrieval.
//!
//! Documents and queries become binary term-presence vectors weighted by a
//! smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`, and are
//! compared by cosine similarity. Presence weighting keeps the score
//! monotone when a document gains a term the query contains.

use std::collections::{BTreeSet, HashMap};

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Anything that scores a query against a fixed corpus. Implementations must
/// return one score in `[0, 1]` per document, in corpus order.
pub trait RelevanceScorer {
    fn scores(&self, query: &str) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    n_docs: usize,
    df: HashMap<String, usize>,
    docs: Vec<BTreeSet<String>>,
}

impl TfIdfIndex {
    pub fn new<S: AsRef<str>>(corpus: &[S]) -> Self {
        let docs: Vec<BTreeSet<String>> = corpus.iter().map(|d| tokenize(d.as_ref()).into_iter().collect()).collect();
        let mut df = HashMap::new();
        for doc in &docs {
            for term in doc {
                *df.entry(term.clone()).or_insert(0) += 1;
            }
        }
        Self {
            n_docs: docs.len(),
            df,
            docs,
        }
    }

    pub fn len(&self) -> usize {
        self.n_docs
    }

    pub fn is_empty(&self) -> bool {
        self.n_docs == 0
    }

    /// Frozen corpus IDF; terms outside the corpus have `df = 0`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    fn cosine(&self, query: &BTreeSet<String>, doc: &BTreeSet<String>) -> f64 {
        let norm = |terms: &BTreeSet<String>| terms.iter().map(|t| self.idf(t).powi(2)).sum::<f64>().sqrt();
        let (nq, nd) = (norm(query), norm(doc));
        if nq == 0.0 || nd == 0.0 {
            return 0.0;
        }
        let dot: f64 = query.intersection(doc).map(|t| self.idf(t).powi(2)).sum();
        (dot / (nq * nd)).clamp(0.0, 1.0)
    }

    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let q: BTreeSet<String> = tokenize(query).into_iter().collect();
        self.cosine(&q, &self.docs[doc])
    }

    /// Scores arbitrary document text against the frozen corpus IDF.
    pub fn score_text(&self, query: &str, doc_text: &str) -> f64 {
        let q: BTreeSet<String> = tokenize(query).into_iter().collect();
        let d: BTreeSet<String> = tokenize(doc_text).into_iter().collect();
        self.cosine(&q, &d)
    }
}

impl RelevanceScorer for TfIdfIndex {
    fn scores(&self, query: &str) -> Vec<f64> {
        let q: BTreeSet<String> = tokenize(query).into_iter().collect();
        self.docs.iter().map(|d| self.cosine(&q, d)).collect()
    }
}

/// Top-`k` indices by score descending, ties broken by `ids` ascending.
pub fn rank_top_k<S: AsRef<str>>(scores: &[f64], ids: &[S], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("Load CSV to object_store!"), ["load", "csv", "to", "object", "store"]);
    }

    #[test]
    fn verbatim_query_scores_one() {
        let idx = TfIdfIndex::new(&["extract rows from a local directory", "write rows to a table"]);
        assert!((idx.score("extract rows from a local directory", 0) - 1.0).abs() < 1e-12);
        assert_eq!(idx.score("zebra", 0), 0.0);
    }

    #[test]
    fn ties_break_by_id() {
        let ranked = rank_top_k(&[0.5, 0.9, 0.5], &["b", "c", "a"], 3);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 2, 0]);
    }
}
