//! Okapi BM25 over an in-memory inverted index.
//!
//! ```text
//! idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(t) = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
//! ```
//!
//! Every occurrence of a term in the query contributes once.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, RankedList};
use crate::error::{Error, Result};

const SNAPSHOT_FORMAT: &str = "propdial-bm25";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    /// Tuned values used for the proposition repository.
    pub const TUNED: Bm25Params = Bm25Params { k1: 0.05, b: 5.0 };
    /// The textbook setting.
    pub const CONVENTIONAL: Bm25Params = Bm25Params { k1: 1.2, b: 0.75 };

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.b.is_finite() && self.k1 >= 0.0 && self.b >= 0.0) {
            return Err(Error::Argument(format!(
                "BM25 params must be finite and non-negative, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::TUNED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub item: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    format: String,
    version: u32,
    params: Bm25Params,
    avg_doc_length: f64,
    ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build<I, S, T>(items: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        params.validate()?;
        let mut ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut seen = HashMap::new();
        for (id, text) in items {
            let id = id.into();
            let item = u32::try_from(ids.len())
                .map_err(|_| Error::Argument("too many items for one index".into()))?;
            if seen.insert(id.clone(), item).is_some() {
                return Err(Error::Validation(format!("duplicate item id `{id}`")));
            }
            let tokens = tokenize(text.as_ref());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens.iter() {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { item, tf: count });
            }
            ids.push(id);
            doc_lengths.push(tokens.len() as u32);
        }
        if ids.is_empty() {
            return Err(Error::Argument("cannot build a BM25 index over zero items".into()));
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let index = Self {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            params,
            avg_doc_length: total as f64 / ids.len() as f64,
            ids,
            doc_lengths,
            postings,
        };
        index.check_normalisation()?;
        Ok(index)
    }

    // With b > 1 the length norm can go negative for short items; reject
    // parameter/corpus combinations where a term's denominator is not positive.
    fn check_normalisation(&self) -> Result<()> {
        for list in self.postings.values() {
            for p in list {
                let denom = f64::from(p.tf) + self.params.k1 * self.length_norm(p.item);
                if denom <= 0.0 {
                    return Err(Error::Argument(format!(
                        "BM25 params k1={} b={} give a non-positive denominator for item `{}`",
                        self.params.k1, self.params.b, self.ids[p.item as usize]
                    )));
                }
            }
        }
        Ok(())
    }

    fn length_norm(&self, item: u32) -> f64 {
        let dl = f64::from(self.doc_lengths[item as usize]);
        1.0 - self.params.b + self.params.b * dl / self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|p| self.doc_lengths[p])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores of every item sharing at least one term with the query.
    pub fn score_all(&self, query: &str) -> Vec<(String, f64)> {
        let mut scores = vec![0.0f64; self.ids.len()];
        let mut hit = vec![false; self.ids.len()];
        let k1 = self.params.k1;
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for p in list {
                let tf = f64::from(p.tf);
                let denom = tf + k1 * self.length_norm(p.item);
                scores[p.item as usize] += idf * tf * (k1 + 1.0) / denom;
                hit[p.item as usize] = true;
            }
        }
        scores
            .into_iter()
            .zip(hit)
            .enumerate()
            .filter(|(_, (s, h))| *h && *s > 0.0)
            .map(|(i, (s, _))| (self.ids[i].clone(), s))
            .collect()
    }

    pub fn query(&self, query: &str, k: usize) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        RankedList::from_scores(query, self.score_all(query), k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let index: Self = serde_json::from_str(text)?;
        if index.format != SNAPSHOT_FORMAT || index.version != SNAPSHOT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported BM25 snapshot {} v{}",
                index.format, index.version
            )));
        }
        index.params.validate()?;
        if index.ids.len() != index.doc_lengths.len() || index.ids.is_empty() {
            return Err(Error::Validation("BM25 snapshot lengths are inconsistent".into()));
        }
        for list in index.postings.values() {
            if list.iter().any(|p| p.item as usize >= index.ids.len()) {
                return Err(Error::Validation("BM25 snapshot posting out of range".into()));
            }
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `query_bm25` in free-function form.
pub fn query_bm25(index: &Bm25Index, query: &str, k: usize) -> Result<RankedList> {
    index.query(query, k)
}

pub fn build_bm25<S: Into<String>, T: AsRef<str>>(
    items: impl IntoIterator<Item = (S, T)>,
    params: Bm25Params,
) -> Result<Bm25Index> {
    Bm25Index::build(items, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_token_docs() {
        let idx = Bm25Index::build([("a", "x"), ("b", "y"), ("c", "z")], Bm25Params::TUNED).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.avg_doc_length(), 1.0);
    }

    #[test]
    fn empty_and_duplicate_inputs_fail() {
        let none: Vec<(String, String)> = Vec::new();
        assert!(matches!(Bm25Index::build(none, Bm25Params::TUNED), Err(Error::Argument(_))));
        assert!(matches!(
            Bm25Index::build([("a", "x"), ("a", "y")], Bm25Params::TUNED),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rebuild_is_byte_identical_and_reload_answers_identically() {
        let items = [("d1", "board appeal by fax"), ("d2", "board appeal in person"), ("d3", "renew a license")];
        let a = Bm25Index::build(items, Bm25Params::TUNED).unwrap();
        let b = Bm25Index::build(items, Bm25Params::TUNED).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let reloaded = Bm25Index::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a.query("appeal fax", 5).unwrap(), reloaded.query("appeal fax", 5).unwrap());
    }

    #[test]
    fn zero_overlap_items_are_excluded() {
        let idx = Bm25Index::build([("d1", "cat"), ("d2", "dog")], Bm25Params::TUNED).unwrap();
        let r = idx.query("cat", 10).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["d1"]);
        assert!(idx.query("", 10).unwrap().is_empty());
        assert!(idx.query("bird", 10).unwrap().is_empty());
        assert!(idx.query("cat", 0).is_err());
    }

    #[test]
    fn k_larger_than_corpus_returns_all_matches() {
        let idx = Bm25Index::build([("d1", "a b"), ("d2", "a"), ("d3", "c")], Bm25Params::CONVENTIONAL).unwrap();
        assert_eq!(idx.query("a", 100).unwrap().len(), 2);
    }

    #[test]
    fn degenerate_params_are_rejected() {
        // dl/avgdl small enough that 1 + 1.2 * (1 - 5 + 5 * dl/avgdl) < 0
        let r = Bm25Index::build(
            [("s", "x"), ("l", "a b c d e f g h i j k l m n o p")],
            Bm25Params { k1: 1.2, b: 5.0 },
        );
        assert!(matches!(r, Err(Error::Argument(_))));
        assert!(Bm25Params { k1: -1.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: f64::NAN, b: 0.5 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn raising_tf_never_lowers_score(
            k1 in 0.01f64..3.0,
            b in 0.0f64..=1.0,
            base in 1usize..5,
            extra in 1usize..5,
        ) {
            // keep corpus statistics fixed: swap a filler token for the query term
            let filler = 8usize;
            let make = |tf: usize| {
                let mut words = vec!["q"; tf];
                words.extend(std::iter::repeat_n("f", filler + 10 - tf));
                words.join(" ")
            };
            let params = Bm25Params { k1, b };
            let lo = Bm25Index::build([("x", make(base)), ("y", "q z z".to_string()), ("w", "z".to_string())], params).unwrap();
            let hi = Bm25Index::build([("x", make(base + extra)), ("y", "q z z".to_string()), ("w", "z".to_string())], params).unwrap();
            let score = |idx: &Bm25Index| idx.score_all("q").into_iter().find(|(id, _)| id == "x").unwrap().1;
            prop_assert!(score(&hi) >= score(&lo));
        }
    }
}
