use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub score: f64,
}

/// Retrieval output: scores non-increasing, ties by ascending id, ids unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<ScoredItem>,
}

pub(crate) fn rank_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts `scored` into rank order and keeps the best `k`.
    pub fn from_scores(
        query_id: impl Into<String>,
        scored: impl IntoIterator<Item = (String, f64)>,
        k: usize,
    ) -> Result<Self> {
        let mut entries: Vec<ScoredItem> = scored
            .into_iter()
            .map(|(id, score)| ScoredItem { id, score })
            .collect();
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("item `{}` ranked twice", e.id)));
            }
        }
        if k < entries.len() {
            entries.select_nth_unstable_by(k, rank_order);
            entries.truncate(k);
        }
        entries.sort_by(rank_order);
        Ok(Self {
            query_id: query_id.into(),
            entries,
        })
    }

    /// Takes an already ordered list of ids, scoring them by descending
    /// position (useful for rank lists without scores).
    pub fn from_ids<S: Into<String>>(query_id: impl Into<String>, ids: impl IntoIterator<Item = S>) -> Self {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        Self {
            query_id: query_id.into(),
            entries: ids
                .into_iter()
                .enumerate()
                .map(|(i, id)| ScoredItem {
                    id,
                    score: (n - i) as f64,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("item `{}` ranked twice", e.id)));
            }
        }
        for w in self.entries.windows(2) {
            if rank_order(&w[0], &w[1]) != Ordering::Less {
                return Err(Error::Validation(format!(
                    "`{}` ({}) ranked above `{}` ({})",
                    w[0].id, w[0].score, w[1].id, w[1].score
                )));
            }
        }
        Ok(())
    }
}
