//! Sparse (BM25), dense (cosine) and fused (RRF) retrieval over the
//! proposition repository.

mod bm25;
mod dense;
mod fusion;
mod ranked;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bm25::{build_bm25, query_bm25, Bm25Index, Bm25Params, Posting};
pub use dense::{query_dense, DenseIndex, VectorRecord};
pub use fusion::{rrf_fuse, DEFAULT_RRF_K};
pub use ranked::{RankedList, ScoredItem};
pub use tokenize::tokenize;

use crate::error::{Error, Result};
use crate::gateway::Gateway;

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_RRF_DEPTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sparse,
    Dense,
    Rrf,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Sparse => "sparse",
            Strategy::Dense => "dense",
            Strategy::Rrf => "rrf",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" | "bm25" => Ok(Strategy::Sparse),
            "dense" => Ok(Strategy::Dense),
            "rrf" => Ok(Strategy::Rrf),
            _ => Err(Error::Argument(format!("unknown retriever `{s}`"))),
        }
    }
}

/// Dispatches queries to whichever indexes are loaded.
pub struct Retriever<'g> {
    pub bm25: Option<Bm25Index>,
    pub dense: Option<DenseIndex>,
    pub embedder: Option<&'g Gateway>,
    pub rrf_k: u32,
    pub rrf_depth: usize,
}

impl<'g> Retriever<'g> {
    pub fn new() -> Self {
        Self {
            bm25: None,
            dense: None,
            embedder: None,
            rrf_k: DEFAULT_RRF_K,
            rrf_depth: DEFAULT_RRF_DEPTH,
        }
    }

    pub fn with_bm25(mut self, index: Bm25Index) -> Self {
        self.bm25 = Some(index);
        self
    }

    pub fn with_dense(mut self, index: DenseIndex, embedder: &'g Gateway) -> Self {
        self.dense = Some(index);
        self.embedder = Some(embedder);
        self
    }

    fn sparse(&self, query: &str, k: usize) -> Result<RankedList> {
        self.bm25
            .as_ref()
            .ok_or_else(|| Error::State("sparse retrieval needs a BM25 index".into()))?
            .query(query, k)
    }

    fn dense_search(&self, query: &str, k: usize) -> Result<RankedList> {
        let index = self
            .dense
            .as_ref()
            .ok_or_else(|| Error::State("dense retrieval needs a dense index".into()))?;
        let gateway = self
            .embedder
            .filter(|g| g.has_embedder())
            .ok_or_else(|| Error::State("dense retrieval needs an embedding backend".into()))?;
        if query.trim().is_empty() {
            return Ok(RankedList::empty(query));
        }
        let v = gateway.embed(&[query.to_string()])?;
        index.query_with_id(query, &v[0].values, k)
    }

    pub fn retrieve(&self, strategy: Strategy, query: &str, k: usize) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        match strategy {
            Strategy::Sparse => self.sparse(query, k),
            Strategy::Dense => self.dense_search(query, k),
            Strategy::Rrf => {
                let depth = self.rrf_depth.max(k);
                let a = self.sparse(query, depth)?;
                let b = self.dense_search(query, depth)?;
                rrf_fuse(&a, &b, self.rrf_k, k)
            }
        }
    }
}

impl Default for Retriever<'_> {
    fn default() -> Self {
        Self::new()
    }
}
