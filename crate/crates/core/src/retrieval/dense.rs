//! Exhaustive cosine-similarity search.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RankedList;
use crate::error::{Error, Result};
use crate::gateway::EmbeddingVector;
use crate::jsonl;

const SNAPSHOT_FORMAT: &str = "propdial-dense";
const SNAPSHOT_VERSION: u32 = 1;

/// One line of a precomputed-vector import file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    dim: usize,
    items: Vec<VectorRecord>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl DenseIndex {
    pub fn build(records: impl IntoIterator<Item = VectorRecord>) -> Result<Self> {
        let mut dim = 0;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut norms = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for r in records {
            if ids.is_empty() {
                dim = r.vector.len();
                if dim == 0 {
                    return Err(Error::Argument(format!("vector `{}` is empty", r.id)));
                }
            }
            if r.vector.len() != dim {
                return Err(Error::Argument(format!(
                    "vector `{}` has dim {}, expected {dim}",
                    r.id,
                    r.vector.len()
                )));
            }
            if r.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Argument(format!("vector `{}` has non-finite values", r.id)));
            }
            let n = norm(&r.vector);
            if n == 0.0 {
                return Err(Error::Argument(format!("vector `{}` has zero norm", r.id)));
            }
            if !seen.insert(r.id.clone()) {
                return Err(Error::Validation(format!("duplicate item id `{}`", r.id)));
            }
            data.extend_from_slice(&r.vector);
            norms.push(n);
            ids.push(r.id);
        }
        if ids.is_empty() {
            return Err(Error::Argument("cannot build a dense index over zero items".into()));
        }
        Ok(Self {
            dim,
            ids,
            data,
            norms,
        })
    }

    pub fn from_embeddings(ids: &[String], vectors: Vec<EmbeddingVector>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Argument("ids and vectors differ in length".into()));
        }
        Self::build(ids.iter().cloned().zip(vectors).map(|(id, v)| VectorRecord {
            id,
            vector: v.values,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn query(&self, query: &[f64], k: usize) -> Result<RankedList> {
        self.query_with_id("", query, k)
    }

    pub fn query_with_id(&self, query_id: &str, query: &[f64], k: usize) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Argument(format!(
                "query dim {} does not match index dim {}",
                query.len(),
                self.dim
            )));
        }
        let qn = norm(query);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::Argument("query vector has zero or non-finite norm".into()));
        }
        let scored = self.ids.iter().enumerate().map(|(i, id)| {
            let dot: f64 = self.vector(i).iter().zip(query).map(|(a, b)| a * b).sum();
            (id.clone(), dot / (self.norms[i] * qn))
        });
        RankedList::from_scores(query_id, scored, k)
    }

    pub fn import_jsonl(path: &Path) -> Result<Self> {
        Self::build(jsonl::read::<VectorRecord>(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let snapshot = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            dim: self.dim,
            items: self
                .ids
                .iter()
                .enumerate()
                .map(|(i, id)| VectorRecord {
                    id: id.clone(),
                    vector: self.vector(i).to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&snapshot)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Snapshot = serde_json::from_str(text)?;
        if s.format != SNAPSHOT_FORMAT || s.version != SNAPSHOT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dense snapshot {} v{}",
                s.format, s.version
            )));
        }
        let index = Self::build(s.items)?;
        if index.dim != s.dim {
            return Err(Error::Validation("dense snapshot dim disagrees with its vectors".into()));
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

pub fn query_dense(index: &DenseIndex, query: &[f64], k: usize) -> Result<RankedList> {
    index.query(query, k)
}
