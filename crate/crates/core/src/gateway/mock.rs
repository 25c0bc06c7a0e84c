//! Offline backends: fixture replay for chat and hashed vectors for embeddings.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv1a64, ChatBackend, EmbedBackend, EmbeddingVector, PreparedRequest};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::retrieval::tokenize;

/// One line of a mock fixture file. Audit logs carry extra keys and can be
/// replayed as fixtures directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub template: String,
    pub fingerprint: String,
    pub response: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockChat {
    responses: HashMap<(String, String), String>,
}

impl MockChat {
    pub fn new(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut responses = HashMap::new();
        for e in entries {
            // later lines win so re-recorded fixtures can be appended
            responses.insert((e.template, e.fingerprint), e.response);
        }
        Self { responses }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::new(jsonl::read::<FixtureEntry>(path)?))
    }

    pub fn insert(&mut self, template: &str, fingerprint: &str, response: impl Into<String>) {
        self.responses
            .insert((template.to_string(), fingerprint.to_string()), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for MockChat {
    fn chat(&self, req: &PreparedRequest<'_>) -> Result<String> {
        self.responses
            .get(&(req.template.to_string(), req.fingerprint.clone()))
            .cloned()
            .ok_or_else(|| Error::Fixture {
                template: req.template.to_string(),
                fingerprint: req.fingerprint.clone(),
            })
    }

    fn is_mock(&self) -> bool {
        true
    }
}

/// Deterministic unit vectors. Each token of the lowercased text seeds a
/// pseudo-random direction and the text vector is their normalised sum, so
/// texts sharing words land near each other. Text without word tokens falls
/// back to a direction seeded by the whole lowercased text.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dim: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn direction(&self, seed: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in out.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let lower = text.to_lowercase();
        let mut values = vec![0.0; self.dim];
        for token in tokenize(&lower) {
            self.direction(fnv1a64(token.as_bytes()), &mut values);
        }
        let mut norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            values.iter_mut().for_each(|v| *v = 0.0);
            self.direction(fnv1a64(lower.as_bytes()), &mut values);
            norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        values.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector { values }
    }
}

impl EmbedBackend for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if self.dim == 0 {
            return Err(Error::Backend("mock embedder dim must be positive".into()));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts_embed_identically() {
        let e = MockEmbedder::default();
        let v = e.embed(&["a".into(), "a".into(), "A".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0], v[2]);
    }

    #[test]
    fn vectors_are_unit_length() {
        let e = MockEmbedder::new(32);
        let texts: Vec<String> = ["board appeal", "", "???", "fax 844-678-8979", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for v in e.embed(&texts).unwrap() {
            assert_eq!(v.dim(), 32);
            assert!((v.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shared_words_raise_similarity() {
        let e = MockEmbedder::default();
        let a = e.embed_one("board appeal by fax");
        let b = e.embed_one("appeal by fax");
        let c = e.embed_one("driver license renewal");
        let dot = |x: &EmbeddingVector, y: &EmbeddingVector| -> f64 {
            x.values.iter().zip(&y.values).map(|(p, q)| p * q).sum()
        };
        assert!(dot(&a, &b) > dot(&a, &c));
    }

    #[test]
    fn fixture_miss_names_key() {
        let m = MockChat::default();
        let req = PreparedRequest {
            template: "p2_1_dialog",
            fingerprint: "00ff".into(),
            prompt: String::new(),
            max_tokens: 1,
            temperature: 0.0,
        };
        match m.chat(&req) {
            Err(Error::Fixture { template, fingerprint }) => {
                assert_eq!(template, "p2_1_dialog");
                assert_eq!(fingerprint, "00ff");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
