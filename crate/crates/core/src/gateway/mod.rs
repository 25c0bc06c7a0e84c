//! Boundary to external chat-completion and embedding services.
//!
//! A [`Gateway`] renders a named prompt template, sends it to a chat backend
//! and optionally appends the exchange to a JSONL audit log. Audit logs use
//! the same keys as mock fixture files, so a live run can be replayed offline.

mod live;
mod mock;
mod structured;
mod templates;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use live::{HttpClient, HttpRewriter, LiveChat, LiveEmbedder, RetryPolicy};
pub use mock::{FixtureEntry, MockChat, MockEmbedder};
pub use structured::extract_structured;
pub use templates::{render_prompt, PromptTemplate, TemplateName};

use crate::error::{Error, Result};

pub const DEFAULT_PARALLELISM: usize = 4;

/// FNV-1a, 64 bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stable key of a request: template name plus sorted bindings. Prompt
/// bodies are not part of it.
pub fn fingerprint(template: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(template.as_bytes());
    buf.push(0x1f);
    for (k, v) in bindings {
        buf.extend_from_slice(k.as_bytes());
        buf.push(0x1e);
        buf.extend_from_slice(v.as_bytes());
        buf.push(0x1f);
    }
    format!("{:016x}", fnv1a64(&buf))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub template: TemplateName,
    pub bindings: BTreeMap<String, String>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(template: TemplateName) -> Self {
        Self {
            template,
            bindings: BTreeMap::new(),
            max_tokens: 4096,
            temperature: 0.0,
        }
    }

    pub fn bind(mut self, key: &str, value: impl Into<String>) -> Self {
        self.bindings.insert(key.to_string(), value.into());
        self
    }
}

/// What a backend sees: the rendered prompt plus its replay key.
#[derive(Debug, Clone)]
pub struct PreparedRequest<'a> {
    pub template: &'a str,
    pub fingerprint: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &PreparedRequest<'_>) -> Result<String>;

    fn is_mock(&self) -> bool {
        false
    }
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("embedding vector must have positive dim".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("embedding vector has non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    template: &'a str,
    fingerprint: &'a str,
    response: &'a str,
    bindings: &'a BTreeMap<String, String>,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

pub struct Gateway {
    chat: Box<dyn ChatBackend>,
    embedder: Option<Box<dyn EmbedBackend>>,
    templates: BTreeMap<TemplateName, PromptTemplate>,
    audit: Option<Mutex<BufWriter<File>>>,
    limit: Semaphore,
    parallelism: usize,
}

impl Gateway {
    pub fn new(chat: Box<dyn ChatBackend>) -> Self {
        Self {
            chat,
            embedder: None,
            templates: TemplateName::ALL
                .into_iter()
                .map(|t| (t, t.template()))
                .collect(),
            audit: None,
            limit: Semaphore::new(DEFAULT_PARALLELISM),
            parallelism: DEFAULT_PARALLELISM,
        }
    }

    pub fn mock(fixtures: MockChat) -> Self {
        Self::new(Box::new(fixtures)).with_embedder(Box::new(MockEmbedder::default()))
    }

    pub fn with_embedder(mut self, embedder: Box<dyn EmbedBackend>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.limit = Semaphore::new(n);
        self.parallelism = n.max(1);
        self
    }

    pub fn with_template(mut self, name: TemplateName, body: impl Into<String>) -> Self {
        self.templates
            .insert(name, PromptTemplate::new(name.as_str(), body));
        self
    }

    /// Appends every completed exchange to `path`.
    pub fn with_audit_log(mut self, path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn is_mock(&self) -> bool {
        self.chat.is_mock()
    }

    pub fn has_embedder(&self) -> bool {
        self.embedder.is_some()
    }

    pub fn template(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn render(&self, req: &CompletionRequest) -> Result<String> {
        render_prompt(self.template(req.template), &req.bindings)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String> {
        if req.max_tokens == 0 {
            return Err(Error::Argument("max_tokens must be positive".into()));
        }
        if !(req.temperature >= 0.0 && req.temperature.is_finite()) {
            return Err(Error::Argument("temperature must be a finite value >= 0".into()));
        }
        let template = req.template.as_str();
        let prepared = PreparedRequest {
            template,
            fingerprint: fingerprint(template, &req.bindings),
            prompt: self.render(req)?,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        };
        let response = {
            let _permit = self.limit.acquire();
            self.chat.chat(&prepared)?
        };
        if let Some(audit) = &self.audit {
            let record = AuditRecord {
                template,
                fingerprint: &prepared.fingerprint,
                response: &response,
                bindings: &req.bindings,
                prompt: &prepared.prompt,
                max_tokens: req.max_tokens,
                temperature: req.temperature,
            };
            let mut w = audit.lock().unwrap_or_else(|e| e.into_inner());
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(response)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let embedder = self
            .embedder
            .as_ref()
            .ok_or_else(|| Error::State("no embedding backend configured".into()))?;
        if texts.is_empty() {
            return Err(Error::Argument("embed needs at least one text".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(Error::Argument(format!("text {i} is empty")));
        }
        let vectors = {
            let _permit = self.limit.acquire();
            embedder.embed(texts)?
        };
        if vectors.len() != texts.len() {
            return Err(Error::Backend(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].dim();
        if dim == 0 || vectors.iter().any(|v| v.dim() != dim) {
            return Err(Error::Backend("embedding batch has inconsistent dims".into()));
        }
        if vectors.iter().any(|v| v.values.iter().any(|x| !x.is_finite())) {
            return Err(Error::Backend("embedding batch has non-finite values".into()));
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn fingerprint_ignores_binding_insertion_order() {
        let mut a = BTreeMap::new();
        a.insert("x".to_string(), "1".to_string());
        a.insert("y".to_string(), "2".to_string());
        let mut b = BTreeMap::new();
        b.insert("y".to_string(), "2".to_string());
        b.insert("x".to_string(), "1".to_string());
        assert_eq!(fingerprint("t", &a), fingerprint("t", &b));
        assert_ne!(fingerprint("t", &a), fingerprint("u", &a));
        // separators keep key/value boundaries distinct
        let mut c = BTreeMap::new();
        c.insert("x1".to_string(), String::new());
        let mut d = BTreeMap::new();
        d.insert("x".to_string(), "1".to_string());
        assert_ne!(fingerprint("t", &c), fingerprint("t", &d));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn mock_returns_fixture_verbatim_and_audits() {
        let req = CompletionRequest::new(TemplateName::Step1Propositions).bind("text", "doc#7");
        let fp = fingerprint("step1_propositions", &req.bindings);
        let mut fixtures = MockChat::default();
        fixtures.insert("step1_propositions", &fp, "[\"A.\", \"B.\"]");
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("audit.jsonl");
        let gw = Gateway::mock(fixtures).with_audit_log(&log).unwrap();
        assert_eq!(gw.complete(&req).unwrap(), "[\"A.\", \"B.\"]");
        drop(gw);
        // the audit log replays as a fixture file
        let replay = Gateway::mock(MockChat::from_file(&log).unwrap());
        assert_eq!(replay.complete(&req).unwrap(), "[\"A.\", \"B.\"]");
    }

    #[test]
    fn rejects_bad_request_parameters() {
        let gw = Gateway::mock(MockChat::default());
        let mut req = CompletionRequest::new(TemplateName::Step1Propositions).bind("text", "x");
        req.max_tokens = 0;
        assert!(matches!(gw.complete(&req), Err(Error::Argument(_))));
        let mut req = CompletionRequest::new(TemplateName::Step1Propositions).bind("text", "x");
        req.temperature = -1.0;
        assert!(matches!(gw.complete(&req), Err(Error::Argument(_))));
        let req = CompletionRequest::new(TemplateName::Step1Propositions);
        assert!(matches!(gw.complete(&req), Err(Error::Template { .. })));
    }

    struct Ragged;
    impl EmbedBackend for Ragged {
        fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            Ok(texts
                .iter()
                .enumerate()
                .map(|(i, _)| EmbeddingVector { values: vec![1.0; i + 1] })
                .collect())
        }
    }

    #[test]
    fn embed_checks_batch_contract() {
        let gw = Gateway::new(Box::new(MockChat::default())).with_embedder(Box::new(Ragged));
        assert!(matches!(
            gw.embed(&["a".into(), "b".into()]),
            Err(Error::Backend(_))
        ));
        assert!(matches!(gw.embed(&[]), Err(Error::Argument(_))));
        assert!(matches!(gw.embed(&["".into()]), Err(Error::Argument(_))));
        let bare = Gateway::new(Box::new(MockChat::default()));
        assert!(matches!(bare.embed(&["a".into()]), Err(Error::State(_))));
    }

    struct Counting {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatBackend for Arc<Counting> {
        fn chat(&self, _req: &PreparedRequest<'_>) -> Result<String> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
    }

    #[test]
    fn in_flight_requests_are_bounded() {
        let counter = Arc::new(Counting {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(Box::new(counter.clone())).with_parallelism(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || {
                    let req = CompletionRequest::new(TemplateName::Rewriter).bind("input", i.to_string());
                    gw.complete(&req).unwrap();
                });
            }
        });
        assert!(counter.peak.load(Ordering::SeqCst) <= 2);
    }
}
