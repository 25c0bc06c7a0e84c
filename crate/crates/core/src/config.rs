//! Run configuration. Precedence: command-line flags, then the TOML config
//! file, then environment variables, then built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{
    ChatBackend, Gateway, HttpClient, HttpRewriter, LiveChat, LiveEmbedder, MockChat, MockEmbedder,
    PreparedRequest, RetryPolicy, DEFAULT_PARALLELISM,
};
use crate::retrieval::{Bm25Params, DEFAULT_RRF_DEPTH, DEFAULT_RRF_K, DEFAULT_TOP_K};
use crate::rewrite::DEFAULT_HISTORY_PAIRS;
use crate::corpus::DEFAULT_SUBLIST_SIZE;
use crate::synth::{SynthConfig, UnitKind};

pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_LLM_BASE_URL: &str = "LLM_BASE_URL";
pub const ENV_EMBED_BASE_URL: &str = "EMBED_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Live,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(Backend::Mock),
            "live" => Ok(Backend::Live),
            _ => Err(Error::Argument(format!("unknown backend `{s}` (expected mock or live)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw corpus: a directory of .txt files or a documents .jsonl.
    pub corpus: PathBuf,
    pub documents: PathBuf,
    pub propositions: PathBuf,
    pub dialogs: PathBuf,
    pub indexes: PathBuf,
    /// Mock chat fixture (JSONL of template, fingerprint, response).
    pub fixtures: PathBuf,
    pub reports: PathBuf,
    /// Precomputed proposition vectors to import instead of embedding.
    pub vectors: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        let work = PathBuf::from("work");
        Self {
            corpus: PathBuf::from("corpus"),
            documents: work.join("documents.jsonl"),
            propositions: work.join("propositions.jsonl"),
            dialogs: work.join("dialogs.jsonl"),
            indexes: work.join("indexes"),
            fixtures: PathBuf::from("mock_llm.jsonl"),
            reports: work.join("reports"),
            vectors: None,
            audit_log: None,
        }
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.documents,
            &mut self.propositions,
            &mut self.dialogs,
            &mut self.indexes,
            &mut self.fixtures,
            &mut self.reports,
        ] {
            fix(p);
        }
        if let Some(p) = self.vectors.as_mut() {
            fix(p);
        }
        if let Some(p) = self.audit_log.as_mut() {
            fix(p);
        }
    }

    pub fn bm25_index(&self) -> PathBuf {
        self.indexes.join("bm25.json")
    }

    pub fn dense_index(&self) -> PathBuf {
        self.indexes.join("dense.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub chat_url: Option<String>,
    pub model: Option<String>,
    pub embed_url: Option<String>,
    pub rewriter_url: Option<String>,
    pub max_tokens: u32,
    pub rewriter_max_tokens: u32,
    pub temperature: f64,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
    pub timeout_secs: u64,
    /// Dimension of the mock embedder.
    pub mock_embed_dim: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            chat_url: None,
            model: None,
            embed_url: None,
            rewriter_url: None,
            max_tokens: 4096,
            rewriter_max_tokens: 128,
            temperature: 0.0,
            max_retries: retry.max_retries,
            retry_base_delay_ms: retry.base_delay.as_millis() as u64,
            timeout_secs: 120,
            mock_embed_dim: MockEmbedder::default().dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: Backend,
    pub paths: Paths,
    pub n: usize,
    pub units: UnitKind,
    pub bm25: Bm25Params,
    pub rrf_k: u32,
    pub rrf_depth: usize,
    pub top_k: usize,
    pub history_h: usize,
    pub seeds: Vec<u64>,
    /// Keep only documents of this domain at ingest time.
    pub domain: Option<String>,
    pub use_order_seed: Option<u64>,
    pub parallelism: usize,
    pub llm: LlmSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            paths: Paths::default(),
            n: DEFAULT_SUBLIST_SIZE,
            units: UnitKind::Propositions,
            bm25: Bm25Params::TUNED,
            rrf_k: DEFAULT_RRF_K,
            rrf_depth: DEFAULT_RRF_DEPTH,
            top_k: DEFAULT_TOP_K,
            history_h: DEFAULT_HISTORY_PAIRS,
            seeds: vec![1, 2, 3],
            domain: None,
            use_order_seed: None,
            parallelism: DEFAULT_PARALLELISM,
            llm: LlmSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    /// Reads `path` if given, otherwise starts from defaults, then fills
    /// unset endpoints from the environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new("."));
                Self::from_toml(&text, base)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if self.llm.chat_url.is_none() {
            self.llm.chat_url = get(ENV_LLM_BASE_URL).filter(|s| !s.is_empty());
        }
        if self.llm.embed_url.is_none() {
            self.llm.embed_url = get(ENV_EMBED_BASE_URL).filter(|s| !s.is_empty());
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.rrf_k < 1 {
            return Err(Error::Config("rrf_k must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.parallelism < 1 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !(self.llm.temperature >= 0.0) {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        self.bm25.validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n: self.n,
            units: self.units,
            bm25: self.bm25,
            max_tokens: self.llm.max_tokens,
            temperature: self.llm.temperature,
            use_order_seed: self.use_order_seed,
            parallelism: self.parallelism,
            ..SynthConfig::default()
        }
    }

    fn http_client(&self) -> HttpClient {
        HttpClient::new(
            std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty()),
            RetryPolicy {
                max_retries: self.llm.max_retries,
                base_delay: Duration::from_millis(self.llm.retry_base_delay_ms),
            },
            Duration::from_secs(self.llm.timeout_secs),
        )
    }

    /// Mock: fixture-backed chat (empty if the fixture file is absent) plus
    /// the hashing embedder. Live: HTTP chat and, if configured, embeddings.
    pub fn gateway(&self) -> Result<Gateway> {
        let gw = match self.backend {
            Backend::Mock => {
                let chat = if self.paths.fixtures.exists() {
                    MockChat::from_file(&self.paths.fixtures)?
                } else {
                    log::debug!("no mock fixture at {}", self.paths.fixtures.display());
                    MockChat::default()
                };
                Gateway::new(Box::new(chat)).with_embedder(Box::new(MockEmbedder::new(self.llm.mock_embed_dim)))
            }
            Backend::Live => {
                let chat: Box<dyn ChatBackend> = match (&self.llm.chat_url, &self.llm.model) {
                    (Some(url), Some(model)) => Box::new(LiveChat::new(url, model, self.http_client())),
                    _ => Box::new(Unconfigured),
                };
                let mut gw = Gateway::new(chat);
                if let Some(url) = &self.llm.embed_url {
                    gw = gw.with_embedder(Box::new(LiveEmbedder::new(url, self.http_client())));
                }
                gw
            }
        };
        let gw = gw.with_parallelism(self.parallelism);
        match &self.paths.audit_log {
            Some(p) => gw.with_audit_log(p),
            None => Ok(gw),
        }
    }

    pub fn http_rewriter(&self) -> Option<HttpRewriter> {
        self.llm
            .rewriter_url
            .as_ref()
            .map(|u| HttpRewriter::new(u, self.llm.rewriter_max_tokens, self.http_client()))
    }
}

/// Chat backend used when no live endpoint is configured.
struct Unconfigured;

impl ChatBackend for Unconfigured {
    fn chat(&self, req: &PreparedRequest<'_>) -> Result<String> {
        Err(Error::Config(format!(
            "template `{}` needs a chat endpoint: set llm.chat_url and llm.model or {ENV_LLM_BASE_URL}",
            req.template
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.n, c.rrf_k, c.top_k, c.history_h), (30, 60, 20, 1));
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.bm25, Bm25Params { k1: 0.05, b: 5.0 });
        assert_eq!(c.rrf_depth, 100);
        c.validate().unwrap();
    }

    #[test]
    fn toml_overrides_and_paths_resolve() {
        let c = RunConfig::from_toml(
            "n = 8\nseeds = [7]\n[bm25]\nk1 = 1.2\nb = 0.75\n[paths]\ncorpus = \"docs\"\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(c.n, 8);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.bm25, Bm25Params::CONVENTIONAL);
        assert_eq!(c.paths.corpus, PathBuf::from("/base/docs"));
        assert_eq!(c.paths.dialogs, PathBuf::from("/base/work/dialogs.jsonl"));
        assert!(RunConfig::from_toml("bogus = 1", Path::new(".")).is_err());
    }

    #[test]
    fn env_fills_only_unset_endpoints() {
        let env = |k: &str| match k {
            ENV_LLM_BASE_URL => Some("http://env-chat".to_string()),
            ENV_EMBED_BASE_URL => Some("http://env-embed".to_string()),
            _ => None,
        };
        let mut c = RunConfig::from_toml("[llm]\nchat_url = \"http://file-chat\"\n", Path::new(".")).unwrap();
        c.apply_env(env);
        assert_eq!(c.llm.chat_url.as_deref(), Some("http://file-chat"));
        assert_eq!(c.llm.embed_url.as_deref(), Some("http://env-embed"));
    }

    #[test]
    fn unconfigured_live_chat_reports_config_error() {
        let c = RunConfig {
            backend: Backend::Live,
            ..RunConfig::default()
        };
        let gw = c.gateway().unwrap();
        let req = crate::gateway::CompletionRequest::new(crate::gateway::TemplateName::Rewriter).bind("input", "x");
        assert!(matches!(gw.complete(&req), Err(Error::Config(_))));
        assert!(!gw.has_embedder());
    }
}
