//! Regenerates `fixtures/mock_llm.jsonl` from `fixtures/script.json`.
//!
//! Runs the command-line pipeline against a scripted chat backend that picks
//! its answer by looking for scripted content in each prompt, and records the
//! (template, fingerprint, response) of every call.
//!
//!     cargo run -p propdial --example record_fixture [fixtures/propdial.toml]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::Parser;
use propdial::cli::{run_with, Cli};
use propdial::config::RunConfig;
use propdial::gateway::{ChatBackend, FixtureEntry, Gateway, MockEmbedder, PreparedRequest, TemplateName};
use propdial::{Error, Result};
use serde::Deserialize;
use serde_json::{json, Map, Value};

#[derive(Deserialize)]
struct Script {
    propositions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    wrap_in_fence: BTreeSet<String>,
    dialogs: Vec<ScriptDialog>,
    responses: Vec<ScriptResponse>,
}

#[derive(Deserialize)]
struct ScriptDialog {
    anchor: String,
    pairs: Vec<ScriptPair>,
}

#[derive(Deserialize)]
struct ScriptPair {
    user: String,
    system: String,
    co: Option<String>,
    used: Vec<String>,
    evaluation: String,
    why: String,
}

#[derive(Deserialize)]
struct ScriptResponse {
    dialog: String,
    turn: usize,
    strategy: String,
    retriever: String,
    answer: String,
}

struct Scripted {
    script: Script,
    /// document id -> text, filled after ingest
    docs: Mutex<Vec<(String, String)>>,
    next_answer: Mutex<Option<String>>,
    recorded: Mutex<BTreeMap<(String, String), String>>,
}

impl Scripted {
    fn dialog_for(&self, prompt: &str, by_anchor: bool) -> Result<&ScriptDialog> {
        self.script
            .dialogs
            .iter()
            .find(|d| {
                if by_anchor {
                    prompt.contains(&d.anchor)
                } else {
                    d.pairs.len() > 1 && prompt.contains(&d.pairs[1].user)
                }
            })
            .ok_or_else(|| Error::Backend("no scripted dialog matches the prompt".into()))
    }

    fn indexed(d: &ScriptDialog, f: impl Fn(&ScriptPair) -> Value) -> String {
        let m: Map<String, Value> = d.pairs.iter().enumerate().map(|(i, p)| (i.to_string(), f(p))).collect();
        serde_json::to_string_pretty(&Value::Object(m)).unwrap()
    }

    fn answer(&self, req: &PreparedRequest<'_>) -> Result<String> {
        let prompt = req.prompt.as_str();
        match req.template.parse::<TemplateName>()? {
            TemplateName::Step1Propositions => {
                let docs = self.docs.lock().unwrap();
                let (id, _) = docs
                    .iter()
                    .find(|(_, text)| prompt.contains(text.as_str()))
                    .ok_or_else(|| Error::Backend("no document matches the prompt".into()))?;
                let props = self.script.propositions.get(id).cloned().unwrap_or_default();
                let body = serde_json::to_string_pretty(&props)?;
                Ok(if self.script.wrap_in_fence.contains(id) {
                    format!("Here are the propositions:\n```json\n{body}\n```")
                } else {
                    body
                })
            }
            TemplateName::P21Dialog => Ok(Self::indexed(self.dialog_for(prompt, true)?, |p| {
                json!({"<user>": p.user, "<system>": p.system})
            })),
            TemplateName::P22Contextualize => Ok(Self::indexed(self.dialog_for(prompt, false)?, |p| {
                json!({"<contextualized user>": p.co.as_ref().unwrap_or(&p.user), "<system>": p.system})
            })),
            TemplateName::P23Ground => Ok(Self::indexed(self.dialog_for(prompt, false)?, |p| {
                json!({"propositions_used": p.used, "explain_evaluation": p.why, "evaluation": p.evaluation})
            })),
            TemplateName::ResponseGen => self
                .next_answer
                .lock()
                .unwrap()
                .clone()
                .ok_or_else(|| Error::Backend("no scripted answer queued".into())),
            TemplateName::Rewriter => Err(Error::Backend("rewriter calls are not scripted".into())),
        }
    }
}

struct Shared(Arc<Scripted>);

impl ChatBackend for Shared {
    fn chat(&self, req: &PreparedRequest<'_>) -> Result<String> {
        let out = self.0.answer(req)?;
        self.0
            .recorded
            .lock()
            .unwrap()
            .insert((req.template.to_string(), req.fingerprint.clone()), out.clone());
        Ok(out)
    }

    fn is_mock(&self) -> bool {
        true
    }
}

fn cli(config: &Path, work: &Path, rest: &[&str]) -> Cli {
    let mut args = vec![
        "propdial".to_string(),
        "--config".into(),
        config.display().to_string(),
        "--work-dir".into(),
        work.display().to_string(),
    ];
    args.extend(rest.iter().map(|s| s.to_string()));
    Cli::parse_from(args)
}

fn main() -> Result<()> {
    env_logger::init();
    let config = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/propdial.toml".into()));
    let cfg = RunConfig::load(Some(&config))?;
    let script_path = config.with_file_name("script.json");
    let script: Script = serde_json::from_str(&std::fs::read_to_string(&script_path)?)?;
    let scripted = Arc::new(Scripted {
        script,
        docs: Mutex::new(Vec::new()),
        next_answer: Mutex::new(None),
        recorded: Mutex::new(BTreeMap::new()),
    });
    let factory = |c: &RunConfig| -> Result<Gateway> {
        Ok(Gateway::new(Box::new(Shared(scripted.clone())))
            .with_embedder(Box::new(MockEmbedder::new(c.llm.mock_embed_dim)))
            .with_parallelism(c.parallelism))
    };
    let work = tempfile::tempdir()?;
    run_with(&cli(&config, work.path(), &["ingest"]), &factory)?;
    let docs = propdial::corpus::DocumentSet::read_jsonl(&work.path().join("documents.jsonl"))?;
    *scripted.docs.lock().unwrap() = docs.iter().map(|d| (d.id.clone(), d.text.clone())).collect();
    for step in ["propose", "synthesize", "index"] {
        eprint!("{}", run_with(&cli(&config, work.path(), &[step]), &factory)?);
    }
    for r in &scripted.script.responses {
        *scripted.next_answer.lock().unwrap() = Some(r.answer.clone());
        let turn = r.turn.to_string();
        let args = [
            "respond", "--dialog", &r.dialog, "--turn", &turn, "--strategy", &r.strategy, "--retriever", &r.retriever,
        ];
        eprint!("{}", run_with(&cli(&config, work.path(), &args), &factory)?);
    }
    let entries: Vec<FixtureEntry> = scripted
        .recorded
        .lock()
        .unwrap()
        .iter()
        .map(|((template, fingerprint), response)| FixtureEntry {
            template: template.clone(),
            fingerprint: fingerprint.clone(),
            response: response.clone(),
        })
        .collect();
    let mut out = String::new();
    for e in &entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(&cfg.paths.fixtures, out)?;
    eprintln!("wrote {} fixture entries to {}", entries.len(), cfg.paths.fixtures.display());
    Ok(())
}
