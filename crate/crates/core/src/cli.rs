//! The `propdial` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Backend, RunConfig};
use crate::corpus::{load_documents, sentence_units, DocumentSet, PropositionSet};
use crate::error::{Error, Result};
use crate::eval::{corpus_stats, evaluate_retrieval, render_eval_table, render_stats_table, EvalOptions};
use crate::gateway::{CompletionRequest, Gateway, TemplateName};
use crate::jsonl;
use crate::retrieval::{Bm25Index, DenseIndex, Retriever, Strategy};
use crate::rewrite::{
    formulate, make_rewriter_training_pairs, write_training_tsv, Formulation, FormulationKind, MockRewriter,
    Rewriter,
};
use crate::synth::{
    extract_propositions, PropositionReport, read_dialogs, synthesize_dialogs, write_dialogs, Dialog, UnitKind,
};

pub const CANNOT_ANSWER: &str = "<cannot_answer>";
const EMBED_BATCH: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "propdial", version, about = "Synthesize grounded dialogs and evaluate conversational retrieval")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub backend: Option<Backend>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Directory for documents, propositions, dialogs, indexes and reports.
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub units: Option<String>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub rrf_k: Option<u32>,
    #[arg(long, global = true)]
    pub history_h: Option<usize>,
    /// Comma-separated split seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub domain: Option<String>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the raw corpus into a documents file.
    Ingest,
    /// Extract propositions (or split sentences) from the documents.
    Propose,
    /// Generate, annotate and filter dialogs.
    Synthesize,
    /// Build the BM25 and dense indexes over the propositions.
    Index,
    /// Run an ad-hoc query.
    Retrieve {
        query: String,
        #[arg(long, default_value = "rrf")]
        retriever: Strategy,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a query formulation with a retriever over seeded test splits.
    Evaluate {
        #[arg(long, default_value = "query_de")]
        strategy: FormulationKind,
        #[arg(long, default_value = "rrf")]
        retriever: Strategy,
        /// Print an aligned text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Corpus and dialog statistics.
    Stats {
        #[arg(long)]
        table: bool,
    },
    /// Answer one dialog turn from retrieved propositions.
    Respond {
        #[arg(long)]
        dialog: String,
        #[arg(long)]
        turn: usize,
        #[arg(long, default_value = "query_de")]
        strategy: FormulationKind,
        #[arg(long, default_value = "rrf")]
        retriever: Strategy,
    },
    /// Write rewriter training pairs as TSV.
    ExportPairs {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl GlobalArgs {
    /// Config file (or defaults) plus environment, then these flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(p) = &self.corpus {
            cfg.paths.corpus = p.clone();
        }
        if let Some(p) = &self.fixtures {
            cfg.paths.fixtures = p.clone();
        }
        if let Some(w) = &self.work_dir {
            cfg.paths.documents = w.join("documents.jsonl");
            cfg.paths.propositions = w.join("propositions.jsonl");
            cfg.paths.dialogs = w.join("dialogs.jsonl");
            cfg.paths.indexes = w.join("indexes");
            cfg.paths.reports = w.join("reports");
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(u) = &self.units {
            cfg.units = match u.as_str() {
                "propositions" => UnitKind::Propositions,
                "sentences" => UnitKind::Sentences,
                _ => return Err(Error::Argument(format!("unknown units `{u}`"))),
            };
        }
        if let Some(k) = self.top_k {
            cfg.top_k = k;
        }
        if let Some(k) = self.rrf_k {
            cfg.rrf_k = k;
        }
        if let Some(h) = self.history_h {
            cfg.history_h = h;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(d) = &self.domain {
            cfg.domain = Some(d.clone());
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.into(),
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn load_docs(cfg: &RunConfig) -> Result<DocumentSet> {
    require(&cfg.paths.documents, "ingest")?;
    DocumentSet::read_jsonl(&cfg.paths.documents)
}

fn load_props(cfg: &RunConfig) -> Result<PropositionSet> {
    require(&cfg.paths.propositions, "propose")?;
    PropositionSet::read_jsonl(&cfg.paths.propositions)
}

fn load_dialogs(cfg: &RunConfig) -> Result<Vec<Dialog>> {
    require(&cfg.paths.dialogs, "synthesize")?;
    read_dialogs(&cfg.paths.dialogs)
}

fn retriever<'g>(cfg: &RunConfig, strategy: Strategy, gw: &'g Gateway) -> Result<Retriever<'g>> {
    let mut r = Retriever::new();
    r.rrf_k = cfg.rrf_k;
    r.rrf_depth = cfg.rrf_depth;
    if matches!(strategy, Strategy::Sparse | Strategy::Rrf) {
        let p = cfg.paths.bm25_index();
        require(&p, "index")?;
        r = r.with_bm25(Bm25Index::load(&p)?);
    }
    if matches!(strategy, Strategy::Dense | Strategy::Rrf) {
        let p = cfg.paths.dense_index();
        require(&p, "index")?;
        r = r.with_dense(DenseIndex::load(&p)?, gw);
    }
    Ok(r)
}

fn rewriter(cfg: &RunConfig, kind: FormulationKind, dialogs: &[Dialog]) -> Result<Option<Box<dyn Rewriter>>> {
    if kind != FormulationKind::Rewriter {
        return Ok(None);
    }
    match cfg.backend {
        Backend::Mock => Ok(Some(Box::new(MockRewriter::from_dialogs(dialogs, cfg.history_h)))),
        Backend::Live => match cfg.http_rewriter() {
            Some(r) => Ok(Some(Box::new(r))),
            None => Err(Error::State("rewriter strategy needs llm.rewriter_url".into())),
        },
    }
}

fn formulation(cfg: &RunConfig, kind: FormulationKind) -> Formulation {
    Formulation {
        kind,
        history_pairs: cfg.history_h,
        rewriter_endpoint: cfg.llm.rewriter_url.clone(),
    }
}

fn cmd_ingest(cfg: &RunConfig) -> Result<String> {
    let docs = load_documents(&cfg.paths.corpus, cfg.domain.as_deref())?;
    if docs.is_empty() {
        return Err(Error::Ingestion {
            path: cfg.paths.corpus.clone(),
            message: "no documents found".into(),
        });
    }
    docs.write_jsonl(&cfg.paths.documents)?;
    Ok(format!("ingested {} documents into {}\n", docs.len(), cfg.paths.documents.display()))
}

/// Builds the gateway for a resolved config.
pub type GatewayFactory<'a> = &'a dyn Fn(&RunConfig) -> Result<Gateway>;

fn cmd_propose(cfg: &RunConfig, make_gw: GatewayFactory<'_>) -> Result<String> {
    let docs = load_docs(cfg)?;
    let (props, report) = match cfg.units {
        UnitKind::Propositions => {
            let gw = make_gw(cfg)?;
            let (p, r) = extract_propositions(&docs, &gw, &cfg.synth_config())?;
            (p, Some(r))
        }
        UnitKind::Sentences => (sentence_units(&docs)?, None),
    };
    props.write_jsonl(&cfg.paths.propositions)?;
    if let Some(r) = &report {
        jsonl::write_json(&cfg.paths.reports.join("propositions.json"), r)?;
    }
    Ok(format!(
        "wrote {} units from {} documents to {}\n",
        props.len(),
        docs.len(),
        cfg.paths.propositions.display()
    ))
}

fn cmd_synthesize(cfg: &RunConfig, make_gw: GatewayFactory<'_>) -> Result<String> {
    let docs = load_docs(cfg)?;
    let props = load_props(cfg)?;
    let gw = make_gw(cfg)?;
    let (dialogs, mut report) = synthesize_dialogs(&docs, &props, &gw, &cfg.synth_config())?;
    let prop_report = cfg.paths.reports.join("propositions.json");
    if prop_report.exists() {
        let r: PropositionReport = serde_json::from_str(&std::fs::read_to_string(&prop_report)?)?;
        report.documents_skipped = r.documents_skipped;
        report.documents_failed = r.documents_failed;
    }
    write_dialogs(&cfg.paths.dialogs, &dialogs)?;
    jsonl::write_json(&cfg.paths.reports.join("synthesis.json"), &report)?;
    to_json(&report)
}

fn cmd_index(cfg: &RunConfig, make_gw: GatewayFactory<'_>) -> Result<String> {
    let props = load_props(cfg)?;
    let bm25 = Bm25Index::build(props.iter().map(|p| (p.id.as_str(), p.text.as_str())), cfg.bm25)?;
    bm25.save(&cfg.paths.bm25_index())?;
    let dense = match &cfg.paths.vectors {
        Some(v) => Some(DenseIndex::import_jsonl(v)?),
        None => {
            let gw = make_gw(cfg)?;
            if gw.has_embedder() {
                let ids = props.ids();
                let texts: Vec<String> = props.iter().map(|p| p.text.clone()).collect();
                let mut vectors = Vec::with_capacity(texts.len());
                for chunk in texts.chunks(EMBED_BATCH) {
                    vectors.extend(gw.embed(chunk)?);
                }
                Some(DenseIndex::from_embeddings(&ids, vectors)?)
            } else {
                log::warn!("no embedding backend configured; skipping the dense index");
                None
            }
        }
    };
    let mut out = format!("bm25: {} items -> {}\n", bm25.len(), cfg.paths.bm25_index().display());
    if let Some(d) = dense {
        d.save(&cfg.paths.dense_index())?;
        out += &format!("dense: {} items, dim {} -> {}\n", d.len(), d.dim(), cfg.paths.dense_index().display());
    }
    Ok(out)
}

fn cmd_retrieve(
    cfg: &RunConfig,
    make_gw: GatewayFactory<'_>,
    query: &str,
    strategy: Strategy,
    k: Option<usize>,
) -> Result<String> {
    let gw = make_gw(cfg)?;
    let r = retriever(cfg, strategy, &gw)?;
    to_json(&r.retrieve(strategy, query, k.unwrap_or(cfg.top_k))?)
}

fn cmd_evaluate(
    cfg: &RunConfig,
    make_gw: GatewayFactory<'_>,
    kind: FormulationKind,
    strategy: Strategy,
    table: bool,
) -> Result<String> {
    let dialogs = load_dialogs(cfg)?;
    let gw = make_gw(cfg)?;
    let r = retriever(cfg, strategy, &gw)?;
    let rw = rewriter(cfg, kind, &dialogs)?;
    let opts = EvalOptions {
        top_k: cfg.top_k,
        ..EvalOptions::default()
    };
    let out = evaluate_retrieval(&dialogs, &formulation(cfg, kind), &r, strategy, &cfg.seeds, rw.as_deref(), &opts)?;
    let stem = format!("eval-{kind}-{strategy}");
    jsonl::write_json(&cfg.paths.reports.join(format!("{stem}.json")), &out.report)?;
    if let Some(t) = &out.timing {
        log::info!("rewriter latency: {} calls, mean {:.4}s", t.calls, t.mean_seconds);
        jsonl::write_json(&cfg.paths.reports.join(format!("{stem}.timing.json")), t)?;
    }
    if table {
        Ok(render_eval_table(&[out.report]))
    } else {
        to_json(&out.report)
    }
}

fn cmd_stats(cfg: &RunConfig, table: bool) -> Result<String> {
    let docs = load_docs(cfg)?;
    let props = load_props(cfg)?;
    let dialogs = load_dialogs(cfg)?;
    let stats = corpus_stats(&dialogs, &docs, &props);
    jsonl::write_json(&cfg.paths.reports.join("stats.json"), &stats)?;
    if table {
        Ok(render_stats_table(&stats))
    } else {
        to_json(&stats)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Response {
    pub dialog: String,
    pub turn: usize,
    pub query: String,
    pub question: String,
    pub retrieved: Vec<String>,
    pub response: String,
}

/// Renders the answer prompt over the given proposition texts and returns
/// the completion, collapsing any refusal to the bare `<cannot_answer>` token.
pub fn generate_response(gw: &Gateway, question: &str, propositions: &[&str], max_tokens: u32) -> Result<String> {
    let mut req = CompletionRequest::new(TemplateName::ResponseGen)
        .bind("propositions", serde_json::to_string_pretty(propositions)?)
        .bind("question", question);
    req.max_tokens = max_tokens;
    let out = gw.complete(&req)?;
    Ok(if out.contains(CANNOT_ANSWER) {
        CANNOT_ANSWER.to_string()
    } else {
        out.trim().to_string()
    })
}

fn cmd_respond(
    cfg: &RunConfig,
    make_gw: GatewayFactory<'_>,
    dialog_id: &str,
    turn: usize,
    kind: FormulationKind,
    strategy: Strategy,
) -> Result<String> {
    let dialogs = load_dialogs(cfg)?;
    let props = load_props(cfg)?;
    let dialog = dialogs
        .iter()
        .find(|d| d.id == dialog_id)
        .ok_or_else(|| Error::Argument(format!("no dialog `{dialog_id}` in {}", cfg.paths.dialogs.display())))?;
    let gw = make_gw(cfg)?;
    let r = retriever(cfg, strategy, &gw)?;
    let rw = rewriter(cfg, kind, &dialogs)?;
    let query = formulate(dialog, turn, &formulation(cfg, kind), rw.as_deref())?;
    let question = match kind {
        FormulationKind::Context => dialog.pairs[turn].user_co.clone(),
        _ => query.clone(),
    };
    let ranked = r.retrieve(strategy, &query, cfg.top_k)?;
    let texts = ranked
        .ids()
        .map(|id| {
            props
                .get(id)
                .map(|p| p.text.as_str())
                .ok_or_else(|| Error::Validation(format!("index item `{id}` is not in the propositions file; rerun `propdial index`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let response = generate_response(&gw, &question, &texts, cfg.llm.max_tokens)?;
    to_json(&Response {
        dialog: dialog.id.clone(),
        turn,
        query,
        question,
        retrieved: ranked.ids().map(String::from).collect(),
        response,
    })
}

fn cmd_export_pairs(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    let dialogs = load_dialogs(cfg)?;
    let pairs = make_rewriter_training_pairs(&dialogs, cfg.history_h);
    let path = out.map_or_else(|| cfg.paths.reports.join("rewriter_pairs.tsv"), Path::to_path_buf);
    write_training_tsv(&path, &pairs)?;
    Ok(format!("wrote {} training pairs to {}\n", pairs.len(), path.display()))
}

/// Executes one command and returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    run_with(cli, &RunConfig::gateway)
}

/// Like [`run`], with the backend supplied by the caller.
pub fn run_with(cli: &Cli, make_gw: GatewayFactory<'_>) -> Result<String> {
    let cfg = cli.global.resolve()?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Propose => cmd_propose(&cfg, make_gw),
        Command::Synthesize => cmd_synthesize(&cfg, make_gw),
        Command::Index => cmd_index(&cfg, make_gw),
        Command::Retrieve { query, retriever, k } => cmd_retrieve(&cfg, make_gw, query, *retriever, *k),
        Command::Evaluate {
            strategy,
            retriever,
            table,
        } => cmd_evaluate(&cfg, make_gw, *strategy, *retriever, *table),
        Command::Stats { table } => cmd_stats(&cfg, *table),
        Command::Respond {
            dialog,
            turn,
            strategy,
            retriever,
        } => cmd_respond(&cfg, make_gw, dialog, *turn, *strategy, *retriever),
        Command::ExportPairs { out } => cmd_export_pairs(&cfg, out.as_deref()),
    }
}
