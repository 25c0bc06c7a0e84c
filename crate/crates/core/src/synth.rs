//! Two-step synthetic dialog generation.
//!
//! Step 1 asks the dialog model for standalone propositions per document.
//! Step 2 chunks the global proposition list into sublists and, per sublist,
//! generates a dialog with self-contained questions, asks for contextualized
//! rewrites of those questions, asks which propositions ground each pair
//! (with an accepted/not_accepted verdict), maps the returned proposition
//! strings back onto the repository with BM25 and filters the dialog.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{
    chunk_units, sentence_units, sublist_use_order, Document, DocumentSet, Proposition,
    PropositionSet, UnitSublist, DEFAULT_SUBLIST_SIZE,
};
use crate::error::{Error, Result};
use crate::eval::{corpus_stats, StatsReport};
use crate::gateway::{extract_structured, CompletionRequest, Gateway, TemplateName};
use crate::jsonl;
use crate::retrieval::{Bm25Index, Bm25Params};

pub const DEFAULT_PROMPT_RETRIES: u32 = 2;

const USER_KEY: &str = "<user>";
const SYSTEM_KEY: &str = "<system>";
const CONTEXTUALIZED_KEY: &str = "<contextualized user>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    #[default]
    Propositions,
    Sentences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub units: UnitKind,
    pub bm25: Bm25Params,
    /// Extra attempts per prompt after a parse or schema failure.
    pub retries: u32,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Seed for the order in which sublists are consumed; `None` keeps index order.
    pub use_order_seed: Option<u64>,
    pub parallelism: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_SUBLIST_SIZE,
            units: UnitKind::Propositions,
            bm25: Bm25Params::TUNED,
            retries: DEFAULT_PROMPT_RETRIES,
            max_tokens: 4096,
            temperature: 0.0,
            use_order_seed: None,
            parallelism: crate::gateway::DEFAULT_PARALLELISM,
        }
    }
}

impl SynthConfig {
    fn request(&self, template: TemplateName) -> CompletionRequest {
        let mut req = CompletionRequest::new(template);
        req.max_tokens = self.max_tokens;
        req.temperature = self.temperature;
        req
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub user_de: String,
    pub system: String,
}

/// A generated dialog before contextualization and filtering. The first and
/// last pairs are the greeting and closing exchanges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDialog {
    pub sublist_index: usize,
    pub pairs: Vec<RawPair>,
}

impl RawDialog {
    fn to_prompt_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, p) in self.pairs.iter().enumerate() {
            let sep = if i + 1 < self.pairs.len() { "," } else { "" };
            out.push_str(&format!(
                "  \"{i}\": {{\n    \"{USER_KEY}\": {},\n    \"{SYSTEM_KEY}\": {}\n  }}{sep}\n",
                Value::from(p.user_de.as_str()),
                Value::from(p.system.as_str())
            ));
        }
        out.push('}');
        out
    }

    fn is_greeting(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.pairs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    Accepted,
    NotAccepted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub propositions_used: Vec<String>,
    pub evaluation: Evaluation,
}

#[derive(Deserialize)]
struct DialogPairWire {
    user_co: String,
    user_de: String,
    system: String,
    #[serde(default)]
    grounding: Vec<String>,
}

/// One question/answer exchange of a finished dialog. `requires_rewrite` is
/// always derived from the two question strings, including on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "DialogPairWire")]
pub struct DialogPair {
    pub user_co: String,
    pub user_de: String,
    pub system: String,
    pub grounding: Vec<String>,
    pub requires_rewrite: bool,
}

impl From<DialogPairWire> for DialogPair {
    fn from(w: DialogPairWire) -> Self {
        DialogPair::new(w.user_co, w.user_de, w.system, w.grounding)
    }
}

impl DialogPair {
    pub fn new(
        user_co: impl Into<String>,
        user_de: impl Into<String>,
        system: impl Into<String>,
        grounding: impl IntoIterator<Item = String>,
    ) -> Self {
        let user_co = user_co.into().trim().to_string();
        let user_de = user_de.into().trim().to_string();
        let grounding: BTreeSet<String> = grounding.into_iter().collect();
        Self {
            requires_rewrite: user_co != user_de,
            user_co,
            user_de,
            system: system.into().trim().to_string(),
            grounding: grounding.into_iter().collect(),
        }
    }

    pub fn set_user_co(&mut self, user_co: impl Into<String>) {
        self.user_co = user_co.into().trim().to_string();
        self.requires_rewrite = self.user_co != self.user_de;
    }

    /// Greeting and closing exchanges carry no grounding.
    pub fn is_grounded(&self) -> bool {
        !self.grounding.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub sublist_index: usize,
    pub doc_ids: Vec<String>,
    pub pairs: Vec<DialogPair>,
}

pub fn dialog_id(sublist_index: usize) -> String {
    format!("dialog-{sublist_index:05}")
}

pub fn read_dialogs(path: &Path) -> Result<Vec<Dialog>> {
    jsonl::read(path)
}

pub fn write_dialogs(path: &Path, dialogs: &[Dialog]) -> Result<()> {
    jsonl::write(path, dialogs)
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Schema(format!("{what}: expected a JSON object")))
}

/// Reads `{"0": {...}, "1": {...}}` into a vector, requiring keys 0..m-1.
fn indexed_entries<'a>(v: &'a Value, what: &str) -> Result<Vec<&'a serde_json::Map<String, Value>>> {
    let obj = as_object(v, what)?;
    let mut keyed = BTreeMap::new();
    for (k, entry) in obj {
        let idx: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("{what}: key `{k}` is not a turn index")))?;
        keyed.insert(idx, as_object(entry, what)?);
    }
    for (expected, idx) in keyed.keys().enumerate() {
        if *idx != expected {
            return Err(Error::Schema(format!("{what}: missing key \"{expected}\"")));
        }
    }
    Ok(keyed.into_values().collect())
}

fn string_field(entry: &serde_json::Map<String, Value>, key: &str, what: &str) -> Result<String> {
    entry
        .get(key)
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Schema(format!("{what}: missing or empty `{key}`")))
}

pub fn parse_propositions(text: &str) -> Result<Vec<String>> {
    let v = extract_structured(text)?;
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Schema("propositions: expected a JSON list".into()))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in arr {
        let s = item
            .as_str()
            .ok_or_else(|| Error::Schema("propositions: list items must be strings".into()))?
            .trim();
        if !s.is_empty() && seen.insert(s.to_string()) {
            out.push(s.to_string());
        }
    }
    Ok(out)
}

pub fn parse_raw_dialog(text: &str, sublist_index: usize) -> Result<RawDialog> {
    let v = extract_structured(text)?;
    let entries = indexed_entries(&v, "dialog")?;
    if entries.len() < 2 {
        return Err(Error::Schema(format!(
            "dialog: need at least 2 pairs, got {}",
            entries.len()
        )));
    }
    let pairs = entries
        .into_iter()
        .map(|e| {
            Ok(RawPair {
                user_de: string_field(e, USER_KEY, "dialog")?,
                system: string_field(e, SYSTEM_KEY, "dialog")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawDialog {
        sublist_index,
        pairs,
    })
}

pub fn parse_contextualized(text: &str, raw: &RawDialog) -> Result<Vec<String>> {
    let v = extract_structured(text)?;
    let entries = indexed_entries(&v, "contextualized dialog")?;
    if entries.len() != raw.pairs.len() {
        return Err(Error::Schema(format!(
            "contextualized dialog has {} pairs, expected {}",
            entries.len(),
            raw.pairs.len()
        )));
    }
    let mut out = entries
        .into_iter()
        .map(|e| string_field(e, CONTEXTUALIZED_KEY, "contextualized dialog"))
        .collect::<Result<Vec<_>>>()?;
    // the opening question has no history to refer to
    out[0] = raw.pairs[0].user_de.clone();
    Ok(out)
}

fn parse_evaluation(v: Option<&Value>, turn: usize) -> Evaluation {
    match v.and_then(Value::as_str).map(|s| s.trim().to_lowercase()) {
        Some(s) if s == "accepted" => Evaluation::Accepted,
        Some(s) if s == "not_accepted" => Evaluation::NotAccepted,
        other => {
            log::warn!("turn {turn}: unrecognised evaluation token {other:?}, treating as not_accepted");
            Evaluation::NotAccepted
        }
    }
}

pub fn parse_annotations(text: &str, raw: &RawDialog) -> Result<Vec<Annotation>> {
    let v = extract_structured(text)?;
    let entries = indexed_entries(&v, "annotations")?;
    if entries.len() != raw.pairs.len() {
        return Err(Error::Schema(format!(
            "annotations cover {} pairs, expected {}",
            entries.len(),
            raw.pairs.len()
        )));
    }
    let last = entries.len() - 1;
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let propositions_used = match e.get("propositions_used") {
                Some(Value::Array(items)) => items
                    .iter()
                    .filter_map(Value::as_str)
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
                _ => Vec::new(),
            };
            let mut evaluation = parse_evaluation(e.get("evaluation"), i);
            if (i == 0 || i == last) && evaluation != Evaluation::Accepted {
                log::debug!("turn {i}: greeting/closing pair coerced to accepted");
                evaluation = Evaluation::Accepted;
            }
            Annotation {
                propositions_used,
                evaluation,
            }
        })
        .collect())
}

fn propositions_json(sublist: &UnitSublist, props: &PropositionSet) -> Result<String> {
    let texts = sublist
        .unit_ids
        .iter()
        .map(|id| {
            props
                .get(id)
                .map(|p| p.text.as_str())
                .ok_or_else(|| Error::Validation(format!("sublist unit `{id}` is not in the repository")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::to_string_pretty(&texts)?)
}

fn with_retries<T>(cfg: &SynthConfig, what: &str, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match f() {
            Ok(v) => return Ok(v),
            Err(e @ (Error::StructuredOutput { .. } | Error::Schema(_))) if attempt < cfg.retries => {
                attempt += 1;
                log::warn!("{what}: {e}; retry {attempt}/{}", cfg.retries);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Step 1 for one document. An empty list means the document was judged
/// uninformative.
pub fn generate_propositions(gw: &Gateway, doc: &Document, cfg: &SynthConfig) -> Result<Vec<Proposition>> {
    let req = cfg
        .request(TemplateName::Step1Propositions)
        .bind("text", doc.text.as_str());
    let texts = with_retries(cfg, &format!("propositions for `{}`", doc.id), || {
        parse_propositions(&gw.complete(&req)?)
    })?;
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| Proposition::new(&doc.id, i, t))
        .collect())
}

pub fn generate_dialog(
    gw: &Gateway,
    sublist: &UnitSublist,
    props: &PropositionSet,
    cfg: &SynthConfig,
) -> Result<RawDialog> {
    if sublist.unit_ids.is_empty() {
        return Err(Error::Argument("cannot generate a dialog from an empty sublist".into()));
    }
    let req = cfg
        .request(TemplateName::P21Dialog)
        .bind("propositions", propositions_json(sublist, props)?);
    with_retries(cfg, &format!("dialog for sublist {}", sublist.index), || {
        parse_raw_dialog(&gw.complete(&req)?, sublist.index)
    })
}

pub fn contextualize(gw: &Gateway, raw: &RawDialog, cfg: &SynthConfig) -> Result<Vec<String>> {
    let req = cfg
        .request(TemplateName::P22Contextualize)
        .bind("dialog", raw.to_prompt_json());
    with_retries(cfg, &format!("contextualizing sublist {}", raw.sublist_index), || {
        parse_contextualized(&gw.complete(&req)?, raw)
    })
}

pub fn annotate_grounding(
    gw: &Gateway,
    sublist: &UnitSublist,
    props: &PropositionSet,
    raw: &RawDialog,
    cfg: &SynthConfig,
) -> Result<Vec<Annotation>> {
    let req = cfg
        .request(TemplateName::P23Ground)
        .bind("propositions", propositions_json(sublist, props)?)
        .bind("qa_pairs", raw.to_prompt_json());
    with_retries(cfg, &format!("grounding sublist {}", raw.sublist_index), || {
        parse_annotations(&gw.complete(&req)?, raw)
    })
}

/// BM25 index over every proposition of the documents a sublist draws from.
pub fn scoped_index(sublist: &UnitSublist, props: &PropositionSet, params: Bm25Params) -> Result<Bm25Index> {
    let mut doc_ids: Vec<String> = sublist
        .unit_ids
        .iter()
        .filter_map(|id| props.get(id).map(|p| p.doc_id.clone()))
        .collect();
    doc_ids.sort();
    doc_ids.dedup();
    Bm25Index::build(
        props.of_documents(&doc_ids).map(|p| (p.id.clone(), p.text.as_str())),
        params,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    /// Repository ids, sorted and de-duplicated.
    pub ids: Vec<String>,
    /// Generated strings that matched nothing.
    pub omitted: Vec<String>,
}

/// Replaces each generated proposition string with its top-1 BM25 match.
pub fn align_propositions(generated: &[String], index: &Bm25Index) -> Alignment {
    let mut ids = BTreeSet::new();
    let mut omitted = Vec::new();
    for text in generated {
        match index.query(text, 1).ok().and_then(|r| r.entries.into_iter().next()) {
            Some(hit) => {
                ids.insert(hit.id);
            }
            None => {
                log::warn!("no repository proposition shares a term with {text:?}; grounding omitted");
                omitted.push(text.clone());
            }
        }
    }
    Alignment {
        ids: ids.into_iter().collect(),
        omitted,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub removed_not_accepted: usize,
    pub removed_ungrounded: usize,
    pub decontextualized: usize,
}

/// Drops not_accepted pairs (and non-greeting pairs whose grounding did not
/// survive alignment), then makes the first kept pair after each removal
/// point use its decontextualized question.
pub fn filter_dialog(
    raw: &RawDialog,
    user_cos: &[String],
    annotations: &[Annotation],
    grounding: &[Vec<String>],
    props: &PropositionSet,
) -> Result<(Dialog, FilterStats)> {
    let m = raw.pairs.len();
    if user_cos.len() != m || annotations.len() != m || grounding.len() != m {
        return Err(Error::Argument(format!(
            "filter inputs are not aligned: {m} pairs, {} questions, {} annotations, {} groundings",
            user_cos.len(),
            annotations.len(),
            grounding.len()
        )));
    }
    let mut stats = FilterStats::default();
    let mut pairs = Vec::with_capacity(m);
    let mut after_removal = false;
    for i in 0..m {
        let greeting = raw.is_greeting(i);
        let ids: Vec<String> = if greeting { Vec::new() } else { grounding[i].clone() };
        if annotations[i].evaluation == Evaluation::NotAccepted {
            stats.removed_not_accepted += 1;
            after_removal = true;
            continue;
        }
        if !greeting && ids.is_empty() {
            stats.removed_ungrounded += 1;
            after_removal = true;
            continue;
        }
        for id in &ids {
            if props.get(id).is_none() {
                return Err(Error::Validation(format!("grounding id `{id}` is not in the repository")));
            }
        }
        let mut pair = DialogPair::new(
            user_cos[i].as_str(),
            raw.pairs[i].user_de.as_str(),
            raw.pairs[i].system.as_str(),
            ids,
        );
        if after_removal {
            if pair.requires_rewrite {
                stats.decontextualized += 1;
            }
            let de = pair.user_de.clone();
            pair.set_user_co(de);
            after_removal = false;
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::Validation(format!(
            "every pair of sublist {} was removed",
            raw.sublist_index
        )));
    }
    let doc_ids: BTreeSet<String> = pairs
        .iter()
        .flat_map(|p| p.grounding.iter())
        .filter_map(|id| props.get(id).map(|p| p.doc_id.clone()))
        .collect();
    Ok((
        Dialog {
            id: dialog_id(raw.sublist_index),
            sublist_index: raw.sublist_index,
            doc_ids: doc_ids.into_iter().collect(),
            pairs,
        },
        stats,
    ))
}

/// Checks every dialog invariant against the repository.
pub fn validate_dialogs(dialogs: &[Dialog], props: &PropositionSet) -> Result<()> {
    let mut sublists = HashSet::new();
    let mut ids = HashSet::new();
    for d in dialogs {
        if !sublists.insert(d.sublist_index) {
            return Err(Error::Validation(format!("sublist {} used by two dialogs", d.sublist_index)));
        }
        if !ids.insert(d.id.as_str()) {
            return Err(Error::Validation(format!("duplicate dialog id `{}`", d.id)));
        }
        if d.pairs.is_empty() {
            return Err(Error::Validation(format!("dialog `{}` has no pairs", d.id)));
        }
        let mut docs = BTreeSet::new();
        let last = d.pairs.len() - 1;
        for (i, p) in d.pairs.iter().enumerate() {
            if p.user_de.is_empty() {
                return Err(Error::Validation(format!("dialog `{}` pair {i} has empty question", d.id)));
            }
            if p.requires_rewrite != (p.user_co != p.user_de) {
                return Err(Error::Validation(format!("dialog `{}` pair {i} rewrite flag is stale", d.id)));
            }
            if p.grounding.is_empty() && i != 0 && i != last {
                return Err(Error::Validation(format!(
                    "dialog `{}` pair {i} is ungrounded but not a greeting/closing pair",
                    d.id
                )));
            }
            for g in &p.grounding {
                let prop = props.get(g).ok_or_else(|| {
                    Error::Validation(format!("dialog `{}` cites unknown proposition `{g}`", d.id))
                })?;
                docs.insert(prop.doc_id.clone());
            }
        }
        if docs.into_iter().collect::<Vec<_>>() != d.doc_ids {
            return Err(Error::Validation(format!("dialog `{}` doc_ids disagree with grounding", d.id)));
        }
    }
    Ok(())
}

/// Records which sublists have produced a dialog; each may be used once.
#[derive(Debug, Default)]
pub struct SublistLedger {
    used: Mutex<BTreeSet<usize>>,
}

impl SublistLedger {
    pub fn claim(&self, index: usize) -> Result<()> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        if !used.insert(index) {
            return Err(Error::State(format!("sublist {index} was already used")));
        }
        Ok(())
    }

    pub fn used(&self) -> Vec<usize> {
        self.used
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub documents: usize,
    pub propositions: usize,
    /// Documents whose proposition list came back empty.
    pub documents_skipped: Vec<String>,
    /// Documents flagged `proposition_failed`.
    pub documents_failed: Vec<ItemFailure>,
}

/// Step 1 over a whole document set.
pub fn extract_propositions(
    docs: &DocumentSet,
    gw: &Gateway,
    cfg: &SynthConfig,
) -> Result<(PropositionSet, PropositionReport)> {
    use rayon::prelude::*;
    let results: Vec<(String, Result<Vec<Proposition>>)> = cfg.pool()?.install(|| {
        docs.as_slice()
            .par_iter()
            .map(|d| (d.id.clone(), generate_propositions(gw, d, cfg)))
            .collect()
    });
    let mut props = Vec::new();
    let mut skipped = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(p) if p.is_empty() => skipped.push(id),
            Ok(p) => props.extend(p),
            Err(e) => {
                log::warn!("document `{id}` flagged proposition_failed: {e}");
                failed.push(ItemFailure {
                    item: id,
                    stage: "proposition_failed".into(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let set = PropositionSet::new(props)?;
    let report = PropositionReport {
        documents: docs.len(),
        propositions: set.len(),
        documents_skipped: skipped,
        documents_failed: failed,
    };
    Ok((set, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub units: UnitKind,
    pub sublist_size: usize,
    pub documents: usize,
    pub units_total: usize,
    pub documents_skipped: Vec<String>,
    pub documents_failed: Vec<ItemFailure>,
    pub sublists: usize,
    pub sublists_used: usize,
    pub sublists_failed: Vec<ItemFailure>,
    pub dialogs: usize,
    pub dialogs_dropped: Vec<usize>,
    pub pairs_generated: usize,
    pub pairs_removed_not_accepted: usize,
    pub pairs_removed_ungrounded: usize,
    pub pairs_decontextualized_after_removal: usize,
    pub alignment_omissions: usize,
    /// Grounded (non-greeting) pairs in the emitted dialogs.
    pub questions: usize,
    pub requires_rewrite_fraction: Option<f64>,
    pub mean_grounding_size: Option<f64>,
    pub mean_docs_per_dialog: Option<f64>,
    pub stats: StatsReport,
}

struct SublistOutcome {
    dialog: Option<Dialog>,
    failure: Option<ItemFailure>,
    dropped: bool,
    generated: usize,
    filter: FilterStats,
    omissions: usize,
}

fn process_sublist(
    gw: &Gateway,
    sublist: &UnitSublist,
    props: &PropositionSet,
    cfg: &SynthConfig,
    ledger: &SublistLedger,
) -> SublistOutcome {
    let mut out = SublistOutcome {
        dialog: None,
        failure: None,
        dropped: false,
        generated: 0,
        filter: FilterStats::default(),
        omissions: 0,
    };
    let fail = |stage: &str, e: Error| {
        log::warn!("sublist {} flagged {stage}: {e}", sublist.index);
        Some(ItemFailure {
            item: sublist.index.to_string(),
            stage: stage.into(),
            reason: e.to_string(),
        })
    };
    if let Err(e) = ledger.claim(sublist.index) {
        out.failure = fail("sublist_reused", e);
        return out;
    }
    let raw = match generate_dialog(gw, sublist, props, cfg) {
        Ok(r) => r,
        Err(e) => {
            out.failure = fail("dialog_failed", e);
            return out;
        }
    };
    out.generated = raw.pairs.len();
    let user_cos = match contextualize(gw, &raw, cfg) {
        Ok(c) => c,
        Err(e) => {
            out.failure = fail("contextualize_failed", e);
            return out;
        }
    };
    let annotations = match annotate_grounding(gw, sublist, props, &raw, cfg) {
        Ok(a) => a,
        Err(e) => {
            out.failure = fail("grounding_failed", e);
            return out;
        }
    };
    let index = match scoped_index(sublist, props, cfg.bm25) {
        Ok(i) => i,
        Err(e) => {
            out.failure = fail("alignment_failed", e);
            return out;
        }
    };
    let grounding: Vec<Vec<String>> = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if raw.is_greeting(i) || a.evaluation == Evaluation::NotAccepted {
                return Vec::new();
            }
            let aligned = align_propositions(&a.propositions_used, &index);
            out.omissions += aligned.omitted.len();
            aligned.ids
        })
        .collect();
    match filter_dialog(&raw, &user_cos, &annotations, &grounding, props) {
        Ok((dialog, stats)) => {
            out.dialog = Some(dialog);
            out.filter = stats;
        }
        Err(e) => {
            log::warn!("sublist {} dropped: {e}", sublist.index);
            out.dropped = true;
            out.filter.removed_not_accepted = annotations
                .iter()
                .filter(|a| a.evaluation == Evaluation::NotAccepted)
                .count();
        }
    }
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Step 2 over a repository: chunk, generate, annotate, align, filter.
pub fn synthesize_dialogs(
    docs: &DocumentSet,
    props: &PropositionSet,
    gw: &Gateway,
    cfg: &SynthConfig,
) -> Result<(Vec<Dialog>, SynthesisReport)> {
    use rayon::prelude::*;
    props.validate_against(docs)?;
    let sublists = chunk_units(&props.ids(), cfg.n)?;
    let order = sublist_use_order(sublists.len(), cfg.use_order_seed);
    let ledger = SublistLedger::default();
    let mut outcomes: Vec<(usize, SublistOutcome)> = cfg.pool()?.install(|| {
        order
            .par_iter()
            .map(|&i| (i, process_sublist(gw, &sublists[i], props, cfg, &ledger)))
            .collect()
    });
    outcomes.sort_by_key(|(i, _)| *i);

    let mut dialogs = Vec::new();
    let mut report = SynthesisReport {
        units: cfg.units,
        sublist_size: cfg.n,
        documents: docs.len(),
        units_total: props.len(),
        documents_skipped: Vec::new(),
        documents_failed: Vec::new(),
        sublists: sublists.len(),
        sublists_used: ledger.used().len(),
        sublists_failed: Vec::new(),
        dialogs: 0,
        dialogs_dropped: Vec::new(),
        pairs_generated: 0,
        pairs_removed_not_accepted: 0,
        pairs_removed_ungrounded: 0,
        pairs_decontextualized_after_removal: 0,
        alignment_omissions: 0,
        questions: 0,
        requires_rewrite_fraction: None,
        mean_grounding_size: None,
        mean_docs_per_dialog: None,
        stats: StatsReport::default(),
    };
    for (i, o) in outcomes {
        report.pairs_generated += o.generated;
        report.pairs_removed_not_accepted += o.filter.removed_not_accepted;
        report.pairs_removed_ungrounded += o.filter.removed_ungrounded;
        report.pairs_decontextualized_after_removal += o.filter.decontextualized;
        report.alignment_omissions += o.omissions;
        if let Some(f) = o.failure {
            report.sublists_failed.push(f);
        }
        if o.dropped {
            report.dialogs_dropped.push(i);
        }
        if let Some(d) = o.dialog {
            dialogs.push(d);
        }
    }
    validate_dialogs(&dialogs, props)?;

    let grounded: Vec<&DialogPair> = dialogs
        .iter()
        .flat_map(|d| d.pairs.iter())
        .filter(|p| p.is_grounded())
        .collect();
    report.dialogs = dialogs.len();
    report.questions = grounded.len();
    report.requires_rewrite_fraction = mean(grounded.iter().map(|p| f64::from(u8::from(p.requires_rewrite))));
    report.mean_grounding_size = mean(grounded.iter().map(|p| p.grounding.len() as f64));
    report.mean_docs_per_dialog = mean(dialogs.iter().map(|d| d.doc_ids.len() as f64));
    report.stats = corpus_stats(&dialogs, docs, props);
    Ok((dialogs, report))
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub units: PropositionSet,
    pub dialogs: Vec<Dialog>,
    pub report: SynthesisReport,
}

/// Full pipeline from documents to filtered dialogs. Per-item failures are
/// reported; only configuration problems abort the run.
pub fn synthesize_corpus(docs: &DocumentSet, gw: &Gateway, cfg: &SynthConfig) -> Result<SynthesisOutput> {
    if cfg.n < 1 {
        return Err(Error::Config("sublist size n must be at least 1".into()));
    }
    let (units, prop_report) = match cfg.units {
        UnitKind::Propositions => {
            let (set, r) = extract_propositions(docs, gw, cfg)?;
            (set, Some(r))
        }
        UnitKind::Sentences => (sentence_units(docs)?, None),
    };
    let (dialogs, mut report) = synthesize_dialogs(docs, &units, gw, cfg)?;
    if let Some(r) = prop_report {
        report.documents_skipped = r.documents_skipped;
        report.documents_failed = r.documents_failed;
    }
    Ok(SynthesisOutput {
        units,
        dialogs,
        report,
    })
}
