//! Query formulation for dialog turns and the conditional rewrite protocol.
//!
//! A conditional rewriter answers either `no_rewrite` (the contextualized
//! question is kept verbatim) or `rewrite <question>`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway, TemplateName};
use crate::synth::Dialog;

pub const NO_REWRITE: &str = "no_rewrite";
pub const REWRITE: &str = "rewrite";
pub const DEFAULT_HISTORY_PAIRS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationKind {
    Context,
    QueryCo,
    QueryDe,
    Rewriter,
}

impl FormulationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FormulationKind::Context => "context",
            FormulationKind::QueryCo => "query_co",
            FormulationKind::QueryDe => "query_de",
            FormulationKind::Rewriter => "rewriter",
        }
    }
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context" => Ok(FormulationKind::Context),
            "query_co" => Ok(FormulationKind::QueryCo),
            "query_de" => Ok(FormulationKind::QueryDe),
            "rewriter" => Ok(FormulationKind::Rewriter),
            _ => Err(Error::Argument(format!("unknown formulation strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formulation {
    pub kind: FormulationKind,
    /// Previous question/answer pairs prepended by `context`.
    pub history_pairs: usize,
    pub rewriter_endpoint: Option<String>,
}

impl Formulation {
    pub fn new(kind: FormulationKind) -> Self {
        Self {
            kind,
            history_pairs: DEFAULT_HISTORY_PAIRS,
            rewriter_endpoint: None,
        }
    }

    pub fn context(history_pairs: usize) -> Self {
        Self {
            history_pairs,
            ..Self::new(FormulationKind::Context)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub query: String,
    pub was_rewritten: bool,
    pub latency_seconds: f64,
}

/// Anything that maps a rewriter input to raw rewriter output.
pub trait Rewriter: Send + Sync {
    fn generate(&self, input: &str) -> Result<String>;
}

/// Answers with the gold target for inputs it has seen, `no_rewrite` otherwise.
#[derive(Debug, Clone, Default)]
pub struct MockRewriter {
    targets: HashMap<String, String>,
}

impl MockRewriter {
    pub fn from_dialogs(dialogs: &[Dialog], history_pairs: usize) -> Self {
        Self {
            targets: make_rewriter_training_pairs(dialogs, history_pairs)
                .into_iter()
                .map(|p| (p.input, p.target))
                .collect(),
        }
    }
}

impl Rewriter for MockRewriter {
    fn generate(&self, input: &str) -> Result<String> {
        Ok(self
            .targets
            .get(input)
            .cloned()
            .unwrap_or_else(|| NO_REWRITE.to_string()))
    }
}

/// Uses the chat backend with the rewriter prompt.
pub struct LlmRewriter<'g> {
    pub gateway: &'g Gateway,
    pub max_tokens: u32,
}

impl Rewriter for LlmRewriter<'_> {
    fn generate(&self, input: &str) -> Result<String> {
        let mut req = CompletionRequest::new(TemplateName::Rewriter).bind("input", input);
        req.max_tokens = self.max_tokens;
        self.gateway.complete(&req)
    }
}

/// Interprets rewriter output under the `rewrite`/`no_rewrite` protocol.
/// Anything after a leading `no_rewrite` is ignored; output with neither
/// token is taken as a bare rewrite.
pub fn conditional_rewrite(model_output: &str, original_co: &str) -> RewriteResult {
    let out = model_output.trim_start();
    let keep = || RewriteResult {
        query: original_co.to_string(),
        was_rewritten: false,
        latency_seconds: 0.0,
    };
    if out.starts_with(NO_REWRITE) {
        return keep();
    }
    let query = match out.strip_prefix(REWRITE) {
        Some(rest) => rest.trim(),
        None => {
            log::warn!("rewriter output lacks a protocol token; using it as a bare rewrite");
            out.trim()
        }
    };
    if query.is_empty() {
        log::warn!("rewriter produced an empty rewrite; keeping the original question");
        return keep();
    }
    RewriteResult {
        query: query.to_string(),
        was_rewritten: true,
        latency_seconds: 0.0,
    }
}

/// Previous `h` exchanges followed by the current contextualized question,
/// single-space separated, oldest first.
pub fn context_string(dialog: &Dialog, turn_index: usize, h: usize) -> String {
    let start = turn_index.saturating_sub(h);
    let mut parts: Vec<&str> = Vec::with_capacity(2 * h + 1);
    for p in &dialog.pairs[start..turn_index] {
        parts.push(&p.user_co);
        parts.push(&p.system);
    }
    parts.push(&dialog.pairs[turn_index].user_co);
    parts.join(" ")
}

/// Runs the rewriter on one turn and times the call.
pub fn rewrite_turn(
    dialog: &Dialog,
    turn_index: usize,
    history_pairs: usize,
    rewriter: &dyn Rewriter,
) -> Result<RewriteResult> {
    check_turn(dialog, turn_index)?;
    let input = context_string(dialog, turn_index, history_pairs);
    let started = Instant::now();
    let output = rewriter.generate(&input)?;
    let latency = started.elapsed().as_secs_f64();
    let mut result = conditional_rewrite(&output, &dialog.pairs[turn_index].user_co);
    result.latency_seconds = latency;
    Ok(result)
}

fn check_turn(dialog: &Dialog, turn_index: usize) -> Result<()> {
    if turn_index >= dialog.pairs.len() {
        return Err(Error::Argument(format!(
            "turn {turn_index} out of range for dialog `{}` with {} pairs",
            dialog.id,
            dialog.pairs.len()
        )));
    }
    Ok(())
}

/// The retrieval query for one dialog turn under formulation `f`.
pub fn formulate(
    dialog: &Dialog,
    turn_index: usize,
    f: &Formulation,
    rewriter: Option<&dyn Rewriter>,
) -> Result<String> {
    check_turn(dialog, turn_index)?;
    let pair = &dialog.pairs[turn_index];
    match f.kind {
        FormulationKind::QueryCo => Ok(pair.user_co.clone()),
        FormulationKind::QueryDe => Ok(pair.user_de.clone()),
        FormulationKind::Context => Ok(context_string(dialog, turn_index, f.history_pairs)),
        FormulationKind::Rewriter => {
            let rewriter = rewriter
                .ok_or_else(|| Error::State("rewriter strategy needs a rewriter endpoint".into()))?;
            Ok(rewrite_turn(dialog, turn_index, f.history_pairs, rewriter)?.query)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: String,
    pub target: String,
}

/// One example per grounded pair: input is the context string, target is
/// `rewrite <user_de>` when the questions differ and `no_rewrite` otherwise.
pub fn make_rewriter_training_pairs(dialogs: &[Dialog], history_pairs: usize) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    for d in dialogs {
        for (i, p) in d.pairs.iter().enumerate() {
            if !p.is_grounded() {
                continue;
            }
            let target = if p.user_de != p.user_co {
                format!("{REWRITE} {}", p.user_de)
            } else {
                NO_REWRITE.to_string()
            };
            out.push(TrainingPair {
                input: context_string(d, i, history_pairs),
                target,
            });
        }
    }
    out
}

fn tsv_field(s: &str) -> String {
    s.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

/// Writes `input<TAB>target` rows under a header line.
pub fn write_training_tsv(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "input\ttarget")?;
    for p in pairs {
        writeln!(w, "{}\t{}", tsv_field(&p.input), tsv_field(&p.target))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DialogPair;

    /// Turns 1-4 of the Board Appeal example dialog.
    pub(crate) fn board_appeal() -> Dialog {
        let g = |s: &str| vec![s.to_string()];
        Dialog {
            id: "dialog-7".into(),
            sublist_index: 7,
            doc_ids: vec!["va".into()],
            pairs: vec![
                DialogPair::new(
                    "How can I submit a Decision Review Request for a Board Appeal?",
                    "How can I submit a Decision Review Request for a Board Appeal?",
                    "To submit the Decision Review Request: Board Appeal VA Form 10182, you can apply by mail, in person, or by fax.",
                    g("va#0"),
                ),
                DialogPair::new(
                    "What are the steps to apply for it by mail?",
                    "What are the steps to apply for a Board Appeal by mail?",
                    "To apply for a Board Appeal by mail, you need to send the completed VA Form 10182 to the address: Board of Veterans Appeals, PO Box 27063, Washington, D.C. 20038.",
                    g("va#1"),
                ),
                DialogPair::new(
                    "How can I apply for it in person?",
                    "How can I apply for a Board Appeal in person?",
                    "To apply for a Board Appeal in person, you need to bring your completed VA Form 10182 to a regional benefit office.",
                    g("va#2"),
                ),
                DialogPair::new(
                    "Can I apply for it by fax?",
                    "Can I apply for a Board Appeal by fax?",
                    "Yes, to apply for a Board Appeal by fax, you need to fax your completed VA Form 10182 to 844-678-8979.",
                    g("va#3"),
                ),
            ],
        }
    }

    #[test]
    fn context_formulation() {
        let d = board_appeal();
        let f = Formulation::context(1);
        assert_eq!(formulate(&d, 0, &f, None).unwrap(), d.pairs[0].user_co);
        assert_eq!(
            formulate(&d, 3, &f, None).unwrap(),
            "How can I apply for it in person? To apply for a Board Appeal in person, you need to bring your completed VA Form 10182 to a regional benefit office. Can I apply for it by fax?"
        );
        let wide = formulate(&d, 1, &Formulation::context(5), None).unwrap();
        assert!(wide.starts_with("How can I submit"));
    }

    #[test]
    fn query_de_and_co() {
        let d = board_appeal();
        assert_eq!(
            formulate(&d, 3, &Formulation::new(FormulationKind::QueryDe), None).unwrap(),
            "Can I apply for a Board Appeal by fax?"
        );
        assert_eq!(
            formulate(&d, 3, &Formulation::new(FormulationKind::QueryCo), None).unwrap(),
            "Can I apply for it by fax?"
        );
        assert!(formulate(&d, 4, &Formulation::new(FormulationKind::QueryDe), None).is_err());
        assert!(matches!(
            formulate(&d, 1, &Formulation::new(FormulationKind::Rewriter), None),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn protocol_tokens() {
        let r = conditional_rewrite("no_rewrite", "What about fees?");
        assert_eq!((r.query.as_str(), r.was_rewritten), ("What about fees?", false));
        let r = conditional_rewrite("rewrite Can I apply for a Board Appeal by fax?", "Can I apply for it by fax?");
        assert_eq!(r.query, "Can I apply for a Board Appeal by fax?");
        assert!(r.was_rewritten);
        let r = conditional_rewrite("no_rewrite trailing junk", "orig");
        assert_eq!((r.query.as_str(), r.was_rewritten), ("orig", false));
        let r = conditional_rewrite("Can I fax a Board Appeal?", "orig");
        assert_eq!((r.query.as_str(), r.was_rewritten), ("Can I fax a Board Appeal?", true));
        let r = conditional_rewrite("rewrite   ", "orig");
        assert_eq!((r.query.as_str(), r.was_rewritten), ("orig", false));
    }

    #[test]
    fn training_targets() {
        let d = board_appeal();
        let pairs = make_rewriter_training_pairs(std::slice::from_ref(&d), 1);
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].target, "no_rewrite");
        assert_eq!(pairs[1].target, "rewrite What are the steps to apply for a Board Appeal by mail?");
        assert!(make_rewriter_training_pairs(&[], 1).is_empty());
        for (p, pair) in pairs.iter().zip(&d.pairs) {
            assert_eq!(conditional_rewrite(&p.target, &pair.user_co).query, pair.user_de);
        }
    }

    #[test]
    fn mock_rewriter_replays_gold_targets() {
        let d = board_appeal();
        let m = MockRewriter::from_dialogs(std::slice::from_ref(&d), 1);
        let r = rewrite_turn(&d, 2, 1, &m).unwrap();
        assert_eq!(r.query, "How can I apply for a Board Appeal in person?");
        assert!(r.was_rewritten);
        assert!(r.latency_seconds >= 0.0);
        let f = Formulation::new(FormulationKind::Rewriter);
        assert_eq!(formulate(&d, 0, &f, Some(&m)).unwrap(), d.pairs[0].user_co);
    }

    #[test]
    fn tsv_export_flattens_whitespace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        write_training_tsv(
            &path,
            &[TrainingPair {
                input: "a\tb\nc".into(),
                target: "no_rewrite".into(),
            }],
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "input\ttarget\na b c\tno_rewrite\n");
    }
}
