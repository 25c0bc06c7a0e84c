//! Splits, retrieval and response metrics, corpus statistics, and full
//! formulation x retriever evaluation runs.

mod bleu;
mod metrics;
mod split;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bleu::{corpus_bleu4, sentence_bleu4, SENTENCE_FLOOR};
pub use metrics::{average_precision, recall_at_k};
pub use split::{split_dataset, DatasetSplit, SplitSpec};
pub use stats::{corpus_stats, MeanStd, StatsReport};

use crate::error::{Error, Result};
use crate::retrieval::{Retriever, Strategy, DEFAULT_TOP_K};
use crate::rewrite::{formulate, rewrite_turn, Formulation, FormulationKind, Rewriter};
use crate::synth::Dialog;

pub const RECALL_CUTOFFS: [usize; 3] = [5, 10, 20];
pub const AGGREGATION: &str = "micro average over queries within each seed, unweighted mean over seeds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub map: f64,
    pub r_at: BTreeMap<usize, f64>,
    pub bleu: Option<f64>,
    pub n_queries: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: String,
    pub strategy: String,
    pub retriever: String,
    pub history_pairs: usize,
    pub top_k: usize,
    pub map: f64,
    pub r_at: BTreeMap<usize, f64>,
    /// BLEU of rewritten queries against the decontextualized questions;
    /// only set for the rewriter strategy.
    pub bleu: Option<f64>,
    /// Summed over seeds.
    pub n_queries: usize,
    pub n_excluded: usize,
    pub per_seed: Vec<SeedMetrics>,
}

/// Wall-clock rewriter latency, kept out of the report so reports stay
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteTiming {
    pub strategy: String,
    pub calls: usize,
    pub total_seconds: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub timing: Option<RewriteTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub top_k: usize,
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let s = SplitSpec::new(0);
        Self {
            top_k: DEFAULT_TOP_K,
            train_fraction: s.train_fraction,
            val_fraction_of_train: s.val_fraction_of_train,
        }
    }
}

struct QueryOutcome {
    ap: f64,
    recall: [f64; 3],
    rewrite: Option<(String, String, f64)>,
}

fn run_query(
    dialog: &Dialog,
    turn: usize,
    f: &Formulation,
    retriever: &Retriever<'_>,
    strategy: Strategy,
    rewriter: Option<&dyn Rewriter>,
    k: usize,
) -> Result<QueryOutcome> {
    let pair = &dialog.pairs[turn];
    let (query, rewrite) = match (f.kind, rewriter) {
        (FormulationKind::Rewriter, Some(rw)) => {
            let r = rewrite_turn(dialog, turn, f.history_pairs, rw)?;
            (r.query.clone(), Some((r.query, pair.user_de.clone(), r.latency_seconds)))
        }
        _ => (formulate(dialog, turn, f, rewriter)?, None),
    };
    let ranked = retriever.retrieve(strategy, &query, k)?;
    let relevant: BTreeSet<String> = pair.grounding.iter().cloned().collect();
    let mut recall = [0.0; 3];
    for (r, cutoff) in recall.iter_mut().zip(RECALL_CUTOFFS) {
        *r = recall_at_k(&ranked, &relevant, cutoff)?;
    }
    Ok(QueryOutcome {
        ap: average_precision(&ranked, &relevant)?,
        recall,
        rewrite,
    })
}

/// Evaluable turns of a dialog plus the count of excluded non-greeting turns
/// (empty grounding). The first and last pairs are greetings when ungrounded.
fn query_turns(d: &Dialog) -> (Vec<usize>, usize) {
    let mut turns = Vec::new();
    let mut excluded = 0;
    let last = d.pairs.len().saturating_sub(1);
    for (i, p) in d.pairs.iter().enumerate() {
        if p.is_grounded() {
            turns.push(i);
        } else if i != 0 && i != last {
            log::warn!("{} turn {i} has no grounding; excluded from evaluation", d.id);
            excluded += 1;
        }
    }
    (turns, excluded)
}

/// For each seed: split, formulate every grounded test turn, retrieve top-k,
/// score AP and R@{5,10,20}; then average over seeds.
pub fn evaluate_retrieval(
    dialogs: &[Dialog],
    formulation: &Formulation,
    retriever: &Retriever<'_>,
    strategy: Strategy,
    seeds: &[u64],
    rewriter: Option<&dyn Rewriter>,
    opts: &EvalOptions,
) -> Result<EvalOutput> {
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    if opts.top_k < 1 {
        return Err(Error::Argument("top_k must be at least 1".into()));
    }
    if formulation.kind == FormulationKind::Rewriter && rewriter.is_none() {
        return Err(Error::State("rewriter strategy needs a rewriter endpoint".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut latencies = Vec::new();
    for &seed in seeds {
        let spec = SplitSpec {
            seed,
            train_fraction: opts.train_fraction,
            val_fraction_of_train: opts.val_fraction_of_train,
        };
        let test = split_dataset(dialogs, &spec)?.test;
        let mut jobs = Vec::new();
        let mut n_excluded = 0;
        for d in &test {
            let (turns, excluded) = query_turns(d);
            n_excluded += excluded;
            jobs.extend(turns.into_iter().map(|t| (d, t)));
        }
        if jobs.is_empty() {
            return Err(Error::Validation(format!(
                "seed {seed}: the test split has no evaluable queries"
            )));
        }
        let outcomes = jobs
            .par_iter()
            .map(|(d, t)| run_query(d, *t, formulation, retriever, strategy, rewriter, opts.top_k))
            .collect::<Result<Vec<_>>>()?;
        let n = outcomes.len() as f64;
        let map = outcomes.iter().map(|o| o.ap).sum::<f64>() / n;
        let r_at = RECALL_CUTOFFS
            .iter()
            .enumerate()
            .map(|(j, c)| (*c, outcomes.iter().map(|o| o.recall[j]).sum::<f64>() / n))
            .collect();
        let bleu = if formulation.kind == FormulationKind::Rewriter {
            let (hyps, refs): (Vec<String>, Vec<String>) = outcomes
                .iter()
                .filter_map(|o| o.rewrite.as_ref())
                .map(|(h, r, _)| (h.clone(), r.clone()))
                .unzip();
            latencies.extend(outcomes.iter().filter_map(|o| o.rewrite.as_ref()).map(|r| r.2));
            Some(corpus_bleu4(&hyps, &refs)?)
        } else {
            None
        };
        per_seed.push(SeedMetrics {
            seed,
            map,
            r_at,
            bleu,
            n_queries: outcomes.len(),
            n_excluded,
        });
    }
    let s = per_seed.len() as f64;
    let mean_of = |f: &dyn Fn(&SeedMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / s;
    let report = EvalReport {
        aggregation: AGGREGATION.into(),
        strategy: formulation.kind.to_string(),
        retriever: strategy.to_string(),
        history_pairs: formulation.history_pairs,
        top_k: opts.top_k,
        map: mean_of(&|m| m.map),
        r_at: RECALL_CUTOFFS.iter().map(|c| (*c, mean_of(&|m| m.r_at[c]))).collect(),
        bleu: per_seed
            .iter()
            .map(|m| m.bleu)
            .collect::<Option<Vec<f64>>>()
            .map(|b| b.iter().sum::<f64>() / s),
        n_queries: per_seed.iter().map(|m| m.n_queries).sum(),
        n_excluded: per_seed.iter().map(|m| m.n_excluded).sum(),
        per_seed,
    };
    let timing = (!latencies.is_empty()).then(|| {
        let total: f64 = latencies.iter().sum();
        RewriteTiming {
            strategy: report.strategy.clone(),
            calls: latencies.len(),
            total_seconds: total,
            mean_seconds: total / latencies.len() as f64,
        }
    });
    Ok(EvalOutput { report, timing })
}

fn render_rows(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 || c == 1 && cols > 3 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Strategy/retriever rows with MAP and recall columns.
pub fn render_eval_table(reports: &[EvalReport]) -> String {
    let mut rows = vec![["Strategy", "Retriever", "MAP", "R@5", "R@10", "R@20", "BLEU", "Queries"]
        .map(String::from)
        .to_vec()];
    for r in reports {
        let mut row = vec![r.strategy.clone(), r.retriever.clone(), format!("{:.4}", r.map)];
        row.extend(RECALL_CUTOFFS.iter().map(|c| format!("{:.4}", r.r_at.get(c).copied().unwrap_or(0.0))));
        row.push(r.bleu.map_or("-".into(), |b| format!("{b:.2}")));
        row.push(r.n_queries.to_string());
        rows.push(row);
    }
    format!("# {AGGREGATION}\n{}", render_rows(&rows))
}

pub fn render_stats_table(s: &StatsReport) -> String {
    let cell = |m: &Option<MeanStd>| match m {
        Some(m) => [format!("{:.2}", m.mean), format!("{:.2}", m.std)],
        None => ["-".to_string(), "-".to_string()],
    };
    let mut rows = vec![vec!["Statistic".to_string(), "Mean".into(), "Std".into()]];
    for (label, m) in [
        ("Document length (words)", &s.document_length),
        ("Proposition length (words)", &s.proposition_length),
        ("QA pairs per dialog", &s.qa_pairs_per_dialog),
        ("QA pairs per dialog (no greetings)", &s.qa_pairs_per_dialog_without_greetings),
        ("GT propositions per QA pair", &s.grounding_per_pair),
    ] {
        let [a, b] = cell(m);
        rows.push(vec![label.to_string(), a, b]);
    }
    format!(
        "documents={} propositions={} dialogs={}\n{}",
        s.documents,
        s.propositions,
        s.dialogs,
        render_rows(&rows)
    )
}
