//! Descriptive corpus statistics (population standard deviation).

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentSet, PropositionSet};
use crate::synth::Dialog;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: xs.len(),
        })
    }
}

/// Absent fields mean the underlying sample was empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub documents: usize,
    pub propositions: usize,
    pub dialogs: usize,
    /// Whitespace-delimited words.
    pub document_length: Option<MeanStd>,
    pub proposition_length: Option<MeanStd>,
    pub qa_pairs_per_dialog: Option<MeanStd>,
    pub qa_pairs_per_dialog_without_greetings: Option<MeanStd>,
    pub grounding_per_pair: Option<MeanStd>,
}

fn words(s: &str) -> f64 {
    s.split_whitespace().count() as f64
}

pub fn corpus_stats(dialogs: &[Dialog], docs: &DocumentSet, props: &PropositionSet) -> StatsReport {
    let doc_lengths: Vec<f64> = docs.iter().map(|d| words(&d.text)).collect();
    let prop_lengths: Vec<f64> = props.as_slice().iter().map(|p| words(&p.text)).collect();
    let pairs: Vec<f64> = dialogs.iter().map(|d| d.pairs.len() as f64).collect();
    let grounded: Vec<f64> = dialogs
        .iter()
        .map(|d| d.pairs.iter().filter(|p| p.is_grounded()).count() as f64)
        .collect();
    let grounding: Vec<f64> = dialogs
        .iter()
        .flat_map(|d| d.pairs.iter())
        .filter(|p| p.is_grounded())
        .map(|p| p.grounding.len() as f64)
        .collect();
    StatsReport {
        documents: docs.len(),
        propositions: props.len(),
        dialogs: dialogs.len(),
        document_length: MeanStd::of(&doc_lengths),
        proposition_length: MeanStd::of(&prop_lengths),
        qa_pairs_per_dialog: MeanStd::of(&pairs),
        qa_pairs_per_dialog_without_greetings: MeanStd::of(&grounded),
        grounding_per_pair: MeanStd::of(&grounding),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DialogPair;

    fn dialog(id: &str, n: usize) -> Dialog {
        let mut pairs = vec![DialogPair::new("hi", "hi", "hello", Vec::new())];
        for i in 1..n - 1 {
            pairs.push(DialogPair::new(format!("q{i}"), format!("q{i}"), "a", vec![format!("d#{i}")]));
        }
        pairs.push(DialogPair::new("bye", "bye", "bye", Vec::new()));
        Dialog {
            id: id.into(),
            sublist_index: 0,
            doc_ids: vec!["d".into()],
            pairs,
        }
    }

    #[test]
    fn four_and_six_pairs() {
        let s = corpus_stats(
            &[dialog("a", 4), dialog("b", 6)],
            &DocumentSet::new(vec![]).unwrap(),
            &PropositionSet::new(vec![]).unwrap(),
        );
        let p = s.qa_pairs_per_dialog.unwrap();
        assert_eq!((p.mean, p.std, p.n), (5.0, 1.0, 2));
        let g = s.qa_pairs_per_dialog_without_greetings.unwrap();
        assert_eq!((g.mean, g.std), (3.0, 1.0));
        assert_eq!(s.grounding_per_pair.unwrap().mean, 1.0);
        assert!(s.document_length.is_none());
    }

    #[test]
    fn empty_everything_is_absent() {
        let s = corpus_stats(&[], &DocumentSet::new(vec![]).unwrap(), &PropositionSet::new(vec![]).unwrap());
        assert_eq!(s, StatsReport::default());
    }
}
