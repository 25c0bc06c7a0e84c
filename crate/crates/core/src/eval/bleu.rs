//! BLEU-4 over the retrieval tokenizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::retrieval::tokenize;

const MAX_ORDER: usize = 4;
pub const SENTENCE_FLOOR: f64 = 1e-9;

/// Clipped n-gram matches and hypothesis n-gram totals per order, plus lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    correct: [usize; MAX_ORDER],
    total: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn count(hyp: &str, reference: &str) -> Counts {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    let mut c = Counts {
        hyp_len: h.len(),
        ref_len: r.len(),
        ..Counts::default()
    };
    for n in 1..=MAX_ORDER {
        let hg = ngrams(&h, n);
        let rg = ngrams(&r, n);
        c.total[n - 1] = h.len().saturating_sub(n - 1);
        c.correct[n - 1] = hg
            .iter()
            .map(|(g, k)| (*k).min(rg.get(g).copied().unwrap_or(0)))
            .sum();
    }
    c
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    }
}

/// Corpus-level BLEU-4 in [0, 100], no smoothing: any order with zero
/// matches yields 0.
pub fn corpus_bleu4(hypotheses: &[String], references: &[String]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Argument("BLEU needs at least one reference".into()));
    }
    let mut acc = Counts::default();
    for (h, r) in hypotheses.iter().zip(references) {
        let c = count(h, r);
        for n in 0..MAX_ORDER {
            acc.correct[n] += c.correct[n];
            acc.total[n] += c.total[n];
        }
        acc.hyp_len += c.hyp_len;
        acc.ref_len += c.ref_len;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        if acc.correct[n] == 0 || acc.total[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (acc.correct[n] as f64 / acc.total[n] as f64).ln();
    }
    Ok(100.0 * brevity_penalty(acc.hyp_len, acc.ref_len) * (log_sum / MAX_ORDER as f64).exp())
}

/// Sentence BLEU-4 with a 1e-9 floor on zero match counts. Orders longer
/// than the hypothesis are left out of the geometric mean.
pub fn sentence_bleu4(hypothesis: &str, reference: &str) -> f64 {
    let c = count(hypothesis, reference);
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..MAX_ORDER {
        if c.total[n] == 0 {
            continue;
        }
        let num = if c.correct[n] == 0 { SENTENCE_FLOOR } else { c.correct[n] as f64 };
        log_sum += (num / c.total[n] as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    100.0 * brevity_penalty(c.hyp_len, c.ref_len) * (log_sum / orders as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity_is_hundred() {
        let s = v(&["the board appeal form is due", "you can apply by fax or mail today"]);
        assert!((corpus_bleu4(&s, &s).unwrap() - 100.0).abs() < 1e-9);
        assert!((sentence_bleu4(&s[0], &s[0]) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_four_gram_overlap_is_zero() {
        let h = v(&["a b c d e"]);
        let r = v(&["a b c x d e"]);
        assert_eq!(corpus_bleu4(&h, &r).unwrap(), 0.0);
        assert!(sentence_bleu4(&h[0], &r[0]) > 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(corpus_bleu4(&v(&["a"]), &v(&[])).is_err());
        assert!(corpus_bleu4(&[], &[]).is_err());
    }

    #[test]
    fn brevity_penalty_applies() {
        let h = v(&["one two three four five"]);
        let r = v(&["one two three four five six seven eight nine ten"]);
        let want = 100.0 * (1.0f64 - 2.0).exp();
        assert!((corpus_bleu4(&h, &r).unwrap() - want).abs() < 1e-9);
    }
}
