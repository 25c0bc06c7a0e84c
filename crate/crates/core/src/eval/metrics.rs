//! Ranking metrics against a set of relevant ids.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

fn check_relevant(relevant: &BTreeSet<String>) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::Argument("relevant set is empty; the metric is undefined".into()));
    }
    Ok(())
}

/// Mean of precision@p over the positions holding a relevant item, divided
/// by the total number of relevant items (unretrieved ones contribute 0).
pub fn average_precision(ranked: &RankedList, relevant: &BTreeSet<String>) -> Result<f64> {
    check_relevant(relevant)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, id) in ranked.ids().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Fraction of relevant items found in the first `k` positions.
pub fn recall_at_k(ranked: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let found = ranked.ids().take(k).filter(|id| relevant.contains(*id)).count();
    Ok(found as f64 / relevant.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ap_examples() {
        let r = RankedList::from_ids("q", ["r", "x", "r2"]);
        let ap = average_precision(&r, &rel(&["r", "r2"])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&r, &rel(&["r"])).unwrap(), 1.0);
        assert_eq!(average_precision(&r, &rel(&["nope"])).unwrap(), 0.0);
        assert!(average_precision(&r, &rel(&[])).is_err());
    }

    #[test]
    fn recall_examples() {
        let r = RankedList::from_ids("q", ["a", "x", "b"]);
        assert_eq!(recall_at_k(&r, &rel(&["a", "b"]), 2).unwrap(), 0.5);
        assert_eq!(recall_at_k(&r, &rel(&["a", "b"]), 50).unwrap(), 1.0);
        assert!(recall_at_k(&r, &rel(&["a"]), 0).is_err());
        assert!(recall_at_k(&r, &rel(&[]), 3).is_err());
    }

    proptest! {
        #[test]
        fn recall_is_monotone_and_bounded(
            n in 1usize..50,
            rel_mask in proptest::collection::vec(any::<bool>(), 50),
            extra in 0usize..5,
        ) {
            let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let mut relevant: BTreeSet<String> =
                ids.iter().zip(&rel_mask).filter(|(_, m)| **m).map(|(i, _)| i.clone()).collect();
            for e in 0..extra {
                relevant.insert(format!("missing{e}"));
            }
            prop_assume!(!relevant.is_empty());
            let r = RankedList::from_ids("q", ids.iter().map(String::as_str));
            let mut prev = 0.0;
            for k in 1..=n + 2 {
                let v = recall_at_k(&r, &relevant, k).unwrap();
                prop_assert!(v >= prev && (0.0..=1.0).contains(&v));
                prev = v;
            }
            let ap = average_precision(&r, &relevant).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
