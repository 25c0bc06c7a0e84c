//! Reciprocal rank fusion.

use std::collections::HashMap;

use super::RankedList;
use crate::error::{Error, Result};

pub const DEFAULT_RRF_K: u32 = 60;

/// Fuses two ranked lists: each item scores `1/(rank_a + k) + 1/(rank_b + k)`
/// with 1-based ranks. An item missing from one list gets only the term of
/// the list it appears in. Output is truncated to `depth`.
pub fn rrf_fuse(a: &RankedList, b: &RankedList, k_rrf: u32, depth: usize) -> Result<RankedList> {
    if k_rrf < 1 {
        return Err(Error::Argument("k_rrf must be at least 1".into()));
    }
    let k = f64::from(k_rrf);
    let mut ranks: HashMap<&str, (Option<usize>, Option<usize>)> = HashMap::new();
    for (i, id) in a.ids().enumerate() {
        ranks.entry(id).or_default().0.get_or_insert(i + 1);
    }
    for (i, id) in b.ids().enumerate() {
        ranks.entry(id).or_default().1.get_or_insert(i + 1);
    }
    let scored = ranks.into_iter().map(|(id, (ra, rb))| {
        let mut score = 0.0;
        if let Some(r) = ra {
            score += 1.0 / (r as f64 + k);
        }
        if let Some(r) = rb {
            score += 1.0 / (r as f64 + k);
        }
        (id.to_string(), score)
    });
    let query_id = if a.query_id.is_empty() { &b.query_id } else { &a.query_id };
    RankedList::from_scores(query_id.clone(), scored, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_in_both_lists() {
        let a = RankedList::from_ids("q", ["x", "y"]);
        let b = RankedList::from_ids("q", ["x", "z"]);
        let f = rrf_fuse(&a, &b, DEFAULT_RRF_K, 10).unwrap();
        assert_eq!(f.entries[0].id, "x");
        assert!((f.entries[0].score - 2.0 / 61.0).abs() < 1e-15);
        assert!((f.entries[0].score - 0.0327869).abs() < 1e-7);
    }

    #[test]
    fn present_in_one_list_only() {
        let a = RankedList::from_ids("q", ["x"]);
        let b = RankedList::empty("q");
        let f = rrf_fuse(&a, &b, 60, 10).unwrap();
        assert!((f.entries[0].score - 1.0 / 61.0).abs() < 1e-15);
        assert!((f.entries[0].score - 0.0163934).abs() < 1e-7);
    }

    #[test]
    fn ordering_and_truncation() {
        let a = RankedList::from_ids("q", ["a", "b", "c"]);
        let b = RankedList::from_ids("q", ["c", "b", "d"]);
        let f = rrf_fuse(&a, &b, 60, 2).unwrap();
        // b: 1/62 + 1/62; c: 1/63 + 1/61; a: 1/61
        assert_eq!(f.ids().collect::<Vec<_>>(), vec!["c", "b"]);
        f.validate().unwrap();
        assert!(rrf_fuse(&a, &b, 0, 2).is_err());
    }
}
