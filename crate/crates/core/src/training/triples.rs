use rand::Rng;

use crate::evaluation::{Qrels, Run};

/// A query with one document judged more relevant than the other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
}

/// Balanced triple sampling: queries take turns (in run order), and each
/// turn draws a uniform (d⁺, d⁻) pair with rel(d⁺) > rel(d⁻) from the
/// query's candidates. Queries offering no such pair are skipped.
pub fn sample_triples<R: Rng + ?Sized>(candidates: &Run, qrels: &Qrels, rng: &mut R, count: usize) -> Vec<Triple> {
    let mut pools: Vec<(&str, Vec<(&str, &str)>)> = Vec::new();
    for r in &candidates.rankings {
        let docs: Vec<(&str, u32)> = r.doc_ids().map(|d| (d, qrels.relevance(&r.qid, d))).collect();
        let pairs: Vec<(&str, &str)> = docs
            .iter()
            .flat_map(|&(p, rp)| docs.iter().filter(move |&&(_, rn)| rp > rn).map(move |&(n, _)| (p, n)))
            .collect();
        if pairs.is_empty() {
            log::warn!("query {} has no positive/negative candidate pair; skipped", r.qid);
            continue;
        }
        pools.push((r.qid.as_str(), pairs));
    }
    if pools.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|i| {
            let (qid, pairs) = &pools[i % pools.len()];
            let (p, n) = pairs[rng.random_range(0..pairs.len())];
            Triple {
                query_id: qid.to_string(),
                positive: p.to_string(),
                negative: n.to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::QueryRanking;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Run, Qrels) {
        let mut run = Run::new("t");
        for (q, docs) in [("q1", ["a", "b", "c"]), ("q2", ["d", "e", "f"]), ("q3", ["g", "h", "i"])] {
            let entries = docs.iter().enumerate().map(|(i, d)| (d.to_string(), -(i as f64))).collect();
            run.push(QueryRanking::from_scores(q, entries).unwrap()).unwrap();
        }
        let qrels = Qrels::parse("q1 0 a 1\nq1 0 b 2\nq2 0 e 1\nq3 0 g 1\nq3 0 h 1\nq3 0 i 1\n".as_bytes(), "q").unwrap();
        (run, qrels)
    }

    #[test]
    fn balanced_and_valid() {
        let (run, qrels) = fixture();
        let t = sample_triples(&run, &qrels, &mut ChaCha8Rng::seed_from_u64(1), 4);
        // q3 has only positives and is skipped
        assert_eq!(t.iter().filter(|t| t.query_id == "q1").count(), 2);
        assert_eq!(t.iter().filter(|t| t.query_id == "q2").count(), 2);
        for x in &t {
            assert!(qrels.relevance(&x.query_id, &x.positive) > qrels.relevance(&x.query_id, &x.negative));
        }
    }

    #[test]
    fn deterministic_and_uniform_over_pairs() {
        let (run, qrels) = fixture();
        let a = sample_triples(&run, &qrels, &mut ChaCha8Rng::seed_from_u64(7), 50);
        let b = sample_triples(&run, &qrels, &mut ChaCha8Rng::seed_from_u64(7), 50);
        assert_eq!(a, b);
        // q1 pairs: (a,c), (b,a), (b,c) — each about a third
        let t = sample_triples(&run, &qrels, &mut ChaCha8Rng::seed_from_u64(3), 6000);
        let q1: Vec<_> = t.iter().filter(|t| t.query_id == "q1").collect();
        let ba = q1.iter().filter(|t| t.positive == "b" && t.negative == "a").count() as f64;
        assert!((ba / q1.len() as f64 - 1.0 / 3.0).abs() < 0.03);
    }

    #[test]
    fn nothing_usable() {
        let (run, _) = fixture();
        assert!(sample_triples(&run, &Qrels::new(), &mut ChaCha8Rng::seed_from_u64(1), 5).is_empty());
    }
}
