use rand::Rng;

use super::SentenceScores;
use crate::retrieval::{bm25_score, term_frequencies, Bm25Params, SentenceStats};
use crate::text::{Document, EmbeddingTable, Query, TokenId, Vocabulary};

fn distinct(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut d = tokens.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// `w_i = Σ_{t ∈ q ∩ s_i} tf(t, s_i) · ln(N / df(t))` with corpus-level N and df.
pub fn score_tfidf(query: &Query, doc: &Document, vocab: &Vocabulary) -> SentenceScores {
    let terms = distinct(&query.tokens);
    let n = vocab.doc_count() as f64;
    let logits = doc
        .sentences
        .iter()
        .map(|s| {
            if s.tokens.is_empty() {
                return f64::NEG_INFINITY;
            }
            let tf = term_frequencies(&s.tokens);
            terms
                .iter()
                .filter_map(|t| {
                    let f = *tf.get(t)?;
                    let df = vocab.df(*t);
                    (df > 0).then(|| f as f64 * (n / df as f64).ln())
                })
                .sum()
        })
        .collect();
    SentenceScores::new(logits)
}

/// BM25 of each sentence, treating the document's sentences as the collection.
pub fn score_bm25(query: &Query, doc: &Document, params: Bm25Params) -> SentenceScores {
    let stats = SentenceStats::new(doc);
    let logits = doc
        .sentences
        .iter()
        .map(|s| {
            if s.tokens.is_empty() {
                return f64::NEG_INFINITY;
            }
            let tf = term_frequencies(&s.tokens);
            bm25_score(
                &query.tokens,
                |t| tf.get(&t).copied().unwrap_or(0),
                s.tokens.len(),
                &stats,
                params,
            )
        })
        .collect();
    SentenceScores::new(logits)
}

/// Cosine between the averaged query and sentence embeddings.
pub fn score_semantic(query: &Query, doc: &Document, embeddings: &EmbeddingTable) -> SentenceScores {
    let q = embeddings.average(&query.tokens);
    let logits = doc
        .sentences
        .iter()
        .map(|s| {
            if s.tokens.is_empty() {
                f64::NEG_INFINITY
            } else {
                cosine(&q, &embeddings.average(&s.tokens))
            }
        })
        .collect();
    SentenceScores::new(logits)
}

/// I.i.d. uniform logits; every sentence is eligible.
pub fn score_random<R: Rng + ?Sized>(doc: &Document, rng: &mut R) -> SentenceScores {
    SentenceScores::new((0..doc.num_sentences()).map(|_| rng.random::<f64>()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::idf;
    use crate::selectors::hard_select;
    use crate::text::{Corpus, CorpusLimits};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        Corpus::from_texts(docs.iter().copied(), CorpusLimits::default()).unwrap()
    }

    #[test]
    fn tfidf_examples() {
        let c = corpus(&[
            ("a", "yoga yoga mat. common. nothing here"),
            ("b", "common"),
            ("c", "common"),
            ("d", "common"),
        ]);
        let v = c.vocab();
        let q = Query::new("q", "yoga common", v);
        let s = score_tfidf(&q, c.get("a").unwrap(), v);
        // yoga: tf 2, N = 4, df = 1
        assert_relative_eq!(s.logits[0], 2.0 * 4f64.ln(), epsilon = 1e-12);
        // in every document: ln(1) = 0
        assert_eq!(s.logits[1], 0.0);
        assert_eq!(s.logits[2], 0.0);
    }

    /// Hand-rolled per-sentence BM25 from raw token lists.
    fn reference_sentence_bm25(query: &[u32], sents: &[Vec<u32>]) -> Vec<f64> {
        let n = sents.len();
        let avg = sents.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
        sents
            .iter()
            .map(|s| {
                query
                    .iter()
                    .map(|q| {
                        let tf = s.iter().filter(|t| *t == q).count() as f64;
                        if tf == 0.0 {
                            return 0.0;
                        }
                        let df = sents.iter().filter(|x| x.contains(q)).count() as u32;
                        idf(n, df) * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * s.len() as f64 / avg))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn bm25_matches_reference_and_finds_term() {
        let c = corpus(&[(
            "a",
            "alpha beta gamma. beta beta delta. hot yoga class. gamma alpha. yoga yoga yoga beta beta",
        )]);
        let v = c.vocab();
        let d = c.get("a").unwrap();
        let q = Query::new("q", "yoga beta yoga", v);
        let s = score_bm25(&q, d, Bm25Params::default());
        let sents: Vec<Vec<u32>> = d.sentences.iter().map(|s| s.tokens.clone()).collect();
        for (a, b) in s.logits.iter().zip(reference_sentence_bm25(&q.tokens, &sents)) {
            assert!((a - b).abs() < 1e-9);
        }

        let c = corpus(&[("a", "x y. x y. x yoga. x y")]);
        let q = Query::new("q", "yoga", c.vocab());
        let s = score_bm25(&q, c.get("a").unwrap(), Bm25Params::default());
        let top = hard_select(&s, c.get("a").unwrap(), 1, None).unwrap();
        assert_eq!(top.indices, vec![2]);
        let q = Query::new("q", "absent", c.vocab());
        assert!(score_bm25(&q, c.get("a").unwrap(), Bm25Params::default())
            .logits
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn semantic_examples() {
        let c = corpus(&[("a", "hot yoga. cold water. unknown words")]);
        let v = c.vocab();
        let emb = EmbeddingTable::parse(
            "hot 1 0\nyoga 0 1\ncold 2 -1\nwater 0 -1\n".as_bytes(),
            "e",
            v,
        )
        .unwrap();
        let q = Query::new("q", "hot yoga", v);
        let s = score_semantic(&q, c.get("a").unwrap(), &emb);
        assert_relative_eq!(s.logits[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.logits[1], 0.0, epsilon = 1e-12);
        assert_eq!(s.logits[2], 0.0);
    }

    #[test]
    fn random_is_reproducible_and_uniform() {
        let c = corpus(&[("a", "a. b. c. d")]);
        let d = c.get("a").unwrap();
        let draw = |seed| score_random(d, &mut ChaCha8Rng::seed_from_u64(seed)).logits;
        assert_eq!(draw(3), draw(3));
        assert_eq!(draw(3).len(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let s = score_random(d, &mut rng);
            counts[hard_select(&s, d, 1, None).unwrap().indices[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }
}
