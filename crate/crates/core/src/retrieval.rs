//! Okapi BM25 scoring and the first-stage inverted index.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::text::{Corpus, Document, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Collection-level statistics BM25 needs.
pub trait TermStats {
    fn unit_count(&self) -> usize;
    fn df(&self, token: TokenId) -> u32;
    fn avg_len(&self) -> f64;
}

/// `ln(1 + (N − df + 0.5) / (df + 0.5))`
pub fn idf(n: usize, df: u32) -> f64 {
    let (n, df) = (n as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// BM25 of one unit (document or sentence). Each query token occurrence
/// contributes separately, so repeated query terms count repeatedly.
pub fn bm25_score<S: TermStats + ?Sized>(
    query: &[TokenId],
    tf: impl Fn(TokenId) -> u32,
    unit_len: usize,
    stats: &S,
    params: Bm25Params,
) -> f64 {
    let avg = stats.avg_len();
    let norm = if avg > 0.0 {
        1.0 - params.b + params.b * unit_len as f64 / avg
    } else {
        1.0
    };
    query
        .iter()
        .map(|&t| {
            let f = tf(t) as f64;
            if f == 0.0 {
                return 0.0;
            }
            idf(stats.unit_count(), stats.df(t)) * f * (params.k1 + 1.0) / (f + params.k1 * norm)
        })
        .sum()
}

/// Statistics over the sentences of a single document, where each sentence
/// plays the role of a collection unit.
#[derive(Debug, Clone)]
pub struct SentenceStats {
    n: usize,
    avg_len: f64,
    df: HashMap<TokenId, u32>,
}

impl SentenceStats {
    pub fn new(doc: &Document) -> Self {
        let mut df: HashMap<TokenId, u32> = HashMap::new();
        for s in &doc.sentences {
            let mut distinct = s.tokens.clone();
            distinct.sort_unstable();
            distinct.dedup();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = doc.sentences.len();
        let avg_len = if n == 0 { 0.0 } else { doc.total_tokens as f64 / n as f64 };
        SentenceStats { n, avg_len, df }
    }
}

impl TermStats for SentenceStats {
    fn unit_count(&self) -> usize {
        self.n
    }
    fn df(&self, token: TokenId) -> u32 {
        self.df.get(&token).copied().unwrap_or(0)
    }
    fn avg_len(&self) -> f64 {
        self.avg_len
    }
}

/// Counts occurrences of each token in `tokens`.
pub fn term_frequencies(tokens: &[TokenId]) -> HashMap<TokenId, u32> {
    let mut tf = HashMap::new();
    for &t in tokens {
        *tf.entry(t).or_default() += 1;
    }
    tf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: Vec<Vec<Posting>>,
    doc_lens: Vec<usize>,
    avg_len: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<InvertedIndex> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot index an empty corpus"));
        }
        let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); corpus.vocab().len()];
        let mut doc_lens = Vec::with_capacity(corpus.len());
        for (ord, doc) in corpus.documents().iter().enumerate() {
            let tokens: Vec<TokenId> = doc.tokens().collect();
            let mut tf: Vec<(TokenId, u32)> = term_frequencies(&tokens).into_iter().collect();
            tf.sort_unstable();
            for (t, f) in tf {
                postings[t as usize].push(Posting { doc: ord as u32, tf: f });
            }
            doc_lens.push(doc.total_tokens);
        }
        let avg_len = doc_lens.iter().sum::<usize>() as f64 / doc_lens.len() as f64;
        Ok(InvertedIndex {
            postings,
            doc_lens,
            avg_len,
            params,
        })
    }

    pub fn postings(&self, token: TokenId) -> &[Posting] {
        self.postings.get(token as usize).map_or(&[], Vec::as_slice)
    }

    pub fn doc_len(&self, ordinal: usize) -> usize {
        self.doc_lens[ordinal]
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lens.len()
    }

    /// BM25 of a single document.
    pub fn score(&self, query: &[TokenId], ordinal: usize) -> f64 {
        let tf = |t: TokenId| {
            let p = self.postings(t);
            p.binary_search_by_key(&(ordinal as u32), |p| p.doc)
                .map_or(0, |i| p[i].tf)
        };
        bm25_score(query, tf, self.doc_lens[ordinal], self, self.params)
    }

    /// Top-`depth` documents by BM25 (descending; ties by ordinal).
    /// Only documents sharing at least one query term are returned.
    pub fn retrieve(&self, query: &[TokenId], depth: usize) -> Result<Vec<(usize, f64)>> {
        if depth == 0 {
            return Err(Error::invalid("retrieval depth must be positive"));
        }
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for &t in query {
            let plist = self.postings(t);
            if plist.is_empty() {
                continue;
            }
            let idf = idf(self.num_docs(), plist.len() as u32);
            let (k1, b) = (self.params.k1, self.params.b);
            for p in plist {
                let f = p.tf as f64;
                let norm = 1.0 - b + b * self.doc_lens[p.doc as usize] as f64 / self.avg_len;
                *acc.entry(p.doc as usize).or_default() += idf * f * (k1 + 1.0) / (f + k1 * norm);
            }
        }
        let mut hits: Vec<(usize, f64)> = acc.into_iter().collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(depth);
        Ok(hits)
    }
}

impl TermStats for InvertedIndex {
    fn unit_count(&self) -> usize {
        self.doc_lens.len()
    }
    fn df(&self, token: TokenId) -> u32 {
        self.postings(token).len() as u32
    }
    fn avg_len(&self) -> f64 {
        self.avg_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::CorpusLimits;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        Corpus::from_texts(docs.iter().copied(), CorpusLimits::default()).unwrap()
    }

    #[test]
    fn postings_and_avgdl() {
        let c = corpus(&[("a", "yoga yoga x y z w v u t s"), ("b", &"q ".repeat(30))]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let yoga = c.vocab().id("yoga").unwrap();
        assert_eq!(idx.postings(yoga), &[Posting { doc: 0, tf: 2 }]);
        assert!(idx.postings(c.vocab().id_or_unk("absent")).is_empty());
        assert_eq!(idx.avg_len(), 20.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = corpus(&[]);
        assert!(InvertedIndex::build(&c, Bm25Params::default()).is_err());
    }

    #[test]
    fn single_term_at_average_length() {
        struct S;
        impl TermStats for S {
            fn unit_count(&self) -> usize {
                2
            }
            fn df(&self, _: TokenId) -> u32 {
                1
            }
            fn avg_len(&self) -> f64 {
                4.0
            }
        }
        let s = bm25_score(&[7], |_| 1, 4, &S, Bm25Params::default());
        // tf=1, len=avglen: (k1+1)/(1+k1) = 1
        assert_relative_eq!(s, idf(2, 1), epsilon = 1e-15);
        assert_relative_eq!(idf(2, 1), (1.0f64 + 1.5 / 1.5).ln());
    }

    #[test]
    fn saturation_and_zero_overlap() {
        let c = corpus(&[("a", "x y"), ("b", "z w")]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let one = bm25_score(&[5], |_| 1, 2, &idx, Bm25Params::default());
        let two = bm25_score(&[5], |_| 2, 2, &idx, Bm25Params::default());
        assert!(two > one && two < 2.0 * one);
        assert_eq!(bm25_score(&[5], |_| 0, 2, &idx, Bm25Params::default()), 0.0);
    }

    #[test]
    fn retrieve_rules() {
        let c = corpus(&[("a", "cats and dogs"), ("b", "yoga mats"), ("c", "nothing here")]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let yoga = c.vocab().id("yoga").unwrap();
        let hits = idx.retrieve(&[yoga], 100).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 1);
        assert!(idx.retrieve(&[crate::text::UNK], 10).unwrap().is_empty());
        assert!(idx.retrieve(&[yoga], 0).is_err());
    }

    /// Direct evaluation over raw token lists without any index.
    fn brute_force_bm25(query: &[u32], docs: &[Vec<u32>], d: usize) -> f64 {
        let n = docs.len() as f64;
        let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let (k1, b) = (1.2, 0.75);
        let mut s = 0.0;
        for &q in query {
            let tf = docs[d].iter().filter(|&&t| t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|doc| doc.contains(&q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * docs[d].len() as f64 / avg));
        }
        s
    }

    proptest! {
        #[test]
        fn index_matches_brute_force(
            docs in proptest::collection::vec(proptest::collection::vec(0u8..6, 1..12), 1..10),
            query in proptest::collection::vec(0u8..7, 1..4),
        ) {
            let texts: Vec<(String, String)> = docs.iter().enumerate().map(|(i, d)| {
                (format!("d{i}"), d.iter().map(|t| format!("t{t}")).collect::<Vec<_>>().join(" "))
            }).collect();
            let c = Corpus::from_texts(texts.iter().map(|(a, b)| (a.as_str(), b.as_str())), CorpusLimits::default()).unwrap();
            let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
            let qids: Vec<u32> = query.iter().map(|t| c.vocab().id_or_unk(&format!("t{t}"))).collect();
            let raw: Vec<Vec<u32>> = c.documents().iter().map(|d| d.tokens().collect()).collect();
            let hits = idx.retrieve(&qids, 100).unwrap();
            for w in hits.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            for d in 0..raw.len() {
                let expect = brute_force_bm25(&qids, &raw, d);
                prop_assert!((idx.score(&qids, d) - expect).abs() < 1e-9);
                if let Some(h) = hits.iter().find(|h| h.0 == d) {
                    prop_assert!((h.1 - expect).abs() < 1e-9);
                } else {
                    prop_assert_eq!(expect, 0.0);
                }
            }
        }
    }
}
