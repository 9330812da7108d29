//! Query-conditioned sentence scoring and top-k summary extraction.

mod lexical;
mod neural;

use std::fmt;
use std::str::FromStr;

pub use lexical::{score_bm25, score_random, score_semantic, score_tfidf};
pub use neural::{AttentiveSelector, LinearSelector, NeuralSelectorConfig, TrainableSelector};

use crate::error::{Error, Result};
use crate::text::{Document, TokenId};

/// Per-sentence selector logits, optionally with their softmax.
///
/// Sentences that cannot be selected (no tokens) carry `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScores {
    pub logits: Vec<f64>,
    pub probs: Option<Vec<f64>>,
}

impl SentenceScores {
    pub fn new(logits: Vec<f64>) -> Self {
        SentenceScores { logits, probs: None }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Softmax of the logits, max-subtracted; `-inf` entries get probability 0.
pub fn normalize(scores: &SentenceScores) -> Result<SentenceScores> {
    let m = scores.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::invalid("cannot normalize: no finite logit"));
    }
    let exps: Vec<f64> = scores.logits.iter().map(|w| (w - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(SentenceScores {
        logits: scores.logits.clone(),
        probs: Some(exps.into_iter().map(|e| e / z).collect()),
    })
}

/// The selected sentences of a document, kept in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub indices: Vec<usize>,
    pub k: usize,
    pub tokens: Vec<TokenId>,
}

impl Summary {
    /// Summary from strictly ascending sentence indices.
    pub fn from_indices(doc: &Document, indices: Vec<usize>, k: usize) -> Result<Summary> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("summary indices must be strictly ascending"));
        }
        if let Some(&last) = indices.last() {
            if last >= doc.num_sentences() {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    len: doc.num_sentences(),
                });
            }
        }
        let tokens = indices
            .iter()
            .flat_map(|&i| doc.sentences[i].tokens.iter().copied())
            .collect();
        Ok(Summary { indices, k, tokens })
    }

    /// Every sentence of the document (no selection).
    pub fn whole(doc: &Document) -> Summary {
        let n = doc.num_sentences();
        Summary::from_indices(doc, (0..n).collect(), n).expect("ascending indices")
    }
}

/// Takes the `k` highest-scoring sentences among the first `head_limit`
/// (all when `None`), ties to the lower index, emitted in document order.
pub fn hard_select(
    scores: &SentenceScores,
    doc: &Document,
    k: usize,
    head_limit: Option<usize>,
) -> Result<Summary> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if scores.len() != doc.num_sentences() {
        return Err(Error::shape(
            "hard_select",
            format!("{} scores for {} sentences", scores.len(), doc.num_sentences()),
        ));
    }
    let limit = head_limit.unwrap_or(usize::MAX).min(scores.len());
    let mut order: Vec<usize> = (0..limit)
        .filter(|&i| scores.logits[i] > f64::NEG_INFINITY)
        .collect();
    order.sort_by(|&a, &b| scores.logits[b].total_cmp(&scores.logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Summary::from_indices(doc, order, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    Tfidf,
    Bm25,
    Semantic,
    Linear,
    Attentive,
    Random,
}

impl SelectorKind {
    pub fn is_trainable(self) -> bool {
        matches!(self, SelectorKind::Linear | SelectorKind::Attentive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SelectorKind::Tfidf => "tfidf",
            SelectorKind::Bm25 => "bm25",
            SelectorKind::Semantic => "semantic",
            SelectorKind::Linear => "linear",
            SelectorKind::Attentive => "attentive",
            SelectorKind::Random => "random",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tfidf" => SelectorKind::Tfidf,
            "bm25" => SelectorKind::Bm25,
            "semantic" => SelectorKind::Semantic,
            "linear" => SelectorKind::Linear,
            "attentive" => SelectorKind::Attentive,
            "random" => SelectorKind::Random,
            other => return Err(Error::Config(format!("unknown selector {other:?}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Corpus, CorpusLimits};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn doc(n: usize) -> Document {
        let text: String = (0..n).map(|i| format!("w{i} x. ")).collect();
        Corpus::from_texts([("d", text.as_str())], CorpusLimits::default())
            .unwrap()
            .documents()[0]
            .clone()
    }

    #[test]
    fn normalize_examples() {
        let p = normalize(&SentenceScores::new(vec![0.0, 0.0])).unwrap().probs.unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = normalize(&SentenceScores::new(vec![1000.0, 0.0])).unwrap().probs.unwrap();
        assert_relative_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300 && p.iter().all(|v| v.is_finite()));
        let p = normalize(&SentenceScores::new(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]))
            .unwrap()
            .probs
            .unwrap();
        for (a, b) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        let p = normalize(&SentenceScores::new(vec![f64::NEG_INFINITY, 0.0])).unwrap().probs.unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
        assert!(normalize(&SentenceScores::new(vec![f64::NEG_INFINITY; 2])).is_err());
    }

    #[test]
    fn hard_select_examples() {
        let d = doc(3);
        let s = hard_select(&SentenceScores::new(vec![0.5, 0.9, 0.5]), &d, 2, None).unwrap();
        assert_eq!(s.indices, vec![0, 1]);
        let s = hard_select(&SentenceScores::new(vec![0.5, 0.9, 0.5]), &d, 5, None).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2]);
        assert_eq!(s.tokens, d.tokens().collect::<Vec<_>>());

        let d = doc(8);
        let mut logits = vec![0.0; 8];
        logits[5] = 10.0;
        let s = hard_select(&SentenceScores::new(logits), &d, 1, Some(2)).unwrap();
        assert_eq!(s.indices, vec![0]);
        assert!(hard_select(&SentenceScores::new(vec![0.0; 8]), &d, 0, None).is_err());
    }

    #[test]
    fn selector_names_roundtrip() {
        for k in ["tfidf", "bm25", "semantic", "linear", "attentive", "random"] {
            assert_eq!(k.parse::<SelectorKind>().unwrap().as_str(), k);
        }
        assert!("bert".parse::<SelectorKind>().is_err());
    }

    proptest! {
        #[test]
        fn hard_select_subset_and_softmax_monotone(
            logits in proptest::collection::vec(-5.0f64..5.0, 1..20),
            k in 1usize..8,
            head in proptest::option::of(1usize..25),
        ) {
            let d = doc(logits.len());
            let scores = SentenceScores::new(logits.clone());
            let s = hard_select(&scores, &d, k, head).unwrap();
            let limit = head.unwrap_or(usize::MAX).min(logits.len());
            prop_assert_eq!(s.indices.len(), k.min(limit));
            prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.indices.iter().all(|&i| i < limit));
            let p = normalize(&scores).unwrap().probs.unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let by_p = hard_select(&SentenceScores::new(p.iter().map(|v| v.ln()).collect()), &d, k, head).unwrap();
            let mut sorted = logits.clone();
            sorted.sort_by(f64::total_cmp);
            let tie_free = sorted.windows(2).all(|w| w[1] - w[0] > 1e-9);
            if tie_free {
                prop_assert_eq!(by_p.indices, s.indices);
            }
        }
    }
}
