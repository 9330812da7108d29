//! The assembled select-and-rank model: selector + ranker + parameters.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{load_checkpoint, save_checkpoint, ParameterStore};
use crate::config::{Config, Mode};
use crate::error::{Error, Result};
use crate::evaluation::{QueryRanking, Run};
use crate::ranker::{assemble_input, Ranker, RankerConfig, RankerInput};
use crate::retrieval::Bm25Params;
use crate::selectors::{
    hard_select, normalize, score_bm25, score_random, score_semantic, score_tfidf, AttentiveSelector, LinearSelector,
    NeuralSelectorConfig, SelectorKind, SentenceScores, Summary, TrainableSelector,
};
use crate::text::{Corpus, Document, EmbeddingTable, Query};

/// Architecture keys stored in (and read back from) the checkpoint header.
const ARCH_KEYS: &[&str] = &[
    "dim",
    "heads",
    "layers",
    "ff_dim",
    "max_len",
    "dropout",
    "mode",
    "selector",
    "selector_dim",
    "selector_hidden",
    "selector_separate_query_layer",
];

/// 64-bit FNV-1a over the seed and a pair of ids, for per-pair random streams.
pub fn pair_seed(seed: u64, qid: &str, docid: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(qid.bytes())
        .chain([0xff])
        .chain(docid.bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub enum Selector {
    Tfidf,
    Bm25(Bm25Params),
    Semantic(EmbeddingTable),
    Random,
    Linear(LinearSelector),
    Attentive(AttentiveSelector),
}

impl Selector {
    pub fn trainable(&self) -> Option<&dyn TrainableSelector> {
        match self {
            Selector::Linear(s) => Some(s),
            Selector::Attentive(s) => Some(s),
            _ => None,
        }
    }
}

/// Scores, summary and ranker input for one (query, document) pair.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    /// Selector logits with probabilities; `None` when no selection is applied.
    pub scores: Option<SentenceScores>,
    pub summary: Summary,
    pub input: RankerInput,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainedSentence {
    pub index: usize,
    pub text: String,
    /// `None` for sentences the selector cannot pick.
    pub logit: Option<f64>,
    pub p: Option<f64>,
    pub selected: bool,
}

/// Extractive rationale for a ranking decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub query_id: String,
    pub doc_id: String,
    pub score: f64,
    pub sentences: Vec<ExplainedSentence>,
}

impl Explanation {
    pub fn selected(&self) -> impl Iterator<Item = &ExplainedSentence> {
        self.sentences.iter().filter(|s| s.selected)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct SelectAndRank {
    pub store: ParameterStore,
    ranker: Ranker,
    selector: Selector,
    mode: Mode,
    k: usize,
    head_limit: Option<usize>,
    seed: u64,
    header: BTreeMap<String, String>,
}

impl SelectAndRank {
    /// Fresh parameters for `config`, sized to `vocab_size`.
    pub fn new(config: &Config, vocab_size: usize, embeddings: Option<EmbeddingTable>) -> Result<SelectAndRank> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::build(&mut store, config, vocab_size, embeddings, &mut rng).map(|(ranker, selector)| {
            SelectAndRank::assemble(store, ranker, selector, config, vocab_size)
        })
    }

    /// Loads a checkpoint; architecture comes from its header, while
    /// inference settings (k, head_limit, seed) come from `config`. Mode and
    /// selector also default to the header unless set explicitly in `config`.
    pub fn load(path: &Path, config: &Config, embeddings: Option<EmbeddingTable>) -> Result<SelectAndRank> {
        let (header, mut store) = load_checkpoint(path)?;
        let mut merged = config.clone();
        for key in ARCH_KEYS {
            let Some(v) = header.get(*key) else {
                return Err(Error::Checkpoint(format!("header lacks `{key}`")));
            };
            if (*key == "mode" || *key == "selector") && config.is_explicit(key) {
                continue;
            }
            merged.set(key, v)?;
        }
        let vocab_size: usize = header
            .get("vocab_size")
            .ok_or_else(|| Error::Checkpoint("header lacks `vocab_size`".into()))?
            .parse()
            .map_err(|_| Error::Checkpoint("bad vocab_size".into()))?;
        let before = store.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (ranker, selector) = Self::build(&mut store, &merged, vocab_size, embeddings, &mut rng)?;
        if store.len() != before {
            return Err(Error::Checkpoint(format!(
                "checkpoint lacks parameters for selector `{}` in mode `{}`",
                merged.selector, merged.mode
            )));
        }
        Ok(SelectAndRank::assemble(store, ranker, selector, &merged, vocab_size))
    }

    fn assemble(store: ParameterStore, ranker: Ranker, selector: Selector, config: &Config, vocab_size: usize) -> Self {
        let pairs = config.to_pairs();
        let mut header: BTreeMap<String, String> =
            ARCH_KEYS.iter().map(|k| (k.to_string(), pairs[*k].clone())).collect();
        header.insert("vocab_size".into(), vocab_size.to_string());
        SelectAndRank {
            store,
            ranker,
            selector,
            mode: config.mode,
            k: config.k,
            head_limit: config.head_limit,
            seed: config.seed,
            header,
        }
    }

    fn build(
        store: &mut ParameterStore,
        config: &Config,
        vocab_size: usize,
        embeddings: Option<EmbeddingTable>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Ranker, Selector)> {
        let ranker = Ranker::new(
            store,
            RankerConfig {
                vocab_size,
                dim: config.dim,
                heads: config.heads,
                layers: config.layers,
                ff_dim: config.ff_dim,
                max_len: config.max_len,
                dropout: config.dropout,
            },
            rng,
        )?;
        let neural = || {
            if config.mode == Mode::EndToEnd {
                NeuralSelectorConfig {
                    embed_dim: config.dim,
                    hidden: config.selector_hidden,
                    separate_query_layer: config.selector_separate_query_layer,
                    embedding_name: Ranker::EMBEDDING.into(),
                }
            } else {
                NeuralSelectorConfig {
                    embed_dim: config.selector_dim,
                    hidden: config.selector_hidden,
                    separate_query_layer: config.selector_separate_query_layer,
                    embedding_name: "selector.embed".into(),
                }
            }
        };
        if config.mode == Mode::EndToEnd && !config.selector.is_trainable() {
            return Err(Error::Config(format!(
                "end-to-end training needs a differentiable selector, not `{}`",
                config.selector
            )));
        }
        let selector = match config.selector {
            SelectorKind::Tfidf => Selector::Tfidf,
            SelectorKind::Bm25 => Selector::Bm25(Bm25Params {
                k1: config.bm25_k1,
                b: config.bm25_b,
            }),
            SelectorKind::Semantic => Selector::Semantic(
                embeddings.ok_or_else(|| Error::Config("selector `semantic` needs `embeddings`".into()))?,
            ),
            SelectorKind::Random => Selector::Random,
            // a truncation model carries no selector parameters
            SelectorKind::Linear | SelectorKind::Attentive if config.mode == Mode::Truncate => Selector::Random,
            SelectorKind::Linear => Selector::Linear(LinearSelector::new(store, vocab_size, &neural(), rng)?),
            SelectorKind::Attentive => Selector::Attentive(AttentiveSelector::new(store, vocab_size, &neural(), rng)?),
        };
        Ok((ranker, selector))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.header, &self.store)
    }

    pub fn ranker(&self) -> &Ranker {
        &self.ranker
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.k = k;
        Ok(())
    }

    pub fn set_head_limit(&mut self, head_limit: Option<usize>) {
        self.head_limit = head_limit;
    }

    pub fn max_len(&self) -> usize {
        self.ranker.config().max_len
    }

    /// Selector logits for a document (empty for a sentence-less document).
    pub fn sentence_scores(&self, query: &Query, doc: &Document, corpus: &Corpus) -> Result<SentenceScores> {
        if doc.num_sentences() == 0 {
            return Ok(SentenceScores::new(Vec::new()));
        }
        Ok(match &self.selector {
            Selector::Tfidf => score_tfidf(query, doc, corpus.vocab()),
            Selector::Bm25(p) => score_bm25(query, doc, *p),
            Selector::Semantic(e) => score_semantic(query, doc, e),
            Selector::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(self.seed, &query.query_id, &doc.doc_id));
                score_random(doc, &mut rng)
            }
            Selector::Linear(s) => s.scores(&self.store, &query.tokens, doc)?,
            Selector::Attentive(s) => s.scores(&self.store, &query.tokens, doc)?,
        })
    }

    /// Selection as used at inference: none for truncation models, otherwise
    /// the top-k sentences within the head limit.
    pub fn select(&self, query: &Query, doc: &Document, corpus: &Corpus) -> Result<(Option<SentenceScores>, Summary)> {
        if self.mode == Mode::Truncate {
            return Ok((None, Summary::whole(doc)));
        }
        let scores = self.sentence_scores(query, doc, corpus)?;
        let summary = hard_select(&scores, doc, self.k, self.head_limit)?;
        let scores = if scores.logits.iter().any(|w| *w > f64::NEG_INFINITY) {
            normalize(&scores)?
        } else {
            scores
        };
        Ok((Some(scores), summary))
    }

    pub fn score_pair(&self, query: &Query, doc: &Document, corpus: &Corpus) -> Result<PairOutcome> {
        let (scores, summary) = self.select(query, doc, corpus)?;
        let input = assemble_input(&query.tokens, &summary, doc, self.max_len())?;
        let score = self.ranker.score(&self.store, &input)?;
        Ok(PairOutcome {
            scores,
            summary,
            input,
            score,
        })
    }

    pub fn explain(&self, query: &Query, doc: &Document, corpus: &Corpus) -> Result<Explanation> {
        let out = self.score_pair(query, doc, corpus)?;
        let sentences = doc
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let logit = out.scores.as_ref().map(|sc| sc.logits[i]).filter(|w| w.is_finite());
                let p = out.scores.as_ref().and_then(|sc| sc.probs.as_ref()).map(|p| p[i]);
                ExplainedSentence {
                    index: i,
                    text: s.text.clone(),
                    logit,
                    p,
                    selected: out.summary.indices.binary_search(&i).is_ok(),
                }
            })
            .collect();
        Ok(Explanation {
            query_id: query.query_id.clone(),
            doc_id: doc.doc_id.clone(),
            score: out.score,
            sentences,
        })
    }

    /// Re-scores every candidate of every query in `candidates`.
    pub fn rerank(&self, corpus: &Corpus, queries: &[Query], candidates: &Run, tag: &str) -> Result<Run> {
        let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
        let mut run = Run::new(tag);
        for r in &candidates.rankings {
            let q = by_id
                .get(r.qid.as_str())
                .ok_or_else(|| Error::NotFound(format!("query {}", r.qid)))?;
            let mut scored = Vec::with_capacity(r.entries.len());
            for d in r.doc_ids() {
                let doc = corpus.document(d)?;
                scored.push((d.to_string(), self.score_pair(q, doc, corpus)?.score));
            }
            run.push(QueryRanking::from_scores(r.qid.clone(), scored)?)?;
        }
        Ok(run)
    }
}
