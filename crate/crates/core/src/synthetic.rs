//! Synthetic collections with planted evidence, for experiments where the
//! relevant sentences are known.
//!
//! Words are `t0..` (topic) and `f0..` (filler). Every query is two distinct
//! topic words. A query's candidate documents only ever contain that query's
//! topic words, so relevance is fully determined by the planted sentences.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::SelectAndRank;
use crate::evaluation::{Qrels, QueryRanking, Run};
use crate::text::{Corpus, CorpusLimits, Query};

/// How evidence is planted in relevant documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evidence {
    /// One signal sentence holding both query words; relevance 1.
    Single,
    /// Split evidence: relevance-2 documents hold two sentences with one
    /// query word each, relevance-1 documents hold one such sentence.
    Split,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Total word types.
    pub vocab_words: usize,
    /// How many of them are topic words; the rest are filler.
    pub topic_words: usize,
    pub queries: usize,
    pub docs_per_query: usize,
    pub sentences_per_doc: usize,
    pub sentence_len: usize,
    /// Evidence sentences are placed uniformly within the first
    /// `signal_region` sentences.
    pub signal_region: usize,
    pub evidence: Evidence,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_words: 200,
            topic_words: 40,
            queries: 200,
            docs_per_query: 10,
            sentences_per_doc: 30,
            sentence_len: 6,
            signal_region: 30,
            evidence: Evidence::Single,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct DocRecord<'a> {
    doc_id: &'a str,
    text: &'a str,
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    /// Candidates per query in random order (scores are descending ranks).
    pub candidates: Run,
    /// Planted evidence sentence indices per (qid, docid); only relevant pairs appear.
    pub evidence: BTreeMap<(String, String), Vec<usize>>,
    texts: Vec<(String, String)>,
}

impl SyntheticCollection {
    pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCollection> {
        assert!(cfg.topic_words >= 2 && cfg.vocab_words > cfg.topic_words);
        assert!(cfg.sentence_len >= 2 && cfg.docs_per_query >= 2);
        assert!(cfg.signal_region >= 2 && cfg.signal_region <= cfg.sentences_per_doc);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_topic = cfg.topic_words;
        let fillers: Vec<String> = (0..cfg.vocab_words - n_topic).map(|i| format!("f{i}")).collect();
        let filler_sentence = |rng: &mut ChaCha8Rng, planted: &[String]| -> String {
            let mut words: Vec<String> = (0..cfg.sentence_len - planted.len())
                .map(|_| fillers.choose(rng).expect("fillers").clone())
                .collect();
            words.extend(planted.iter().cloned());
            words.shuffle(rng);
            words.join(" ") + "."
        };

        let mut texts = Vec::new();
        let mut query_texts = Vec::new();
        let mut qrels = Qrels::new();
        let mut evidence = BTreeMap::new();
        let mut rankings = Vec::new();
        for qi in 0..cfg.queries {
            let qid = format!("q{qi}");
            let a = rng.random_range(0..n_topic);
            let mut b = rng.random_range(0..n_topic - 1);
            if b >= a {
                b += 1;
            }
            let words = [format!("t{a}"), format!("t{b}")];
            query_texts.push((qid.clone(), format!("{} {}", words[0], words[1])));

            // grades of this query's candidates
            let grades: Vec<u32> = match cfg.evidence {
                Evidence::Single => (0..cfg.docs_per_query).map(|j| u32::from(j == 0)).collect(),
                Evidence::Split => (0..cfg.docs_per_query)
                    .map(|j| match j {
                        0 => 2,
                        1 | 2 => 1,
                        _ => 0,
                    })
                    .collect(),
            };
            let mut slots: Vec<usize> = (0..cfg.docs_per_query).collect();
            slots.shuffle(&mut rng);
            let mut entries = Vec::new();
            for (j, &grade) in grades.iter().enumerate() {
                let docid = format!("{qid}-d{}", slots[j]);
                let planted: Vec<Vec<String>> = match (cfg.evidence, grade) {
                    (_, 0) => vec![],
                    (Evidence::Single, _) => vec![words.to_vec()],
                    (Evidence::Split, 2) => vec![vec![words[0].clone()], vec![words[1].clone()]],
                    (Evidence::Split, _) => vec![vec![words[rng.random_range(0..2)].clone()]],
                };
                let positions = rand::seq::index::sample(&mut rng, cfg.signal_region, planted.len()).into_vec();
                let mut sentences = Vec::with_capacity(cfg.sentences_per_doc);
                for s in 0..cfg.sentences_per_doc {
                    let words = positions
                        .iter()
                        .position(|&p| p == s)
                        .map(|i| planted[i].as_slice())
                        .unwrap_or(&[]);
                    sentences.push(filler_sentence(&mut rng, words));
                }
                if grade > 0 {
                    qrels.insert(&qid, &docid, grade);
                    let mut pos = positions.clone();
                    pos.sort_unstable();
                    evidence.insert((qid.clone(), docid.clone()), pos);
                } else {
                    qrels.insert(&qid, &docid, 0);
                }
                texts.push((docid.clone(), sentences.join(" ")));
                entries.push((docid, -(slots[j] as f64)));
            }
            rankings.push(QueryRanking::from_scores(qid, entries)?);
        }

        let limits = CorpusLimits {
            max_sentences: cfg.sentences_per_doc,
            max_tokens: cfg.sentences_per_doc * cfg.sentence_len,
        };
        let corpus = Corpus::from_texts(texts.iter().map(|(d, t)| (d.as_str(), t.as_str())), limits)?;
        let queries = query_texts
            .iter()
            .map(|(id, text)| Query::new(id.clone(), text.clone(), corpus.vocab()))
            .collect();
        let mut candidates = Run::new("synthetic");
        for r in rankings {
            candidates.push(r)?;
        }
        Ok(SyntheticCollection {
            corpus,
            queries,
            qrels,
            candidates,
            evidence,
            texts,
        })
    }

    /// Splits the queries into consecutive train/valid/test slices.
    pub fn split(&self, train: usize, valid: usize) -> (Vec<Query>, Vec<Query>, Vec<Query>) {
        let q = &self.queries;
        let a = train.min(q.len());
        let b = (train + valid).min(q.len());
        (q[..a].to_vec(), q[a..b].to_vec(), q[b..].to_vec())
    }

    /// Candidates restricted to `queries`.
    pub fn candidates_for(&self, queries: &[Query]) -> Run {
        Run {
            tag: self.candidates.tag.clone(),
            rankings: queries
                .iter()
                .filter_map(|q| self.candidates.get(&q.query_id).cloned())
                .collect(),
        }
    }

    /// Writes `docs.jsonl`, `queries.tsv`, `qrels.txt` and `candidates.run`
    /// into `dir`, in the formats the command-line tools read.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut docs = std::io::BufWriter::new(std::fs::File::create(dir.join("docs.jsonl"))?);
        for (doc_id, text) in &self.texts {
            writeln!(docs, "{}", serde_json::to_string(&DocRecord { doc_id, text })?)?;
        }
        docs.flush()?;
        let queries: String = self.queries.iter().map(|q| format!("{}\t{}\n", q.query_id, q.text)).collect();
        std::fs::write(dir.join("queries.tsv"), queries)?;
        std::fs::write(dir.join("qrels.txt"), self.qrels.to_trec())?;
        self.candidates.save(&dir.join("candidates.run"))?;
        Ok(())
    }
}

/// Share of relevant (query, document) pairs whose planted evidence
/// sentences are all in the model's selection.
pub fn evidence_recall(model: &SelectAndRank, collection: &SyntheticCollection, queries: &[Query]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for q in queries {
        for ((qid, docid), pos) in collection.evidence.range((q.query_id.clone(), String::new())..) {
            if qid != &q.query_id {
                break;
            }
            let doc = collection.corpus.document(docid)?;
            let (_, summary) = model.select(q, doc, &collection.corpus)?;
            total += 1;
            hit += usize::from(pos.iter().all(|p| summary.indices.contains(p)));
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
