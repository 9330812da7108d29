//! Scaled-down experiments on synthetic collections: selection against
//! truncation, and the head-restricted k sweep.

use crate::config::{Config, Mode};
use crate::error::Result;
use crate::evaluation::{evaluate_run, Gain};
use crate::model::SelectAndRank;
use crate::selectors::SelectorKind;
use crate::synthetic::{evidence_recall, Evidence, SyntheticCollection, SyntheticConfig};
use crate::text::Query;
use crate::training::{train, TrainData};

/// Ranker/training settings shared by both experiments.
pub const DESK_SETTINGS: &[&str] = &[
    "dim=64",
    "heads=4",
    "layers=1",
    "ff_dim=128",
    "batch_size=8",
    "warmup=100",
    "dropout=0.1",
    "ranker_lr=0.001",
    "selector_lr=0.001",
    "triples_per_epoch=1000",
];

fn config(extra: &[String]) -> Result<Config> {
    let mut all: Vec<String> = DESK_SETTINGS.iter().map(|s| s.to_string()).collect();
    all.extend_from_slice(extra);
    Config::resolve(None, &all)
}

struct Split {
    train: Vec<Query>,
    valid: Vec<Query>,
    test: Vec<Query>,
}

fn fit(collection: &SyntheticCollection, split: &Split, config: &Config) -> Result<SelectAndRank> {
    let data = TrainData {
        corpus: &collection.corpus,
        train_queries: &split.train,
        valid_queries: &split.valid,
        qrels: &collection.qrels,
        candidates: &collection.candidates,
    };
    let model = SelectAndRank::new(config, collection.corpus.vocab().len(), None)?;
    Ok(train(config, &data, model, &mut |_| Ok(()))?.model)
}

fn test_ndcg(model: &SelectAndRank, collection: &SyntheticCollection, test: &[Query]) -> Result<f64> {
    let run = model.rerank(&collection.corpus, test, &collection.candidates_for(test), "test")?;
    let report = evaluate_run(&run, &collection.qrels, &[10], Gain::Linear)?;
    Ok(report.ndcg(10).unwrap_or(0.0))
}

#[derive(Debug, Clone)]
pub struct SelectionExperiment {
    pub corpus: SyntheticConfig,
    pub train_queries: usize,
    pub valid_queries: usize,
    /// Ranker input length; with 2-token queries and 6-token sentences, 35
    /// lets truncation see the first five sentences.
    pub max_len: usize,
    pub k: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Extra `key=value` settings applied last.
    pub overrides: Vec<String>,
}

impl Default for SelectionExperiment {
    fn default() -> Self {
        SelectionExperiment {
            corpus: SyntheticConfig::default(),
            train_queries: 100,
            valid_queries: 20,
            max_len: 35,
            k: 5,
            epochs: 8,
            seed: 42,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub truncate_ndcg: f64,
    pub e2e_ndcg: f64,
    /// Share of held-out relevant documents whose signal sentence is selected.
    pub recall: f64,
    /// Sentences the truncation model sees in full.
    pub visible_sentences: usize,
    pub test_queries: usize,
}

/// Trains a truncation model and an end-to-end linear select-and-rank model
/// on the same training queries and compares them on the held-out ones.
pub fn selection_vs_truncation(exp: &SelectionExperiment) -> Result<SelectionReport> {
    let collection = SyntheticCollection::generate(&exp.corpus)?;
    let (train, valid, test) = collection.split(exp.train_queries, exp.valid_queries);
    let split = Split { train, valid, test };
    let base = |mode: &str| {
        let mut o = vec![
            format!("mode={mode}"),
            "selector=linear".to_string(),
            format!("max_len={}", exp.max_len),
            format!("k={}", exp.k),
            format!("epochs={}", exp.epochs),
            format!("seed={}", exp.seed),
        ];
        o.extend(exp.overrides.iter().cloned());
        config(&o)
    };
    let truncate = fit(&collection, &split, &base("truncate")?)?;
    let e2e = fit(&collection, &split, &base("e2e")?)?;
    Ok(SelectionReport {
        truncate_ndcg: test_ndcg(&truncate, &collection, &split.test)?,
        e2e_ndcg: test_ndcg(&e2e, &collection, &split.test)?,
        recall: evidence_recall(&e2e, &collection, &split.test)?,
        visible_sentences: exp.max_len.saturating_sub(2 + 3) / exp.corpus.sentence_len,
        test_queries: split.test.len(),
    })
}

#[derive(Debug, Clone)]
pub struct PlateauExperiment {
    pub corpus: SyntheticConfig,
    pub train_queries: usize,
    pub valid_queries: usize,
    pub head_limit: usize,
    pub ks: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub overrides: Vec<String>,
}

impl Default for PlateauExperiment {
    fn default() -> Self {
        PlateauExperiment {
            corpus: SyntheticConfig {
                signal_region: 10,
                evidence: Evidence::Split,
                ..SyntheticConfig::default()
            },
            train_queries: 100,
            valid_queries: 20,
            head_limit: 10,
            ks: vec![1, 5, 10],
            epochs: 10,
            seed: 42,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauReport {
    /// nDCG@10 of the truncation model on the head.
    pub truncate_ndcg: f64,
    /// (k, nDCG@10) with BM25 selection restricted to the head.
    pub sweep: Vec<(usize, f64)>,
}

impl PlateauReport {
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.sweep.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// Trains a truncation ranker whose input holds the document head, then
/// explains it with BM25 selection limited to the head for each k.
pub fn head_plateau(exp: &PlateauExperiment) -> Result<PlateauReport> {
    let collection = SyntheticCollection::generate(&exp.corpus)?;
    let (train, valid, test) = collection.split(exp.train_queries, exp.valid_queries);
    let split = Split { train, valid, test };
    let max_len = 2 + 3 + exp.head_limit * exp.corpus.sentence_len;
    let mut o = vec![
        "mode=truncate".to_string(),
        format!("max_len={max_len}"),
        format!("epochs={}", exp.epochs),
        format!("seed={}", exp.seed),
    ];
    o.extend(exp.overrides.iter().cloned());
    let cfg = config(&o)?;
    let mut model = fit(&collection, &split, &cfg)?;
    let truncate_ndcg = test_ndcg(&model, &collection, &split.test)?;

    // same parameters, now ranking head-restricted BM25 summaries
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.mode = Mode::Pipeline;
    sweep_cfg.selector = SelectorKind::Bm25;
    let mut selecting = SelectAndRank::new(&sweep_cfg, collection.corpus.vocab().len(), None)?;
    selecting.store = std::mem::take(&mut model.store);
    selecting.set_head_limit(Some(exp.head_limit));
    let mut sweep = Vec::new();
    for &k in &exp.ks {
        selecting.set_k(k)?;
        sweep.push((k, test_ndcg(&selecting, &collection, &split.test)?));
    }
    Ok(PlateauReport { truncate_ndcg, sweep })
}
