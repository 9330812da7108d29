//! Workflow commands. Each takes the resolved [`Config`] and reads/writes the
//! files it names; the `sar` binary is a thin dispatcher over these.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::load_checkpoint;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::evaluation::{empirical_cdf, evaluate_run, missing_token_fraction, MetricReport, Qrels, QueryRanking, Run};
use crate::model::{Explanation, SelectAndRank};
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::text::{load_queries, Corpus, CorpusLimits, EmbeddingTable, Query};
use crate::training::{train, TrainData, TrainOutcome};

fn input<'a>(config: &Config, value: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    let p = config.require(value, key)?;
    if !p.exists() {
        return Err(Error::NotFound(format!("{key} file {}", p.display())));
    }
    Ok(p)
}

fn log_config(command: &str, config: &Config) {
    log::info!("{command}: resolved config\n{}", config.render());
}

fn load_corpus(config: &Config) -> Result<Corpus> {
    Corpus::load(input(config, &config.corpus, "corpus")?)
}

fn load_query_file(config: &Config, corpus: &Corpus) -> Result<Vec<Query>> {
    load_queries(input(config, &config.queries, "queries")?, corpus.vocab())
}

fn load_embeddings(config: &Config, corpus: &Corpus) -> Result<Option<EmbeddingTable>> {
    match &config.embeddings {
        Some(_) => Ok(Some(EmbeddingTable::load(
            input(config, &config.embeddings, "embeddings")?,
            corpus.vocab(),
        )?)),
        None => Ok(None),
    }
}

fn load_model(config: &Config, corpus: &Corpus) -> Result<SelectAndRank> {
    let path = input(config, &config.checkpoint, "checkpoint")?;
    SelectAndRank::load(path, config, load_embeddings(config, corpus)?)
}

/// Builds the corpus from `docs` (JSONL) and stores it at `corpus`.
pub fn cmd_ingest(config: &Config) -> Result<Corpus> {
    log_config("ingest", config);
    let docs = input(config, &config.docs, "docs")?;
    let out = config.require(&config.corpus, "corpus")?;
    let corpus = Corpus::ingest_path(
        docs,
        CorpusLimits {
            max_sentences: config.max_sentences,
            max_tokens: config.max_tokens,
        },
    )?;
    corpus.save(out)?;
    log::info!(
        "ingested {} documents, vocabulary of {} types",
        corpus.len(),
        corpus.vocab().len()
    );
    Ok(corpus)
}

/// BM25 top-`depth` candidates for every query, in query-file order.
pub fn retrieve_run(corpus: &Corpus, queries: &[Query], params: Bm25Params, depth: usize, tag: &str) -> Result<Run> {
    let index = InvertedIndex::build(corpus, params)?;
    let mut run = Run::new(tag);
    for q in queries {
        let hits = index.retrieve(&q.tokens, depth)?;
        let entries = hits
            .into_iter()
            .map(|(ord, s)| (corpus.documents()[ord].doc_id.clone(), s))
            .collect();
        run.push(QueryRanking::from_scores(q.query_id.clone(), entries)?)?;
    }
    Ok(run)
}

/// First-stage retrieval; writes the run to `run`.
pub fn cmd_retrieve(config: &Config) -> Result<Run> {
    log_config("retrieve", config);
    let corpus = load_corpus(config)?;
    let queries = load_query_file(config, &corpus)?;
    let out = config.require(&config.run, "run")?;
    let params = Bm25Params {
        k1: config.bm25_k1,
        b: config.bm25_b,
    };
    let run = retrieve_run(&corpus, &queries, params, config.depth, "bm25")?;
    run.save(out)?;
    Ok(run)
}

/// Deterministic train/validation split of the queries that have a
/// relevant judgement. The validation share is `fraction`, at least one query.
pub fn split_queries(queries: &[Query], qrels: &Qrels, fraction: f64, seed: u64) -> Result<(Vec<Query>, Vec<Query>)> {
    let mut usable: Vec<&Query> = queries.iter().filter(|q| qrels.num_relevant(&q.query_id) > 0).collect();
    if usable.len() < 2 {
        return Err(Error::invalid("need at least two judged queries to split off a validation set"));
    }
    usable.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7370_6c69));
    let n_valid = ((usable.len() as f64 * fraction).round() as usize).clamp(1, usable.len() - 1);
    let (valid, train) = usable.split_at(n_valid);
    let keep_order = |part: &[&Query]| -> Vec<Query> {
        queries.iter().filter(|q| part.iter().any(|p| p.query_id == q.query_id)).cloned().collect()
    };
    Ok((keep_order(train), keep_order(valid)))
}

/// Trains a model, writes the best checkpoint to `checkpoint` and the JSONL
/// log to `train_log` (if set).
pub fn cmd_train(config: &Config) -> Result<TrainOutcome> {
    log_config("train", config);
    let corpus = load_corpus(config)?;
    let queries = load_query_file(config, &corpus)?;
    let qrels = Qrels::load(input(config, &config.qrels, "qrels")?)?;
    let candidates = Run::load(input(config, &config.run, "run")?)?;
    let out = config.require(&config.checkpoint, "checkpoint")?;
    let (train_q, valid_q) = match &config.valid_queries {
        Some(_) => {
            let valid = load_queries(input(config, &config.valid_queries, "valid_queries")?, corpus.vocab())?;
            (queries, valid)
        }
        None => split_queries(&queries, &qrels, config.valid_fraction, config.seed)?,
    };
    log::info!("{} training and {} validation queries", train_q.len(), valid_q.len());

    let mut model = SelectAndRank::new(config, corpus.vocab().len(), load_embeddings(config, &corpus)?)?;
    if config.init_checkpoint.is_some() {
        let init = input(config, &config.init_checkpoint, "init_checkpoint")?;
        let (_, store) = load_checkpoint(init)?;
        let n = model.store.copy_values_from(&store)?;
        log::info!("warm start: {n} parameters copied from {}", init.display());
    }

    let mut sink: Option<BufWriter<File>> = match &config.train_log {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let data = TrainData {
        corpus: &corpus,
        train_queries: &train_q,
        valid_queries: &valid_q,
        qrels: &qrels,
        candidates: &candidates,
    };
    let outcome = train(config, &data, model, &mut |r| {
        log::debug!("{}", r.to_json());
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{}", r.to_json())?;
        }
        Ok(())
    })?;
    if let Some(mut w) = sink {
        w.flush()?;
    }
    outcome.model.save(out)?;
    log::info!("best epoch {} (validation MAP {:.4})", outcome.best_epoch, outcome.best_map);
    Ok(outcome)
}

/// Re-ranks the candidates in `run` and writes the result to `output`.
pub fn cmd_rank(config: &Config) -> Result<Run> {
    log_config("rank", config);
    let corpus = load_corpus(config)?;
    let queries = load_query_file(config, &corpus)?;
    let candidates = Run::load(input(config, &config.run, "run")?)?;
    let out = config.require(&config.output, "output")?;
    let model = load_model(config, &corpus)?;
    let run = model.rerank(&corpus, &queries, &candidates, &config.tag)?;
    run.save(out)?;
    Ok(run)
}

pub fn cmd_explain(config: &Config, qid: &str, docid: &str) -> Result<Explanation> {
    log_config("explain", config);
    let corpus = load_corpus(config)?;
    let queries = load_query_file(config, &corpus)?;
    let query = queries
        .iter()
        .find(|q| q.query_id == qid)
        .ok_or_else(|| Error::NotFound(format!("query {qid}")))?;
    let doc = corpus.document(docid)?;
    load_model(config, &corpus)?.explain(query, doc, &corpus)
}

/// Scores `run` against `qrels`; writes the TSV report to `output` if set.
pub fn cmd_evaluate(config: &Config) -> Result<MetricReport> {
    log_config("evaluate", config);
    let run = Run::load(input(config, &config.run, "run")?)?;
    let qrels = Qrels::load(input(config, &config.qrels, "qrels")?)?;
    let report = evaluate_run(&run, &qrels, &config.cutoffs, config.gain)?;
    if let Some(out) = &config.output {
        std::fs::write(out, report.to_tsv())?;
    }
    Ok(report)
}

/// Missing-token fractions of every (query, candidate) pair in `run` under
/// the checkpoint's selection and a head budget of `budget` tokens (unbounded
/// if unset); returns the CDF as (fraction, cumulative share) pairs and writes
/// it as TSV to `output` if set.
pub fn cmd_analyze(config: &Config) -> Result<Vec<(f64, f64)>> {
    log_config("analyze", config);
    let corpus = load_corpus(config)?;
    let queries = load_query_file(config, &corpus)?;
    let candidates = Run::load(input(config, &config.run, "run")?)?;
    let model = load_model(config, &corpus)?;
    let budget = config.budget.unwrap_or(usize::MAX);
    let mut fractions = Vec::new();
    for r in &candidates.rankings {
        let q = queries
            .iter()
            .find(|q| q.query_id == r.qid)
            .ok_or_else(|| Error::NotFound(format!("query {}", r.qid)))?;
        for d in r.doc_ids() {
            let doc = corpus.document(d)?;
            let (_, summary) = model.select(q, doc, &corpus)?;
            fractions.push(missing_token_fraction(doc, &summary, budget));
        }
    }
    let cdf = empirical_cdf(&fractions);
    if let Some(out) = &config.output {
        let mut text = String::from("fraction\tcumulative_share\n");
        for (x, y) in &cdf {
            text.push_str(&format!("{x:.6}\t{y:.6}\n"));
        }
        std::fs::write(out, text)?;
    }
    Ok(cdf)
}
