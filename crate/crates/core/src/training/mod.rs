//! Pairwise training of the ranker (and selector) in the three regimes.

mod optim;
mod triples;

pub use optim::AdamW;
pub use triples::{sample_triples, Triple};

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Tensor, Var};
use crate::config::{Config, Mode, StWeight};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_run, Gain, Qrels, Run};
use crate::model::SelectAndRank;
use crate::ranker::{assemble_input, Coupling};
use crate::sampling::subset_sample;
use crate::selectors::Summary;
use crate::text::{Corpus, Document, Query};

/// `max(0, m − s⁺ + s⁻)`
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

/// Graph version of [`hinge_loss`].
pub fn hinge_graph(g: &mut Graph, s_pos: Var, s_neg: Var, margin: f64) -> Result<Var> {
    let d = g.sub(s_neg, s_pos)?;
    let d = g.add_scalar(d, margin);
    Ok(g.relu(d))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step { epoch: usize, step: u64, loss: f64, lr: f64 },
    Skipped { epoch: usize, step: u64 },
    Selector { epoch: usize, step: u64, loss: f64, lr: f64 },
    Valid { epoch: usize, valid_map: f64 },
    Best { epoch: usize, valid_map: f64 },
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Everything training reads.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub corpus: &'a Corpus,
    pub train_queries: &'a [Query],
    pub valid_queries: &'a [Query],
    pub qrels: &'a Qrels,
    /// First-stage candidates; rankings for both training and validation queries.
    pub candidates: &'a Run,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SelectAndRank,
    pub best_epoch: usize,
    pub best_map: f64,
    pub log: Vec<LogRecord>,
}

fn restrict(run: &Run, queries: &[Query]) -> Run {
    let ids: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    Run {
        tag: run.tag.clone(),
        rankings: run.rankings.iter().filter(|r| ids.contains(r.qid.as_str())).cloned().collect(),
    }
}

/// Ranker score for one pair in training mode (dropout on, fresh noise).
fn train_score(
    model: &SelectAndRank,
    config: &Config,
    g: &mut Graph,
    query: &Query,
    doc: &Document,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let store = &model.store;
    let max_len = model.max_len();
    if model.mode() != Mode::EndToEnd || doc.total_tokens == 0 {
        let input = assemble_input(&query.tokens, &Summary::whole(doc), doc, max_len)?;
        return model.ranker().forward(g, store, &input, Coupling::None, Some(rng as &mut dyn RngCore));
    }
    let selector = model
        .selector()
        .trainable()
        .ok_or_else(|| Error::Config("end-to-end training needs a differentiable selector".into()))?;
    let logits = selector.logits(g, store, &query.tokens, doc)?;
    let sample = subset_sample(g, logits, config.k, config.temperature, rng)?;
    let weights = match config.st_weight {
        StWeight::KHot => sample.v,
        StWeight::Softmax => g.softmax(logits)?,
    };
    let summary = Summary::from_indices(doc, sample.hard.clone(), config.k)?;
    let input = assemble_input(&query.tokens, &summary, doc, max_len)?;
    model.ranker().forward(
        g,
        store,
        &input,
        Coupling::StraightThrough(weights),
        Some(rng as &mut dyn RngCore),
    )
}

/// Validation MAP over the validation candidates.
pub fn validate(model: &SelectAndRank, data: &TrainData<'_>, valid_run: &Run) -> Result<f64> {
    let run = model.rerank(data.corpus, data.valid_queries, valid_run, "valid")?;
    Ok(evaluate_run(&run, data.qrels, &[10], Gain::Linear)?.map())
}

/// Weakly labelled selector examples: sentences of relevant documents are
/// positive when they contain at least one query term.
fn weak_selector_examples<'a>(data: &TrainData<'a>) -> Vec<(&'a Query, &'a Document, Vec<f64>)> {
    let mut out = Vec::new();
    for q in data.train_queries {
        let terms: HashSet<u32> = q.tokens.iter().copied().collect();
        let Some(judged) = data.qrels.judged(&q.query_id) else { continue };
        for (docid, &rel) in judged {
            if rel < 1 {
                continue;
            }
            let Some(doc) = data.corpus.get(docid) else { continue };
            let mask: Vec<f64> = doc
                .sentences
                .iter()
                .map(|s| f64::from(u8::from(s.tokens.iter().any(|t| terms.contains(t)))))
                .collect();
            let pos = mask.iter().filter(|&&m| m == 1.0).count();
            if pos > 0 && pos < mask.len() {
                out.push((q, doc, mask));
            }
        }
    }
    out
}

/// Pipeline regime: fits a trainable selector on its own, maximising the
/// softmax mass on weakly positive sentences.
fn train_selector_separately(
    model: &mut SelectAndRank,
    config: &Config,
    data: &TrainData<'_>,
    rng: &mut ChaCha8Rng,
    log: &mut dyn FnMut(LogRecord) -> Result<()>,
) -> Result<()> {
    if model.selector().trainable().is_none() {
        return Ok(());
    }
    let mut examples = weak_selector_examples(data);
    if examples.is_empty() {
        log::warn!("no weakly labelled sentences; selector left untrained");
        return Ok(());
    }
    let mut opt = AdamW::new(config.weight_decay, config.warmup);
    let lr = config.selector_lr;
    for epoch in 1..=config.selector_epochs {
        examples.shuffle(rng);
        for batch in examples.chunks(config.batch_size) {
            let mut total = 0.0;
            for (q, doc, mask) in batch {
                let selector = model.selector().trainable().expect("checked above");
                let mut g = Graph::new();
                let logits = selector.logits(&mut g, &model.store, &q.tokens, doc)?;
                let p = g.softmax(logits)?;
                let m = g.constant(Tensor::vector(mask.clone())?);
                let mass = g.dot(p, m)?;
                let mass = g.clamp(mass, 1e-12, 1.0);
                let nll = g.log(mass);
                let loss = g.neg(nll);
                total += g.item(loss)?;
                let grads = g.backward(loss)?;
                model.store.accumulate_scaled(&grads, 1.0 / batch.len() as f64);
            }
            let rate = lr * opt.warmup_factor();
            if opt.step(&mut model.store, |n| n.starts_with("selector.").then_some(lr)) {
                log(LogRecord::Selector {
                    epoch,
                    step: opt.steps(),
                    loss: total / batch.len() as f64,
                    lr: rate,
                })?;
            }
        }
    }
    Ok(())
}

/// Trains `model` in the regime given by `config.mode`, validating by MAP
/// after every epoch and returning the best epoch's parameters (earliest on ties).
pub fn train(
    config: &Config,
    data: &TrainData<'_>,
    mut model: SelectAndRank,
    log: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if model.mode() == Mode::EndToEnd && model.selector().trainable().is_none() {
        return Err(Error::Config("end-to-end training needs a differentiable selector".into()));
    }
    let train_run = restrict(data.candidates, data.train_queries);
    let valid_run = restrict(data.candidates, data.valid_queries);
    let has_valid = valid_run.rankings.iter().any(|r| data.qrels.num_relevant(&r.qid) > 0);
    if !has_valid {
        return Err(Error::invalid("validation set is empty (no validation query with a relevant document)"));
    }
    let queries: HashMap<&str, &Query> = data.train_queries.iter().map(|q| (q.query_id.as_str(), q)).collect();

    let mut records = Vec::new();
    let mut emit = |r: LogRecord| -> Result<()> {
        log(&r)?;
        records.push(r);
        Ok(())
    };

    let mut triple_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6970);
    let mut model_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_6465);

    if model.mode() == Mode::Pipeline {
        train_selector_separately(&mut model, config, data, &mut model_rng, &mut emit)?;
    }

    let e2e = model.mode() == Mode::EndToEnd;
    let lr_for = |name: &str| -> Option<f64> {
        if name.starts_with("selector.") {
            e2e.then_some(config.selector_lr)
        } else {
            Some(config.ranker_lr)
        }
    };
    let mut opt = AdamW::new(config.weight_decay, config.warmup);
    let mut best: Option<(usize, f64, crate::autodiff::ParameterStore)> = None;
    for epoch in 1..=config.epochs {
        let triples = sample_triples(&train_run, data.qrels, &mut triple_rng, config.triples_per_epoch);
        if triples.is_empty() {
            return Err(Error::invalid("no training triples: every training query lacks a positive/negative pair"));
        }
        for batch in triples.chunks(config.batch_size) {
            let mut total = 0.0;
            for t in batch {
                let q = queries[t.query_id.as_str()];
                let pos = data.corpus.document(&t.positive)?;
                let neg = data.corpus.document(&t.negative)?;
                let mut g = Graph::new();
                let sp = train_score(&model, config, &mut g, q, pos, &mut model_rng)?;
                let sn = train_score(&model, config, &mut g, q, neg, &mut model_rng)?;
                let loss = hinge_graph(&mut g, sp, sn, config.margin)?;
                total += g.item(loss)?;
                let grads = g.backward(loss)?;
                model.store.accumulate_scaled(&grads, 1.0 / batch.len() as f64);
            }
            let rate = config.ranker_lr * opt.warmup_factor();
            if opt.step(&mut model.store, lr_for) {
                emit(LogRecord::Step {
                    epoch,
                    step: opt.steps(),
                    loss: total / batch.len() as f64,
                    lr: rate,
                })?;
            } else {
                emit(LogRecord::Skipped {
                    epoch,
                    step: opt.steps() + 1,
                })?;
            }
        }
        let map = validate(&model, data, &valid_run)?;
        emit(LogRecord::Valid { epoch, valid_map: map })?;
        if best.as_ref().is_none_or(|b| map > b.1) {
            best = Some((epoch, map, model.store.clone()));
        }
    }
    let (best_epoch, best_map, store) = best.expect("at least one epoch");
    model.store = store;
    emit(LogRecord::Best {
        epoch: best_epoch,
        valid_map: best_map,
    })?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_map,
        log: records,
    })
}
