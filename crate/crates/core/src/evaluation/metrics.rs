use std::fmt::Write as _;

use super::trec::{Qrels, Run};
use crate::error::{Error, Result};

/// Gain applied to graded relevance in nDCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// `rel`
    #[default]
    Linear,
    /// `2^rel − 1`
    Exponential,
}

impl Gain {
    fn apply(self, rel: u32) -> f64 {
        match self {
            Gain::Linear => rel as f64,
            Gain::Exponential => 2f64.powi(rel as i32) - 1.0,
        }
    }
}

/// AP over a ranked list of relevance grades; `num_relevant` is R from the
/// qrels (relevance ≥ 1), which may exceed what was retrieved.
pub fn average_precision(ranked_rels: &[u32], num_relevant: usize) -> f64 {
    if num_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in ranked_rels.iter().enumerate() {
        if r >= 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / num_relevant as f64
}

fn dcg(rels: impl Iterator<Item = u32>, gain: Gain) -> f64 {
    rels.enumerate()
        .map(|(i, r)| gain.apply(r) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k; the ideal ordering sorts every judged grade for the query.
/// Zero when the ideal DCG is zero (and for k = 0).
pub fn ndcg_at_k(ranked_rels: &[u32], judged_rels: &[u32], k: usize, gain: Gain) -> f64 {
    let mut ideal = judged_rels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k), gain);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(ranked_rels.iter().copied().take(k), gain) / idcg
}

pub fn reciprocal_rank(ranked_rels: &[u32]) -> f64 {
    ranked_rels
        .iter()
        .position(|&r| r >= 1)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub qid: String,
    pub ap: f64,
    /// One value per cutoff in [`MetricReport::cutoffs`].
    pub ndcg: Vec<f64>,
    pub rr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub per_query: Vec<QueryMetrics>,
    /// Means over `per_query`, labelled `all`.
    pub mean: QueryMetrics,
}

impl MetricReport {
    pub fn map(&self) -> f64 {
        self.mean.ap
    }

    pub fn mrr(&self) -> f64 {
        self.mean.rr
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.mean.ndcg[i])
    }

    /// Tab-separated rows: header, one per query, then `all`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("qid\tmap");
        for k in &self.cutoffs {
            let _ = write!(out, "\tndcg@{k}");
        }
        out.push_str("\tmrr\n");
        for m in self.per_query.iter().chain(std::iter::once(&self.mean)) {
            let _ = write!(out, "{}\t{:.6}", m.qid, m.ap);
            for v in &m.ndcg {
                let _ = write!(out, "\t{v:.6}");
            }
            let _ = writeln!(out, "\t{:.6}", m.rr);
        }
        out
    }
}

/// Per-query metrics and their means. Queries missing from the qrels or
/// without any relevant document are left out (with a warning for the former).
pub fn evaluate_run(run: &Run, qrels: &Qrels, cutoffs: &[usize], gain: Gain) -> Result<MetricReport> {
    if cutoffs.contains(&0) {
        return Err(Error::invalid("nDCG cutoffs must be at least 1"));
    }
    let mut per_query = Vec::new();
    for r in &run.rankings {
        let Some(judged) = qrels.judged(&r.qid) else {
            log::warn!("query {} has no judgments; excluded from evaluation", r.qid);
            continue;
        };
        let num_rel = qrels.num_relevant(&r.qid);
        if num_rel == 0 {
            continue;
        }
        let ranked: Vec<u32> = r.doc_ids().map(|d| qrels.relevance(&r.qid, d)).collect();
        let grades: Vec<u32> = judged.values().copied().collect();
        per_query.push(QueryMetrics {
            qid: r.qid.clone(),
            ap: average_precision(&ranked, num_rel),
            ndcg: cutoffs.iter().map(|&k| ndcg_at_k(&ranked, &grades, k, gain)).collect(),
            rr: reciprocal_rank(&ranked),
        });
    }
    let n = per_query.len().max(1) as f64;
    let mean = QueryMetrics {
        qid: "all".into(),
        ap: per_query.iter().map(|m| m.ap).sum::<f64>() / n,
        ndcg: (0..cutoffs.len())
            .map(|i| per_query.iter().map(|m| m.ndcg[i]).sum::<f64>() / n)
            .collect(),
        rr: per_query.iter().map(|m| m.rr).sum::<f64>() / n,
    };
    Ok(MetricReport {
        cutoffs: cutoffs.to_vec(),
        per_query,
        mean,
    })
}
