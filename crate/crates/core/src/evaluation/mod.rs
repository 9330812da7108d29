//! TREC run/qrels handling, ranking metrics and the missing-token analysis.

mod analysis;
mod metrics;
mod trec;

pub use analysis::{empirical_cdf, missing_token_fraction};
pub use metrics::{average_precision, evaluate_run, ndcg_at_k, reciprocal_rank, Gain, MetricReport, QueryMetrics};
pub use trec::{Qrels, QueryRanking, Run};
