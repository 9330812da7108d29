//! When all evidence lies in the document head, selecting k of the first
//! ten sentences reaches the full-head quality well before k = 10.
//! Takes about a minute and a half in release mode.

use select_rank::experiments::{head_plateau, PlateauExperiment};

fn main() -> anyhow::Result<()> {
    let r = head_plateau(&PlateauExperiment::default())?;
    println!("truncation (whole head): nDCG@10 {:.4}", r.truncate_ndcg);
    for (k, ndcg) in &r.sweep {
        println!("bm25 selection, k = {k:>2}: nDCG@10 {ndcg:.4}");
    }
    Ok(())
}
