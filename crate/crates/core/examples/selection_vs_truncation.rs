//! Relevant evidence sits anywhere in 30-sentence documents; a ranker that
//! only sees the head is compared with one that learns to select sentences.
//! Takes about a minute in release mode.

use select_rank::experiments::{selection_vs_truncation, SelectionExperiment};

fn main() -> anyhow::Result<()> {
    let exp = SelectionExperiment::default();
    let r = selection_vs_truncation(&exp)?;
    println!("test queries:         {}", r.test_queries);
    println!("truncation sees:      {} sentences", r.visible_sentences);
    println!("nDCG@10 truncation:   {:.4}", r.truncate_ndcg);
    println!("nDCG@10 select+rank:  {:.4}", r.e2e_ndcg);
    println!("evidence recall:      {:.3}", r.recall);
    Ok(())
}
