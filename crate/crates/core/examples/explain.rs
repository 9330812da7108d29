//! Train a small end-to-end model on a synthetic collection and print the
//! sentences it selected for one relevant and one non-relevant document.

use select_rank::config::Config;
use select_rank::model::SelectAndRank;
use select_rank::synthetic::{SyntheticCollection, SyntheticConfig};
use select_rank::training::{train, TrainData};

fn main() -> anyhow::Result<()> {
    let c = SyntheticCollection::generate(&SyntheticConfig {
        queries: 150,
        sentences_per_doc: 12,
        signal_region: 12,
        ..SyntheticConfig::default()
    })?;
    let (train_q, valid_q, test_q) = c.split(110, 20);
    let config = Config::resolve(
        None,
        &["mode=e2e", "selector=linear", "dim=32", "heads=2", "layers=1", "ff_dim=64", "max_len=24", "k=3", "epochs=5", "triples_per_epoch=800"]
            .map(String::from),
    )?;
    let data = TrainData {
        corpus: &c.corpus,
        train_queries: &train_q,
        valid_queries: &valid_q,
        qrels: &c.qrels,
        candidates: &c.candidates,
    };
    let model = SelectAndRank::new(&config, c.corpus.vocab().len(), None)?;
    let outcome = train(&config, &data, model, &mut |_| Ok(()))?;
    println!("best epoch {} (validation MAP {:.3})", outcome.best_epoch, outcome.best_map);

    let q = &test_q[0];
    println!("query {}: {:?}", q.query_id, q.text);
    let ranking = c.candidates.get(&q.query_id).expect("candidates");
    let rel = ranking.doc_ids().find(|d| c.qrels.relevance(&q.query_id, d) > 0).expect("relevant doc");
    let non = ranking.doc_ids().find(|d| c.qrels.relevance(&q.query_id, d) == 0).expect("non-relevant doc");
    for docid in [rel, non] {
        let ex = outcome.model.explain(q, c.corpus.document(docid)?, &c.corpus)?;
        println!("\n{docid} (rel {}) score {:.4}", c.qrels.relevance(&q.query_id, docid), ex.score);
        for s in ex.selected() {
            println!("  [{:>2}] p={:.3} {}", s.index, s.p.unwrap_or(f64::NAN), s.text);
        }
    }
    Ok(())
}
