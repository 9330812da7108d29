//! The full command workflow on files: ingest, retrieve, train, rank,
//! evaluate, explain and analyze, in a temporary directory. On synthetic
//! data only relevant documents contain query words, so BM25 is already
//! perfect here; the point is the workflow, not the numbers.

use select_rank::commands;
use select_rank::config::Config;
use select_rank::synthetic::{SyntheticCollection, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name).display().to_string();
    SyntheticCollection::generate(&SyntheticConfig {
        queries: 30,
        docs_per_query: 5,
        sentences_per_doc: 10,
        signal_region: 10,
        ..SyntheticConfig::default()
    })?
    .write_files(dir.path())?;

    let config_file = dir.path().join("sar.conf");
    std::fs::write(
        &config_file,
        format!(
            "docs={}\ncorpus={}\nqueries={}\nqrels={}\ncheckpoint={}\ntrain_log={}\n\
             mode=e2e\nselector=linear\ndim=32\nheads=2\nlayers=1\nff_dim=64\nmax_len=24\nk=3\n\
             epochs=2\ntriples_per_epoch=200\ndepth=20\n",
            path("docs.jsonl"),
            path("corpus.bin"),
            path("queries.tsv"),
            path("qrels.txt"),
            path("model.ckpt"),
            path("train.jsonl"),
        ),
    )?;
    let with = |extra: &[String]| Config::resolve(Some(&config_file), extra);
    let bm25 = format!("run={}", path("bm25.run"));
    let reranked = format!("run={}", path("reranked.run"));

    let corpus = commands::cmd_ingest(&with(&[])?)?;
    println!("ingested {} documents", corpus.len());
    commands::cmd_retrieve(&with(&[bm25.clone()])?)?;
    println!("bm25:\n{}", commands::cmd_evaluate(&with(&[bm25.clone()])?)?.to_tsv().lines().last().unwrap_or(""));
    let outcome = commands::cmd_train(&with(&[bm25.clone()])?)?;
    println!("trained; best epoch {} (validation MAP {:.3})", outcome.best_epoch, outcome.best_map);
    commands::cmd_rank(&with(&[bm25.clone(), format!("output={}", path("reranked.run"))])?)?;
    println!("re-ranked:\n{}", commands::cmd_evaluate(&with(&[reranked])?)?.to_tsv().lines().last().unwrap_or(""));

    let ex = commands::cmd_explain(&with(&[])?, "q0", &corpus.documents()[0].doc_id)?;
    println!("explanation: {}", ex.to_json()?);
    let cdf = commands::cmd_analyze(&with(&[bm25, "budget=30".into()])?)?;
    println!("missing-token CDF at budget 30: {cdf:?}");
    Ok(())
}
