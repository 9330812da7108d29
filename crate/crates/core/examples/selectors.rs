//! Score the sentences of a document with the lexical selectors and take the
//! top-k summary each one produces.

use select_rank::retrieval::Bm25Params;
use select_rank::selectors::{hard_select, score_bm25, score_tfidf};
use select_rank::text::{Corpus, CorpusLimits, Query};

fn main() -> anyhow::Result<()> {
    let corpus = Corpus::from_texts(
        [
            (
                "tides",
                "The coast road was closed for repairs. Tides are caused by the gravity of the moon. \
                 Fishing boats leave before dawn. The sun also pulls on the oceans, raising spring tides. \
                 Tourists visit in summer.",
            ),
            ("bread", "Bread rises because yeast produces gas. Bake it until golden."),
        ],
        CorpusLimits::default(),
    )?;
    let query = Query::new("q1", "what causes ocean tides", corpus.vocab());
    let doc = corpus.document("tides")?;

    for (name, scores) in [
        ("bm25", score_bm25(&query, doc, Bm25Params::default())),
        ("tfidf", score_tfidf(&query, doc, corpus.vocab())),
    ] {
        let summary = hard_select(&scores, doc, 2, None)?;
        println!("{name}: logits {:?}", scores.logits.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        for &i in &summary.indices {
            println!("  [{i}] {}", doc.sentences[i].text);
        }
    }
    Ok(())
}
