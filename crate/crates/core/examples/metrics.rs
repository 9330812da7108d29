//! Evaluate a small hand-made run with MAP, nDCG@k and MRR.

use select_rank::evaluation::{average_precision, evaluate_run, ndcg_at_k, Gain, Qrels, QueryRanking, Run};

fn main() -> anyhow::Result<()> {
    // judged relevant at ranks 1 and 3 out of two relevant documents
    println!("AP  = {:.4}", average_precision(&[1, 0, 1, 0], 2));
    println!("nDCG@3 = {:.4}", ndcg_at_k(&[1, 0, 1], &[1, 1, 0], 3, Gain::Linear));

    let mut qrels = Qrels::new();
    for (q, d, r) in [("q1", "a", 2), ("q1", "b", 0), ("q1", "c", 1), ("q2", "x", 1), ("q2", "z", 0)] {
        qrels.insert(q, d, r);
    }
    let mut run = Run::new("demo");
    run.push(QueryRanking::from_scores("q1", vec![("b".into(), 3.0), ("a".into(), 2.0), ("c".into(), 1.0)])?)?;
    run.push(QueryRanking::from_scores("q2", vec![("z".into(), 0.9), ("y".into(), 0.5), ("x".into(), 0.1)])?)?;
    let report = evaluate_run(&run, &qrels, &[1, 3, 10], Gain::Linear)?;
    print!("\n{}", report.to_tsv());
    Ok(())
}
