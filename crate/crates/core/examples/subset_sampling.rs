//! Gumbel top-k subset sampling: empirical pair frequencies against the
//! sampling-without-replacement probabilities, and the relaxed k-hot vector
//! sharpening as the temperature drops.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use select_rank::sampling::{hard_topk, relaxed_topk, GumbelKeys};

fn main() -> anyhow::Result<()> {
    let weights = [1.0f64, 2.0, 3.0, 4.0];
    let logits: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let draws = 100_000;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..draws {
        let keys = GumbelKeys::sample(&logits, &mut rng);
        *counts.entry(hard_topk(&keys.keys, 2)?).or_default() += 1;
    }
    println!("pair   empirical  exact");
    for (pair, n) in &counts {
        let (i, j) = (pair[0], pair[1]);
        let p = weights[i] / total * weights[j] / (total - weights[i])
            + weights[j] / total * weights[i] / (total - weights[j]);
        println!("{{{i},{j}}}  {:.4}     {p:.4}", *n as f64 / draws as f64);
    }

    let keys = GumbelKeys::sample(&logits, &mut rng);
    println!("\nkeys {:?}, hard top-2 {:?}", keys.keys, hard_topk(&keys.keys, 2)?);
    for t in [2.0, 0.5, 0.1, 0.01] {
        let r = relaxed_topk(&keys, 2, t)?;
        let v: Vec<String> = r.v.iter().map(|x| format!("{x:.3}")).collect();
        println!("t = {t:<5} v = [{}]  sum = {:.6}", v.join(", "), r.v.iter().sum::<f64>());
    }
    Ok(())
}
