//! Build a small two-layer network on the autodiff graph and compare its
//! reverse-mode gradients with central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use select_rank::autodiff::{gradient_check, Graph, ParameterStore, Tensor};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    let w1 = store.insert_uniform("w1", &[3, 4], 0.5, &mut rng)?;
    let w2 = store.insert_uniform("w2", &[4, 1], 0.5, &mut rng)?;
    let x = Tensor::matrix(2, 3, vec![0.2, -1.0, 0.5, 1.5, 0.3, -0.7])?;

    let loss = |g: &mut Graph, s: &ParameterStore| {
        let input = g.constant(x.clone());
        let a = g.param(s, w1);
        let b = g.param(s, w2);
        let h = g.matmul(input, a)?;
        let h = g.tanh(h);
        let y = g.matmul(h, b)?;
        let y = g.sigmoid(y);
        Ok(g.sum(y))
    };

    let mut g = Graph::new();
    let l = loss(&mut g, &store)?;
    println!("loss = {:.6}", g.item(l)?);

    let report = gradient_check(&mut store, 1e-6, 16, loss)?;
    println!(
        "checked {} coordinates: max relative error {:.2e}, largest gradient {:.3}",
        report.coords_checked, report.max_rel_error, report.max_abs_grad
    );
    Ok(())
}
