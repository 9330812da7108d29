//! Gumbel perturbation, hard top-k and relaxed top-k subset sampling.
//!
//! Selector logits are treated as log-weights: the Gumbel-max key of item
//! `i` is `logit_i + g_i` with `g_i = −ln(−ln u_i)`. The top-k of the keys
//! is a sample without replacement from the softmax distribution. The
//! relaxed k-hot vector runs `k` rounds of a tempered softmax over
//! `α`, starting at `α = keys` and pushing each round's mass down with
//! `α ← α + ln(1 − p)`.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped below this before `ln(1 − p)`.
pub const PROB_CAP: f64 = 1.0 - 1e-12;

/// `−ln(−ln u)` for `u ∈ (0, 1)`.
pub fn gumbel_noise(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("uniform {u} not in (0, 1)")));
    }
    Ok(-(-u.ln()).ln())
}

/// Draws a uniform from the open interval (0, 1).
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Perturbed keys together with the uniforms that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelKeys {
    pub keys: Vec<f64>,
    pub uniforms: Vec<f64>,
}

impl GumbelKeys {
    pub fn from_uniforms(logits: &[f64], uniforms: Vec<f64>) -> Result<GumbelKeys> {
        if logits.len() != uniforms.len() {
            return Err(Error::shape(
                "gumbel_keys",
                format!("{} logits, {} uniforms", logits.len(), uniforms.len()),
            ));
        }
        let keys = logits
            .iter()
            .zip(&uniforms)
            .map(|(&w, &u)| Ok(w + gumbel_noise(u)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(GumbelKeys { keys, uniforms })
    }

    pub fn sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> GumbelKeys {
        let uniforms = (0..logits.len()).map(|_| open_uniform(rng)).collect();
        GumbelKeys::from_uniforms(logits, uniforms).expect("uniforms are in (0, 1)")
    }

    pub fn noise(&self) -> Vec<f64> {
        self.uniforms.iter().map(|&u| -(-u.ln()).ln()).collect()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// One categorical draw from `softmax(logits)` via the Gumbel-max trick.
pub fn gumbel_argmax_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::invalid("cannot sample from zero logits"));
    }
    let keys = GumbelKeys::sample(logits, rng);
    Ok(hard_topk(&keys.keys, 1)?[0])
}

/// Indices of the `k` largest values (ties by lower index), ascending.
/// `-inf` entries are never selected.
pub fn hard_topk(keys: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > keys.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} items", keys.len())));
    }
    let mut order: Vec<usize> = (0..keys.len())
        .filter(|&i| keys[i] > f64::NEG_INFINITY)
        .collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Relaxed subset sample as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSubset {
    /// relaxed k-hot vector
    pub v: Vec<f64>,
    /// per-round inclusion probabilities, `step_probs[j][i] = p(a_i^j = 1)`
    pub step_probs: Vec<Vec<f64>>,
    /// top-k of the keys, ascending
    pub hard: Vec<usize>,
    pub temperature: f64,
    pub k: usize,
}

/// Graph-resident relaxed sample; `v` is differentiable w.r.t. the keys.
#[derive(Debug, Clone)]
pub struct RelaxedSample {
    pub v: Var,
    pub step_probs: Vec<Var>,
    pub hard: Vec<usize>,
    pub keys: GumbelKeys,
    pub k: usize,
}

/// Differentiable relaxed top-k over a key vector already in the graph.
///
/// Entries equal to `-inf` are ineligible and receive zero mass. When `k`
/// is at least the number of eligible items every eligible item is taken.
pub fn relaxed_topk_graph(g: &mut Graph, keys: Var, k: usize, temperature: f64) -> Result<(Var, Vec<Var>)> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature {temperature} must be positive")));
    }
    let n = g.value(keys).numel();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds {n} items")));
    }
    let eligible = g.value(keys).data().iter().filter(|v| **v > f64::NEG_INFINITY).count();
    if eligible == 0 {
        return Err(Error::invalid("no eligible items"));
    }
    let rounds = k.min(eligible);
    let mut alpha = keys;
    let mut v: Option<Var> = None;
    let mut steps = Vec::with_capacity(rounds);
    for j in 0..rounds {
        let scaled = g.scale(alpha, 1.0 / temperature);
        let p = g.softmax(scaled)?;
        v = Some(match v {
            None => p,
            Some(acc) => g.add(acc, p)?,
        });
        steps.push(p);
        if j + 1 < rounds {
            let dec = g.log1m_clamped(p, PROB_CAP);
            alpha = g.add(alpha, dec)?;
        }
    }
    Ok((v.expect("at least one round"), steps))
}

/// Relaxed top-k on fixed keys, returning plain values.
pub fn relaxed_topk(keys: &GumbelKeys, k: usize, temperature: f64) -> Result<RelaxedSubset> {
    let mut g = Graph::new();
    let kv = g.constant(Tensor::vector(keys.keys.clone())?);
    let (v, steps) = relaxed_topk_graph(&mut g, kv, k, temperature)?;
    Ok(RelaxedSubset {
        v: g.value(v).data().to_vec(),
        step_probs: steps.iter().map(|&s| g.value(s).data().to_vec()).collect(),
        hard: hard_topk(&keys.keys, k)?,
        temperature,
        k,
    })
}

/// Perturbs `logits` with the given uniforms and draws a relaxed k-hot
/// sample; the hard index set uses the same keys. `k` larger than the
/// number of eligible sentences selects all of them.
pub fn subset_sample_with_uniforms(
    g: &mut Graph,
    logits: Var,
    k: usize,
    temperature: f64,
    uniforms: Vec<f64>,
) -> Result<RelaxedSample> {
    let logit_values = g.value(logits).data().to_vec();
    let keys = GumbelKeys::from_uniforms(&logit_values, uniforms)?;
    let noise = g.constant(Tensor::vector(keys.noise())?);
    let key_var = g.add(logits, noise)?;
    let eligible = keys.keys.iter().filter(|v| **v > f64::NEG_INFINITY).count();
    let k_eff = k.min(eligible);
    let (v, step_probs) = relaxed_topk_graph(g, key_var, k_eff.max(1), temperature)?;
    Ok(RelaxedSample {
        v,
        step_probs,
        hard: hard_topk(&keys.keys, k_eff)?,
        keys,
        k: k_eff,
    })
}

/// Draws fresh Gumbel noise from `rng` and calls [`subset_sample_with_uniforms`].
pub fn subset_sample<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: Var,
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<RelaxedSample> {
    let n = g.value(logits).numel();
    let uniforms = (0..n).map(|_| open_uniform(rng)).collect();
    subset_sample_with_uniforms(g, logits, k, temperature, uniforms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient_check, ParameterStore};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gumbel_closed_form() {
        assert_relative_eq!(gumbel_noise(0.5).unwrap(), -(2f64.ln().ln()), epsilon = 1e-15);
        assert_relative_eq!(gumbel_noise(0.5).unwrap(), 0.366_512_920_581_664_3, epsilon = 1e-12);
        assert!(gumbel_noise(0.0).is_err());
        assert!(gumbel_noise(1.0).is_err());
        let mut prev = f64::NEG_INFINITY;
        for u in [0.1, 0.5, 0.9, 0.999, 1.0 - 1e-12] {
            let g = gumbel_noise(u).unwrap();
            assert!(g > prev);
            prev = g;
        }
        assert!(prev > 25.0);
    }

    #[test]
    fn gumbel_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut xs: Vec<f64> = (0..100_000).map(|_| gumbel_noise(open_uniform(&mut rng)).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let median = xs[xs.len() / 2];
        assert!((median - 0.3665).abs() < 0.02, "median {median}");
    }

    #[test]
    fn argmax_follows_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = [1f64.ln(), 3f64.ln()];
        let n = 100_000;
        let hits = (0..n).filter(|_| gumbel_argmax_sample(&logits, &mut rng).unwrap() == 1).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.75).abs() < 0.01, "{f}");
        assert_eq!(gumbel_argmax_sample(&[0.3], &mut rng).unwrap(), 0);
    }

    #[test]
    fn argmax_shift_invariance() {
        let count = |shift: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let logits = [0.1 + shift, 0.7 + shift, -0.3 + shift];
            (0..2000).map(|_| gumbel_argmax_sample(&logits, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        // same noise, shifted logits: identical draws
        assert_eq!(count(0.0), count(5.0));
    }

    #[test]
    fn hard_topk_rules() {
        assert_eq!(hard_topk(&[0.5, 0.9, 0.5], 2).unwrap(), vec![0, 1]);
        assert_eq!(hard_topk(&[1.0, 2.0, 3.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(hard_topk(&[f64::NEG_INFINITY, 2.0, 1.0], 2).unwrap(), vec![1, 2]);
        assert!(hard_topk(&[1.0], 2).is_err());
    }

    #[test]
    fn equal_keys_give_uniform_v() {
        let keys = GumbelKeys {
            keys: vec![0.3; 4],
            uniforms: vec![0.5; 4],
        };
        let r = relaxed_topk(&keys, 2, 1.0).unwrap();
        for &v in &r.v {
            assert_relative_eq!(v, 0.5, epsilon = 1e-12);
        }
        for step in &r.step_probs {
            assert_relative_eq!(step.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn low_temperature_approaches_hard_topk() {
        let keys = GumbelKeys {
            keys: vec![0.10, 0.50, 0.20, 0.31, 0.95],
            uniforms: vec![0.5; 5],
        };
        let r = relaxed_topk(&keys, 3, 1e-4).unwrap();
        let exact = [0.0, 1.0, 0.0, 1.0, 1.0];
        for (v, e) in r.v.iter().zip(exact) {
            assert!((v - e).abs() <= 1e-6, "{:?}", r.v);
        }
        assert_eq!(r.hard, vec![1, 3, 4]);
    }

    #[test]
    fn relaxed_topk_errors() {
        let keys = GumbelKeys {
            keys: vec![0.0; 2],
            uniforms: vec![0.5; 2],
        };
        assert!(relaxed_topk(&keys, 3, 1.0).is_err());
        assert!(relaxed_topk(&keys, 1, 0.0).is_err());
        assert!(relaxed_topk(&keys, 1, -1.0).is_err());
    }

    #[test]
    fn subset_sample_is_deterministic_and_saturates() {
        let run = |k: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut g = Graph::new();
            let l = g.constant(Tensor::vector(vec![0.2, -0.4, 1.1, 0.0]).unwrap());
            let s = subset_sample(&mut g, l, k, 1.0, &mut rng).unwrap();
            (g.value(s.v).data().to_vec(), s.hard)
        };
        assert_eq!(run(2), run(2));
        let (v, hard) = run(4);
        assert_eq!(hard, vec![0, 1, 2, 3]);
        assert_relative_eq!(v.iter().sum::<f64>(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn sentinel_entries_get_no_mass() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::vector(vec![0.2, f64::NEG_INFINITY, 1.1]).unwrap());
        let s = subset_sample_with_uniforms(&mut g, l, 5, 1.0, vec![0.3, 0.6, 0.9]).unwrap();
        let v = g.value(s.v).data();
        assert_eq!(v[1], 0.0);
        assert_relative_eq!(v.iter().sum::<f64>(), 2.0, epsilon = 1e-9);
        assert_eq!(s.hard, vec![0, 2]);
    }

    #[test]
    fn relaxed_sample_gradient_with_frozen_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParameterStore::new();
        let w = store.insert_uniform("logits", &[6], 1.5, &mut rng).unwrap();
        let uniforms: Vec<f64> = (0..6).map(|_| open_uniform(&mut rng)).collect();
        let weights = Tensor::vector(vec![0.3, -1.2, 0.8, 2.0, -0.5, 1.0]).unwrap();
        for t in [1.0, 0.5] {
            let report = gradient_check(&mut store, 1e-5, 10, |g, s| {
                let l = g.param(s, w);
                let sample = subset_sample_with_uniforms(g, l, 3, t, uniforms.clone())?;
                let c = g.constant(weights.clone());
                g.dot(sample.v, c)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
            assert!(report.max_abs_grad > 1e-3);
        }
    }
}
