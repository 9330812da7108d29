use crate::autodiff::ParameterStore;

/// AdamW with linear warmup and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    steps: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64, warmup: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Warmup factor for the upcoming step.
    pub fn warmup_factor(&self) -> f64 {
        if self.warmup == 0 {
            1.0
        } else {
            ((self.steps + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }

    /// Applies one update to every parameter for which `base_lr` returns a
    /// rate (others are frozen), then clears all gradients. A non-finite
    /// gradient skips the whole step; returns whether it was applied.
    pub fn step(&mut self, store: &mut ParameterStore, base_lr: impl Fn(&str) -> Option<f64>) -> bool {
        let finite = store.iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        if !finite {
            log::warn!("non-finite gradient at step {}; update skipped", self.steps + 1);
            store.zero_grad();
            return false;
        }
        let factor = self.warmup_factor();
        self.steps += 1;
        for p in store.iter_mut() {
            let Some(lr) = base_lr(&p.name) else { continue };
            let lr = lr * factor;
            p.steps += 1;
            let t = p.steps as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i];
                p.moment1[i] = self.beta1 * p.moment1[i] + (1.0 - self.beta1) * g;
                p.moment2[i] = self.beta2 * p.moment2[i] + (1.0 - self.beta2) * g * g;
                let m = p.moment1[i] / c1;
                let v = p.moment2[i] / c2;
                data[i] -= lr * (m / (v.sqrt() + self.eps) + self.weight_decay * data[i]);
            }
        }
        store.zero_grad();
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn warmup_ramp() {
        let mut opt = AdamW::new(0.0, 100);
        assert_eq!(opt.warmup_factor(), 0.01);
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::scalar(1.0)).unwrap();
        for _ in 0..150 {
            opt.step(&mut store, |_| Some(1.0));
        }
        assert_eq!(opt.warmup_factor(), 1.0);
        assert_eq!(AdamW::new(0.0, 0).warmup_factor(), 1.0);
    }

    #[test]
    fn descends_on_a_parabola() {
        let mut store = ParameterStore::new();
        let x = store.insert("x", Tensor::scalar(3.0)).unwrap();
        let mut opt = AdamW::new(0.01, 0);
        let mut last = 3.0f64;
        for _ in 0..200 {
            let mut g = Graph::new();
            let v = g.param(&store, x);
            let y = g.mul(v, v).unwrap();
            g.backward_into(y, &mut store).unwrap();
            opt.step(&mut store, |_| Some(0.05));
            let now = store.value(x).item().unwrap();
            assert!((now - last).abs() <= 0.05 * 1.05);
            last = now;
        }
        assert!(last.abs() < 0.5);
    }

    #[test]
    fn zero_gradient_only_decays_and_frozen_params_stay() {
        let mut store = ParameterStore::new();
        let a = store.insert("a", Tensor::scalar(2.0)).unwrap();
        let b = store.insert("selector.b", Tensor::scalar(2.0)).unwrap();
        let mut opt = AdamW::new(0.01, 0);
        opt.step(&mut store, |n| (!n.starts_with("selector.")).then_some(0.1));
        assert_eq!(store.value(a).item().unwrap(), 2.0 - 0.1 * 0.01 * 2.0);
        assert_eq!(store.value(b).item().unwrap(), 2.0);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut store = ParameterStore::new();
        let a = store.insert("a", Tensor::scalar(2.0)).unwrap();
        store.param_mut(a).grad[0] = f64::NAN;
        let mut opt = AdamW::new(0.01, 0);
        assert!(!opt.step(&mut store, |_| Some(0.1)));
        assert_eq!(store.value(a).item().unwrap(), 2.0);
        assert_eq!(opt.steps(), 0);
        assert_eq!(store.grad(a), &[0.0]);
    }
}
