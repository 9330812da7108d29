use std::cell::RefCell;

use rand::{Rng, RngCore};

use super::RankerInput;
use crate::autodiff::{Graph, Init, ParamId, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankerConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ff_dim == 0 || self.max_len < 4 || self.vocab_size == 0 {
            return Err(Error::Config("ff_dim, max_len and vocab size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// How the relaxed selection vector reaches the ranker's token embeddings.
///
/// Each variant carries the per-sentence weights (length = sentence count).
#[derive(Clone, Copy)]
pub enum Coupling<'a> {
    /// No selector in the loop.
    None,
    /// Forward is unchanged; backward treats summary tokens as scaled by
    /// their sentence's weight, clamped to [0, 1].
    StraightThrough(Var),
    /// Same forward, weights ignored entirely.
    Identity(Var),
    /// Differentiable stand-in for the straight-through rule:
    /// `x ⊙ s + (x₀ − x₀ ⊙ s₀)` with the offset frozen at its first use.
    Surrogate(Var, &'a SurrogateOffsets),
}

/// Offset recorded by the first [`Coupling::Surrogate`] forward pass.
#[derive(Debug, Default)]
pub struct SurrogateOffsets {
    offset: RefCell<Option<Tensor>>,
}

impl SurrogateOffsets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.offset.borrow().is_some()
    }
}

#[derive(Debug, Clone)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ff1: ParamId,
    ff1b: ParamId,
    ff2: ParamId,
    ff2b: ParamId,
}

/// Small pre-norm transformer encoder with a sigmoid relevance head on `[CLS]`.
#[derive(Debug, Clone)]
pub struct Ranker {
    config: RankerConfig,
    embed: ParamId,
    pos: ParamId,
    layers: Vec<Layer>,
    head_w: ParamId,
    head_b: ParamId,
}

impl Ranker {
    /// Name of the token embedding shared with end-to-end selectors.
    pub const EMBEDDING: &'static str = "embed.tokens";

    /// Registers (or reuses, shape-checked) the ranker's parameters.
    pub fn new<R: Rng + ?Sized>(store: &mut ParameterStore, config: RankerConfig, rng: &mut R) -> Result<Ranker> {
        config.validate()?;
        let (d, f) = (config.dim, config.ff_dim);
        let embed = store.get_or_init(Self::EMBEDDING, &[config.vocab_size, d], Init::UnitUniform, rng)?;
        let pos = store.get_or_init("ranker.pos", &[config.max_len, d], Init::Uniform(0.5), rng)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut p = |name: &str, shape: &[usize], init: Init| {
                store.get_or_init(&format!("ranker.l{l}.{name}"), shape, init, rng)
            };
            let zero = Init::Filled(0.0);
            layers.push(Layer {
                wq: p("wq", &[d, d], Init::Glorot)?,
                bq: p("bq", &[d], zero)?,
                wk: p("wk", &[d, d], Init::Glorot)?,
                bk: p("bk", &[d], zero)?,
                wv: p("wv", &[d, d], Init::Glorot)?,
                bv: p("bv", &[d], zero)?,
                wo: p("wo", &[d, d], Init::Glorot)?,
                bo: p("bo", &[d], zero)?,
                ff1: p("ff1", &[d, f], Init::Glorot)?,
                ff1b: p("ff1b", &[f], zero)?,
                ff2: p("ff2", &[f, d], Init::Glorot)?,
                ff2b: p("ff2b", &[d], zero)?,
            });
        }
        let head_w = store.get_or_init("ranker.head.w", &[d, 1], Init::Glorot, rng)?;
        let head_b = store.get_or_init("ranker.head.b", &[1], Init::Filled(0.0), rng)?;
        Ok(Ranker {
            config,
            embed,
            pos,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn embedding(&self) -> ParamId {
        self.embed
    }

    /// Per-token scale vector: the clamped sentence weight for summary
    /// tokens, 1 elsewhere. `None` when the input has no summary tokens.
    fn token_scales(&self, g: &mut Graph, weights: Var, input: &RankerInput) -> Result<Option<Var>> {
        let origins: Vec<usize> = input.origin.iter().flatten().copied().collect();
        if origins.is_empty() {
            return Ok(None);
        }
        let n = g.value(weights).numel();
        let clamped = g.clamp(weights, 0.0, 1.0);
        let col = g.reshape(clamped, &[n, 1])?;
        let picked = g.gather_rows(col, &origins)?;
        let picked = g.reshape(picked, &[origins.len()])?;
        let head = g.constant(Tensor::filled(&[input.query_len + 2], 1.0));
        let tail = g.constant(Tensor::filled(&[1], 1.0));
        Ok(Some(g.concat(&[head, picked, tail], 0)?))
    }

    fn attention(&self, g: &mut Graph, store: &ParameterStore, x: Var, l: &Layer) -> Result<Var> {
        let (d, heads) = (self.config.dim, self.config.heads);
        let dh = d / heads;
        let lin = |g: &mut Graph, w: ParamId, b: ParamId| -> Result<Var> {
            let (w, b) = (g.param(store, w), g.param(store, b));
            let y = g.matmul(x, w)?;
            g.add_bias(y, b)
        };
        let q = lin(g, l.wq, l.bq)?;
        let k = lin(g, l.wk, l.bk)?;
        let v = lin(g, l.wv, l.bv)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.narrow(q, 1, h * dh, dh)?;
            let kh = g.narrow(k, 1, h * dh, dh)?;
            let vh = g.narrow(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax(s)?;
            outs.push(g.matmul(a, vh)?);
        }
        let cat = g.concat(&outs, 1)?;
        let (wo, bo) = (g.param(store, l.wo), g.param(store, l.bo));
        let o = g.matmul(cat, wo)?;
        g.add_bias(o, bo)
    }

    fn feed_forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, l: &Layer) -> Result<Var> {
        let (w1, b1) = (g.param(store, l.ff1), g.param(store, l.ff1b));
        let (w2, b2) = (g.param(store, l.ff2), g.param(store, l.ff2b));
        let h = g.matmul(x, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.gelu(h);
        let o = g.matmul(h, w2)?;
        g.add_bias(o, b2)
    }

    /// Relevance ŷ ∈ (0, 1) as a scalar graph node.
    ///
    /// Passing a dropout source enables training-mode dropout on the head.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        input: &RankerInput,
        coupling: Coupling<'_>,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let t = input.len();
        if t > self.config.max_len {
            return Err(Error::invalid(format!(
                "input of {t} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        let ids: Vec<usize> = input.tokens.iter().map(|&t| t as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.config.vocab_size,
            });
        }
        let e = g.param(store, self.embed);
        let mut x = g.gather_rows(e, &ids)?;
        x = match coupling {
            Coupling::None | Coupling::Identity(_) => x,
            Coupling::StraightThrough(w) => match self.token_scales(g, w, input)? {
                Some(s) => g.straight_through_scale(x, s)?,
                None => x,
            },
            Coupling::Surrogate(w, offsets) => match self.token_scales(g, w, input)? {
                Some(s) => {
                    let scaled = g.mul_rows(x, s)?;
                    let mut slot = offsets.offset.borrow_mut();
                    let off = slot.get_or_insert_with(|| {
                        let base = g.value(x).data();
                        let data = base.iter().zip(g.value(scaled).data()).map(|(a, b)| a - b).collect();
                        Tensor::new(g.shape(x).to_vec(), data).expect("same shape")
                    });
                    if off.shape() != g.shape(x) {
                        return Err(Error::shape("surrogate", "offset recorded for another input"));
                    }
                    let off = g.constant(off.clone());
                    g.add(scaled, off)?
                }
                None => x,
            },
        };
        let pos = g.param(store, self.pos);
        let pos = g.narrow(pos, 0, 0, t)?;
        x = g.add(x, pos)?;
        for l in &self.layers {
            let n = g.layer_norm(x);
            let a = self.attention(g, store, n, l)?;
            x = g.add(x, a)?;
            let n = g.layer_norm(x);
            let f = self.feed_forward(g, store, n, l)?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x);
        let cls = g.narrow(x, 0, 0, 1)?;
        let cls = g.dropout(cls, 1.0 - self.config.dropout, dropout)?;
        let (w, b) = (g.param(store, self.head_w), g.param(store, self.head_b));
        let o = g.matmul(cls, w)?;
        let o = g.reshape(o, &[1])?;
        let o = g.add(o, b)?;
        Ok(g.sigmoid(o))
    }

    /// Inference-mode score (no dropout, no coupling).
    pub fn score(&self, store: &ParameterStore, input: &RankerInput) -> Result<f64> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, store, input, Coupling::None, None)?;
        g.item(y)
    }
}
