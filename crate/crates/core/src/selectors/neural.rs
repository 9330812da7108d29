//! Trainable selectors built on the autodiff graph.

use rand::Rng;

use super::SentenceScores;
use crate::autodiff::{Graph, Init, ParamId, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::text::{Document, TokenId, UNK};

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSelectorConfig {
    pub embed_dim: usize,
    /// Output width of the linear selector's affine layer, or GRU hidden size.
    pub hidden: usize,
    /// Linear selector: separate affine layers for query and sentences.
    pub separate_query_layer: bool,
    /// Name of the token embedding; `embed.tokens` shares it with the ranker.
    pub embedding_name: String,
}

impl Default for NeuralSelectorConfig {
    fn default() -> Self {
        NeuralSelectorConfig {
            embed_dim: 64,
            hidden: 32,
            separate_query_layer: false,
            embedding_name: "selector.embed".into(),
        }
    }
}

/// Query tokens for the encoders; an empty query becomes a lone `[UNK]`.
fn query_tokens(tokens: &[TokenId]) -> Vec<usize> {
    if tokens.is_empty() {
        vec![UNK as usize]
    } else {
        tokens.iter().map(|&t| t as usize).collect()
    }
}

fn check_vocab(store: &ParameterStore, embed: ParamId, tokens: &[usize]) -> Result<()> {
    let rows = store.value(embed).rows();
    match tokens.iter().find(|&&t| t >= rows) {
        Some(&t) => Err(Error::IndexOutOfRange { index: t, len: rows }),
        None => Ok(()),
    }
}

/// Sentence indices that have tokens, plus their token offsets.
fn nonempty_sentences(doc: &Document) -> Vec<(usize, usize, usize)> {
    let mut off = 0;
    let mut out = Vec::new();
    for (i, s) in doc.sentences.iter().enumerate() {
        if !s.tokens.is_empty() {
            out.push((i, off, s.tokens.len()));
        }
        off += s.tokens.len();
    }
    out
}

/// Shared behaviour of the differentiable selectors.
pub trait TrainableSelector {
    /// Per-sentence logits as a graph vector; empty sentences are `-inf`.
    fn logits(&self, g: &mut Graph, store: &ParameterStore, query: &[TokenId], doc: &Document) -> Result<Var>;

    fn scores(&self, store: &ParameterStore, query: &[TokenId], doc: &Document) -> Result<SentenceScores> {
        if doc.num_sentences() == 0 {
            return Ok(SentenceScores::new(Vec::new()));
        }
        let mut g = Graph::new();
        let v = self.logits(&mut g, store, query, doc)?;
        Ok(SentenceScores::new(g.value(v).data().to_vec()))
    }
}

/// Averaged embeddings through an affine layer, scored by dot product.
#[derive(Debug, Clone)]
pub struct LinearSelector {
    embed: ParamId,
    w: ParamId,
    b: ParamId,
    query_layer: Option<(ParamId, ParamId)>,
}

impl LinearSelector {
    /// Registers (or reuses) the selector's parameters in `store`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        vocab_size: usize,
        config: &NeuralSelectorConfig,
        rng: &mut R,
    ) -> Result<LinearSelector> {
        let (d, h) = (config.embed_dim, config.hidden);
        let embed = store.get_or_init(&config.embedding_name, &[vocab_size, d], Init::UnitUniform, rng)?;
        let w = store.get_or_init("selector.linear.w", &[d, h], Init::Glorot, rng)?;
        let b = store.get_or_init("selector.linear.b", &[h], Init::Filled(0.0), rng)?;
        let query_layer = if config.separate_query_layer {
            Some((
                store.get_or_init("selector.linear.qw", &[d, h], Init::Glorot, rng)?,
                store.get_or_init("selector.linear.qb", &[h], Init::Filled(0.0), rng)?,
            ))
        } else {
            None
        };
        Ok(LinearSelector { embed, w, b, query_layer })
    }

    pub fn embedding(&self) -> ParamId {
        self.embed
    }

    pub fn layer(&self) -> (ParamId, ParamId) {
        (self.w, self.b)
    }
}

/// Row-averaging matrix: row r holds 1/len over the r-th span.
fn averaging_matrix(spans: &[(usize, usize)], total: usize) -> Result<Tensor> {
    let mut data = vec![0.0; spans.len() * total];
    for (r, &(off, len)) in spans.iter().enumerate() {
        for c in off..off + len {
            data[r * total + c] = 1.0 / len as f64;
        }
    }
    Tensor::new(vec![spans.len(), total], data)
}

impl TrainableSelector for LinearSelector {
    fn logits(&self, g: &mut Graph, store: &ParameterStore, query: &[TokenId], doc: &Document) -> Result<Var> {
        let n = doc.num_sentences();
        let spans = nonempty_sentences(doc);
        if spans.is_empty() {
            return Err(Error::invalid(format!("document {} has no tokens", doc.doc_id)));
        }
        let q_ids = query_tokens(query);
        let d_ids: Vec<usize> = doc.tokens().map(|t| t as usize).collect();
        check_vocab(store, self.embed, &q_ids)?;
        check_vocab(store, self.embed, &d_ids)?;

        let e = g.param(store, self.embed);
        let qx = g.gather_rows(e, &q_ids)?;
        let qbar = g.mean(qx, 0)?;
        let qbar = g.reshape(qbar, &[1, store.value(self.embed).row_len()])?;
        let dx = g.gather_rows(e, &d_ids)?;
        let avg = averaging_matrix(
            &spans.iter().map(|&(_, off, len)| (off, len)).collect::<Vec<_>>(),
            d_ids.len(),
        )?;
        let avg = g.constant(avg);
        let sbar = g.matmul(avg, dx)?;

        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let fs = g.matmul(sbar, w)?;
        let fs = g.add_bias(fs, b)?;
        let (qw, qb) = match self.query_layer {
            Some((qw, qb)) => (g.param(store, qw), g.param(store, qb)),
            None => (w, b),
        };
        let fq = g.matmul(qbar, qw)?;
        let fq = g.add_bias(fq, qb)?;
        let fq = g.transpose(fq)?;
        let w = g.matmul(fs, fq)?;
        let w = g.reshape(w, &[spans.len()])?;
        let positions: Vec<usize> = spans.iter().map(|s| s.0).collect();
        g.scatter(w, &positions, n, f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone)]
struct GruDirection {
    wx: ParamId,
    wh: ParamId,
    bx: ParamId,
    bh: ParamId,
}

impl GruDirection {
    fn new<R: Rng + ?Sized>(store: &mut ParameterStore, prefix: &str, d: usize, h: usize, rng: &mut R) -> Result<Self> {
        Ok(GruDirection {
            wx: store.get_or_init(&format!("{prefix}.wx"), &[d, 3 * h], Init::Glorot, rng)?,
            wh: store.get_or_init(&format!("{prefix}.wh"), &[h, 3 * h], Init::Glorot, rng)?,
            bx: store.get_or_init(&format!("{prefix}.bx"), &[3 * h], Init::Filled(0.0), rng)?,
            bh: store.get_or_init(&format!("{prefix}.bh"), &[3 * h], Init::Filled(0.0), rng)?,
        })
    }

    /// Runs the recurrence over the rows of `x` ([T, d]) in the given
    /// direction and returns the hidden states in input order ([T, h]).
    fn run(&self, g: &mut Graph, store: &ParameterStore, x: Var, h: usize, reverse: bool) -> Result<Var> {
        let steps = g.shape(x)[0];
        let (wx, wh) = (g.param(store, self.wx), g.param(store, self.wh));
        let (bx, bh) = (g.param(store, self.bx), g.param(store, self.bh));
        let gx = g.matmul(x, wx)?;
        let gx = g.add_bias(gx, bx)?;
        let mut state = g.constant(Tensor::zeros(&[1, h]));
        let mut outs = vec![state; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let xg = g.narrow(gx, 0, t, 1)?;
            let hg = g.matmul(state, wh)?;
            let hg = g.add_bias(hg, bh)?;
            let xz = g.narrow(xg, 1, 0, h)?;
            let xr = g.narrow(xg, 1, h, h)?;
            let xn = g.narrow(xg, 1, 2 * h, h)?;
            let hz = g.narrow(hg, 1, 0, h)?;
            let hr = g.narrow(hg, 1, h, h)?;
            let hn = g.narrow(hg, 1, 2 * h, h)?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let rn = g.mul(r, hn)?;
            let n = g.add(xn, rn)?;
            let n = g.tanh(n);
            // h' = n + z ⊙ (h − n)
            let diff = g.sub(state, n)?;
            let zd = g.mul(z, diff)?;
            state = g.add(n, zd)?;
            outs[t] = state;
        }
        g.concat(&outs, 0)
    }
}

/// Bidirectional GRU encoder with query-guided attention; sentences are
/// scored by cosine similarity to the max-pooled query representation.
#[derive(Debug, Clone)]
pub struct AttentiveSelector {
    embed: ParamId,
    hidden: usize,
    fwd: GruDirection,
    bwd: GruDirection,
    w1: ParamId,
    w2: ParamId,
    w3: ParamId,
}

impl AttentiveSelector {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        vocab_size: usize,
        config: &NeuralSelectorConfig,
        rng: &mut R,
    ) -> Result<AttentiveSelector> {
        let (d, h) = (config.embed_dim, config.hidden);
        let embed = store.get_or_init(&config.embedding_name, &[vocab_size, d], Init::UnitUniform, rng)?;
        let fwd = GruDirection::new(store, "selector.gru.fwd", d, h, rng)?;
        let bwd = GruDirection::new(store, "selector.gru.bwd", d, h, rng)?;
        let w1 = store.get_or_init("selector.att.w1", &[2 * h, h], Init::Glorot, rng)?;
        let w2 = store.get_or_init("selector.att.w2", &[2 * h, h], Init::Glorot, rng)?;
        let w3 = store.get_or_init("selector.att.w3", &[h, 1], Init::Glorot, rng)?;
        Ok(AttentiveSelector { embed, hidden: h, fwd, bwd, w1, w2, w3 })
    }

    pub fn embedding(&self) -> ParamId {
        self.embed
    }

    fn encode(&self, g: &mut Graph, store: &ParameterStore, ids: &[usize]) -> Result<Var> {
        let e = g.param(store, self.embed);
        let x = g.gather_rows(e, ids)?;
        let f = self.fwd.run(g, store, x, self.hidden, false)?;
        let b = self.bwd.run(g, store, x, self.hidden, true)?;
        g.concat(&[f, b], 1)
    }
}

impl TrainableSelector for AttentiveSelector {
    fn logits(&self, g: &mut Graph, store: &ParameterStore, query: &[TokenId], doc: &Document) -> Result<Var> {
        let n = doc.num_sentences();
        let spans = nonempty_sentences(doc);
        if spans.is_empty() {
            return Err(Error::invalid(format!("document {} has no tokens", doc.doc_id)));
        }
        let q_ids = query_tokens(query);
        let d_ids: Vec<usize> = doc.tokens().map(|t| t as usize).collect();
        check_vocab(store, self.embed, &q_ids)?;
        check_vocab(store, self.embed, &d_ids)?;

        let hq = self.encode(g, store, &q_ids)?;
        let qhat = g.max(hq, 0)?;
        let hd = self.encode(g, store, &d_ids)?;

        let (w1, w2, w3) = (g.param(store, self.w1), g.param(store, self.w2), g.param(store, self.w3));
        let q_row = g.reshape(qhat, &[1, 2 * self.hidden])?;
        let qproj = g.matmul(q_row, w2)?;
        let qproj = g.reshape(qproj, &[self.hidden])?;
        let m = g.matmul(hd, w1)?;
        let m = g.add_bias(m, qproj)?;
        let m = g.tanh(m);
        let a = g.matmul(m, w3)?;
        let a = g.exp(a);
        let a = g.reshape(a, &[d_ids.len()])?;
        let weighted = g.mul_rows(hd, a)?;

        let mut sims = Vec::with_capacity(spans.len());
        for &(_, off, len) in &spans {
            let rows = g.narrow(weighted, 0, off, len)?;
            let shat = g.max(rows, 0)?;
            let c = g.cosine(shat, qhat)?;
            sims.push(c);
        }
        let w = g.concat(&sims, 0)?;
        let positions: Vec<usize> = spans.iter().map(|s| s.0).collect();
        g.scatter(w, &positions, n, f64::NEG_INFINITY)
    }
}
