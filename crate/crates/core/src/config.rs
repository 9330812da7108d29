//! Flat `key=value` configuration: defaults < file < overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::Gain;
use crate::selectors::SelectorKind;

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Ranker on head-truncated whole documents, no selector.
    Truncate,
    /// Ranker trained as in `Truncate`; selection applied at inference only.
    Pipeline,
    /// Selector and ranker trained jointly through the relaxed sampler.
    EndToEnd,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Truncate => "truncate",
            Mode::Pipeline => "pipeline",
            Mode::EndToEnd => "e2e",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Mode::Truncate),
            "pipeline" => Ok(Mode::Pipeline),
            "e2e" => Ok(Mode::EndToEnd),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which per-sentence weight the straight-through estimator scales by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StWeight {
    /// Relaxed k-hot entry.
    KHot,
    /// Softmax of the selector logits.
    Softmax,
}

impl FromStr for StWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "khot" => Ok(StWeight::KHot),
            "softmax" => Ok(StWeight::Softmax),
            _ => Err(Error::Config(format!("unknown st_weight {s:?}"))),
        }
    }
}

impl StWeight {
    pub fn as_str(self) -> &'static str {
        match self {
            StWeight::KHot => "khot",
            StWeight::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // paths
    pub docs: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub valid_queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub train_log: Option<PathBuf>,

    // ingestion and first stage
    pub max_sentences: usize,
    pub max_tokens: usize,
    pub depth: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub tag: String,

    // selection
    pub mode: Mode,
    pub selector: SelectorKind,
    pub k: usize,
    pub head_limit: Option<usize>,
    pub temperature: f64,
    pub st_weight: StWeight,
    pub selector_dim: usize,
    pub selector_hidden: usize,
    pub selector_separate_query_layer: bool,

    // ranker
    pub max_len: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,

    // training
    pub margin: f64,
    pub ranker_lr: f64,
    pub selector_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub warmup: usize,
    pub epochs: usize,
    pub triples_per_epoch: usize,
    pub selector_epochs: usize,
    pub valid_fraction: f64,
    pub seed: u64,

    // evaluation and analysis
    pub cutoffs: Vec<usize>,
    pub gain: Gain,
    pub budget: Option<usize>,

    explicit: BTreeSet<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            docs: None,
            corpus: None,
            queries: None,
            valid_queries: None,
            qrels: None,
            embeddings: None,
            checkpoint: None,
            init_checkpoint: None,
            run: None,
            output: None,
            train_log: None,
            max_sentences: 500,
            max_tokens: 5000,
            depth: 100,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            tag: "sar".into(),
            mode: Mode::EndToEnd,
            selector: SelectorKind::Linear,
            k: 20,
            head_limit: None,
            temperature: 1.0,
            st_weight: StWeight::KHot,
            selector_dim: 64,
            selector_hidden: 32,
            selector_separate_query_layer: false,
            max_len: 128,
            dim: 64,
            heads: 4,
            layers: 2,
            ff_dim: 128,
            dropout: 0.1,
            margin: 0.2,
            ranker_lr: 1e-3,
            selector_lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 8,
            warmup: 100,
            epochs: 3,
            triples_per_epoch: 256,
            selector_epochs: 3,
            valid_fraction: 0.2,
            seed: 42,
            cutoffs: vec![10, 20],
            gain: Gain::Linear,
            budget: None,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// `none` or `0` disables an optional count.
fn parse_optional_count(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "0" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_count(v: Option<usize>) -> String {
    v.map_or("none".into(), |v| v.to_string())
}

impl Config {
    /// Sets one key, rejecting unknown keys and malformed values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "docs" => self.docs = path(value),
            "corpus" => self.corpus = path(value),
            "queries" => self.queries = path(value),
            "valid_queries" => self.valid_queries = path(value),
            "qrels" => self.qrels = path(value),
            "embeddings" => self.embeddings = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "init_checkpoint" => self.init_checkpoint = path(value),
            "run" => self.run = path(value),
            "output" => self.output = path(value),
            "train_log" => self.train_log = path(value),
            "max_sentences" => self.max_sentences = parse(key, value)?,
            "max_tokens" => self.max_tokens = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "bm25_k1" => self.bm25_k1 = parse(key, value)?,
            "bm25_b" => self.bm25_b = parse(key, value)?,
            "tag" => self.tag = value.to_string(),
            "mode" => self.mode = value.parse()?,
            "selector" => self.selector = value.parse()?,
            "k" => self.k = parse(key, value)?,
            "head_limit" => self.head_limit = parse_optional_count(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "st_weight" => self.st_weight = value.parse()?,
            "selector_dim" => self.selector_dim = parse(key, value)?,
            "selector_hidden" => self.selector_hidden = parse(key, value)?,
            "selector_separate_query_layer" => self.selector_separate_query_layer = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "ff_dim" => self.ff_dim = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "ranker_lr" => self.ranker_lr = parse(key, value)?,
            "selector_lr" => self.selector_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "triples_per_epoch" => self.triples_per_epoch = parse(key, value)?,
            "selector_epochs" => self.selector_epochs = parse(key, value)?,
            "valid_fraction" => self.valid_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "cutoffs" => {
                self.cutoffs = value
                    .split(',')
                    .map(|c| parse(key, c.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "gain" => {
                self.gain = match value {
                    "linear" => Gain::Linear,
                    "exponential" => Gain::Exponential,
                    _ => return Err(Error::Config(format!("invalid value {value:?} for gain"))),
                }
            }
            "budget" => self.budget = parse_optional_count(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Whether `key` was set by a file or override rather than defaulted.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Applies `key=value` lines; `#` starts a comment, blank lines are skipped.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, i + 1, "expected key=value"))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Builds a config: defaults, then the optional file, then `key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut c = Config::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.batch_size == 0 || self.depth == 0 {
            return bad("batch_size and depth must be positive");
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return bad("valid_fraction must be in [0, 1)");
        }
        if self.tag.is_empty() || self.tag.contains(char::is_whitespace) {
            return bad("tag must be a non-empty word");
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return bad("cutoffs must be positive");
        }
        Ok(())
    }

    /// Every key with its resolved value, in key order.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("docs", show_path(&self.docs));
        put("corpus", show_path(&self.corpus));
        put("queries", show_path(&self.queries));
        put("valid_queries", show_path(&self.valid_queries));
        put("qrels", show_path(&self.qrels));
        put("embeddings", show_path(&self.embeddings));
        put("checkpoint", show_path(&self.checkpoint));
        put("init_checkpoint", show_path(&self.init_checkpoint));
        put("run", show_path(&self.run));
        put("output", show_path(&self.output));
        put("train_log", show_path(&self.train_log));
        put("max_sentences", self.max_sentences.to_string());
        put("max_tokens", self.max_tokens.to_string());
        put("depth", self.depth.to_string());
        put("bm25_k1", self.bm25_k1.to_string());
        put("bm25_b", self.bm25_b.to_string());
        put("tag", self.tag.clone());
        put("mode", self.mode.to_string());
        put("selector", self.selector.to_string());
        put("k", self.k.to_string());
        put("head_limit", show_count(self.head_limit));
        put("temperature", self.temperature.to_string());
        put("st_weight", self.st_weight.as_str().into());
        put("selector_dim", self.selector_dim.to_string());
        put("selector_hidden", self.selector_hidden.to_string());
        put("selector_separate_query_layer", self.selector_separate_query_layer.to_string());
        put("max_len", self.max_len.to_string());
        put("dim", self.dim.to_string());
        put("heads", self.heads.to_string());
        put("layers", self.layers.to_string());
        put("ff_dim", self.ff_dim.to_string());
        put("dropout", self.dropout.to_string());
        put("margin", self.margin.to_string());
        put("ranker_lr", self.ranker_lr.to_string());
        put("selector_lr", self.selector_lr.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("batch_size", self.batch_size.to_string());
        put("warmup", self.warmup.to_string());
        put("epochs", self.epochs.to_string());
        put("triples_per_epoch", self.triples_per_epoch.to_string());
        put("selector_epochs", self.selector_epochs.to_string());
        put("valid_fraction", self.valid_fraction.to_string());
        put("seed", self.seed.to_string());
        put(
            "cutoffs",
            self.cutoffs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        put(
            "gain",
            match self.gain {
                Gain::Linear => "linear",
                Gain::Exponential => "exponential",
            }
            .into(),
        );
        put("budget", show_count(self.budget));
        m
    }

    /// The resolved config as `key=value` lines.
    pub fn render(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required path `{key}`")))
    }
}
