use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token ↔ id mapping plus collection statistics.
///
/// Ids are dense from 0; the four special tokens occupy ids 0..4.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<u32>,
    doc_count: usize,
    total_doc_tokens: u64,
    #[serde(skip)]
    ids: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut v = Vocabulary {
            df: vec![0; tokens.len()],
            tokens,
            doc_count: 0,
            total_doc_tokens: 0,
            ids: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.ids = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
    }

    /// Returns the id of `token`, assigning the next free id if unseen.
    pub(crate) fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.df.push(0);
        self.ids.insert(token.to_string(), id);
        id
    }

    /// Records one document's distinct tokens and length.
    pub(crate) fn observe_document(&mut self, distinct: impl IntoIterator<Item = TokenId>, len: usize) {
        for id in distinct {
            self.df[id as usize] += 1;
        }
        self.doc_count += 1;
        self.total_doc_tokens += len as u64;
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or [`UNK`] when it is not in the vocabulary.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    /// Number of documents containing `id`.
    pub fn df(&self, id: TokenId) -> u32 {
        self.df.get(id as usize).copied().unwrap_or(0)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_count == 0 {
            0.0
        } else {
            self.total_doc_tokens as f64 / self.doc_count as f64
        }
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }
}
