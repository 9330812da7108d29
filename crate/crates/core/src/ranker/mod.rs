//! Relevance estimation over `[CLS] query [SEP] summary [SEP]`.

mod model;

pub use model::{Coupling, Ranker, RankerConfig, SurrogateOffsets};

use crate::error::{Error, Result};
use crate::selectors::Summary;
use crate::text::{Document, TokenId, CLS, SEP};

/// Token sequence fed to the ranker, with each summary token's sentence of origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerInput {
    pub tokens: Vec<TokenId>,
    /// `None` for query and special tokens.
    pub origin: Vec<Option<usize>>,
    pub query_len: usize,
}

impl RankerInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of summary tokens that survived truncation.
    pub fn summary_len(&self) -> usize {
        self.tokens.len() - self.query_len - 3
    }
}

/// Brackets query and summary with `[CLS]`/`[SEP]`, dropping summary tokens
/// from the tail until the sequence fits `max_len`.
pub fn assemble_input(query: &[TokenId], summary: &Summary, doc: &Document, max_len: usize) -> Result<RankerInput> {
    if query.len() + 3 > max_len {
        return Err(Error::invalid(format!(
            "query of {} tokens does not fit max_len {max_len}",
            query.len()
        )));
    }
    let budget = max_len - 3 - query.len();
    let mut tokens = Vec::with_capacity(max_len);
    let mut origin = Vec::with_capacity(max_len);
    tokens.push(CLS);
    tokens.extend_from_slice(query);
    tokens.push(SEP);
    origin.resize(tokens.len(), None);
    'outer: for &i in &summary.indices {
        let sentence = doc
            .sentences
            .get(i)
            .ok_or(Error::IndexOutOfRange { index: i, len: doc.num_sentences() })?;
        for &t in &sentence.tokens {
            if tokens.len() - query.len() - 2 == budget {
                break 'outer;
            }
            tokens.push(t);
            origin.push(Some(i));
        }
    }
    tokens.push(SEP);
    origin.push(None);
    Ok(RankerInput {
        tokens,
        origin,
        query_len: query.len(),
    })
}
