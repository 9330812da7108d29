use std::io::BufRead;
use std::path::Path;

use super::tokenize;
use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const MAX_QUERY_TOKENS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Query {
    /// Tokenizes `text` against a frozen vocabulary; unseen tokens map to `[UNK]`.
    pub fn new(query_id: impl Into<String>, text: impl Into<String>, vocab: &Vocabulary) -> Query {
        let text = text.into();
        let tokens = tokenize(&text)
            .iter()
            .take(MAX_QUERY_TOKENS)
            .map(|t| vocab.id_or_unk(t))
            .collect();
        Query {
            query_id: query_id.into(),
            text,
            tokens,
        }
    }
}

/// Parses `qid<TAB>text` lines.
pub fn parse_queries<R: BufRead>(reader: R, source_name: &str, vocab: &Vocabulary) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source_name, i + 1, "expected qid<TAB>text"))?;
        let qid = qid.trim();
        if !seen.insert(qid.to_string()) {
            return Err(Error::parse(source_name, i + 1, format!("duplicate query id {qid:?}")));
        }
        out.push(Query::new(qid, text, vocab));
    }
    Ok(out)
}

pub fn load_queries(path: &Path, vocab: &Vocabulary) -> Result<Vec<Query>> {
    let f = std::fs::File::open(path)?;
    parse_queries(std::io::BufReader::new(f), &path.display().to_string(), vocab)
}
