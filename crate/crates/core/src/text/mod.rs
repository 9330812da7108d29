//! Tokenization, sentence segmentation, corpus ingestion and static embeddings.

mod corpus;
mod embeddings;
mod query;
mod vocab;

pub use corpus::{Corpus, CorpusLimits, Document, Sentence};
pub use embeddings::EmbeddingTable;
pub use query::{load_queries, parse_queries, Query, MAX_QUERY_TOKENS};
pub use vocab::{TokenId, Vocabulary, CLS, PAD, SEP, UNK};

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits after `.`, `!` or `?` when followed by whitespace or end of text.
///
/// The terminator stays with its sentence; segments that are only
/// whitespace are dropped and the rest are trimmed.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                push_segment(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_segment(&mut out, &text[start..]);
    out
}

fn push_segment(out: &mut Vec<String>, seg: &str) {
    let trimmed = seg.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
}
