use std::io::BufRead;
use std::path::Path;

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Static word vectors indexed by token id; absent tokens map to zeros.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    /// Reads word2vec/GloVe text format. A leading `count dim` header line is skipped.
    pub fn parse<R: BufRead>(reader: R, source_name: &str, vocab: &Vocabulary) -> Result<EmbeddingTable> {
        let mut dim: Option<usize> = None;
        let mut vectors = vec![None; vocab.len()];
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            let d = *dim.get_or_insert(values.len());
            if values.len() != d || d == 0 {
                return Err(Error::parse(
                    source_name,
                    i + 1,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            let Some(id) = vocab.id(token) else { continue };
            let v = values
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
            vectors[id as usize] = Some(v);
        }
        let dim = dim.ok_or_else(|| Error::parse(source_name, 0, "no vectors found"))?;
        Ok(EmbeddingTable {
            dim,
            vectors,
            zero: vec![0.0; dim],
        })
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
        let f = std::fs::File::open(path)?;
        EmbeddingTable::parse(std::io::BufReader::new(f), &path.display().to_string(), vocab)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, id: TokenId) -> &[f64] {
        self.vectors
            .get(id as usize)
            .and_then(|v| v.as_deref())
            .unwrap_or(&self.zero)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        matches!(self.vectors.get(id as usize), Some(Some(_)))
    }

    /// Mean vector of `tokens` (out-of-vocabulary tokens count as zeros).
    pub fn average(&self, tokens: &[TokenId]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return acc;
        }
        for &t in tokens {
            acc.iter_mut().zip(self.vector(t)).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= tokens.len() as f64);
        acc
    }
}
