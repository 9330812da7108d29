use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use super::{segment_sentences, tokenize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<TokenId>,
}

/// A document as an ordered sequence of sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub total_tokens: usize,
}

impl Document {
    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    /// All tokens in document order.
    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.sentences.iter().flat_map(|s| s.tokens.iter().copied())
    }

    /// Offset of the first token of each sentence in the token stream.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sentences
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.tokens.len();
                o
            })
            .collect()
    }
}

/// Length caps applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusLimits {
    pub max_sentences: usize,
    pub max_tokens: usize,
}

impl Default for CorpusLimits {
    fn default() -> Self {
        CorpusLimits {
            max_sentences: 500,
            max_tokens: 5000,
        }
    }
}

#[derive(Deserialize)]
struct Record {
    doc_id: String,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    documents: Vec<Document>,
    vocab: Vocabulary,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Ingests line-delimited `{"doc_id", "text"}` records.
    pub fn ingest_path(path: &Path, limits: CorpusLimits) -> Result<Corpus> {
        let f = std::fs::File::open(path)?;
        Corpus::ingest_reader(BufReader::new(f), &path.display().to_string(), limits)
    }

    pub fn ingest_reader<R: BufRead>(reader: R, source_name: &str, limits: CorpusLimits) -> Result<Corpus> {
        let mut builder = CorpusBuilder::new(limits);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
            builder
                .add(&rec.doc_id, &rec.text)
                .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        }
        Ok(builder.finish())
    }

    /// Builds a corpus from in-memory `(doc_id, text)` pairs.
    pub fn from_texts<'a, I>(docs: I, limits: CorpusLimits) -> Result<Corpus>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut builder = CorpusBuilder::new(limits);
        for (id, text) in docs {
            builder.add(id, text)?;
        }
        Ok(builder.finish())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.ordinal(doc_id).map(|i| &self.documents[i])
    }

    pub fn document(&self, doc_id: &str) -> Result<&Document> {
        self.get(doc_id)
            .ok_or_else(|| Error::NotFound(format!("document {doc_id:?}")))
    }

    /// Writes the binary corpus index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        bincode::serialize_into(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut c: Corpus = bincode::deserialize_from(r)?;
        c.vocab.rebuild_index();
        c.rebuild_index();
        Ok(c)
    }

    fn rebuild_index(&mut self) {
        self.by_id = self
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
    }
}

struct CorpusBuilder {
    limits: CorpusLimits,
    documents: Vec<Document>,
    vocab: Vocabulary,
    by_id: HashMap<String, usize>,
}

impl CorpusBuilder {
    fn new(limits: CorpusLimits) -> Self {
        CorpusBuilder {
            limits,
            documents: Vec::new(),
            vocab: Vocabulary::new(),
            by_id: HashMap::new(),
        }
    }

    fn add(&mut self, doc_id: &str, text: &str) -> Result<()> {
        if self.by_id.contains_key(doc_id) {
            return Err(Error::invalid(format!("duplicate doc_id {doc_id:?}")));
        }
        let mut sentences = Vec::new();
        let mut total = 0;
        for raw in segment_sentences(text).into_iter().take(self.limits.max_sentences) {
            let toks = tokenize(&raw);
            // the sentence crossing the token cap is dropped whole
            if total + toks.len() > self.limits.max_tokens {
                break;
            }
            total += toks.len();
            let tokens = toks.iter().map(|t| self.vocab.intern(t)).collect();
            sentences.push(Sentence { text: raw, tokens });
        }
        let distinct: BTreeSet<TokenId> = sentences.iter().flat_map(|s: &Sentence| s.tokens.iter().copied()).collect();
        self.vocab.observe_document(distinct, total);
        self.by_id.insert(doc_id.to_string(), self.documents.len());
        self.documents.push(Document {
            doc_id: doc_id.to_string(),
            sentences,
            total_tokens: total,
        });
        Ok(())
    }

    fn finish(self) -> Corpus {
        Corpus {
            documents: self.documents,
            vocab: self.vocab,
            by_id: self.by_id,
        }
    }
}
