//! JSON-lines corpora: parsed sentences for encoder training and
//! author-labelled documents for attribution.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{parse_bracketed, ParseTree, TreebankError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Tree { line: usize, source: TreebankError },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

/// A tokenized sentence with its constituency tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tree: ParseTree,
}

impl Sentence {
    /// Tokens are taken from the tree's leaves.
    pub fn from_tree(tree: ParseTree) -> Self {
        let tokens = tree.words().into_iter().map(str::to_string).collect();
        Sentence { tokens, tree }
    }
}

#[derive(Serialize, Deserialize)]
struct SentenceRecord {
    tokens: Vec<String>,
    tree: String,
}

/// Author-labelled document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub author: String,
    pub sentences: Vec<Vec<String>>,
}

impl Document {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().enumerate().map(|(i, l)| (i + 1, l)))
}

pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Sentence>, CorpusError> {
    let mut out = Vec::new();
    for (line, text) in lines(path.as_ref())? {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&text).map_err(|source| CorpusError::Json { line, source })?;
        let tree = parse_bracketed(&rec.tree).map_err(|source| CorpusError::Tree { line, source })?;
        if rec.tokens.is_empty() {
            return Err(CorpusError::Invalid { line, reason: "empty token list".into() });
        }
        out.push(Sentence { tokens: rec.tokens, tree });
    }
    Ok(out)
}

pub fn write_sentences<W: Write>(mut w: W, sentences: &[Sentence]) -> Result<(), CorpusError> {
    for s in sentences {
        let rec = SentenceRecord {
            tokens: s.tokens.clone(),
            tree: s.tree.to_string(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|source| CorpusError::Json { line: 0, source })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_sentences(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<(), CorpusError> {
    write_sentences(BufWriter::new(File::create(path)?), sentences)
}

pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let mut out = Vec::new();
    for (line, text) in lines(path.as_ref())? {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&text).map_err(|source| CorpusError::Json { line, source })?;
        if doc.sentences.is_empty() || doc.sentences.iter().any(Vec::is_empty) {
            return Err(CorpusError::Invalid { line, reason: "empty document or sentence".into() });
        }
        out.push(doc);
    }
    Ok(out)
}

pub fn save_documents(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d).map_err(|source| CorpusError::Json { line: 0, source })?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
