//! Token ↔ id maps with reserved padding and unknown ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Dense id assignment: `0` is padding, `1` is unknown, real tokens follow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens.into_iter().skip(2).collect()
    }
}

impl Vocab {
    /// Builds a vocabulary from real tokens in id order (reserved ids are
    /// prepended). Duplicates keep their first position.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: vec![PAD.to_string(), UNK.to_string()],
            index: HashMap::new(),
        };
        vocab.index.insert(PAD.to_string(), PAD_ID);
        vocab.index.insert(UNK.to_string(), UNK_ID);
        for t in tokens {
            let t = t.into();
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// Keeps the `cap` most frequent tokens with count ≥ `min_count`.
    /// Frequency ties are broken lexicographically.
    pub fn from_counts(counts: &HashMap<String, usize>, cap: Option<usize>, min_count: usize) -> Self {
        let mut ranked: Vec<(&String, usize)> = counts.iter().filter(|(_, &c)| c >= min_count).map(|(t, &c)| (t, c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(cap) = cap {
            ranked.truncate(cap);
        }
        Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.clone()))
    }

    /// Total size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the reserved ids are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// All tokens in id order, reserved ones included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One real token per line; line `k` (0-based) has id `k + 2`.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens[2..] {
            writeln!(w, "{t}")?;
        }
        w.flush()
    }

    pub fn read<R: BufRead>(r: R) -> std::io::Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if !line.is_empty() {
                tokens.push(line.to_string());
            }
        }
        Ok(Vocab::from_tokens(tokens))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
