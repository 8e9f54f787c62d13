//! Target-side vocabulary with reserved control ids.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenization::{read_lines, write_lines};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;

pub const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<pad>"];

/// Word list where line number equals id; the first four ids are reserved.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from content words (reserved ids are prepended).
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Vocab> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let mut index = HashMap::new();
        for (i, w) in all.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocab { words: all, index })
    }

    /// Collect the vocabulary of a corpus: words ordered by descending
    /// frequency, ties alphabetical.
    pub fn from_corpus<'a>(sentences: impl IntoIterator<Item = &'a str>) -> Result<Vocab> {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s.split_whitespace() {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocab::from_words(words.into_iter().map(|(w, _)| w.to_string()))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let lines = read_lines(path)?;
        if lines.len() < RESERVED.len() {
            return Err(Error::Vocab(format!(
                "{}: vocabulary must start with the four reserved ids",
                path.display()
            )));
        }
        for (i, expected) in RESERVED.iter().enumerate() {
            if lines[i] != *expected {
                return Err(Error::Vocab(format!(
                    "{}: line {} must be {expected:?}, got {:?}",
                    path.display(),
                    i + 1,
                    lines[i]
                )));
            }
        }
        let mut index = HashMap::new();
        for (i, w) in lines.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocab(format!("{}: duplicate word {w:?}", path.display())));
            }
        }
        Ok(Vocab { words: lines, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_lines(path, &self.words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Result<&str> {
        self.words
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("id {id} out of range {}", self.words.len())))
    }

    /// Word ids of a sentence, EOS-terminated.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = sentence.split_whitespace().map(|w| self.id(w)).collect();
        ids.push(EOS);
        ids
    }

    /// Words of an id sequence; stops before EOS, skips control ids.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if id == BOS || id == PAD {
                continue;
            }
            words.push(self.word(id)?);
        }
        Ok(words.join(" "))
    }
}
