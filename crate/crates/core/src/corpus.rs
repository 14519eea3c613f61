//! Private corpus and public vocabulary ingestion.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Lowercased alphabetic word tokens of `text`.
///
/// Splits on whitespace, drops every non-alphabetic character inside a
/// token, and discards tokens that end up empty.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.chars()
                .flat_map(char::to_lowercase)
                .filter(|c| c.is_alphabetic())
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// One private record.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    id: String,
    text: String,
    tokens: Vec<String>,
    token_set: HashSet<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = normalize(&text);
        let token_set = tokens.iter().cloned().collect();
        Document {
            id: id.into(),
            text,
            tokens,
            token_set,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Exact membership of a normalized word among the document's tokens.
    pub fn contains(&self, word: &str) -> bool {
        self.token_set.contains(word)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    text: String,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &docs {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate document id {:?}",
                    doc.id
                )));
            }
        }
        Ok(Corpus { docs })
    }

    /// Parses JSONL, one `{"id": ..., "text": ...}` object per line. Blank
    /// lines are skipped. `origin` names the source in error messages.
    pub fn from_jsonl(content: &str, origin: &str) -> Result<Self> {
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDocument = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if !seen.insert(raw.id.clone()) {
                return Err(Error::Validation(format!(
                    "{origin}:{}: duplicate document id {:?}",
                    i + 1,
                    raw.id
                )));
            }
            docs.push(Document::new(raw.id, raw.text));
        }
        Ok(Corpus { docs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_jsonl(&content, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, index: usize) -> Option<&Document> {
        self.docs.get(index)
    }

    /// A copy without the document at `index`.
    pub fn without(&self, index: usize) -> Corpus {
        let mut docs = self.docs.clone();
        docs.remove(index);
        Corpus { docs }
    }
}

/// The public keyword space: a fixed word list minus stopwords, in file order.
#[derive(Clone, Debug, Default)]
pub struct PublicVocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl PublicVocabulary {
    /// Entries are normalized; entries that are not a single alphabetic word,
    /// stopwords, and repeats are dropped.
    pub fn new<I, S, J, T>(words: I, stopwords: J) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
        J: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let stop: HashSet<String> = stopwords
            .into_iter()
            .filter_map(|w| single_word(w.as_ref()))
            .collect();
        let mut vocab = PublicVocabulary::default();
        for word in words.into_iter().filter_map(|w| single_word(w.as_ref())) {
            if stop.contains(&word) || vocab.index.contains_key(&word) {
                continue;
            }
            vocab.index.insert(word.clone(), vocab.words.len());
            vocab.words.push(word);
        }
        vocab
    }

    /// Loads a newline-delimited word list and an optional stopword list.
    pub fn load(words: impl AsRef<Path>, stopwords: Option<&Path>) -> Result<Self> {
        let words_path = words.as_ref();
        let content = fs::read_to_string(words_path).map_err(|e| Error::io(words_path, e))?;
        let stop = match stopwords {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Ok(PublicVocabulary::new(content.lines(), stop.lines()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

fn single_word(entry: &str) -> Option<String> {
    let mut tokens = normalize(entry);
    (tokens.len() == 1).then(|| tokens.remove(0))
}
