use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{unit_normalize, EmbeddingBackend, LlmBackend, LogitVector, ModelInfo, TokenId};
use crate::corpus::normalize;
use crate::error::{Error, Result};
use crate::mechanisms::RandomSource;
use crate::prompts::DOCUMENT_MARKER;

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
const EOS_ID: TokenId = 0;
const UNK_ID: TokenId = 1;

/// Logit boost for a token that occurs in the prompt's document segment.
const PRESENT_BOOST: f64 = 3.0;
const EOS_BOOST: f64 = 1.0;
/// Fraction of the horizon after which EOS is boosted.
const EOS_AFTER: f64 = 0.8;

const YES_NO_MARKER: &str = "Answer only YES or NO";

/// The text following each `Document:` marker, up to the next blank line.
pub fn document_segments(prompt: &str) -> Vec<&str> {
    prompt
        .match_indices(DOCUMENT_MARKER)
        .map(|(at, m)| {
            let rest = &prompt[at + m.len()..];
            let end = rest.find("\n\n").unwrap_or(rest.len());
            &rest[..end]
        })
        .collect()
}

/// A deterministic stand-in for a language model and an embedder.
///
/// * Tokens are whole normalized words from a small fixed vocabulary; id 0
///   is `<eos>`, id 1 is `<unk>`.
/// * Logits are 0 everywhere, +3 for every vocabulary token that occurs in a
///   document segment of the prompt, and +1 on `<eos>` once the prefix holds
///   at least 80% of the horizon.
/// * Generation ignores the temperature. Yes/no questions are answered
///   `YES` when the document mentions a salient token; anything else echoes
///   the document words.
/// * Embeddings sum a seeded Gaussian vector per word and normalize.
#[derive(Clone, Debug)]
pub struct MockModel {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    salient: HashSet<TokenId>,
    horizon: usize,
    embed_seed: u64,
    embed_dim: usize,
    fingerprint: String,
}

impl MockModel {
    /// Builds a model over `words` (normalized, deduplicated) plus the two
    /// special tokens.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = vec![EOS.to_string(), UNK.to_string()];
        let mut index: HashMap<String, TokenId> =
            [(EOS.to_string(), EOS_ID), (UNK.to_string(), UNK_ID)].into();
        for word in words {
            for token in normalize(word.as_ref()) {
                if !index.contains_key(&token) {
                    index.insert(token.clone(), vocab.len() as TokenId);
                    vocab.push(token);
                }
            }
        }
        let fingerprint = hex::encode(Sha256::digest(vocab.join("\n").as_bytes()));
        MockModel {
            vocab,
            index,
            salient: HashSet::new(),
            horizon: 70,
            embed_seed: 0,
            embed_dim: 64,
            fingerprint,
        }
    }

    /// Token budget used by the EOS rule.
    pub fn with_horizon(mut self, tokens: usize) -> Self {
        self.horizon = tokens;
        self
    }

    /// Tokens whose presence makes the model answer `YES` to a yes/no question.
    pub fn with_salient<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.salient = words
            .into_iter()
            .filter_map(|w| self.token_id(w.as_ref()))
            .collect();
        self
    }

    pub fn with_embedding(mut self, seed: u64, dimension: usize) -> Self {
        self.embed_seed = seed;
        self.embed_dim = dimension.max(1);
        self
    }

    pub fn token_id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn segment_tokens(&self, prompt: &str) -> HashSet<TokenId> {
        document_segments(prompt)
            .into_iter()
            .flat_map(normalize)
            .filter_map(|w| self.token_id(&w))
            .filter(|&id| id != EOS_ID && id != UNK_ID)
            .collect()
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = RandomSource::new(self.embed_seed, format!("mock-embed/{word}"));
        (0..self.embed_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect()
    }
}

impl LlmBackend for MockModel {
    fn model_info(&self) -> Result<ModelInfo> {
        Ok(ModelInfo {
            vocab_size: self.vocab.len(),
            eos_id: EOS_ID,
            tokenizer_sha256: self.fingerprint.clone(),
        })
    }

    fn logits(&self, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector> {
        if let Some(bad) = prefix.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(Error::Backend(format!(
                "prefix token {bad} outside mock vocabulary"
            )));
        }
        let mut logits = vec![0.0; self.vocab.len()];
        for id in self.segment_tokens(prompt) {
            logits[id as usize] += PRESENT_BOOST;
        }
        if prefix.len() as f64 >= EOS_AFTER * self.horizon as f64 {
            logits[EOS_ID as usize] += EOS_BOOST;
        }
        Ok(LogitVector::new(logits))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        for piece in text.split_whitespace() {
            if let Some(id) = self.token_id(piece) {
                ids.push(id);
                continue;
            }
            for word in normalize(piece) {
                ids.push(self.token_id(&word).unwrap_or(UNK_ID));
            }
        }
        Ok(ids)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.vocab
                    .get(id as usize)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Backend(format!("token {id} outside mock vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    fn generate(&self, prompt: &str, max_tokens: usize, _temperature: f64) -> Result<String> {
        if prompt.contains(YES_NO_MARKER) {
            let present = self.segment_tokens(prompt);
            let yes = if self.salient.is_empty() {
                !present.is_empty()
            } else {
                present.iter().any(|id| self.salient.contains(id))
            };
            return Ok(if yes { "YES" } else { "NO" }.to_string());
        }
        let words: Vec<String> = document_segments(prompt)
            .into_iter()
            .flat_map(normalize)
            .take(max_tokens)
            .collect();
        Ok(words.join(" "))
    }
}

impl EmbeddingBackend for MockModel {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let words = normalize(text);
        if words.is_empty() {
            return Ok(unit_normalize(self.word_vector("")));
        }
        let mut sum = vec![0.0; self.embed_dim];
        for word in &words {
            for (s, v) in sum.iter_mut().zip(self.word_vector(word)) {
                *s += v;
            }
        }
        Ok(unit_normalize(sum))
    }

    fn dimension(&self) -> usize {
        self.embed_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{render, REPHRASE};

    fn model() -> MockModel {
        MockModel::new(["common", "zebra", "other", "more"]).with_horizon(10)
    }

    #[test]
    fn logit_rule() {
        let m = model();
        let prompt = render(REPHRASE, &[("document", "common zebra")]);
        let l = m.logits(&prompt, &[]).unwrap();
        assert_eq!(l.len(), 6);
        assert_eq!(l[m.token_id("common").unwrap() as usize], 3.0);
        assert_eq!(l[m.token_id("zebra").unwrap() as usize], 3.0);
        assert_eq!(l[m.token_id("other").unwrap() as usize], 0.0);
        assert_eq!(l[0], 0.0);
        assert_eq!(m.logits(&prompt, &[]).unwrap(), l);
    }

    #[test]
    fn empty_document_gives_zero_logits() {
        let m = model();
        let l = m
            .logits(&render(REPHRASE, &[("document", "")]), &[])
            .unwrap();
        assert!(l.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn instruction_words_are_not_boosted() {
        // "other" appears only in the instruction part of the prompt.
        let m = model();
        let l = m.logits("say other\n\nDocument: zebra", &[]).unwrap();
        assert_eq!(l[m.token_id("other").unwrap() as usize], 0.0);
        assert_eq!(l[m.token_id("zebra").unwrap() as usize], 3.0);
    }

    #[test]
    fn eos_boost_after_horizon_fraction() {
        let m = model();
        let prompt = "Document: zebra";
        assert_eq!(m.logits(prompt, &[2; 7]).unwrap()[0], 0.0);
        assert_eq!(m.logits(prompt, &[2; 8]).unwrap()[0], 1.0);
    }

    #[test]
    fn tokenize_round_trips_ids() {
        let m = model();
        let ids = vec![0, 1, 2, 3, 5, 0];
        let text = m.detokenize(&ids).unwrap();
        assert_eq!(m.tokenize(&text).unwrap(), ids);
        assert_eq!(m.tokenize("Zebra, unknownword").unwrap(), vec![3, 1]);
    }

    #[test]
    fn yes_no_and_echo() {
        let m = model().with_salient(["zebra"]);
        let q = |d: &str| format!("Is it? Answer only YES or NO.\n\nDocument: {d}\n\nAnswer:");
        assert_eq!(m.generate(&q("a zebra"), 4, 0.0).unwrap(), "YES");
        assert_eq!(m.generate(&q("common"), 4, 0.0).unwrap(), "NO");
        assert_eq!(
            m.generate("Document: The Zebra, ran far\n\nQuestion", 3, 0.0)
                .unwrap(),
            "the zebra ran"
        );
        assert_eq!(m.generate("no context", 3, 0.0).unwrap(), "");
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let m = model();
        let a = m.embed("common zebra").unwrap();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(a, m.embed("common zebra").unwrap());
        assert_eq!(m.embed("").unwrap().len(), 64);
    }
}
