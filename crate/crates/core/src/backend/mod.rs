//! Model access: next-token logits, tokenization, plain generation and
//! sentence embeddings.
//!
//! Two implementations ship with the engine: [`MockModel`], a deterministic
//! in-process stand-in, and [`HttpBackend`], a client for the JSON wire
//! protocol served by a model sidecar (see [`wire`]).

pub mod conformance;
mod http;
mod mock;
pub mod wire;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{document_segments, MockModel};

pub type TokenId = u32;

/// Static facts about a language model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub vocab_size: usize,
    pub eos_id: TokenId,
    pub tokenizer_sha256: String,
}

/// A full next-token logit vector, one entry per model token.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Self {
        LogitVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        LogitVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LogitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for LogitVector {
    fn from(values: Vec<f64>) -> Self {
        LogitVector(values)
    }
}

/// A causal language model that exposes its full next-token logits.
pub trait LlmBackend: Send + Sync {
    fn model_info(&self) -> Result<ModelInfo>;

    /// Logits for the token following `prompt` continued by `prefix`.
    fn logits(&self, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String>;

    /// Ordinary (non-private) generation. Used for keyword extraction,
    /// self-filtering and RAG answering.
    fn generate(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String>;
}

/// A sentence embedder returning unit-norm vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    fn dimension(&self) -> usize;
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn model_info(&self) -> Result<ModelInfo> {
        (**self).model_info()
    }

    fn logits(&self, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector> {
        (**self).logits(prompt, prefix)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).tokenize(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        (**self).detokenize(ids)
    }

    fn generate(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String> {
        (**self).generate(prompt, max_tokens, temperature)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for &T {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed(text)
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }
}

/// Scales `v` to unit L2 norm. The zero vector is returned unchanged.
pub fn unit_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
