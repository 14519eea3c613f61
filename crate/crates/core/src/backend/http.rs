use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, *};
use super::{unit_normalize, EmbeddingBackend, LlmBackend, LogitVector, ModelInfo, TokenId};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct HttpConfig {
    /// Base URL such as `http://127.0.0.1:8000`; endpoint paths are appended.
    pub base_url: String,
    pub timeout: Duration,
    /// Retries after the first attempt for transient failures.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on every further retry.
    pub backoff: Duration,
    /// When set, the session refuses to start against any other tokenizer.
    pub expected_fingerprint: Option<String>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(200),
            expected_fingerprint: None,
        }
    }
}

/// Client for the sidecar wire protocol.
///
/// The tokenizer fingerprint is pinned when the session opens; a logit
/// vector of the wrong length or a fingerprint change reported by
/// [`HttpBackend::verify_session`] is a hard error.
pub struct HttpBackend {
    agent: ureq::Agent,
    config: HttpConfig,
    info: ModelInfo,
    dimension: usize,
    retries: AtomicU64,
}

enum Attempt<T> {
    Done(T),
    Transient(String),
}

impl HttpBackend {
    pub fn connect(config: HttpConfig) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = HttpBackend {
            agent,
            config,
            info: ModelInfo {
                vocab_size: 0,
                eos_id: 0,
                tokenizer_sha256: String::new(),
            },
            dimension: 0,
            retries: AtomicU64::new(0),
        };
        let info = backend.fetch_model_info()?;
        if let Some(expected) = &backend.config.expected_fingerprint {
            if *expected != info.tokenizer_sha256 {
                return Err(Error::FingerprintMismatch {
                    expected: expected.clone(),
                    actual: info.tokenizer_sha256,
                });
            }
        }
        backend.info = info;
        Ok(backend)
    }

    /// Model facts captured when the session opened.
    pub fn pinned_info(&self) -> &ModelInfo {
        &self.info
    }

    /// Re-reads the server's model info and fails if the tokenizer changed.
    pub fn verify_session(&self) -> Result<()> {
        let live = self.fetch_model_info()?;
        if live.tokenizer_sha256 != self.info.tokenizer_sha256 {
            return Err(Error::FingerprintMismatch {
                expected: self.info.tokenizer_sha256.clone(),
                actual: live.tokenizer_sha256,
            });
        }
        Ok(())
    }

    /// Number of retries performed so far across all requests.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// Probes the embedding dimension once so `dimension()` can answer
    /// without a request.
    pub fn with_probed_dimension(mut self) -> Result<Self> {
        self.dimension = self.embed("dimension probe")?.len();
        Ok(self)
    }

    fn fetch_model_info(&self) -> Result<ModelInfo> {
        let r: ModelInfoResponse = self.request(wire::MODEL_INFO, None::<&()>)?;
        Ok(ModelInfo {
            vocab_size: r.vocab_size,
            eos_id: r.eos_id,
            tokenizer_sha256: r.tokenizer_sha256,
        })
    }

    fn request<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&B>,
    ) -> Result<R> {
        let url = format!("{}{}", self.config.base_url, path);
        let payload = body.map(serde_json::to_string).transpose()?;
        let mut attempt = 0u32;
        loop {
            match self.attempt(&url, payload.as_deref())? {
                Attempt::Done(text) => {
                    return serde_json::from_str(&text).map_err(|e| {
                        Error::Backend(format!("malformed response from {path}: {e}"))
                    })
                }
                Attempt::Transient(why) if attempt < self.config.max_retries => {
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!("{path}: {why}; retry {attempt}/{}", self.config.max_retries);
                    let delay = self
                        .config
                        .backoff
                        .saturating_mul(1 << (attempt - 1).min(16));
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                Attempt::Transient(why) => {
                    return Err(Error::Backend(format!(
                        "{path}: giving up after {} retries: {why}",
                        self.config.max_retries
                    )))
                }
            }
        }
    }

    fn attempt(&self, url: &str, payload: Option<&str>) -> Result<Attempt<String>> {
        let response = match payload {
            Some(body) => self
                .agent
                .post(url)
                .header("Content-Type", "application/json")
                .send(body),
            None => self.agent.get(url).call(),
        };
        let mut response = match response {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        match status {
            200..=299 => Ok(Attempt::Done(text)),
            429 | 500..=599 => Ok(Attempt::Transient(format!("HTTP {status}"))),
            _ => Err(Error::Backend(format!("{url}: HTTP {status}: {text}"))),
        }
    }
}

impl LlmBackend for HttpBackend {
    fn model_info(&self) -> Result<ModelInfo> {
        self.fetch_model_info()
    }

    fn logits(&self, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector> {
        let req = LogitsRequest {
            prompt: prompt.to_string(),
            prefix_ids: prefix.to_vec(),
        };
        let r: LogitsResponse = self.request(wire::LOGITS, Some(&req))?;
        if r.logits.len() != self.info.vocab_size {
            return Err(Error::Backend(format!(
                "logit vector has {} entries, model reports vocab_size {}",
                r.logits.len(),
                self.info.vocab_size
            )));
        }
        if r.logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Backend("non-finite logit in response".into()));
        }
        Ok(LogitVector::new(r.logits))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let r: TokenizeResponse = self.request(
            wire::TOKENIZE,
            Some(&TextRequest {
                text: text.to_string(),
            }),
        )?;
        Ok(r.ids)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let r: TextResponse = self.request(
            wire::DETOKENIZE,
            Some(&DetokenizeRequest { ids: ids.to_vec() }),
        )?;
        Ok(r.text)
    }

    fn generate(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String> {
        let req = GenerateRequest {
            prompt: prompt.to_string(),
            max_tokens,
            temperature,
        };
        let r: TextResponse = self.request(wire::GENERATE, Some(&req))?;
        Ok(r.text)
    }
}

impl EmbeddingBackend for HttpBackend {
    /// The server normalizes already; normalizing again keeps the unit-norm
    /// invariant even against a misbehaving server.
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let r: EmbedResponse = self.request(
            wire::EMBED,
            Some(&TextRequest {
                text: text.to_string(),
            }),
        )?;
        if r.embedding.is_empty() || r.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::Backend("empty or non-finite embedding".into()));
        }
        Ok(unit_normalize(r.embedding))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
