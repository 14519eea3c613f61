//! Run configuration.
//!
//! Files hold one `key = value` assignment per line; `#` starts a comment.
//! Command-line overrides are applied on top with [`RunConfig::set`]. The
//! resolved configuration, minus output locations, is hashed into the
//! privacy report.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::accountant::{gaussian_sigma_for, DpTarget, PrivacyLedger};
use crate::error::{Error, Result};
use crate::prompts::REPHRASE;

/// Where the filter prompt comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FilterMode {
    Off,
    Builtin(String),
    Custom(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Keywords extracted per document (K).
    pub keywords_per_doc: usize,
    /// Number of clusters (R).
    pub clusters: usize,
    /// Maximum clusters per document (L).
    pub overlap: usize,
    /// Target subset size for threshold selection (k).
    pub retrieve_k: usize,
    /// Tokens per synthetic document (T).
    pub tokens: usize,
    pub clip: f64,
    pub threshold_grid: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub rho_hist: f64,
    pub eps_theta: f64,
    pub rho_mu: f64,
    pub seed: u64,
    /// `mock` or the base URL of a model sidecar.
    pub backend: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Refuse to run against a sidecar with a different tokenizer.
    pub tokenizer_sha256: Option<String>,
    pub filter: FilterMode,
    pub rephrase_template: String,
    /// Subsets smaller than this are skipped; their budget is still charged.
    pub min_subset_size: usize,
    /// Cluster worker threads; 0 means one per core.
    pub workers: usize,
    pub non_private_debug: bool,
    pub corpus: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Mock model word list; defaults to the public vocabulary.
    pub mock_vocab: Option<PathBuf>,
    /// Words that make the mock filter answer YES.
    pub mock_salient: Option<PathBuf>,
    pub mock_embed_seed: u64,
    pub mock_dim: usize,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub debug_dump: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            keywords_per_doc: 10,
            clusters: 500,
            overlap: 5,
            retrieve_k: 80,
            tokens: 70,
            clip: 0.5,
            threshold_grid: 201,
            epsilon: 10.0,
            delta: 1e-3,
            rho_hist: 0.1,
            eps_theta: 0.4,
            rho_mu: 0.009,
            seed: 0,
            backend: "mock".into(),
            timeout_secs: 60,
            max_retries: 3,
            tokenizer_sha256: None,
            filter: FilterMode::Builtin("medical".into()),
            rephrase_template: REPHRASE.into(),
            min_subset_size: 1,
            workers: 0,
            non_private_debug: false,
            corpus: None,
            vocabulary: None,
            stopwords: None,
            mock_vocab: None,
            mock_salient: None,
            mock_embed_seed: 0,
            mock_dim: 64,
            output: None,
            report: None,
            debug_dump: None,
        }
    }
}

const OUTPUT_KEYS: [&str; 3] = ["output", "report", "debug_dump"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Parameter(format!("{key} = {value:?}: {e}")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// Escapes newlines so templates fit on one line.
fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl RunConfig {
    /// Small-corpus preset used by the bundled fixture: fewer keywords,
    /// clusters and tokens, with more of the budget given to retrieval.
    pub fn desk_fixture() -> Self {
        RunConfig {
            keywords_per_doc: 2,
            clusters: 10,
            overlap: 2,
            retrieve_k: 10,
            tokens: 16,
            eps_theta: 1.0,
            rho_mu: 0.05,
            ..RunConfig::default()
        }
    }

    pub fn parse_str(content: &str, origin: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        config.merge_str(content, origin)?;
        Ok(config)
    }

    /// Applies every assignment in `content` on top of the current values.
    pub fn merge_str(&mut self, content: &str, origin: &str) -> Result<()> {
        for (n, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: n + 1,
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: origin.into(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::parse_str(&content, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            config.rebase_paths(dir);
        }
        Ok(config)
    }

    fn rebase_paths(&mut self, dir: &Path) {
        for path in [
            &mut self.corpus,
            &mut self.vocabulary,
            &mut self.stopwords,
            &mut self.mock_vocab,
            &mut self.mock_salient,
            &mut self.output,
            &mut self.report,
            &mut self.debug_dump,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "keywords_per_doc" => self.keywords_per_doc = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "overlap" => self.overlap = parse(key, value)?,
            "retrieve_k" => self.retrieve_k = parse(key, value)?,
            "tokens" => self.tokens = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "threshold_grid" => self.threshold_grid = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "rho_hist" => self.rho_hist = parse(key, value)?,
            "eps_theta" => self.eps_theta = parse(key, value)?,
            "rho_mu" => self.rho_mu = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "backend" => self.backend = value.to_string(),
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "max_retries" => self.max_retries = parse(key, value)?,
            "tokenizer_sha256" => {
                self.tokenizer_sha256 = (!value.is_empty()).then(|| value.to_string())
            }
            "filter" => {
                self.filter = match value {
                    "off" => FilterMode::Off,
                    "medical" | "movies" => FilterMode::Builtin(value.to_string()),
                    other => {
                        return Err(Error::Parameter(format!(
                            "filter must be off, medical or movies, got {other:?}"
                        )))
                    }
                }
            }
            "filter_template" => self.filter = FilterMode::Custom(unescape(value)),
            "rephrase_template" => self.rephrase_template = unescape(value),
            "min_subset_size" => self.min_subset_size = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "non_private_debug" => self.non_private_debug = parse(key, value)?,
            "corpus" => self.corpus = optional_path(value),
            "vocabulary" => self.vocabulary = optional_path(value),
            "stopwords" => self.stopwords = optional_path(value),
            "mock_vocab" => self.mock_vocab = optional_path(value),
            "mock_salient" => self.mock_salient = optional_path(value),
            "mock_embed_seed" => self.mock_embed_seed = parse(key, value)?,
            "mock_dim" => self.mock_dim = parse(key, value)?,
            "output" => self.output = optional_path(value),
            "report" => self.report = optional_path(value),
            "debug_dump" => self.debug_dump = optional_path(value),
            other => return Err(Error::Parameter(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its canonical value, sorted by key.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let (filter, filter_template) = match &self.filter {
            FilterMode::Off => ("off".to_string(), None),
            FilterMode::Builtin(name) => (name.clone(), None),
            FilterMode::Custom(t) => ("custom".to_string(), Some(escape(t))),
        };
        let mut m = BTreeMap::new();
        m.insert("keywords_per_doc", self.keywords_per_doc.to_string());
        m.insert("clusters", self.clusters.to_string());
        m.insert("overlap", self.overlap.to_string());
        m.insert("retrieve_k", self.retrieve_k.to_string());
        m.insert("tokens", self.tokens.to_string());
        m.insert("clip", self.clip.to_string());
        m.insert("threshold_grid", self.threshold_grid.to_string());
        m.insert("epsilon", self.epsilon.to_string());
        m.insert("delta", self.delta.to_string());
        m.insert("rho_hist", self.rho_hist.to_string());
        m.insert("eps_theta", self.eps_theta.to_string());
        m.insert("rho_mu", self.rho_mu.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("backend", self.backend.clone());
        m.insert("timeout_secs", self.timeout_secs.to_string());
        m.insert("max_retries", self.max_retries.to_string());
        m.insert(
            "tokenizer_sha256",
            self.tokenizer_sha256.clone().unwrap_or_default(),
        );
        if let Some(t) = filter_template {
            m.insert("filter_template", t);
        } else {
            m.insert("filter", filter);
        }
        m.insert("rephrase_template", escape(&self.rephrase_template));
        m.insert("min_subset_size", self.min_subset_size.to_string());
        m.insert("workers", self.workers.to_string());
        m.insert("non_private_debug", self.non_private_debug.to_string());
        m.insert("corpus", show_path(&self.corpus));
        m.insert("vocabulary", show_path(&self.vocabulary));
        m.insert("stopwords", show_path(&self.stopwords));
        m.insert("mock_vocab", show_path(&self.mock_vocab));
        m.insert("mock_salient", show_path(&self.mock_salient));
        m.insert("mock_embed_seed", self.mock_embed_seed.to_string());
        m.insert("mock_dim", self.mock_dim.to_string());
        m.insert("output", show_path(&self.output));
        m.insert("report", show_path(&self.report));
        m.insert("debug_dump", show_path(&self.debug_dump));
        m
    }

    /// The config in file form; parsing it back yields an equal config.
    pub fn to_file_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the sorted `key=value` lines, excluding output paths.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if OUTPUT_KEYS.contains(&k) {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("keywords_per_doc", self.keywords_per_doc),
            ("overlap", self.overlap),
            ("tokens", self.tokens),
            ("mock_dim", self.mock_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if self.threshold_grid < 2 {
            return Err(Error::Parameter("threshold_grid must be at least 2".into()));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Parameter(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        DpTarget::new(self.epsilon, self.delta)?;
        if !self.non_private_debug {
            for (name, v) in [("rho_hist", self.rho_hist), ("rho_mu", self.rho_mu)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "{name} must be positive, got {v}"
                    )));
                }
            }
        }
        if !(self.eps_theta >= 0.0 && self.eps_theta.is_finite()) {
            return Err(Error::Parameter(format!(
                "eps_theta must be nonnegative, got {}",
                self.eps_theta
            )));
        }
        if !self.rephrase_template.contains("{document}") {
            return Err(Error::Parameter(
                "rephrase_template has no {document} slot".into(),
            ));
        }
        Ok(())
    }

    pub fn target(&self) -> Result<DpTarget> {
        DpTarget::new(self.epsilon, self.delta)
    }

    /// Clusters a document can actually join: `min(L, R)`.
    pub fn effective_overlap(&self) -> usize {
        self.overlap.min(self.clusters)
    }

    /// Histogram noise scale for sensitivity `sqrt(K)`.
    pub fn sigma_h(&self) -> Result<f64> {
        if self.non_private_debug {
            return Ok(0.0);
        }
        gaussian_sigma_for((self.keywords_per_doc as f64).sqrt(), self.rho_hist)
    }

    /// Centroid noise scale for sensitivity 1.
    pub fn sigma_mu(&self) -> Result<f64> {
        if self.non_private_debug {
            return Ok(0.0);
        }
        gaussian_sigma_for(1.0, self.rho_mu)
    }

    /// Every cost except prediction.
    pub fn base_ledger(&self) -> PrivacyLedger {
        PrivacyLedger {
            rho_hist: self.rho_hist,
            eps_theta: self.eps_theta,
            rho_mu: self.rho_mu,
            rho_pred: 0.0,
            overlap: self.effective_overlap() as u32,
            tokens: self.tokens as u32,
        }
    }
}
