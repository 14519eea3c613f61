//! Keyword histogram and soft clustering.
//!
//! Each document contributes at most `K` distinct keywords from the public
//! vocabulary, so the keyword histogram has L2 sensitivity `sqrt(K)` and is
//! released with Gaussian noise. The top `R` noisy keywords anchor one
//! cluster each. Assignment runs from the least frequent keyword `w_R` up to
//! `w_1`, and a document stops joining clusters once it is in `L` of them.

use std::collections::HashMap;

use crate::backend::LlmBackend;
use crate::corpus::{normalize, Corpus, Document, PublicVocabulary};
use crate::error::{Error, Result};
use crate::mechanisms::{add_gaussian, RandomSource};
use crate::prompts::keyword_prompt;

/// The keywords one document contributes to the histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeywordExtraction {
    pub doc_id: String,
    pub keywords: Vec<String>,
    /// Requested keyword count.
    pub k: usize,
}

impl KeywordExtraction {
    /// The document had fewer than `k` distinct in-vocabulary tokens.
    pub fn is_short(&self) -> bool {
        self.keywords.len() < self.k
    }
}

/// Asks the backend for `k` keywords and repairs the answer.
pub fn extract_keywords(
    doc: &Document,
    k: usize,
    backend: &dyn LlmBackend,
    vocab: &PublicVocabulary,
) -> Result<KeywordExtraction> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let response = backend.generate(&keyword_prompt(k, doc.text()), 4 * k + 16, 0.0)?;
    Ok(KeywordExtraction {
        doc_id: doc.id().to_string(),
        keywords: repair_keywords(&normalize(&response), doc, vocab, k),
        k,
    })
}

/// Forces a proposal into at most `k` distinct vocabulary words that occur in
/// the document.
///
/// Proposed words outside the vocabulary or the document are dropped and
/// repeats removed. A shortfall is filled with the document's most frequent
/// in-vocabulary tokens (earlier first occurrence wins ties).
pub fn repair_keywords(
    proposal: &[String],
    doc: &Document,
    vocab: &PublicVocabulary,
    k: usize,
) -> Vec<String> {
    let mut chosen: Vec<String> = Vec::with_capacity(k);
    for word in proposal {
        if chosen.len() == k {
            return chosen;
        }
        if vocab.contains(word) && doc.contains(word) && !chosen.contains(word) {
            chosen.push(word.clone());
        }
    }
    for word in in_vocab_by_frequency(doc, vocab) {
        if chosen.len() == k {
            break;
        }
        if !chosen.contains(&word) {
            chosen.push(word);
        }
    }
    chosen
}

fn in_vocab_by_frequency(doc: &Document, vocab: &PublicVocabulary) -> Vec<String> {
    let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, token) in doc.tokens().iter().enumerate() {
        if vocab.contains(token) {
            stats.entry(token).or_insert((0, pos)).0 += 1;
        }
    }
    let mut ranked: Vec<(&str, (usize, usize))> = stats.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.into_iter().map(|(w, _)| w.to_string()).collect()
}

/// Keyword counts over the full vocabulary, released with Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyHistogram {
    counts: Vec<f64>,
}

impl NoisyHistogram {
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }
}

/// Exact keyword counts, one entry per vocabulary word.
pub fn keyword_counts(
    extractions: &[KeywordExtraction],
    vocab: &PublicVocabulary,
    k: usize,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; vocab.len()];
    for ex in extractions {
        if ex.keywords.len() > k {
            return Err(Error::Invariant(format!(
                "document {} contributes {} keywords, more than K = {k}",
                ex.doc_id,
                ex.keywords.len()
            )));
        }
        for word in &ex.keywords {
            let i = vocab.index_of(word).ok_or_else(|| {
                Error::Invariant(format!(
                    "keyword {word:?} of {} is not in the vocabulary",
                    ex.doc_id
                ))
            })?;
            counts[i] += 1.0;
        }
    }
    Ok(counts)
}

/// Sums the extractions and adds `N(0, sigma_h^2)` to every coordinate.
/// The release costs `gaussian_rho(sqrt(K), sigma_h)`.
pub fn build_noisy_histogram(
    extractions: &[KeywordExtraction],
    vocab: &PublicVocabulary,
    k: usize,
    sigma_h: f64,
    rng: &mut RandomSource,
) -> Result<NoisyHistogram> {
    let exact = keyword_counts(extractions, vocab, k)?;
    Ok(NoisyHistogram {
        counts: add_gaussian(&exact, sigma_h, rng)?,
    })
}

/// The `r` words with the largest noisy counts, most frequent first. Ties go
/// to the smaller vocabulary index.
pub fn top_r_keywords(
    hist: &NoisyHistogram,
    vocab: &PublicVocabulary,
    r: usize,
) -> Result<Vec<String>> {
    if hist.counts.len() != vocab.len() {
        return Err(Error::Invariant(format!(
            "histogram has {} bins for a vocabulary of {}",
            hist.counts.len(),
            vocab.len()
        )));
    }
    if r > vocab.len() {
        return Err(Error::Parameter(format!(
            "R = {r} exceeds the vocabulary size {}",
            vocab.len()
        )));
    }
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| hist.counts[b].total_cmp(&hist.counts[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(r)
        .map(|i| vocab.words()[i].clone())
        .collect())
}

/// How many noisy counts reach `3 * sigma_h`: a data-free (post-processing)
/// suggestion for `R` that avoids keywords whose true count is likely zero.
pub fn suggested_r(hist: &NoisyHistogram, sigma_h: f64) -> usize {
    hist.counts.iter().filter(|&&c| c >= 3.0 * sigma_h).count()
}

/// `R` keyword clusters over a corpus. Clusters hold corpus indices in
/// corpus order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeywordClusterSet {
    keywords: Vec<String>,
    clusters: Vec<Vec<usize>>,
}

impl KeywordClusterSet {
    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Number of clusters containing the document at `doc`.
    pub fn membership_count(&self, doc: usize) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.binary_search(&doc).is_ok())
            .count()
    }
}

/// Builds the clusters for `keywords` (most frequent first), visiting them
/// from last to first and capping every document at `overlap` memberships.
pub fn soft_cluster(corpus: &Corpus, keywords: &[String], overlap: usize) -> KeywordClusterSet {
    let mut memberships = vec![0usize; corpus.len()];
    let mut clusters = vec![Vec::new(); keywords.len()];
    for (r, word) in keywords.iter().enumerate().rev() {
        for (i, doc) in corpus.docs().iter().enumerate() {
            if memberships[i] < overlap && doc.contains(word) {
                memberships[i] += 1;
                clusters[r].push(i);
            }
        }
    }
    KeywordClusterSet {
        keywords: keywords.to_vec(),
        clusters,
    }
}
