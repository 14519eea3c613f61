//! End-to-end generation: budget, keywords, histogram, clusters, retrieval,
//! private prediction, filtering.
//!
//! The privacy budget is fixed from the configuration alone before any
//! document is read. Cluster work runs on a bounded pool and is merged in
//! cluster order, and every random draw comes from a stream named after its
//! stage and cluster, so a run is reproducible for a fixed seed whatever the
//! pool width.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::accountant::{
    dp_to_zcdp, exponential_rho, solve_temperature, token_rho, zcdp_to_dp, PrivacyLedger,
};
use crate::backend::{EmbeddingBackend, LlmBackend, ModelInfo};
use crate::config::{FilterMode, RunConfig};
use crate::corpus::{Corpus, PublicVocabulary};
use crate::error::{Error, Result};
use crate::filtering::{filter_all, DropReport, FilterPrompt};
use crate::keywords::{
    build_noisy_histogram, extract_keywords, soft_cluster, top_r_keywords, KeywordClusterSet,
};
use crate::mechanisms::RandomSource;
use crate::prediction::{generate_synthetic, member_prompts, ClipConfig, SyntheticDocument};
use crate::retrieval::{retrieve_cluster, RetrievalParams, RetrievedSubset};

/// Static cost breakdown plus, after a run, what happened.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub feasible: bool,
    /// False when noise was disabled for debugging; the numbers below then
    /// describe the configured budget, not the executed run.
    pub private: bool,
    pub seed: u64,
    pub config_hash: String,
    pub target_epsilon: f64,
    pub delta: f64,
    pub target_rho: f64,
    pub keywords_per_doc: usize,
    pub clusters: usize,
    /// Clusters a document can join, `min(L, R)`.
    pub overlap: usize,
    pub tokens: usize,
    pub clip: f64,
    pub sigma_h: f64,
    pub sigma_mu: f64,
    pub eps_theta: f64,
    pub tau: Option<f64>,
    pub rho_hist: f64,
    pub rho_threshold: f64,
    pub rho_mu: f64,
    pub rho_pred: f64,
    pub rho_per_cluster: f64,
    pub rho_total: f64,
    pub epsilon: f64,
    /// Budget left for prediction after the other terms; negative when the
    /// target cannot be met.
    pub residual: f64,
    pub run: Option<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterFailure {
    /// One-based cluster number.
    pub cluster: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub documents: usize,
    pub generated: usize,
    pub kept: usize,
    /// One-based numbers of clusters whose subset was below `min_subset_size`.
    pub skipped: Vec<usize>,
    pub failed: Vec<ClusterFailure>,
    pub filter: String,
    pub drops: DropReport,
}

/// One line of the synthetic database.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SyntheticRecord {
    /// One-based cluster number.
    pub cluster: usize,
    pub keyword: String,
    pub text: String,
    pub kept: bool,
}

pub struct RunOutput {
    pub records: Vec<SyntheticRecord>,
    pub report: PrivacyReport,
    /// Privacy-violating internals, present only in non-private debug runs.
    pub debug: Option<DebugDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DebugDump {
    pub keywords: Vec<String>,
    pub cluster_sizes: Vec<usize>,
    pub subsets: Vec<RetrievedSubset>,
}

/// Dry run: the full cost breakdown from the configuration alone.
pub fn budget(config: &RunConfig) -> Result<PrivacyReport> {
    config.validate()?;
    let target = config.target()?;
    let base = config.base_ledger();
    let overlap = config.effective_overlap();
    let residual = base.residual(target);
    let (feasible, tau, ledger) = if overlap == 0 {
        (residual >= 0.0, None, base)
    } else {
        match solve_temperature(&base, target, config.clip, config.tokens as u32) {
            Ok(tau) => (
                true,
                Some(tau),
                base.with_prediction(config.clip, tau, config.tokens as u32),
            ),
            Err(Error::InfeasibleBudget { .. }) => (false, None, base),
            Err(e) => return Err(e),
        }
    };
    let rho_threshold = exponential_rho(config.eps_theta)?.rho();
    let per_cluster = if overlap == 0 {
        0.0
    } else {
        ledger.per_cluster().rho()
    };
    let rho_total = ledger.total_rho();
    Ok(PrivacyReport {
        feasible,
        private: !config.non_private_debug,
        seed: config.seed,
        config_hash: config.hash(),
        target_epsilon: config.epsilon,
        delta: config.delta,
        target_rho: dp_to_zcdp(target).rho(),
        keywords_per_doc: config.keywords_per_doc,
        clusters: config.clusters,
        overlap,
        tokens: config.tokens,
        clip: config.clip,
        sigma_h: config.sigma_h()?,
        sigma_mu: config.sigma_mu()?,
        eps_theta: config.eps_theta,
        tau,
        rho_hist: ledger.rho_hist,
        rho_threshold,
        rho_mu: ledger.rho_mu,
        rho_pred: ledger.rho_pred,
        rho_per_cluster: per_cluster,
        rho_total,
        epsilon: zcdp_to_dp(ledger.total(), config.delta)?,
        residual,
        run: None,
    })
}

/// The ledger a report describes.
pub fn report_ledger(report: &PrivacyReport) -> PrivacyLedger {
    PrivacyLedger {
        rho_hist: report.rho_hist,
        eps_theta: report.eps_theta,
        rho_mu: report.rho_mu,
        rho_pred: report
            .tau
            .map_or(0.0, |t| report.tokens as f64 * token_rho(report.clip, t)),
        overlap: report.overlap as u32,
        tokens: report.tokens as u32,
    }
}

/// Embeds every document that belongs to at least one cluster; the rest get
/// an empty vector. Returns the embeddings and their dimension.
fn embed_members(
    corpus: &Corpus,
    clusters: &KeywordClusterSet,
    embedder: &dyn EmbeddingBackend,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut needed = vec![false; corpus.len()];
    for c in clusters.clusters() {
        for &i in c {
            needed[i] = true;
        }
    }
    let embeddings: Vec<Vec<f64>> = corpus
        .docs()
        .par_iter()
        .zip(needed.par_iter())
        .map(|(doc, &need)| {
            if need {
                embedder.embed(doc.text())
            } else {
                Ok(Vec::new())
            }
        })
        .collect::<Result<_>>()?;
    let dimension = match embedder.dimension() {
        0 => match embeddings.iter().find(|e| !e.is_empty()) {
            Some(e) => e.len(),
            None => embedder.embed("")?.len(),
        },
        d => d,
    };
    Ok((embeddings, dimension))
}

/// Retrieval for every cluster, in cluster order.
pub fn retrieve_all(
    clusters: &KeywordClusterSet,
    embeddings: &[Vec<f64>],
    dimension: usize,
    params: &RetrievalParams,
    seed: u64,
) -> Result<Vec<RetrievedSubset>> {
    clusters
        .clusters()
        .par_iter()
        .enumerate()
        .map(|(r, members)| retrieve_cluster(r, members, embeddings, dimension, params, seed))
        .collect()
}

fn filter_prompt(mode: &FilterMode) -> Result<Option<FilterPrompt>> {
    match mode {
        FilterMode::Off => Ok(None),
        FilterMode::Builtin(name) => FilterPrompt::builtin(name)
            .map(Some)
            .ok_or_else(|| Error::Parameter(format!("no built-in filter named {name:?}"))),
        FilterMode::Custom(t) => FilterPrompt::new(t.clone(), "custom").map(Some),
    }
}

fn check_fingerprint(llm: &dyn LlmBackend, pinned: &ModelInfo) -> Result<()> {
    let live = llm.model_info()?;
    if live.tokenizer_sha256 != pinned.tokenizer_sha256 {
        return Err(Error::FingerprintMismatch {
            expected: pinned.tokenizer_sha256.clone(),
            actual: live.tokenizer_sha256,
        });
    }
    Ok(())
}

enum ClusterResult {
    Generated(SyntheticDocument),
    Skipped,
    Failed(String),
}

/// Runs both stages over `corpus`.
///
/// An infeasible budget fails before the corpus is touched. A backend error
/// inside a cluster is recorded in the report and the remaining clusters
/// still run; a tokenizer change is fatal.
pub fn run(
    config: &RunConfig,
    corpus: &Corpus,
    vocab: &PublicVocabulary,
    llm: &dyn LlmBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<RunOutput> {
    let mut report = budget(config)?;
    if !report.feasible {
        return Err(Error::InfeasibleBudget {
            shortfall: -report.residual,
        });
    }
    if config.clusters > vocab.len() {
        return Err(Error::Parameter(format!(
            "R = {} exceeds the vocabulary size {}",
            config.clusters,
            vocab.len()
        )));
    }
    let filter = filter_prompt(&config.filter)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    let pinned = llm.model_info()?;
    if let Some(expected) = &config.tokenizer_sha256 {
        if *expected != pinned.tokenizer_sha256 {
            return Err(Error::FingerprintMismatch {
                expected: expected.clone(),
                actual: pinned.tokenizer_sha256,
            });
        }
    }
    pool.install(|| {
        log::info!(
            "extracting {} keywords from {} documents",
            config.keywords_per_doc,
            corpus.len()
        );
        let extractions = corpus
            .docs()
            .par_iter()
            .map(|d| extract_keywords(d, config.keywords_per_doc, llm, vocab))
            .collect::<Result<Vec<_>>>()?;
        let mut hist_rng = RandomSource::new(config.seed, "histogram");
        let hist = build_noisy_histogram(
            &extractions,
            vocab,
            config.keywords_per_doc,
            report.sigma_h,
            &mut hist_rng,
        )?;
        let keywords = top_r_keywords(&hist, vocab, config.clusters)?;
        let clusters = soft_cluster(corpus, &keywords, config.overlap);
        log::info!("{} clusters formed", clusters.len());

        let (embeddings, dimension) = embed_members(corpus, &clusters, embedder)?;
        let params = RetrievalParams {
            k: config.retrieve_k,
            eps_theta: config.eps_theta,
            grid: config.threshold_grid,
            sigma_mu: report.sigma_mu,
        };
        let subsets = retrieve_all(&clusters, &embeddings, dimension, &params, config.seed)?;

        let clip = match report.tau {
            Some(tau) => Some(ClipConfig::new(config.clip, tau, config.tokens)?),
            None => None,
        };
        let results: Vec<ClusterResult> = subsets
            .par_iter()
            .map(|subset| {
                let Some(clip) = clip else {
                    return Ok(ClusterResult::Skipped);
                };
                if subset.members.len() < config.min_subset_size {
                    return Ok(ClusterResult::Skipped);
                }
                check_fingerprint(llm, &pinned)?;
                let texts: Vec<&str> = subset
                    .members
                    .iter()
                    .map(|&i| corpus.docs()[i].text())
                    .collect();
                let prompts = member_prompts(&config.rephrase_template, &texts);
                let mut rng =
                    RandomSource::new(config.seed, format!("generate/{}", subset.cluster));
                match generate_synthetic(subset.cluster, &prompts, llm, &pinned, &clip, &mut rng) {
                    Ok(doc) => Ok(ClusterResult::Generated(doc)),
                    Err(e @ Error::FingerprintMismatch { .. }) => Err(e),
                    Err(e) => {
                        log::warn!("cluster {} failed: {e}", subset.cluster + 1);
                        Ok(ClusterResult::Failed(e.to_string()))
                    }
                }
            })
            .collect::<Result<_>>()?;

        let mut docs = Vec::new();
        let mut skipped = Vec::new();
        let mut failed = Vec::new();
        for (r, result) in results.into_iter().enumerate() {
            match result {
                ClusterResult::Generated(d) => docs.push(d),
                ClusterResult::Skipped => skipped.push(r + 1),
                ClusterResult::Failed(error) => failed.push(ClusterFailure {
                    cluster: r + 1,
                    error,
                }),
            }
        }
        let drops = filter_all(&mut docs, filter.as_ref(), llm);
        let records: Vec<SyntheticRecord> = docs
            .iter()
            .map(|d| SyntheticRecord {
                cluster: d.cluster + 1,
                keyword: keywords[d.cluster].clone(),
                text: d.text.clone(),
                kept: d.kept,
            })
            .collect();
        report.run = Some(RunSummary {
            documents: corpus.len(),
            generated: records.len(),
            kept: records.iter().filter(|r| r.kept).count(),
            skipped,
            failed,
            filter: filter
                .as_ref()
                .map_or("off".into(), |f| f.task().to_string()),
            drops,
        });
        let debug = config.non_private_debug.then(|| DebugDump {
            keywords: keywords.clone(),
            cluster_sizes: clusters.clusters().iter().map(Vec::len).collect(),
            subsets,
        });
        Ok(RunOutput {
            records,
            report,
            debug,
        })
    })
}

pub fn records_to_jsonl(records: &[SyntheticRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Reads a synthetic database written by [`write_outputs`].
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<SyntheticRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn report_json(report: &PrivacyReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

/// Writes the database, the report and, in debug runs, the debug dump.
pub fn write_outputs(
    output: &RunOutput,
    database: &Path,
    report: &Path,
    debug: Option<&Path>,
) -> Result<()> {
    write_file(database, &records_to_jsonl(&output.records)?)?;
    write_file(report, &report_json(&output.report)?)?;
    if let (Some(dump), Some(path)) = (&output.debug, debug) {
        let mut lines = String::from(
            "{\"warning\":\"NON-PRIVATE DEBUG OUTPUT: contains data-dependent values released without noise\"}\n",
        );
        for (r, word) in dump.keywords.iter().enumerate() {
            let line = serde_json::json!({
                "cluster": r + 1,
                "keyword": word,
                "cluster_size": dump.cluster_sizes[r],
                "subset": dump.subsets[r].members,
                "threshold": dump.subsets[r].threshold,
            });
            lines.push_str(&line.to_string());
            lines.push('\n');
        }
        write_file(path, &lines)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_budget_hits_target() {
        let r = budget(&RunConfig::default()).unwrap();
        assert!(r.feasible);
        assert!(((r.epsilon - 10.0) / 10.0).abs() < 1e-6, "{}", r.epsilon);
        assert!((r.clip / r.tau.unwrap() - 0.10573).abs() < 1e-4);
        let expected = r.rho_hist + 5.0 * (r.rho_threshold + r.rho_mu + r.rho_pred);
        assert!((r.rho_total - expected).abs() < 1e-12);
        assert!((r.rho_total - report_ledger(&r).total_rho()).abs() < 1e-12);
    }

    #[test]
    fn overlap_scales_cluster_terms() {
        let one = report_ledger(&budget(&RunConfig::default()).unwrap());
        let one = PrivacyLedger { overlap: 1, ..one };
        let five = PrivacyLedger { overlap: 5, ..one };
        let d1 = one.total_rho() - one.rho_hist;
        let d5 = five.total_rho() - five.rho_hist;
        assert!((d5 - 5.0 * d1).abs() < 1e-12);
    }

    #[test]
    fn infeasible_budget_is_flagged() {
        let c = RunConfig {
            epsilon: 0.5,
            ..Default::default()
        };
        let r = budget(&c).unwrap();
        assert!(!r.feasible);
        assert!(r.residual < 0.0);
        assert!(r.tau.is_none());
    }

    #[test]
    fn no_clusters_spends_only_histogram() {
        let c = RunConfig {
            clusters: 0,
            ..Default::default()
        };
        let r = budget(&c).unwrap();
        assert!(r.feasible);
        assert_eq!(r.overlap, 0);
        assert_eq!(r.rho_total, c.rho_hist);
        assert!(r.tau.is_none());
    }

    #[test]
    fn smaller_delta_costs_more_epsilon() {
        let l = report_ledger(&budget(&RunConfig::default()).unwrap());
        assert!(l.epsilon(1e-6).unwrap() > l.epsilon(1e-3).unwrap());
    }
}
