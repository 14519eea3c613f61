use std::process::Command;

use synrag::backend::{EmbeddingBackend, LlmBackend, LogitVector, MockModel, ModelInfo, TokenId};
use synrag::corpus::{Corpus, Document};
use synrag::fixture::DeskFixture;
use synrag::keywords::soft_cluster;
use synrag::pipeline::{budget, records_to_jsonl, report_json, retrieve_all, run, write_outputs};
use synrag::retrieval::RetrievalParams;
use synrag::{Error, Result};

#[test]
fn toy_run_emits_one_line_per_cluster() {
    let f = DeskFixture::toy(0).unwrap();
    let mock = f.mock(&f.config);
    let out = run(&f.config, &f.corpus, &f.vocabulary(), &mock, &mock).unwrap();
    assert_eq!(out.records.len(), 4);
    let clusters: Vec<usize> = out.records.iter().map(|r| r.cluster).collect();
    assert_eq!(clusters, [1, 2, 3, 4]);
    assert!(((out.report.epsilon - 10.0) / 10.0).abs() < 1e-6);
    for r in &out.records {
        assert!(r.text.split_whitespace().count() <= f.config.tokens);
    }
    let jsonl = records_to_jsonl(&out.records).unwrap();
    let first = jsonl.lines().next().unwrap();
    let at = |k: &str| first.find(&format!("\"{k}\":")).unwrap();
    assert!(at("cluster") < at("keyword") && at("keyword") < at("text"));
    let parsed: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(parsed.as_object().unwrap().len(), 4);
}

#[test]
fn no_clusters_means_no_output() {
    let f = DeskFixture::toy(0).unwrap();
    let mut config = f.config.clone();
    config.clusters = 0;
    let mock = f.mock(&config);
    let out = run(&config, &f.corpus, &f.vocabulary(), &mock, &mock).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.report.rho_total, config.rho_hist);
    assert_eq!(out.report.rho_pred, 0.0);
    assert_eq!(out.report.rho_per_cluster, 0.0);
}

#[test]
fn same_seed_same_bytes_any_pool_width() {
    let f = DeskFixture::desk(0).unwrap();
    let mock = f.mock(&f.config);
    let vocab = f.vocabulary();
    let mut outputs = Vec::new();
    for workers in [1, 4, 0] {
        let mut config = f.config.clone();
        config.workers = workers;
        let out = run(&config, &f.corpus, &vocab, &mock, &mock).unwrap();
        outputs.push((records_to_jsonl(&out.records).unwrap(), out.report.epsilon));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let mut other = f.config.clone();
    other.seed = 1;
    let out = run(&other, &f.corpus, &vocab, &mock, &mock).unwrap();
    assert_ne!(records_to_jsonl(&out.records).unwrap(), outputs[0].0);
}

#[test]
fn removing_a_document_changes_at_most_l_subsets() {
    let f = DeskFixture::desk(1).unwrap();
    let mock = f.mock(&f.config);
    let keywords: Vec<String> = f
        .diseases
        .iter()
        .cloned()
        .chain(f.symptoms[0].iter().cloned())
        .collect();
    let params = RetrievalParams {
        k: f.config.retrieve_k,
        eps_theta: f.config.eps_theta,
        grid: f.config.threshold_grid,
        sigma_mu: 0.0,
    };
    let embed = |c: &Corpus| -> Vec<Vec<f64>> {
        c.docs()
            .iter()
            .map(|d| mock.embed(d.text()).unwrap())
            .collect()
    };
    let clusters = soft_cluster(&f.corpus, &keywords, f.config.overlap);
    let full = retrieve_all(&clusters, &embed(&f.corpus), 64, &params, 9).unwrap();
    for removed in (0..f.corpus.len()).step_by(7) {
        let smaller = f.corpus.without(removed);
        let c2 = soft_cluster(&smaller, &keywords, f.config.overlap);
        let sub = retrieve_all(&c2, &embed(&smaller), 64, &params, 9).unwrap();
        // Map indices of the smaller corpus back to the full corpus.
        let back = |i: usize| if i >= removed { i + 1 } else { i };
        let changed = full
            .iter()
            .zip(&sub)
            .filter(|(a, b)| a.members != b.members.iter().map(|&i| back(i)).collect::<Vec<_>>())
            .count();
        assert!(
            changed <= f.config.overlap,
            "removing {removed} changed {changed} subsets"
        );
    }
}

/// Fails every logits call whose prompt mentions `poison`.
struct Flaky {
    inner: MockModel,
    poison: &'static str,
}

impl LlmBackend for Flaky {
    fn model_info(&self) -> Result<ModelInfo> {
        self.inner.model_info()
    }
    fn logits(&self, prompt: &str, prefix: &[TokenId]) -> Result<LogitVector> {
        if prompt.contains(self.poison) {
            return Err(Error::Backend("simulated outage".into()));
        }
        self.inner.logits(prompt, prefix)
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        self.inner.detokenize(ids)
    }
    fn generate(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String> {
        self.inner.generate(prompt, max_tokens, temperature)
    }
}

#[test]
fn failed_clusters_are_reported_and_still_charged() {
    let f = DeskFixture::desk(0).unwrap();
    let mut config = f.config.clone();
    config.min_subset_size = 0;
    let mock = f.mock(&config);
    let flaky = Flaky {
        inner: f.mock(&config),
        poison: "quarvexia",
    };
    let out = run(&config, &f.corpus, &f.vocabulary(), &flaky, &mock).unwrap();
    let summary = out.report.run.as_ref().unwrap();
    assert!(!summary.failed.is_empty());
    assert_eq!(summary.failed.len() + out.records.len(), config.clusters);
    assert!(summary
        .failed
        .iter()
        .all(|c| c.error.contains("simulated outage")));
    assert!(((out.report.epsilon - 10.0) / 10.0).abs() < 1e-6);
    assert_eq!(out.report, {
        let mut r = budget(&config).unwrap();
        r.run = out.report.run.clone();
        r
    });
}

#[test]
fn infeasible_budget_stops_before_reading_data() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("does-not-exist.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_synrag"))
        .args(["--set", "epsilon=0.5", "gen", "--out"])
        .arg(dir.path().join("o.jsonl"))
        .arg("--corpus")
        .arg(&missing)
        .arg("--vocab")
        .arg(&missing)
        .output()
        .unwrap();
    assert!(!status.status.success());
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("infeasible"), "{stderr}");
    assert!(!dir.path().join("o.jsonl").exists());
}

#[test]
fn debug_run_is_marked_and_dumps_internals() {
    let f = DeskFixture::toy(0).unwrap();
    let mut config = f.config.clone();
    config.non_private_debug = true;
    let mock = f.mock(&config);
    let out = run(&config, &f.corpus, &f.vocabulary(), &mock, &mock).unwrap();
    assert!(!out.report.private);
    assert_eq!(out.report.sigma_h, 0.0);
    let dump = out.debug.as_ref().unwrap();
    assert_eq!(dump.keywords.len(), 4);

    let dir = tempfile::tempdir().unwrap();
    let (db, rep, dbg) = (
        dir.path().join("s.jsonl"),
        dir.path().join("r.json"),
        dir.path().join("d.jsonl"),
    );
    write_outputs(&out, &db, &rep, Some(&dbg)).unwrap();
    let text = std::fs::read_to_string(&dbg).unwrap();
    assert!(text.lines().next().unwrap().contains("NON-PRIVATE"));
    assert_eq!(text.lines().count(), 5);

    let private = run(&f.config, &f.corpus, &f.vocabulary(), &mock, &mock).unwrap();
    assert!(private.debug.is_none());
    assert!(report_json(&private.report)
        .unwrap()
        .contains("\"private\": true"));
}

#[test]
fn documents_without_keywords_join_no_cluster() {
    let mut docs: Vec<Document> = DeskFixture::toy(0).unwrap().corpus.docs().to_vec();
    docs.push(Document::new("plain", "nothing of interest here"));
    let corpus = Corpus::new(docs).unwrap();
    let f = DeskFixture::toy(0).unwrap();
    let clusters = soft_cluster(&corpus, &f.diseases, 2);
    assert_eq!(clusters.membership_count(corpus.len() - 1), 0);
    let mock = f.mock(&f.config);
    run(&f.config, &corpus, &f.vocabulary(), &mock, &mock).unwrap();
}
