use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use synrag::backend::{EmbeddingBackend, HttpBackend, HttpConfig, LlmBackend, MockModel};
use synrag::config::RunConfig;
use synrag::corpus::{Corpus, PublicVocabulary};
use synrag::eval::{evaluate, load_cases, RagDatabase};
use synrag::fixture::DeskFixture;
use synrag::pipeline::{budget, load_records, report_json, run, write_outputs};
use synrag::{Error, Result};

#[derive(Parser)]
#[command(
    name = "synrag",
    version,
    about = "Differentially private synthetic RAG databases"
)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `mock` or the base URL of a model sidecar.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Disable all noise and write a debug dump. The output is NOT private.
    #[arg(long, global = true)]
    non_private_debug: bool,
    /// Override any config key, e.g. `--set clusters=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic database and its privacy report.
    Gen {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        debug_dump: Option<PathBuf>,
    },
    /// Print the privacy budget breakdown without reading any data.
    Budget,
    /// Answer evaluation queries from a database and score them.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        /// Synthetic database; omit for query-only answering.
        #[arg(long, conflicts_with = "raw_corpus")]
        database: Option<PathBuf>,
        /// Retrieve from a raw corpus instead (non-private baseline).
        #[arg(long)]
        raw_corpus: Option<PathBuf>,
        /// Documents retrieved per query.
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// Also write per-query outputs here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated toy corpus with matching config and query files.
    Fixture {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = FixtureKind::Desk)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        fixture_seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Desk,
    Toy,
}

enum Backend {
    Mock(MockModel),
    Http(HttpBackend),
}

impl Backend {
    fn llm(&self) -> &dyn LlmBackend {
        match self {
            Backend::Mock(m) => m,
            Backend::Http(h) => h,
        }
    }

    fn embedder(&self) -> &dyn EmbeddingBackend {
        match self {
            Backend::Mock(m) => m,
            Backend::Http(h) => h,
        }
    }
}

fn read_words(path: &Path) -> Result<Vec<String>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn open_backend(config: &RunConfig) -> Result<Backend> {
    if config.backend == "mock" {
        let words = match (&config.mock_vocab, &config.vocabulary) {
            (Some(p), _) | (None, Some(p)) => read_words(p)?,
            (None, None) => {
                return Err(Error::Parameter(
                    "the mock backend needs mock_vocab or vocabulary".into(),
                ))
            }
        };
        let salient = match &config.mock_salient {
            Some(p) => read_words(p)?,
            None => Vec::new(),
        };
        return Ok(Backend::Mock(
            MockModel::new(words)
                .with_horizon(config.tokens)
                .with_salient(salient)
                .with_embedding(config.mock_embed_seed, config.mock_dim),
        ));
    }
    let mut http = HttpConfig::new(config.backend.clone());
    http.timeout = std::time::Duration::from_secs(config.timeout_secs);
    http.max_retries = config.max_retries;
    http.expected_fingerprint = config.tokenizer_sha256.clone();
    Ok(Backend::Http(
        HttpBackend::connect(http)?.with_probed_dimension()?,
    ))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("--set expects KEY=VALUE, got {o:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(b) = &cli.backend {
        config.backend = b.clone();
    }
    if cli.non_private_debug {
        config.non_private_debug = true;
    }
    Ok(config)
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Error::Parameter(format!("no {what} given (flag or config key)")))
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let mut config = resolve_config(&cli)?;
    match cli.command {
        Command::Budget => {
            let report = budget(&config)?;
            print!("{}", report_json(&report)?);
            if !report.feasible {
                eprintln!(
                    "infeasible: the configured terms exceed the target by rho = {:.6}",
                    -report.residual
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Gen {
            corpus,
            vocab,
            stopwords,
            out,
            report,
            debug_dump,
        } => {
            config.corpus = corpus.or(config.corpus);
            config.vocabulary = vocab.or(config.vocabulary);
            config.stopwords = stopwords.or(config.stopwords);
            config.output = out.or(config.output);
            config.report = report.or(config.report);
            config.debug_dump = debug_dump.or(config.debug_dump);
            // Fails on an infeasible budget before any input is opened.
            budget(&config).and_then(|r| {
                if r.feasible {
                    Ok(())
                } else {
                    Err(Error::InfeasibleBudget {
                        shortfall: -r.residual,
                    })
                }
            })?;
            let output = required(&config.output, "output path")?.clone();
            let report_path = match &config.report {
                Some(p) => p.clone(),
                None => output.with_extension("report.json"),
            };
            let vocab = PublicVocabulary::load(
                required(&config.vocabulary, "vocabulary")?,
                config.stopwords.as_deref(),
            )?;
            let corpus = Corpus::load(required(&config.corpus, "corpus")?)?;
            let backend = open_backend(&config)?;
            if config.non_private_debug {
                log::warn!(
                    "non-private debug run: no noise is added and the output is NOT private"
                );
            }
            let result = run(&config, &corpus, &vocab, backend.llm(), backend.embedder())?;
            let debug_path = config
                .debug_dump
                .clone()
                .unwrap_or_else(|| output.with_extension("debug.jsonl"));
            write_outputs(&result, &output, &report_path, Some(&debug_path))?;
            let summary = result.report.run.as_ref();
            log::info!(
                "wrote {} synthetic documents ({} kept) to {}; epsilon = {:.6}",
                result.records.len(),
                summary.map_or(0, |s| s.kept),
                output.display(),
                result.report.epsilon
            );
            if summary.is_some_and(|s| !s.failed.is_empty()) {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Eval {
            cases,
            database,
            raw_corpus,
            k,
            out,
        } => {
            let cases = load_cases(&cases)?;
            let backend = open_backend(&config)?;
            let db = match (database, raw_corpus) {
                (Some(p), _) => RagDatabase::from_records(&load_records(&p)?, backend.embedder())?,
                (None, Some(p)) => {
                    let texts = Corpus::load(&p)?
                        .docs()
                        .iter()
                        .map(|d| d.text().to_string())
                        .collect();
                    RagDatabase::build(texts, backend.embedder())?
                }
                (None, None) => RagDatabase::empty(),
            };
            let (outputs, score) = evaluate(&cases, &db, k, backend.llm(), backend.embedder())?;
            let summary = serde_json::json!({
                "cases": cases.len(),
                "database_size": db.len(),
                "k": k,
                "accuracy": score.accuracy,
                "answerable": score.answerable,
                "leaks": score.leaks,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(path) = out {
                let detail = serde_json::json!({"summary": summary, "outputs": outputs});
                std::fs::write(&path, serde_json::to_string_pretty(&detail)? + "\n")
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Fixture {
            dir,
            kind,
            fixture_seed,
        } => {
            let fixture = match kind {
                FixtureKind::Desk => DeskFixture::desk(fixture_seed)?,
                FixtureKind::Toy => DeskFixture::toy(fixture_seed)?,
            };
            let paths = fixture.write(&dir)?;
            println!("{}", paths.config.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
