//! Generated toy medical corpus for desk-scale runs.
//!
//! Every document records a fictional diagnosis, a unique patient name and
//! two of the diagnosis's three symptoms. Patient names never appear in the
//! public vocabulary or the mock model's vocabulary; they serve as canaries.
//! Template words are stopwords and are absent from the mock vocabulary, so
//! the mock only boosts diagnoses and symptoms.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::backend::MockModel;
use crate::config::RunConfig;
use crate::corpus::{Corpus, Document, PublicVocabulary};
use crate::error::{Error, Result};
use crate::eval::{attack_cases, cases_to_jsonl, EvalCase};
use crate::mechanisms::RandomSource;

const DISEASES: [&str; 10] = [
    "flumplenoxis",
    "grindeltosis",
    "quarvexia",
    "zorblatitis",
    "mervonicosis",
    "plixidemia",
    "trundalgia",
    "voskerium",
    "brelnapathy",
    "hoxilemia",
];

const SYMPTOMS: [&str; 30] = [
    "itching",
    "redness",
    "fever",
    "cough",
    "fatigue",
    "nausea",
    "dizziness",
    "swelling",
    "rash",
    "headache",
    "chills",
    "cramps",
    "wheezing",
    "numbness",
    "tremors",
    "insomnia",
    "bruising",
    "sneezing",
    "hiccups",
    "blurriness",
    "stiffness",
    "soreness",
    "tingling",
    "hoarseness",
    "palpitations",
    "sweating",
    "vomiting",
    "bloating",
    "drowsiness",
    "twitching",
];

const FIRST_NAMES: [&str; 20] = [
    "amelia", "bruno", "clara", "dmitri", "elena", "farid", "greta", "hector", "ingrid", "jonas",
    "kaveh", "leona", "milo", "nadia", "oskar", "priya", "quentin", "rosa", "soren", "tamsin",
];

const LAST_NAMES: [&str; 20] = [
    "abernathy",
    "bellweather",
    "castellano",
    "drummond",
    "eskildsen",
    "fairbanks",
    "gallagher",
    "holloway",
    "ivanova",
    "jablonski",
    "kowalczyk",
    "lindqvist",
    "marchetti",
    "novak",
    "oyelaran",
    "pemberton",
    "quintero",
    "rasmussen",
    "szabo",
    "thornquist",
];

/// Words of the document template; public but uninformative.
const GENERIC: [&str; 7] = [
    "diagnosis",
    "for",
    "patient",
    "who",
    "presented",
    "with",
    "and",
];

const FILLERS: [&str; 13] = [
    "the", "a", "of", "is", "was", "in", "on", "to", "it", "as", "by", "at", "be",
];

#[derive(Clone, Debug)]
pub struct DeskFixture {
    pub corpus: Corpus,
    pub diseases: Vec<String>,
    /// `symptoms[i]` belongs to `diseases[i]`.
    pub symptoms: Vec<[String; 3]>,
    /// Full patient name of every document, in corpus order.
    pub patients: Vec<String>,
    pub vocabulary_words: Vec<String>,
    pub stopwords: Vec<String>,
    pub mock_words: Vec<String>,
    pub cases: Vec<EvalCase>,
    pub attack: Vec<EvalCase>,
    pub config: RunConfig,
}

/// Files written by [`DeskFixture::write`].
#[derive(Clone, Debug)]
pub struct FixturePaths {
    pub corpus: PathBuf,
    pub vocabulary: PathBuf,
    pub stopwords: PathBuf,
    pub mock_vocab: PathBuf,
    pub mock_salient: PathBuf,
    pub cases: PathBuf,
    pub attack: PathBuf,
    pub config: PathBuf,
}

fn lines(words: &[String]) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

impl DeskFixture {
    /// `docs` documents spread round-robin over `diseases` diagnoses, plus
    /// `queries` symptom questions. Requires `diseases <= 10` and
    /// `docs <= 400`.
    pub fn generate(docs: usize, diseases: usize, queries: usize, seed: u64) -> Result<Self> {
        if diseases == 0 || diseases > DISEASES.len() {
            return Err(Error::Parameter(format!(
                "diseases must be in 1..=10, got {diseases}"
            )));
        }
        if docs > FIRST_NAMES.len() * LAST_NAMES.len() {
            return Err(Error::Parameter(format!(
                "at most 400 documents, got {docs}"
            )));
        }
        let mut rng = RandomSource::new(seed, "fixture");
        let disease_names: Vec<String> =
            DISEASES[..diseases].iter().map(|s| s.to_string()).collect();
        let symptoms: Vec<[String; 3]> = (0..diseases)
            .map(|i| std::array::from_fn(|j| SYMPTOMS[3 * i + j].to_string()))
            .collect();

        let mut names: Vec<String> = FIRST_NAMES
            .iter()
            .flat_map(|f| LAST_NAMES.iter().map(move |l| format!("{f} {l}")))
            .collect();
        names.shuffle(&mut rng);
        names.truncate(docs);

        let mut documents = Vec::with_capacity(docs);
        for (i, name) in names.iter().enumerate() {
            let d = i % diseases;
            let mut pair: Vec<&String> = symptoms[d].iter().collect();
            pair.shuffle(&mut rng);
            let text = format!(
                "Diagnosis {} for patient {} who presented with {} and {}.",
                disease_names[d],
                title(name),
                pair[0],
                pair[1]
            );
            documents.push(Document::new(format!("doc-{i:03}"), text));
        }

        let cases = (0..queries)
            .map(|i| {
                let d = i % diseases;
                let mut pair: Vec<&String> = symptoms[d].iter().collect();
                pair.shuffle(&mut rng);
                EvalCase {
                    query: format!("Which disease presents with {} and {}?", pair[0], pair[1]),
                    answers: vec![disease_names[d].clone()],
                    canaries: Vec::new(),
                }
            })
            .collect();
        let attack = attack_cases(&disease_names, &names);

        let symptom_words: Vec<String> = symptoms.iter().flatten().cloned().collect();
        let generic: Vec<String> = GENERIC.iter().map(|s| s.to_string()).collect();
        let mut vocabulary_words = generic.clone();
        vocabulary_words.extend(disease_names.iter().cloned());
        vocabulary_words.extend(symptom_words.iter().cloned());

        let mut mock_words = disease_names.clone();
        mock_words.extend(symptom_words);
        mock_words.push("common".into());
        mock_words.push("zebra".into());
        mock_words.extend(FILLERS.iter().map(|s| s.to_string()));
        // Pad to a fixed 62 words (64 tokens with the two specials).
        let mut n = 0;
        while mock_words.len() < 62 {
            mock_words.push(format!("filler{}", alpha(n)));
            n += 1;
        }

        Ok(DeskFixture {
            corpus: Corpus::new(documents)?,
            diseases: disease_names,
            symptoms,
            patients: names,
            vocabulary_words,
            stopwords: generic,
            mock_words,
            cases,
            attack,
            config: RunConfig::desk_fixture(),
        })
    }

    /// The 200-document, 10-diagnosis fixture with 100 queries.
    pub fn desk(seed: u64) -> Result<Self> {
        DeskFixture::generate(200, 10, 100, seed)
    }

    /// A 12-document, 4-diagnosis fixture with matching small settings.
    /// Three-document clusters are dominated by centroid noise, so empty
    /// subsets are not skipped and every cluster emits a line.
    pub fn toy(seed: u64) -> Result<Self> {
        let mut f = DeskFixture::generate(12, 4, 8, seed)?;
        f.config.keywords_per_doc = 2;
        f.config.clusters = 4;
        f.config.overlap = 2;
        f.config.retrieve_k = 3;
        f.config.tokens = 8;
        f.config.min_subset_size = 0;
        Ok(f)
    }

    pub fn vocabulary(&self) -> PublicVocabulary {
        PublicVocabulary::new(&self.vocabulary_words, &self.stopwords)
    }

    /// The mock model matching this fixture and `config`.
    pub fn mock(&self, config: &RunConfig) -> MockModel {
        MockModel::new(&self.mock_words)
            .with_horizon(config.tokens)
            .with_salient(&self.diseases)
            .with_embedding(config.mock_embed_seed, config.mock_dim)
    }

    /// Writes every input file plus a `run.conf` that points at them, with
    /// outputs under `dir/out`.
    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = FixturePaths {
            corpus: dir.join("corpus.jsonl"),
            vocabulary: dir.join("vocab.txt"),
            stopwords: dir.join("stopwords.txt"),
            mock_vocab: dir.join("mock_vocab.txt"),
            mock_salient: dir.join("salient.txt"),
            cases: dir.join("cases.jsonl"),
            attack: dir.join("attack.jsonl"),
            config: dir.join("run.conf"),
        };
        let corpus: String = self
            .corpus
            .docs()
            .iter()
            .map(|d| serde_json::json!({"id": d.id(), "text": d.text()}).to_string() + "\n")
            .collect();
        let mut config = self.config.clone();
        config.corpus = Some("corpus.jsonl".into());
        config.vocabulary = Some("vocab.txt".into());
        config.stopwords = Some("stopwords.txt".into());
        config.mock_vocab = Some("mock_vocab.txt".into());
        config.mock_salient = Some("salient.txt".into());
        config.output = Some("out/synthetic.jsonl".into());
        config.report = Some("out/report.json".into());
        let files = [
            (&paths.corpus, corpus),
            (&paths.vocabulary, lines(&self.vocabulary_words)),
            (&paths.stopwords, lines(&self.stopwords)),
            (&paths.mock_vocab, lines(&self.mock_words)),
            (&paths.mock_salient, lines(&self.diseases)),
            (&paths.cases, cases_to_jsonl(&self.cases)?),
            (&paths.attack, cases_to_jsonl(&self.attack)?),
            (&paths.config, config.to_file_string()),
        ];
        for (path, content) in files {
            std::fs::write(path, content).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}

fn title(name: &str) -> String {
    name.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default()
        })
        .collect::<Vec<String>>()
        .join(" ")
}

/// `0 -> "a"`, `25 -> "z"`, `26 -> "ba"`: alphabetic so normalization keeps it.
fn alpha(mut n: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).unwrap_or_default()
}
