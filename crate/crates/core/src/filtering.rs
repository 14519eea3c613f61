//! Post-processing filter: the model answers a YES/NO question about each
//! synthetic text and only YES answers are kept. It reads released output
//! only, so it costs no privacy budget.

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::LlmBackend;
use crate::error::{Error, Result};
use crate::prediction::SyntheticDocument;
use crate::prompts::{render, FILTER_MEDICAL, FILTER_MOVIES};

const ANSWER_TOKENS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterPrompt {
    template: String,
    task: String,
}

impl FilterPrompt {
    /// `template` must contain a `{document}` slot.
    pub fn new(template: impl Into<String>, task: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{document}") {
            return Err(Error::Parameter(
                "filter template has no {document} slot".into(),
            ));
        }
        Ok(FilterPrompt {
            template,
            task: task.into(),
        })
    }

    pub fn medical() -> Self {
        FilterPrompt {
            template: FILTER_MEDICAL.into(),
            task: "medical".into(),
        }
    }

    pub fn movies() -> Self {
        FilterPrompt {
            template: FILTER_MOVIES.into(),
            task: "movies".into(),
        }
    }

    /// A built-in prompt by task name.
    pub fn builtin(task: &str) -> Option<Self> {
        match task {
            "medical" => Some(Self::medical()),
            "movies" => Some(Self::movies()),
            _ => None,
        }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn render(&self, text: &str) -> String {
        render(&self.template, &[("document", text)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

/// Reads the leading word of a response, ignoring case and punctuation.
pub fn parse_verdict(response: &str) -> Verdict {
    let word: String = response
        .trim_start()
        .chars()
        .skip_while(|c| !c.is_alphanumeric())
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Unparseable,
    }
}

pub fn self_filter<B: LlmBackend + ?Sized>(
    text: &str,
    prompt: &FilterPrompt,
    backend: &B,
) -> Result<Verdict> {
    let response = backend.generate(&prompt.render(text), ANSWER_TOKENS, 0.0)?;
    Ok(parse_verdict(&response))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    pub kept: usize,
    pub rejected: usize,
    pub unparseable: usize,
    /// Documents dropped because the filter request itself failed.
    pub backend_errors: usize,
}

/// Sets `kept` on every document. With no prompt every document is kept.
pub fn filter_all<B: LlmBackend + ?Sized>(
    docs: &mut [SyntheticDocument],
    prompt: Option<&FilterPrompt>,
    backend: &B,
) -> DropReport {
    let Some(prompt) = prompt else {
        docs.iter_mut().for_each(|d| d.kept = true);
        return DropReport {
            kept: docs.len(),
            ..DropReport::default()
        };
    };
    let verdicts: Vec<Result<Verdict>> = docs
        .par_iter()
        .map(|d| self_filter(&d.text, prompt, backend))
        .collect();
    let mut report = DropReport::default();
    for (doc, verdict) in docs.iter_mut().zip(verdicts) {
        doc.kept = matches!(verdict, Ok(Verdict::Yes));
        match verdict {
            Ok(Verdict::Yes) => report.kept += 1,
            Ok(Verdict::No) => report.rejected += 1,
            Ok(Verdict::Unparseable) => report.unparseable += 1,
            Err(e) => {
                log::warn!("filter request for cluster {} failed: {e}", doc.cluster + 1);
                report.backend_errors += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{LogitVector, ModelInfo, TokenId};

    /// Answers every generation with a fixed string.
    struct Scripted(&'static str);

    impl LlmBackend for Scripted {
        fn model_info(&self) -> Result<ModelInfo> {
            Ok(ModelInfo {
                vocab_size: 1,
                eos_id: 0,
                tokenizer_sha256: String::new(),
            })
        }
        fn logits(&self, _: &str, _: &[TokenId]) -> Result<LogitVector> {
            Ok(LogitVector::zeros(1))
        }
        fn tokenize(&self, _: &str) -> Result<Vec<TokenId>> {
            Ok(Vec::new())
        }
        fn detokenize(&self, _: &[TokenId]) -> Result<String> {
            Ok(String::new())
        }
        fn generate(&self, _: &str, _: usize, _: f64) -> Result<String> {
            if self.0 == "!fail" {
                return Err(Error::Backend("down".into()));
            }
            Ok(self.0.to_string())
        }
    }

    fn docs(n: usize) -> Vec<SyntheticDocument> {
        (0..n)
            .map(|i| SyntheticDocument {
                cluster: i,
                token_ids: vec![],
                text: format!("text {i}"),
                kept: false,
            })
            .collect()
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("YES"), Verdict::Yes);
        assert_eq!(parse_verdict("  yes, it does"), Verdict::Yes);
        assert_eq!(parse_verdict("no."), Verdict::No);
        assert_eq!(parse_verdict("No"), Verdict::No);
        assert_eq!(parse_verdict("maybe"), Verdict::Unparseable);
        assert_eq!(parse_verdict("nope"), Verdict::Unparseable);
        assert_eq!(parse_verdict(""), Verdict::Unparseable);
    }

    #[test]
    fn scripted_answers() {
        let p = FilterPrompt::medical();
        for (answer, kept, report) in [
            (
                "YES",
                true,
                DropReport {
                    kept: 2,
                    ..Default::default()
                },
            ),
            (
                "no.",
                false,
                DropReport {
                    rejected: 2,
                    ..Default::default()
                },
            ),
            (
                "maybe",
                false,
                DropReport {
                    unparseable: 2,
                    ..Default::default()
                },
            ),
            (
                "!fail",
                false,
                DropReport {
                    backend_errors: 2,
                    ..Default::default()
                },
            ),
        ] {
            let mut d = docs(2);
            let before: Vec<String> = d.iter().map(|x| x.text.clone()).collect();
            assert_eq!(filter_all(&mut d, Some(&p), &Scripted(answer)), report);
            assert!(d.iter().all(|x| x.kept == kept));
            assert_eq!(d.iter().map(|x| x.text.clone()).collect::<Vec<_>>(), before);
        }
    }

    #[test]
    fn disabled_keeps_everything() {
        let mut d = docs(3);
        let r = filter_all(&mut d, None, &Scripted("NO"));
        assert_eq!(r.kept, 3);
        assert!(d.iter().all(|x| x.kept));
    }

    #[test]
    fn templates() {
        assert!(FilterPrompt::new("no slot", "x").is_err());
        let p = FilterPrompt::new("Q: {document}", "custom").unwrap();
        assert_eq!(p.render("abc"), "Q: abc");
        assert_eq!(p.task(), "custom");
        assert!(FilterPrompt::movies().render("T").contains("Document: T"));
        assert!(FilterPrompt::builtin("off").is_none());
    }
}
