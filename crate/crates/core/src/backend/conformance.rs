//! Interface checks every backend must pass, whether in-process or remote.

use super::{EmbeddingBackend, LlmBackend};
use crate::prompts::{render, REPHRASE};

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Runs the language-model checks and returns a description of every
/// violation found. An empty vector means the backend conforms.
pub fn check_llm(backend: &dyn LlmBackend, samples: &[&str]) -> Vec<String> {
    let mut failures = Vec::new();
    let info = match backend.model_info() {
        Ok(i) => i,
        Err(e) => return vec![format!("model_info failed: {e}")],
    };
    if info.vocab_size == 0 {
        failures.push("vocab_size is zero".into());
    }
    if info.eos_id as usize >= info.vocab_size {
        failures.push(format!(
            "eos_id {} outside vocabulary of {}",
            info.eos_id, info.vocab_size
        ));
    }
    match backend.model_info() {
        Ok(again) if again.tokenizer_sha256 != info.tokenizer_sha256 => {
            failures.push("tokenizer fingerprint changed between calls".into())
        }
        Err(e) => failures.push(format!("second model_info failed: {e}")),
        _ => {}
    }

    for text in samples {
        let prompt = render(REPHRASE, &[("document", text)]);
        let ids = match backend.tokenize(text) {
            Ok(ids) => ids,
            Err(e) => {
                failures.push(format!("tokenize({text:?}) failed: {e}"));
                continue;
            }
        };
        match backend.detokenize(&ids).and_then(|t| backend.tokenize(&t)) {
            Ok(back) if back != ids => {
                failures.push(format!("tokenize(detokenize(ids)) != ids for {text:?}"))
            }
            Err(e) => failures.push(format!("detokenize round trip failed for {text:?}: {e}")),
            _ => {}
        }
        let prefix = &ids[..ids.len().min(3)];
        for p in [&[][..], prefix] {
            match backend.logits(&prompt, p) {
                Ok(l) if l.len() != info.vocab_size => failures.push(format!(
                    "logits length {} != vocab_size {}",
                    l.len(),
                    info.vocab_size
                )),
                Ok(l) if l.iter().any(|x| !x.is_finite()) => {
                    failures.push("non-finite logits".into())
                }
                Err(e) => failures.push(format!("logits failed: {e}")),
                _ => {}
            }
        }
        let a = backend.generate(&prompt, 8, 0.0);
        let b = backend.generate(&prompt, 8, 0.0);
        match (a, b) {
            (Ok(a), Ok(b)) if a != b => failures.push(format!(
                "generation at temperature 0 is not deterministic for {text:?}"
            )),
            (Err(e), _) | (_, Err(e)) => failures.push(format!("generate failed: {e}")),
            _ => {}
        }
    }
    failures
}

/// Runs the embedder checks; see [`check_llm`].
pub fn check_embedder(backend: &dyn EmbeddingBackend, samples: &[&str]) -> Vec<String> {
    let mut failures = Vec::new();
    for text in samples {
        let e = match backend.embed(text) {
            Ok(e) => e,
            Err(err) => {
                failures.push(format!("embed({text:?}) failed: {err}"));
                continue;
            }
        };
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            failures.push(format!("embedding of {text:?} has norm {norm}"));
        }
        if backend.dimension() != 0 && e.len() != backend.dimension() {
            failures.push(format!(
                "embedding length {} != dimension {}",
                e.len(),
                backend.dimension()
            ));
        }
        match backend.embed(text) {
            Ok(again) if again != e => {
                failures.push(format!("embedding of {text:?} not deterministic"))
            }
            Err(err) => failures.push(format!("second embed failed: {err}")),
            _ => {}
        }
    }
    failures
}
