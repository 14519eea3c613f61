//! Private prediction: clipped next-token logits of every subset member are
//! summed and sampled at temperature `tau`.
//!
//! Each member contributes a vector in `[-c, c]`, so adding or removing one
//! member moves the sum by at most `c` in sup-norm, and sampling from
//! `softmax(z / tau)` is an exponential mechanism with `epsilon = 2c / tau`.

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{LlmBackend, LogitVector, ModelInfo, TokenId};
use crate::error::{Error, Result};
use crate::mechanisms::{sample_scaled_softmax, RandomSource};
use crate::prompts::{render, REPHRASE};

/// Exp-normalize, center so that max = -min, then rescale into `[-c, c]`.
pub fn clip_logits(logits: &[f64], c: f64) -> LogitVector {
    if logits.is_empty() {
        return LogitVector::new(Vec::new());
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let hi = exp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = exp.iter().copied().fold(f64::INFINITY, f64::min);
    let mid = (hi + lo) / 2.0;
    let centered: Vec<f64> = exp.iter().map(|x| x - mid).collect();
    let norm = centered.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if norm > 0.0 { (c / norm).min(1.0) } else { 1.0 };
    LogitVector::new(centered.into_iter().map(|x| x * scale).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClipConfig {
    pub c: f64,
    pub tau: f64,
    /// Token budget per synthetic document.
    pub tokens: usize,
}

impl ClipConfig {
    pub fn new(c: f64, tau: f64, tokens: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Parameter(format!(
                "clip bound must be positive, got {c}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        if tokens == 0 {
            return Err(Error::Parameter("token budget must be at least 1".into()));
        }
        Ok(ClipConfig { c, tau, tokens })
    }
}

/// The rephrase prompt for every member document.
pub fn member_prompts(template: &str, documents: &[&str]) -> Vec<String> {
    documents
        .iter()
        .map(|d| render(template, &[("document", d)]))
        .collect()
}

/// [`member_prompts`] with the built-in rephrase template.
pub fn rephrase_prompts(documents: &[&str]) -> Vec<String> {
    member_prompts(REPHRASE, documents)
}

/// Sum over members of the clipped logits for `prompt` continued by `prefix`.
pub fn aggregate_step<B: LlmBackend + ?Sized>(
    prompts: &[String],
    prefix: &[TokenId],
    backend: &B,
    vocab_size: usize,
    c: f64,
) -> Result<LogitVector> {
    let clipped: Vec<LogitVector> = prompts
        .par_iter()
        .map(|p| {
            let l = backend.logits(p, prefix)?;
            if l.len() != vocab_size {
                return Err(Error::Backend(format!(
                    "logit vector has {} entries, expected {vocab_size}",
                    l.len()
                )));
            }
            Ok(clip_logits(&l, c))
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0f64; vocab_size];
    for v in &clipped {
        sum.iter_mut().zip(v.iter()).for_each(|(s, x)| *s += x);
    }
    Ok(LogitVector::new(sum))
}

/// Draws a token id from `softmax(z / tau)`.
pub fn sample_token(z: &[f64], tau: f64, rng: &mut RandomSource) -> Result<TokenId> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if z.is_empty() {
        return Err(Error::Invariant(
            "cannot sample from an empty vocabulary".into(),
        ));
    }
    Ok(sample_scaled_softmax(z, 1.0 / tau, rng) as TokenId)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticDocument {
    /// Zero-based cluster rank.
    pub cluster: usize,
    /// Sampled ids, including a final end-of-sequence id when one was drawn.
    pub token_ids: Vec<TokenId>,
    pub text: String,
    pub kept: bool,
}

/// Samples up to `config.tokens` tokens, stopping after end-of-sequence.
///
/// The caller's budget covers the full token count whether or not the
/// sequence stops early.
pub fn generate_synthetic<B: LlmBackend + ?Sized>(
    cluster: usize,
    prompts: &[String],
    backend: &B,
    model: &ModelInfo,
    config: &ClipConfig,
    rng: &mut RandomSource,
) -> Result<SyntheticDocument> {
    let mut ids: Vec<TokenId> = Vec::with_capacity(config.tokens);
    for _ in 0..config.tokens {
        let z = aggregate_step(prompts, &ids, backend, model.vocab_size, config.c)?;
        let t = sample_token(&z, config.tau, rng)?;
        ids.push(t);
        if t == model.eos_id {
            break;
        }
    }
    let body = match ids.last() {
        Some(&t) if t == model.eos_id => &ids[..ids.len() - 1],
        _ => &ids[..],
    };
    let text = backend.detokenize(body)?;
    Ok(SyntheticDocument {
        cluster,
        token_ids: ids,
        text,
        kept: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockModel;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn clip_examples() {
        assert!(clip_logits(&[2.5; 6], 1.0).iter().all(|x| *x == 0.0));
        let two = [0.0, 2f64.ln()];
        assert!(close(&clip_logits(&two, 1.0), &[-0.25, 0.25], 1e-15));
        assert!(close(&clip_logits(&two, 0.1), &[-0.1, 0.1], 1e-15));
    }

    proptest! {
        #[test]
        fn clip_bounds_and_symmetry(
            l in proptest::collection::vec(-30.0f64..30.0, 2..64),
            c in 0.01f64..2.0,
            shift in -50.0f64..50.0,
        ) {
            let out = clip_logits(&l, c);
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = out.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(out.iter().all(|x| x.abs() <= c));
            prop_assert!((max + min).abs() <= 1e-12);
            let shifted: Vec<f64> = l.iter().map(|x| x + shift).collect();
            prop_assert!(close(&clip_logits(&shifted, c), &out, 1e-9));
        }
    }

    fn mock() -> MockModel {
        MockModel::new(["common", "zebra", "other", "words", "here"]).with_horizon(10)
    }

    #[test]
    fn aggregation_is_linear_in_members() {
        let m = mock();
        let vocab = m.model_info().unwrap().vocab_size;
        let one = rephrase_prompts(&["common zebra"]);
        let two = rephrase_prompts(&["common zebra", "common zebra"]);
        let single = aggregate_step(&one, &[], &m, vocab, 0.5).unwrap();
        let direct = clip_logits(&m.logits(&one[0], &[]).unwrap(), 0.5);
        assert_eq!(*single, *direct);
        let double = aggregate_step(&two, &[], &m, vocab, 0.5).unwrap();
        let expected: Vec<f64> = single.iter().map(|x| 2.0 * x).collect();
        assert_eq!(*double, expected[..]);
        let empty = aggregate_step(&[], &[], &m, vocab, 0.5).unwrap();
        assert!(empty.iter().all(|x| *x == 0.0) && empty.len() == vocab);
    }

    #[test]
    fn wrong_vocab_size_is_an_error() {
        let m = mock();
        let p = rephrase_prompts(&["common"]);
        assert!(aggregate_step(&p, &[], &m, 3, 0.5).is_err());
    }

    #[test]
    fn sampling_limits() {
        let mut rng = RandomSource::new(0, "s");
        let mut z = vec![-0.5; 5];
        z[3] = 0.5;
        for _ in 0..100 {
            assert_eq!(sample_token(&z, 1e-3, &mut rng).unwrap(), 3);
        }
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[sample_token(&[0.0; 4], 1.0, &mut rng).unwrap() as usize] += 1;
        }
        assert!(
            counts
                .iter()
                .all(|&n| (n as f64 / 40_000.0 - 0.25).abs() < 0.01),
            "{counts:?}"
        );
        assert!(sample_token(&z, 0.0, &mut rng).is_err());
    }

    #[test]
    fn generation_length_and_determinism() {
        let m = mock();
        let info = m.model_info().unwrap();
        let prompts = rephrase_prompts(&["common zebra other", "common words"]);
        let cfg = ClipConfig::new(0.5, 1.0, 1).unwrap();
        let doc = generate_synthetic(0, &prompts, &m, &info, &cfg, &mut RandomSource::new(5, "g"))
            .unwrap();
        assert_eq!(doc.token_ids.len(), 1);

        let cfg = ClipConfig::new(0.5, 0.2, 10).unwrap();
        let a = generate_synthetic(2, &prompts, &m, &info, &cfg, &mut RandomSource::new(5, "g"))
            .unwrap();
        let b = generate_synthetic(2, &prompts, &m, &info, &cfg, &mut RandomSource::new(5, "g"))
            .unwrap();
        assert_eq!(a, b);
        assert!(a.token_ids.len() <= 10);
        assert!(!a.text.contains("<eos>"));
        assert_eq!(
            a.text.split_whitespace().count(),
            a.token_ids.iter().filter(|&&t| t != info.eos_id).count()
        );
    }

    #[test]
    fn eos_stops_generation() {
        let m = MockModel::new(["common"]).with_horizon(0);
        let info = m.model_info().unwrap();
        let prompts = rephrase_prompts(&["nothing matches"]);
        let cfg = ClipConfig::new(0.5, 1e-3, 50).unwrap();
        let doc = generate_synthetic(0, &prompts, &m, &info, &cfg, &mut RandomSource::new(1, "e"))
            .unwrap();
        assert_eq!(doc.token_ids, [info.eos_id]);
        assert_eq!(doc.text, "");
    }

    #[test]
    fn config_validation() {
        assert!(ClipConfig::new(0.0, 1.0, 1).is_err());
        assert!(ClipConfig::new(0.5, -1.0, 1).is_err());
        assert!(ClipConfig::new(0.5, 1.0, 0).is_err());
    }
}
