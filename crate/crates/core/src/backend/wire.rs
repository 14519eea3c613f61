//! JSON wire protocol between the engine and a model sidecar.
//!
//! | method | path                | request                                   | response                                          |
//! |--------|---------------------|-------------------------------------------|---------------------------------------------------|
//! | POST   | `/v1/logits`        | `{"prompt", "prefix_ids"}`                | `{"logits": [f64], "model"}`                      |
//! | POST   | `/v1/embed`         | `{"text"}`                                | `{"embedding": [f64]}`                            |
//! | POST   | `/v1/tokenize`      | `{"text"}`                                | `{"ids": [int]}`                                  |
//! | POST   | `/v1/detokenize`    | `{"ids"}`                                 | `{"text"}`                                        |
//! | POST   | `/v1/generate`      | `{"prompt", "max_tokens", "temperature"}` | `{"text"}`                                        |
//! | GET    | `/v1/model_info`    | -                                         | `{"vocab_size", "eos_id", "tokenizer_sha256"}`    |
//!
//! Logits travel as complete float64 arrays; clipping needs the exact
//! maximum and minimum of the full vector, so nothing is truncated.

use serde::{Deserialize, Serialize};

use super::TokenId;

pub const LOGITS: &str = "/v1/logits";
pub const EMBED: &str = "/v1/embed";
pub const TOKENIZE: &str = "/v1/tokenize";
pub const DETOKENIZE: &str = "/v1/detokenize";
pub const GENERATE: &str = "/v1/generate";
pub const MODEL_INFO: &str = "/v1/model_info";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub prompt: String,
    pub prefix_ids: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logits: Vec<f64>,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub ids: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetokenizeRequest {
    pub ids: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfoResponse {
    pub vocab_size: usize,
    pub eos_id: TokenId,
    pub tokenizer_sha256: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn logits_round_trip_bit_exact(bits in proptest::collection::vec(any::<u64>(), 0..64)) {
            let logits: Vec<f64> = bits
                .into_iter()
                .map(f64::from_bits)
                .filter(|x| x.is_finite())
                .collect();
            let msg = LogitsResponse { logits: logits.clone(), model: "m".into() };
            let back: LogitsResponse = serde_json::from_str(&serde_json::to_string(&msg).unwrap()).unwrap();
            prop_assert_eq!(
                back.logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn field_names_match_protocol() {
        let req = LogitsRequest {
            prompt: "p".into(),
            prefix_ids: vec![1, 2],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"prompt":"p","prefix_ids":[1,2]}"#
        );
        let req = GenerateRequest {
            prompt: "p".into(),
            max_tokens: 3,
            temperature: 0.0,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"prompt":"p","max_tokens":3,"temperature":0.0}"#
        );
    }
}
