//! Differentially private synthetic RAG databases.
//!
//! The engine turns a private document corpus into a set of synthetic
//! documents that can back a retrieval-augmented generation system for an
//! unlimited number of queries at a fixed privacy cost. Generation runs in
//! two stages:
//!
//! 1. **Soft clustering.** Every document contributes `K` keywords to a
//!    Gaussian-noised histogram; the top `R` keywords each anchor a cluster,
//!    and each document joins at most `L` clusters (assigned from the least
//!    frequent keyword upward). Inside each cluster a noisy embedding sum and
//!    an exponential-mechanism threshold select a retrieved subset.
//! 2. **Private prediction.** Each subset is rephrased token by token: every
//!    member's next-token logits are clipped into `[-c, c]`, summed, and
//!    sampled at temperature `τ`. An optional self-filter then drops texts the
//!    model judges useless for the task.
//!
//! All privacy costs are accounted in zero-concentrated DP ([`accountant`])
//! and fixed before any private data is read.

pub mod accountant;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod fixture;
pub mod keywords;
pub mod mechanisms;
pub mod pipeline;
pub mod prediction;
pub mod prompts;
pub mod retrieval;

pub use error::{Error, Result};
