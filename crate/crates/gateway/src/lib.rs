//! Network side of the engine: an OpenAI-compatible client that turns a
//! prompt into a [`GenerationRecord`](hedge_core::GenerationRecord), the
//! p(True) self-check and unconditional scoring passes, an NLI provider
//! client, and a deterministic mock server implementing both contracts.
//!
//! Estimators never touch the network; everything remote enters here.

pub mod client;
pub mod endpoint;
pub mod error;
pub mod mock;
pub mod nli;
pub mod tokens;
pub mod wire;

pub use client::{Gap, Generation, LlmClient, RecordPlan, TruthTokens, P_TRUE_SUFFIX};
pub use endpoint::{scrub, ApiKey, GenerationParams, ModelEndpoint, RetryPolicy, API_KEY_ENV, NLI_URL_ENV};
pub use error::{GatewayError, Result};
pub use nli::NliClient;
