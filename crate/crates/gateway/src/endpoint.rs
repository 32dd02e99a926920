use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

pub const API_KEY_ENV: &str = "POLYGRAPH_API_KEY";
pub const NLI_URL_ENV: &str = "POLYGRAPH_NLI_URL";

/// Secret bearer token. `Debug` and `Display` never show it.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Option<Self> {
        let key = key.into();
        (!key.trim().is_empty()).then_some(Self(key))
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV).ok().and_then(Self::new)
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

impl fmt::Display for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

/// Replaces every occurrence of the key in `text`.
pub fn scrub(text: &str, key: Option<&ApiKey>) -> String {
    match key {
        Some(k) => text.replace(k.expose(), "***"),
        None => text.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct ModelEndpoint {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub base_url: String,
    pub api_key: Option<ApiKey>,
    pub model_name: String,
    pub timeout: Duration,
    pub max_parallel: usize,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: ApiKey::from_env(),
            model_name: model_name.into(),
            timeout: Duration::from_secs(60),
            max_parallel: 4,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub max_new_tokens: u32,
    /// Sampling temperature for the K samples; the greedy pass uses 0.
    pub temperature: f64,
    pub top_p: f64,
    pub num_samples: usize,
    pub logprobs_k: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 20,
            temperature: 1.0,
            top_p: 1.0,
            num_samples: 5,
            logprobs_k: 20,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GatewayError::Precondition(m));
        if !(self.temperature >= 0.0) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.logprobs_k < 1 {
            return bad("logprobs_k must be >= 1".into());
        }
        if self.max_new_tokens < 1 {
            return bad("max_new_tokens must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        retry_after
            .unwrap_or_else(|| self.base_delay * 2u32.saturating_pow(attempt))
            .min(self.max_delay)
    }
}
