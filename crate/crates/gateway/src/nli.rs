use std::sync::Arc;
use std::time::Duration;

use futures::future::try_join_all;
use hedge_core::{Matrix, PairwiseScores};
use tokio::sync::Semaphore;

use crate::client::{http_client, post_json};
use crate::endpoint::{ApiKey, RetryPolicy, NLI_URL_ENV};
use crate::error::{GatewayError, Result};
use crate::wire::{NliRequest, NliResponse};

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct NliClient {
    http: reqwest::Client,
    url: String,
    api_key: Option<ApiKey>,
    batch_size: usize,
    limiter: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl NliClient {
    pub fn new(url: impl Into<String>) -> Result<Self> {
        Ok(Self {
            http: http_client(Duration::from_secs(60))?,
            url: url.into(),
            api_key: None,
            batch_size: 64,
            limiter: Arc::new(Semaphore::new(4)),
            retry: RetryPolicy::default(),
        })
    }

    pub fn from_env() -> Option<Result<Self>> {
        std::env::var(NLI_URL_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .map(Self::new)
    }

    pub fn with_api_key(mut self, key: Option<ApiKey>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Entailment and contradiction probabilities for every ordered pair of
    /// distinct texts. The diagonal is fixed at entail 1, contra 0.
    pub async fn pairwise(&self, texts: &[&str]) -> Result<PairwiseScores> {
        let k = texts.len();
        if k < 2 {
            return Err(GatewayError::Precondition(format!("pairwise NLI needs at least 2 texts, got {k}")));
        }
        let index: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let batches = index.chunks(self.batch_size).map(|chunk| {
            let req = NliRequest {
                pairs: chunk
                    .iter()
                    .map(|&(i, j)| [texts[i].to_string(), texts[j].to_string()])
                    .collect(),
            };
            async move {
                let resp: NliResponse =
                    post_json(&self.http, &self.limiter, &self.retry, &self.url, self.api_key.as_ref(), &req).await?;
                if resp.scores.len() != chunk.len() {
                    return Err(GatewayError::Protocol(format!(
                        "NLI returned {} scores for {} pairs",
                        resp.scores.len(),
                        chunk.len()
                    )));
                }
                Ok(resp.scores)
            }
        });
        let scores: Vec<_> = try_join_all(batches).await?.into_iter().flatten().collect();

        let mut entail = Matrix::identity(k);
        let mut contra = Matrix::zeros(k, k);
        for (&(i, j), s) in index.iter().zip(&scores) {
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(s.entail) || !in_unit(s.contra) || !in_unit(s.neutral) {
                return Err(GatewayError::Validation(format!("NLI pair ({i}, {j}): score outside [0, 1]")));
            }
            if s.entail + s.contra > 1.0 + SUM_TOLERANCE {
                return Err(GatewayError::Validation(format!(
                    "NLI pair ({i}, {j}): entail {} + contra {} exceeds 1",
                    s.entail, s.contra
                )));
            }
            entail[(i, j)] = s.entail;
            contra[(i, j)] = s.contra;
        }
        PairwiseScores::new(entail, contra).map_err(|e| GatewayError::Protocol(e.to_string()))
    }
}
