use std::sync::Arc;
use std::time::Duration;

use futures::future::try_join_all;
use hedge_core::records::validate_record;
use hedge_core::registry::Input;
use hedge_core::{GenerationRecord, SampledOutput, TokenStep};
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use crate::endpoint::{scrub, ApiKey, GenerationParams, ModelEndpoint, RetryPolicy};
use crate::error::{GatewayError, Result};
use crate::tokens::token_id;
use crate::wire::{
    ChatMessage, ChatRequest, ChatResponse, CompletionRequest, CompletionResponse, TokenLogprob,
};

/// Appended to the question and candidate answer for the self-check prompt.
pub const P_TRUE_SUFFIX: &str = "Is the proposed answer true? Answer True or False:";

/// Prompt prefix for the unconditional scoring pass. The completions
/// endpoint rejects empty prompts, so a begin-of-text marker stands in.
pub const DEFAULT_BOS: &str = "<|endoftext|>";

/// Token spellings counted towards each side of the p(True) answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthTokens {
    pub truthy: Vec<String>,
    pub falsy: Vec<String>,
}

impl Default for TruthTokens {
    fn default() -> Self {
        let v = |w: &str| {
            let lower = w.to_lowercase();
            let upper = w.to_uppercase();
            [w, lower.as_str(), upper.as_str()]
                .iter()
                .flat_map(|s| [s.to_string(), format!(" {s}")])
                .collect()
        };
        Self {
            truthy: v("True"),
            falsy: v("False"),
        }
    }
}

/// Which optional passes to run in addition to greedy + samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordPlan {
    pub p_true: bool,
    pub unconditional: bool,
}

impl Default for RecordPlan {
    fn default() -> Self {
        Self {
            p_true: true,
            unconditional: true,
        }
    }
}

/// A record input the endpoint could not supply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gap {
    pub input: Input,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub record: GenerationRecord,
    pub gaps: Vec<Gap>,
}

impl Generation {
    pub fn missing(&self, input: Input) -> bool {
        self.gaps.iter().any(|g| g.input == input)
    }
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::Client,
    endpoint: ModelEndpoint,
    limiter: Arc<Semaphore>,
    retry: RetryPolicy,
    truth: TruthTokens,
    bos: String,
}

pub(crate) fn http_client(timeout: Duration) -> Result<reqwest::Client> {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GatewayError::Precondition(format!("cannot build HTTP client: {e}")))
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

/// One JSON POST with bounded concurrency and retry on transport errors and
/// 5xx. 4xx is returned immediately.
pub(crate) async fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    http: &reqwest::Client,
    limiter: &Semaphore,
    retry: &RetryPolicy,
    url: &str,
    key: Option<&ApiKey>,
    body: &Req,
) -> Result<Resp> {
    let mut attempt = 0;
    loop {
        let result = {
            let _permit = limiter
                .acquire()
                .await
                .map_err(|_| GatewayError::Precondition("client shut down".into()))?;
            send_once(http, url, key, body).await
        };
        match result {
            Err(e) if e.retryable() && attempt + 1 < retry.attempts => {
                let wait = retry.delay(attempt, e.retry_after());
                tracing::warn!(attempt, ?wait, error = %e, "retrying upstream request");
                tokio::time::sleep(wait).await;
                attempt += 1;
            }
            other => return other,
        }
    }
}

async fn send_once<Req: Serialize, Resp: DeserializeOwned>(
    http: &reqwest::Client,
    url: &str,
    key: Option<&ApiKey>,
    body: &Req,
) -> Result<Resp> {
    let mut req = http.post(url).json(body);
    if let Some(k) = key {
        req = req.bearer_auth(k.expose());
    }
    let resp = req.send().await.map_err(|e| GatewayError::Transport {
        message: scrub(&e.to_string(), key),
        retry_after: None,
    })?;
    let status = resp.status();
    let after = retry_after(resp.headers());
    let text = resp.text().await.map_err(|e| GatewayError::Transport {
        message: scrub(&e.to_string(), key),
        retry_after: after,
    })?;
    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
        return Err(GatewayError::Auth { status: status.as_u16() });
    }
    if !status.is_success() {
        let mut message = scrub(&text, key);
        message.truncate(500);
        return Err(GatewayError::Upstream {
            status: status.as_u16(),
            message,
            retry_after: after,
        });
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(format!("{url}: {e}")))
}

/// Maps wire token logprobs to record steps. Alternatives keep the first
/// occurrence of each token id, always contain the chosen token and are
/// sorted by descending logprob.
pub fn map_steps(content: &[TokenLogprob]) -> Vec<TokenStep> {
    content
        .iter()
        .map(|t| {
            let id = token_id(&t.token);
            let lp = t.logprob.min(0.0);
            let mut alternatives: Vec<(u32, f64)> = Vec::with_capacity(t.top_logprobs.len() + 1);
            for a in &t.top_logprobs {
                let aid = token_id(&a.token);
                if !alternatives.iter().any(|&(x, _)| x == aid) {
                    alternatives.push((aid, a.logprob.min(0.0)));
                }
            }
            if !t.top_logprobs.is_empty() && !alternatives.iter().any(|&(x, _)| x == id) {
                alternatives.push((id, lp));
            }
            alternatives.sort_by(|a, b| b.1.total_cmp(&a.1));
            TokenStep {
                token_id: id,
                token_text: t.token.clone(),
                logprob: lp,
                alternatives,
                unconditional_logprob: None,
            }
        })
        .collect()
}

struct Completion {
    text: String,
    steps: Option<Vec<TokenStep>>,
}

fn first_choice(resp: ChatResponse) -> Result<Completion> {
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let steps = choice.logprobs.and_then(|l| l.content).map(|c| map_steps(&c));
    Ok(Completion { text, steps })
}

impl LlmClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self> {
        if endpoint.max_parallel == 0 {
            return Err(GatewayError::Precondition("max_parallel must be >= 1".into()));
        }
        Ok(Self {
            http: http_client(endpoint.timeout)?,
            limiter: Arc::new(Semaphore::new(endpoint.max_parallel)),
            endpoint,
            retry: RetryPolicy::default(),
            truth: TruthTokens::default(),
            bos: DEFAULT_BOS.to_string(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_truth_tokens(mut self, truth: TruthTokens) -> Self {
        self.truth = truth;
        self
    }

    pub fn with_bos(mut self, bos: impl Into<String>) -> Self {
        self.bos = bos.into();
        self
    }

    /// Same client and concurrency budget, different credentials.
    pub fn with_api_key(&self, key: Option<ApiKey>) -> Self {
        let mut c = self.clone();
        c.endpoint.api_key = key;
        c
    }

    pub fn with_model(&self, model_name: impl Into<String>) -> Self {
        let mut c = self.clone();
        c.endpoint.model_name = model_name.into();
        c
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        post_json(
            &self.http,
            &self.limiter,
            &self.retry,
            &self.endpoint.url(path),
            self.endpoint.api_key.as_ref(),
            body,
        )
        .await
    }

    pub async fn chat(&self, req: &ChatRequest) -> Result<ChatResponse> {
        self.post("chat/completions", req).await
    }

    fn chat_request(&self, messages: &[ChatMessage], params: &GenerationParams, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: self.endpoint.model_name.clone(),
            messages: messages.to_vec(),
            max_tokens: params.max_new_tokens,
            temperature,
            top_p: params.top_p,
            logprobs: true,
            top_logprobs: None,
            seed: None,
        }
    }

    /// Greedy answer with top-k logprobs, K seeded samples, and the optional
    /// p(True) and unconditional passes, assembled into a validated record.
    pub async fn generate(
        &self,
        id: &str,
        messages: &[ChatMessage],
        params: &GenerationParams,
        plan: RecordPlan,
    ) -> Result<Generation> {
        params.validate()?;
        let input_text = messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.clone())
            .ok_or_else(|| GatewayError::Precondition("conversation has no user message".into()))?;

        let mut greedy_req = self.chat_request(messages, params, 0.0);
        greedy_req.top_logprobs = Some(params.logprobs_k);
        let sample_reqs: Vec<ChatRequest> = (0..params.num_samples)
            .map(|k| {
                let mut r = self.chat_request(messages, params, params.temperature);
                r.seed = Some(k as u64);
                r
            })
            .collect();
        let greedy = async { first_choice(self.chat(&greedy_req).await?) };
        let samples = try_join_all(sample_reqs.iter().map(|r| async move { first_choice(self.chat(r).await?) }));
        let (greedy, samples) = futures::try_join!(greedy, samples)?;

        let mut gaps = Vec::new();
        let mut record = GenerationRecord::text_only(id, input_text.clone(), greedy.text);
        match greedy.steps {
            Some(steps) if !steps.is_empty() || record.output_text.is_empty() => {
                if steps.iter().all(|s| s.alternatives.is_empty()) {
                    gaps.push(Gap {
                        input: Input::TopkAlternatives,
                        reason: "endpoint returned no top-k alternatives".into(),
                    });
                }
                record.output_tokens = steps;
            }
            _ => {
                for input in [Input::OutputLogprobs, Input::TopkAlternatives, Input::UnconditionalLogprobs] {
                    gaps.push(Gap {
                        input,
                        reason: "endpoint returned no token logprobs".into(),
                    });
                }
            }
        }

        let mut sample_gap = false;
        for s in samples {
            let (tokens, total, length) = match s.steps {
                Some(steps) => {
                    let total = steps.iter().map(|t| t.logprob).sum();
                    let n = steps.len().max(1);
                    (steps, total, n)
                }
                None => {
                    sample_gap = true;
                    (Vec::new(), 0.0, 1)
                }
            };
            record.samples.push(SampledOutput {
                text: s.text,
                tokens,
                total_logprob: total,
                length,
            });
        }
        if sample_gap {
            gaps.push(Gap {
                input: Input::SampleLogprobs,
                reason: "endpoint returned no logprobs for samples".into(),
            });
        }

        if plan.p_true {
            match self.p_true(&input_text, &record.output_text).await {
                Ok(p) => record.p_true = Some(p),
                Err(e @ (GatewayError::Indeterminate(_) | GatewayError::Capability { .. })) => gaps.push(Gap {
                    input: Input::PTrue,
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
        if plan.unconditional && !record.output_tokens.is_empty() {
            match self.unconditional_pass(&mut record).await {
                Ok(()) => {}
                Err(e @ GatewayError::Capability { .. }) => gaps.push(Gap {
                    input: Input::UnconditionalLogprobs,
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }

        let violations = validate_record(&record);
        if let Some(v) = violations.first() {
            return Err(GatewayError::Validation(format!("record {id}: {}: {}", v.field, v.message)));
        }
        Ok(Generation { record, gaps })
    }

    /// Normalised probability the model assigns to "True" when asked whether
    /// `answer` correctly answers `question`.
    pub async fn p_true(&self, question: &str, answer: &str) -> Result<f64> {
        let prompt = format!("Question: {question}\nProposed answer: {answer}\n{P_TRUE_SUFFIX}");
        let req = ChatRequest {
            model: self.endpoint.model_name.clone(),
            messages: vec![ChatMessage::user(prompt)],
            max_tokens: 1,
            temperature: 0.0,
            top_p: 1.0,
            logprobs: true,
            top_logprobs: Some(20),
            seed: None,
        };
        let resp = self.chat(&req).await?;
        let first = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|l| l.content)
            .and_then(|c| c.into_iter().next())
            .ok_or_else(|| GatewayError::capability("p(True) token logprobs"))?;

        let mut seen: Vec<&str> = Vec::new();
        let (mut mass_t, mut mass_f) = (0.0, 0.0);
        let candidates = first
            .top_logprobs
            .iter()
            .map(|t| (t.token.as_str(), t.logprob))
            .chain(std::iter::once((first.token.as_str(), first.logprob)));
        for (tok, lp) in candidates {
            if seen.contains(&tok) {
                continue;
            }
            seen.push(tok);
            if self.truth.truthy.iter().any(|v| v == tok) {
                mass_t += lp.exp();
            } else if self.truth.falsy.iter().any(|v| v == tok) {
                mass_f += lp.exp();
            }
        }
        if !(mass_t + mass_f > 0.0) {
            return Err(GatewayError::Indeterminate(
                "neither True nor False among the returned tokens".into(),
            ));
        }
        Ok(mass_t / (mass_t + mass_f))
    }

    /// Scores the greedy output with the input removed and writes
    /// `unconditional_logprob` into every output step. On error the record
    /// is left untouched.
    pub async fn unconditional_pass(&self, record: &mut GenerationRecord) -> Result<()> {
        let body: String = record.output_tokens.iter().map(|t| t.token_text.as_str()).collect();
        let req = CompletionRequest {
            model: self.endpoint.model_name.clone(),
            prompt: format!("{}{body}", self.bos),
            max_tokens: 0,
            echo: true,
            logprobs: 1,
            temperature: 0.0,
        };
        let resp: CompletionResponse = match self.post("completions", &req).await {
            Err(GatewayError::Upstream { status, .. }) if matches!(status, 400 | 404 | 405 | 501) => {
                return Err(GatewayError::capability("echo scoring on the completions endpoint"));
            }
            other => other?,
        };
        let lp = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| GatewayError::capability("echoed prompt logprobs"))?;
        let l = record.output_tokens.len();
        if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() < l {
            return Err(GatewayError::Protocol(format!(
                "echo returned {} tokens for {l} output tokens",
                lp.tokens.len()
            )));
        }
        let off = lp.tokens.len() - l;
        let mut values = Vec::with_capacity(l);
        for (i, step) in record.output_tokens.iter().enumerate() {
            if lp.tokens[off + i] != step.token_text {
                return Err(GatewayError::capability(format!(
                    "matching tokenization for unconditional scoring (token {i}: {:?} vs {:?})",
                    lp.tokens[off + i],
                    step.token_text
                )));
            }
            let v = lp.token_logprobs[off + i]
                .ok_or_else(|| GatewayError::capability("echoed token logprobs"))?;
            values.push(v.min(0.0));
        }
        for (step, v) in record.output_tokens.iter_mut().zip(values) {
            step.unconditional_logprob = Some(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::TopLogprob;

    #[test]
    fn truth_variants() {
        let t = TruthTokens::default();
        for w in ["True", " True", "true", " true", "TRUE", " TRUE"] {
            assert!(t.truthy.iter().any(|v| v == w), "{w}");
        }
        assert_eq!(t.falsy.len(), 6);
    }

    #[test]
    fn chosen_token_inserted_and_sorted() {
        let content = vec![TokenLogprob {
            token: "b".into(),
            logprob: -2.0,
            top_logprobs: vec![
                TopLogprob { token: "a".into(), logprob: -0.5 },
                TopLogprob { token: "a".into(), logprob: -0.6 },
                TopLogprob { token: "c".into(), logprob: -1.0 },
            ],
        }];
        let steps = map_steps(&content);
        let alts = &steps[0].alternatives;
        assert_eq!(alts.len(), 3);
        assert_eq!(alts[0], (token_id("a"), -0.5));
        assert_eq!(alts[2], (token_id("b"), -2.0));
    }
}
