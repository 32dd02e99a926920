//! Deterministic stand-in for an OpenAI-compatible LLM and an NLI provider.
//!
//! Every response is a pure function of the request (plus the failure
//! budget), so records generated against it are byte-reproducible. Prompts
//! of the form `Repeat the phrase: <words>` are answered word by word: each
//! word is kept with a prompt-dependent probability and otherwise replaced
//! by a substitute, so answer quality tracks the model's own confidence.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hedge_core::textmetrics::{rouge_l, TokenizedText};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::client::{DEFAULT_BOS, P_TRUE_SUFFIX};
use crate::wire::{
    AssistantMessage, ChatChoice, ChatRequest, ChatResponse, ChoiceLogprobs, CompletionChoice, CompletionLogprobs,
    CompletionRequest, CompletionResponse, ErrorBody, ErrorDetail, NliRequest, NliResponse, NliScore, TokenLogprob,
    TopLogprob,
};

pub const PHRASE_PREFIX: &str = "Repeat the phrase:";

const SUBSTITUTES: [&str; 24] = [
    "amber", "basin", "cobalt", "dune", "ember", "fjord", "grove", "harbor", "iris", "jade", "kelp", "lumen",
    "meadow", "nectar", "onyx", "prairie", "quartz", "reef", "sierra", "tundra", "umber", "vale", "willow", "zephyr",
];
const SUBSTITUTE_SHARES: [f64; 3] = [0.55, 0.3, 0.15];

#[derive(Debug, Clone, PartialEq)]
pub enum CompletionMode {
    /// Word-by-word noisy repetition of the prompt phrase.
    Phrase,
    /// Always answer with these tokens, verbatim.
    Fixed(Vec<TokenLogprob>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogprobMode {
    Full,
    GreedyOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PTrueMode {
    /// Belief mixes the answer's overlap with the phrase and prompt-hash noise.
    Derived,
    Fixed(f64),
    /// The answer token is neither True nor False.
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnconditionalMode {
    /// Hash-derived per-token logprobs.
    Hashed,
    /// Replays the conditional logprobs of the matching greedy answer.
    Echo,
    /// `-ln V` for every token.
    Uniform(u32),
    /// The completions endpoint answers 404.
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NliMode {
    /// Entailment proportional to ROUGE-L overlap.
    Lexical,
    AllEntail,
    /// entail 0.8, contra 0.5 for every pair.
    Invalid,
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub model_name: String,
    pub completion: CompletionMode,
    pub logprobs: LogprobMode,
    pub p_true: PTrueMode,
    pub unconditional: UnconditionalMode,
    pub nli: NliMode,
    pub required_api_key: Option<String>,
    /// Number of initial requests answered with 503.
    pub fail_first: usize,
    pub latency: Duration,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            model_name: "mock-1".into(),
            completion: CompletionMode::Phrase,
            logprobs: LogprobMode::Full,
            p_true: PTrueMode::Derived,
            unconditional: UnconditionalMode::Hashed,
            nli: NliMode::Lexical,
            required_api_key: None,
            fail_first: 0,
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Default)]
pub struct MockStats {
    pub requests: AtomicUsize,
    pub chat_requests: AtomicUsize,
    pub completion_requests: AtomicUsize,
    pub nli_requests: AtomicUsize,
    pub nli_pairs: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub failures_served: AtomicUsize,
}

impl MockStats {
    pub fn get(counter: &AtomicUsize) -> usize {
        counter.load(Ordering::SeqCst)
    }
}

struct Shared {
    cfg: MockConfig,
    stats: Arc<MockStats>,
    greedy_cache: Mutex<HashMap<String, Vec<f64>>>,
}

struct InFlight<'a>(&'a MockStats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a MockStats) -> Self {
        stats.requests.fetch_add(1, Ordering::SeqCst);
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn unit(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Confidence of the mock model on a prompt, in [0.2, 0.98].
pub fn prompt_confidence(prompt: &str) -> f64 {
    0.2 + 0.78 * unit(hash64(&[b"conf", prompt.as_bytes()]))
}

pub fn phrase_of(prompt: &str) -> &str {
    match prompt.find(PHRASE_PREFIX) {
        Some(i) => prompt[i + PHRASE_PREFIX.len()..].trim(),
        None => prompt.trim(),
    }
}

fn surface(word: &str, position: usize) -> String {
    if position == 0 {
        word.to_string()
    } else {
        format!(" {word}")
    }
}

/// Next-word distribution at `position`, sorted by descending probability.
fn candidates(prompt: &str, position: usize, word: &str) -> Vec<(String, f64)> {
    let conf = prompt_confidence(prompt);
    let pos = (position as u64).to_le_bytes();
    let jitter = unit(hash64(&[b"keep", prompt.as_bytes(), &pos])) - 0.5;
    let keep = (conf + 0.15 * jitter).clamp(0.05, 0.99);
    let mut out = vec![(word.to_string(), keep)];
    let mut salt = 0u64;
    for share in SUBSTITUTE_SHARES {
        let sub = loop {
            let pick = hash64(&[b"sub", prompt.as_bytes(), &pos, &salt.to_le_bytes()]) as usize % SUBSTITUTES.len();
            salt += 1;
            let s = SUBSTITUTES[pick];
            if s != word && !out.iter().any(|(w, _)| w == s) {
                break s;
            }
        };
        out.push((sub.to_string(), (1.0 - keep) * share));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

fn phrase_completion(prompt: &str, req: &ChatRequest) -> Vec<TokenLogprob> {
    let words: Vec<&str> = phrase_of(prompt).split_whitespace().collect();
    let mut rng = req
        .seed
        .map(|s| ChaCha8Rng::seed_from_u64(hash64(&[b"sample", prompt.as_bytes(), &s.to_le_bytes()])));
    let greedy = req.temperature <= 0.0 || rng.is_none();
    let k = req.top_logprobs.unwrap_or(0) as usize;
    words
        .iter()
        .take(req.max_tokens as usize)
        .enumerate()
        .map(|(i, w)| {
            let cands = candidates(prompt, i, w);
            let chosen = if greedy {
                0
            } else {
                let t = req.temperature;
                let weights: Vec<f64> = cands.iter().map(|(_, p)| p.powf(1.0 / t)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.as_mut().expect("seeded").random::<f64>() * total;
                let mut idx = weights.len() - 1;
                for (j, w) in weights.iter().enumerate() {
                    if u < *w {
                        idx = j;
                        break;
                    }
                    u -= w;
                }
                idx
            };
            TokenLogprob {
                token: surface(&cands[chosen].0, i),
                logprob: cands[chosen].1.ln(),
                top_logprobs: cands
                    .iter()
                    .take(k)
                    .map(|(w, p)| TopLogprob {
                        token: surface(w, i),
                        logprob: p.ln(),
                    })
                    .collect(),
            }
        })
        .collect()
}

fn p_true_tokens(mode: PTrueMode, prompt: &str) -> TokenLogprob {
    let p = match mode {
        PTrueMode::Fixed(p) => p,
        PTrueMode::Derived => {
            let question = prompt
                .strip_prefix("Question: ")
                .and_then(|r| r.split("\nProposed answer: ").next())
                .unwrap_or("");
            let answer = prompt
                .split("\nProposed answer: ")
                .nth(1)
                .and_then(|r| r.split('\n').next())
                .unwrap_or("");
            let sim: f64 = rouge_l(&TokenizedText::new(answer), &TokenizedText::new(phrase_of(question)));
            let noise = unit(hash64(&[b"ptrue", question.as_bytes()]));
            0.05 + 0.9 * (0.5 * sim + 0.5 * noise)
        }
        PTrueMode::Absent => {
            return TokenLogprob {
                token: " Maybe".into(),
                logprob: 0.9f64.ln(),
                top_logprobs: vec![
                    TopLogprob { token: " Maybe".into(), logprob: 0.9f64.ln() },
                    TopLogprob { token: " Perhaps".into(), logprob: 0.1f64.ln() },
                ],
            };
        }
    };
    // Spread each side over two spellings so clients must sum variants.
    let mut top: Vec<TopLogprob> = [(" True", 0.7 * p), ("True", 0.3 * p), (" False", 0.7 * (1.0 - p)), ("false", 0.3 * (1.0 - p))]
        .into_iter()
        .filter(|(_, m)| *m > 0.0)
        .map(|(t, m)| TopLogprob { token: t.into(), logprob: m.ln() })
        .collect();
    top.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    TokenLogprob {
        token: top[0].token.clone(),
        logprob: top[0].logprob,
        top_logprobs: top,
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    let body = ErrorBody {
        error: ErrorDetail { message: message.into() },
    };
    (status, Json(body)).into_response()
}

/// Auth and failure-injection checks shared by every route.
async fn gate(shared: &Shared, headers: &HeaderMap) -> Option<Response> {
    if !shared.cfg.latency.is_zero() {
        tokio::time::sleep(shared.cfg.latency).await;
    }
    if let Some(key) = &shared.cfg.required_api_key {
        let got = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if got != Some(key.as_str()) {
            return Some(error(StatusCode::UNAUTHORIZED, "invalid api key"));
        }
    }
    let served = shared.stats.failures_served.load(Ordering::SeqCst);
    if served < shared.cfg.fail_first
        && shared
            .stats
            .failures_served
            .compare_exchange(served, served + 1, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    {
        let mut r = error(StatusCode::SERVICE_UNAVAILABLE, "overloaded");
        r.headers_mut().insert("retry-after", HeaderValue::from_static("0"));
        return Some(r);
    }
    None
}

async fn chat(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(req): Json<ChatRequest>) -> Response {
    let _guard = InFlight::enter(&shared.stats);
    shared.stats.chat_requests.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = gate(&shared, &headers).await {
        return r;
    }
    let Some(prompt) = req.messages.iter().rev().find(|m| m.role == "user").map(|m| m.content.clone()) else {
        return error(StatusCode::BAD_REQUEST, "no user message");
    };
    let is_greedy = req.temperature <= 0.0;
    let tokens = if prompt.ends_with(P_TRUE_SUFFIX) {
        vec![p_true_tokens(shared.cfg.p_true, &prompt)]
    } else {
        match &shared.cfg.completion {
            CompletionMode::Phrase => phrase_completion(&prompt, &req),
            CompletionMode::Fixed(t) => t
                .iter()
                .map(|t| TokenLogprob {
                    top_logprobs: t.top_logprobs.iter().take(req.top_logprobs.unwrap_or(0) as usize).cloned().collect(),
                    ..t.clone()
                })
                .collect(),
        }
    };
    let text: String = tokens.iter().map(|t| t.token.as_str()).collect();
    if is_greedy {
        shared
            .greedy_cache
            .lock()
            .expect("cache lock")
            .insert(text.clone(), tokens.iter().map(|t| t.logprob).collect());
    }
    let with_logprobs = req.logprobs
        && match shared.cfg.logprobs {
            LogprobMode::Full => true,
            LogprobMode::GreedyOnly => is_greedy,
            LogprobMode::None => false,
        };
    let resp = ChatResponse {
        model: Some(shared.cfg.model_name.clone()),
        choices: vec![ChatChoice {
            index: 0,
            message: AssistantMessage {
                role: Some("assistant".into()),
                content: Some(text),
            },
            logprobs: with_logprobs.then(|| ChoiceLogprobs { content: Some(tokens) }),
        }],
    };
    Json(resp).into_response()
}

/// Splits an echoed prompt into the marker and space-prefixed words.
fn echo_tokens(prompt: &str) -> Vec<String> {
    let (mut out, rest) = match prompt.strip_prefix(DEFAULT_BOS) {
        Some(rest) => (vec![DEFAULT_BOS.to_string()], rest),
        None => (Vec::new(), prompt),
    };
    out.extend(rest.split_whitespace().enumerate().map(|(i, w)| surface(w, i)));
    out
}

async fn completions(
    State(shared): State<Arc<Shared>>,
    headers: HeaderMap,
    Json(req): Json<CompletionRequest>,
) -> Response {
    let _guard = InFlight::enter(&shared.stats);
    shared.stats.completion_requests.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = gate(&shared, &headers).await {
        return r;
    }
    if shared.cfg.unconditional == UnconditionalMode::Unsupported {
        return error(StatusCode::NOT_FOUND, "completions endpoint not available");
    }
    if !req.echo || req.max_tokens != 0 {
        return error(StatusCode::BAD_REQUEST, "only echo scoring with max_tokens = 0 is supported");
    }
    let tokens = echo_tokens(&req.prompt);
    let bos = usize::from(tokens.first().map(String::as_str) == Some(DEFAULT_BOS));
    let body: String = tokens[bos..].concat();
    let cached = match shared.cfg.unconditional {
        UnconditionalMode::Echo => shared.greedy_cache.lock().expect("cache lock").get(&body).cloned(),
        _ => None,
    };
    let logprobs: Vec<Option<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == 0 {
                return None;
            }
            let j = i - bos;
            Some(match (shared.cfg.unconditional, &cached) {
                (UnconditionalMode::Uniform(v), _) => -(v as f64).ln(),
                (_, Some(c)) if j < c.len() => c[j],
                _ => -(0.5 + 5.0 * unit(hash64(&[b"uncond", tokens[i - 1].as_bytes(), t.as_bytes()]))),
            })
        })
        .collect();
    Json(CompletionResponse {
        choices: vec![CompletionChoice {
            text: req.prompt.clone(),
            logprobs: Some(CompletionLogprobs {
                tokens,
                token_logprobs: logprobs,
            }),
        }],
    })
    .into_response()
}

async fn nli(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(req): Json<NliRequest>) -> Response {
    let _guard = InFlight::enter(&shared.stats);
    shared.stats.nli_requests.fetch_add(1, Ordering::SeqCst);
    shared.stats.nli_pairs.fetch_add(req.pairs.len(), Ordering::SeqCst);
    if let Some(r) = gate(&shared, &headers).await {
        return r;
    }
    let scores = req
        .pairs
        .iter()
        .map(|[a, b]| match shared.cfg.nli {
            NliMode::AllEntail => NliScore { entail: 1.0, contra: 0.0, neutral: 0.0 },
            NliMode::Invalid => NliScore { entail: 0.8, contra: 0.5, neutral: 0.0 },
            NliMode::Lexical => {
                let s: f64 = rouge_l(&TokenizedText::new(b), &TokenizedText::new(a));
                NliScore { entail: 0.9 * s, contra: 0.9 * (1.0 - s), neutral: 0.1 }
            }
        })
        .collect();
    Json(NliResponse { scores }).into_response()
}

async fn models(State(shared): State<Arc<Shared>>) -> Response {
    Json(json!({"object": "list", "data": [{"id": shared.cfg.model_name, "object": "model"}]})).into_response()
}

pub fn router(cfg: MockConfig, stats: Arc<MockStats>) -> Router {
    let shared = Arc::new(Shared {
        cfg,
        stats,
        greedy_cache: Mutex::new(HashMap::new()),
    });
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/completions", post(completions))
        .route("/v1/models", get(models))
        .route("/nli", post(nli))
        .with_state(shared)
}

/// A mock bound to an ephemeral local port; shut down on drop.
pub struct MockServer {
    pub addr: SocketAddr,
    pub stats: Arc<MockStats>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    pub async fn start(cfg: MockConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let stats = Arc::new(MockStats::default());
        let app = router(cfg, stats.clone());
        let (tx, rx) = oneshot::channel();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            stats,
            shutdown: Some(tx),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn nli_url(&self) -> String {
        format!("http://{}/nli", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Serves the mock on `listener` until the process is interrupted.
pub async fn serve(listener: TcpListener, cfg: MockConfig) -> std::io::Result<()> {
    let app = router(cfg, Arc::new(MockStats::default()));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
