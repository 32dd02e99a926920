//! HTTP surface: `POST /v1/chat`, `GET /v1/estimators`, `GET /v1/health`.
//!
//! Errors are JSON `{"error": {"kind", "message", ...}}` with status
//! 400 (bad request or unknown estimator), 422 (the endpoint cannot supply
//! an input the estimator needs), 502 (upstream failure) or 500.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hedge_core::calibration::CalibrationTable;
use hedge_core::registry::{evaluate, is_capability_gap, registry, EstimatorSpec, Input, NliSource};
use hedge_gateway::wire::ChatMessage;
use hedge_gateway::{scrub, ApiKey, GatewayError, GenerationParams, LlmClient, ModelEndpoint, NliClient, RecordPlan};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::estimate::context;
use crate::nli::PrecomputedNli;

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}

fn default_model_name() -> String {
    "gpt-4o-mini".into()
}

fn default_timeout() -> u64 {
    60
}

fn default_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model_name")]
    pub name: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            base_url: default_base_url(),
            name: default_model_name(),
            timeout_secs: default_timeout(),
            max_parallel: default_parallel(),
        }
    }
}

/// Service configuration file. The API key is never read from here; it
/// comes from `POLYGRAPH_API_KEY` or the request body.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub nli_url: Option<String>,
    #[serde(default)]
    pub generation: GenerationParams,
    /// Calibration tables; each applies to the estimator named inside it.
    #[serde(default)]
    pub calibration: Vec<PathBuf>,
    #[serde(default)]
    pub disabled_estimators: Vec<String>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: ServiceConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.calibration {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }
}

pub struct AppState {
    pub client: LlmClient,
    pub nli: Option<NliClient>,
    pub calibrations: BTreeMap<String, CalibrationTable>,
    pub disabled: BTreeSet<String>,
    pub params: GenerationParams,
}

impl AppState {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, CliError> {
        let endpoint = ModelEndpoint {
            timeout: Duration::from_secs(cfg.model.timeout_secs),
            max_parallel: cfg.model.max_parallel,
            ..ModelEndpoint::new(cfg.model.base_url.clone(), cfg.model.name.clone())
        };
        let nli = crate::estimate::nli_url(None, cfg.nli_url.as_deref())
            .map(NliClient::new)
            .transpose()?;
        let mut calibrations = BTreeMap::new();
        for p in &cfg.calibration {
            let t = CalibrationTable::load(p)?;
            calibrations.insert(t.estimator_name.clone(), t);
        }
        for name in &cfg.disabled_estimators {
            hedge_core::registry::lookup(name)?;
        }
        cfg.generation.validate()?;
        Ok(Self {
            client: LlmClient::new(endpoint)?,
            nli,
            calibrations,
            disabled: cfg.disabled_estimators.iter().cloned().collect(),
            params: cfg.generation,
        })
    }

    fn enabled(&self) -> impl Iterator<Item = &'static EstimatorSpec> + '_ {
        registry().iter().filter(|s| !self.disabled.contains(s.name))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleDiagnostic {
    pub text: String,
    pub total_logprob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleDiagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true: Option<f64>,
    /// Inputs the endpoint could not supply (not needed by this estimator).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaps: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatTurnResult {
    pub text: String,
    pub estimator: String,
    pub uncertainty_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatBody {
    messages: Vec<ChatMessage>,
    #[serde(default)]
    model: Option<String>,
    estimator: String,
    #[serde(default)]
    params: Option<GenerationParams>,
    #[serde(default)]
    api_key: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    missing: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    valid: Vec<String>,
}

struct ApiError {
    status: StatusCode,
    detail: ErrorDetail,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            detail: ErrorDetail {
                kind,
                message: message.into(),
                missing: Vec::new(),
                valid: Vec::new(),
            },
        }
    }

    fn gap(estimator: &str, missing: Vec<String>) -> Self {
        let mut e = Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "capability_gap",
            format!("{estimator} needs {} which this model endpoint cannot provide", missing.join(", ")),
        );
        e.detail.missing = missing;
        e
    }

    fn upstream(e: &GatewayError, keys: &[Option<&ApiKey>]) -> Self {
        let (status, kind) = match e {
            GatewayError::Precondition(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            GatewayError::Capability { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "capability_gap"),
            _ => (StatusCode::BAD_GATEWAY, "upstream"),
        };
        let mut msg = e.to_string();
        for k in keys {
            msg = scrub(&msg, *k);
        }
        Self::new(status, kind, msg)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.detail }))).into_response()
    }
}

fn input_name(i: Input) -> String {
    serde_json::to_value(i)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{i:?}"))
}

#[derive(Serialize)]
struct Listing {
    #[serde(flatten)]
    spec: &'static EstimatorSpec,
    api_obtainable: bool,
    calibrated: bool,
}

async fn estimators(State(state): State<Arc<AppState>>) -> Response {
    let list: Vec<Listing> = state
        .enabled()
        .map(|spec| Listing {
            spec,
            api_obtainable: spec.inputs.iter().all(|i| i.api_obtainable()),
            calibrated: state.calibrations.contains_key(spec.name),
        })
        .collect();
    Json(serde_json::json!({ "estimators": list })).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(serde_json::json!({
        "status": "ok",
        "model": state.client.endpoint().model_name,
        "nli": state.nli.is_some(),
        "estimators": state.enabled().count(),
    }))
    .into_response()
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    match chat_turn(&state, &body).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => {
            tracing::info!(status = e.status.as_u16(), kind = e.detail.kind, "chat turn failed");
            e.into_response()
        }
    }
}

async fn chat_turn(state: &AppState, body: &[u8]) -> Result<ChatTurnResult, ApiError> {
    let req: ChatBody = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("invalid request body: {e}")))?;
    let spec = state.enabled().find(|s| s.name == req.estimator).ok_or_else(|| {
        let mut e = ApiError::new(
            StatusCode::BAD_REQUEST,
            "unknown_estimator",
            format!("unknown estimator {:?}", req.estimator),
        );
        e.detail.valid = state.enabled().map(|s| s.name.to_string()).collect();
        e
    })?;
    let needs = |i: Input| spec.inputs.contains(&i);

    let mut missing: Vec<String> = spec
        .inputs
        .iter()
        .filter(|i| !i.api_obtainable())
        .map(|&i| input_name(i))
        .collect();
    if needs(Input::Nli) && state.nli.is_none() {
        missing.push(input_name(Input::Nli));
    }
    if !missing.is_empty() {
        return Err(ApiError::gap(spec.name, missing));
    }

    let mut params = req.params.unwrap_or(state.params);
    if !needs(Input::Samples) && !needs(Input::SampleLogprobs) {
        params.num_samples = 0;
    }
    let plan = RecordPlan {
        p_true: needs(Input::PTrue),
        unconditional: needs(Input::UnconditionalLogprobs),
    };
    let request_key = req.api_key.and_then(ApiKey::new);
    let mut client = match &request_key {
        Some(k) => state.client.with_api_key(Some(k.clone())),
        None => state.client.clone(),
    };
    if let Some(m) = req.model.filter(|m| !m.trim().is_empty()) {
        client = client.with_model(m);
    }
    let keys = [request_key.as_ref(), state.client.endpoint().api_key.as_ref()];

    let generation = client
        .generate("chat", &req.messages, &params, plan)
        .await
        .map_err(|e| ApiError::upstream(&e, &keys))?;
    let gaps: Vec<String> = generation
        .gaps
        .iter()
        .filter(|g| needs(g.input))
        .map(|g| input_name(g.input))
        .collect();
    if !gaps.is_empty() {
        return Err(ApiError::gap(spec.name, gaps));
    }
    let record = generation.record;

    let mut nli = PrecomputedNli::default();
    if needs(Input::Nli) && record.samples.len() >= 2 {
        let client = state.nli.as_ref().expect("checked above");
        let scores = client
            .pairwise(&record.sample_texts())
            .await
            .map_err(|e| ApiError::upstream(&e, &keys))?;
        nli.insert(record.id.clone(), scores);
    }
    let ctx = context(None, Some(&nli as &dyn NliSource));
    let ue = match evaluate(spec.name, &record, &ctx) {
        Ok(v) => v,
        Err(e) if is_capability_gap(&e) => {
            let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "capability_gap", e.to_string());
            err.detail.missing = spec.inputs.iter().map(|&i| input_name(i)).collect();
            return Err(err);
        }
        Err(e) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "estimator", e.to_string())),
    };
    let confidence = state.calibrations.get(spec.name).map(|t| t.normalize(ue));

    let diagnostics = Diagnostics {
        samples: record
            .samples
            .iter()
            .map(|s| SampleDiagnostic {
                text: s.text.clone(),
                total_logprob: s.total_logprob,
            })
            .collect(),
        p_true: record.p_true,
        gaps: generation.gaps.iter().map(|g| input_name(g.input)).collect(),
    };
    tracing::info!(estimator = spec.name, "chat turn scored");
    Ok(ChatTurnResult {
        text: record.output_text,
        estimator: spec.name.to_string(),
        uncertainty_raw: ue,
        confidence,
        diagnostics,
    })
}

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/estimators", get(estimators))
        .route("/v1/health", get(health))
        .with_state(state)
}
