use std::sync::atomic::Ordering;
use std::time::Duration;

use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use hedge_core::info::{msp, pmi};
use hedge_core::records::validate_record;
use hedge_core::registry::Input;
use hedge_core::GenerationRecord;
use hedge_gateway::mock::{
    CompletionMode, LogprobMode, MockConfig, MockServer, NliMode, PTrueMode, UnconditionalMode,
};
use hedge_gateway::tokens::token_id;
use hedge_gateway::wire::{ChatMessage, ChatRequest, TokenLogprob, TopLogprob};
use hedge_gateway::{
    ApiKey, GatewayError, GenerationParams, LlmClient, ModelEndpoint, NliClient, RecordPlan, RetryPolicy,
};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(50),
    }
}

fn client_for(mock: &MockServer, max_parallel: usize) -> LlmClient {
    let endpoint = ModelEndpoint {
        api_key: None,
        max_parallel,
        timeout: Duration::from_secs(10),
        ..ModelEndpoint::new(mock.base_url(), "mock-1")
    };
    LlmClient::new(endpoint).unwrap().with_retry(fast_retry())
}

fn user(text: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::user(text)]
}

fn tok(token: &str, logprob: f64, top: &[(&str, f64)]) -> TokenLogprob {
    TokenLogprob {
        token: token.into(),
        logprob,
        top_logprobs: top
            .iter()
            .map(|&(t, l)| TopLogprob {
                token: t.into(),
                logprob: l,
            })
            .collect(),
    }
}

fn fixed_two_tokens() -> MockConfig {
    MockConfig {
        completion: CompletionMode::Fixed(vec![
            tok("Paris", -0.1, &[("Paris", -0.1), ("Lyon", -2.5)]),
            tok(".", -0.2, &[(".", -0.2), ("!", -1.9)]),
        ]),
        ..MockConfig::default()
    }
}

#[tokio::test]
async fn fixed_completion_maps_exactly() {
    let mock = MockServer::start(fixed_two_tokens()).await.unwrap();
    let client = client_for(&mock, 4);
    let params = GenerationParams {
        num_samples: 3,
        ..GenerationParams::default()
    };
    let g = client.generate("r1", &user("capital of France?"), &params, RecordPlan::default()).await.unwrap();
    let r = &g.record;
    assert!((r.total_logprob() - -0.3).abs() < 1e-9);
    assert_eq!(r.output_text, "Paris.");
    assert_eq!(r.output_tokens[0].token_id, token_id("Paris"));
    assert_eq!(r.output_tokens[0].logprob, -0.1);
    assert_eq!(r.output_tokens[0].alternatives, vec![(token_id("Paris"), -0.1), (token_id("Lyon"), -2.5)]);
    assert_eq!(r.output_tokens[1].alternatives, vec![(token_id("."), -0.2), (token_id("!"), -1.9)]);
    assert_eq!(r.samples.len(), 3);
    for s in &r.samples {
        assert_eq!(s.text, "Paris.");
        assert!((s.total_logprob - -0.3).abs() < 1e-12);
        assert_eq!(s.length, 2);
    }
    assert!(validate_record(r).is_empty());
}

#[tokio::test]
async fn phrase_records_equal_wire_payload() {
    let mock = MockServer::start(MockConfig::default()).await.unwrap();
    let client = client_for(&mock, 8);
    let params = GenerationParams::default();
    for i in 0..25 {
        let prompt = format!("Repeat the phrase: alpha beta gamma delta {i}");
        let wire = client
            .chat(&ChatRequest {
                model: "mock-1".into(),
                messages: user(&prompt),
                max_tokens: params.max_new_tokens,
                temperature: 0.0,
                top_p: 1.0,
                logprobs: true,
                top_logprobs: Some(params.logprobs_k),
                seed: None,
            })
            .await
            .unwrap();
        let content = wire.choices[0].logprobs.clone().unwrap().content.unwrap();
        let g = client.generate(&format!("p{i}"), &user(&prompt), &params, RecordPlan::default()).await.unwrap();
        assert!(g.gaps.is_empty(), "{:?}", g.gaps);
        assert!(validate_record(&g.record).is_empty());
        assert_eq!(g.record.output_tokens.len(), content.len());
        for (step, w) in g.record.output_tokens.iter().zip(&content) {
            assert_eq!(step.token_text, w.token);
            assert_eq!(step.logprob, w.logprob);
            assert_eq!(step.token_id, token_id(&w.token));
            for a in &w.top_logprobs {
                assert!(step.alternatives.contains(&(token_id(&a.token), a.logprob)));
            }
            assert!(step.unconditional_logprob.is_some());
        }
        let p = g.record.p_true.unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[tokio::test]
async fn zero_samples_is_valid() {
    let mock = MockServer::start(MockConfig::default()).await.unwrap();
    let client = client_for(&mock, 2);
    let params = GenerationParams {
        num_samples: 0,
        ..GenerationParams::default()
    };
    let g = client.generate("k0", &user("Repeat the phrase: one two"), &params, RecordPlan::default()).await.unwrap();
    assert!(g.record.samples.is_empty());
    assert!(validate_record(&g.record).is_empty());
}

#[tokio::test]
async fn unauthorized_is_an_auth_error() {
    let mock = MockServer::start(MockConfig {
        required_api_key: Some("sk-right".into()),
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let client = client_for(&mock, 2).with_api_key(ApiKey::new("sk-wrong"));
    let err = client
        .generate("a", &user("Repeat the phrase: x y"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::Auth { status: 401 }), "{err:?}");
    assert!(!err.to_string().contains("sk-wrong"));

    let ok = client.with_api_key(ApiKey::new("sk-right"));
    ok.generate("a", &user("Repeat the phrase: x y"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
}

async fn p_true_with(mode: PTrueMode) -> Result<f64, GatewayError> {
    let mock = MockServer::start(MockConfig {
        p_true: mode,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    client_for(&mock, 1).p_true("What is 2+2?", "4").await
}

#[tokio::test]
async fn p_true_normalises_option_mass() {
    assert!((p_true_with(PTrueMode::Fixed(0.9)).await.unwrap() - 0.9).abs() < 1e-12);
    assert!((p_true_with(PTrueMode::Fixed(0.5)).await.unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(p_true_with(PTrueMode::Fixed(1.0)).await.unwrap(), 1.0);
    let err = p_true_with(PTrueMode::Absent).await.unwrap_err();
    assert!(matches!(err, GatewayError::Indeterminate(_)), "{err:?}");
}

#[tokio::test]
async fn indeterminate_p_true_leaves_field_absent() {
    let mock = MockServer::start(MockConfig {
        p_true: PTrueMode::Absent,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let g = client_for(&mock, 2)
        .generate("a", &user("Repeat the phrase: x y"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
    assert!(g.record.p_true.is_none());
    assert!(g.missing(Input::PTrue));
}

#[tokio::test]
async fn echoed_conditionals_give_zero_pmi() {
    let mock = MockServer::start(MockConfig {
        unconditional: UnconditionalMode::Echo,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let g = client_for(&mock, 2)
        .generate("e", &user("Repeat the phrase: red fox jumps high"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
    assert_eq!(pmi::<f64>(&g.record).unwrap().abs(), 0.0);
}

#[tokio::test]
async fn uniform_unconditional_is_minus_ln_v() {
    let v = 50_000u32;
    let mock = MockServer::start(MockConfig {
        unconditional: UnconditionalMode::Uniform(v),
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let g = client_for(&mock, 2)
        .generate("u", &user("Repeat the phrase: a b c"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
    for s in &g.record.output_tokens {
        assert!((s.unconditional_logprob.unwrap() + (v as f64).ln()).abs() < 1e-12);
    }
}

#[tokio::test]
async fn unsupported_scoring_is_a_capability_gap() {
    let mock = MockServer::start(MockConfig {
        unconditional: UnconditionalMode::Unsupported,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let client = client_for(&mock, 2);
    let g = client
        .generate("u", &user("Repeat the phrase: a b c"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
    assert!(g.missing(Input::UnconditionalLogprobs));
    assert!(g.record.output_tokens.iter().all(|s| s.unconditional_logprob.is_none()));
    assert!(pmi::<f64>(&g.record).is_err());
    // 404 is not retried
    assert_eq!(mock.stats.completion_requests.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn transport_failure_leaves_record_unchanged() {
    let mock = MockServer::start(MockConfig::default()).await.unwrap();
    let g = client_for(&mock, 2)
        .generate("t", &user("Repeat the phrase: a b c"), &GenerationParams::default(), RecordPlan {
            p_true: false,
            unconditional: false,
        })
        .await
        .unwrap();
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let endpoint = ModelEndpoint {
        api_key: None,
        timeout: Duration::from_secs(2),
        ..ModelEndpoint::new(format!("http://{dead}/v1"), "mock-1")
    };
    let client = LlmClient::new(endpoint).unwrap().with_retry(fast_retry());
    let mut record: GenerationRecord = g.record.clone();
    let err = client.unconditional_pass(&mut record).await.unwrap_err();
    assert!(matches!(err, GatewayError::Transport { .. }), "{err:?}");
    assert_eq!(record, g.record);
}

#[tokio::test]
async fn missing_logprobs_degrade_to_text_only() {
    let mock = MockServer::start(MockConfig {
        logprobs: LogprobMode::None,
        p_true: PTrueMode::Absent,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let g = client_for(&mock, 2)
        .generate("n", &user("Repeat the phrase: a b c"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
    assert!(g.record.output_tokens.is_empty());
    assert!(!g.record.output_text.is_empty());
    assert!(g.missing(Input::OutputLogprobs));
    assert!(g.missing(Input::SampleLogprobs));
    assert_eq!(g.record.samples.len(), 5);
    assert!(msp::<f64>(&g.record).is_err());

    let mock = MockServer::start(MockConfig {
        logprobs: LogprobMode::GreedyOnly,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let g = client_for(&mock, 2)
        .generate("n", &user("Repeat the phrase: a b c"), &GenerationParams::default(), RecordPlan::default())
        .await
        .unwrap();
    assert!(!g.missing(Input::OutputLogprobs));
    assert!(g.missing(Input::SampleLogprobs));
}

#[tokio::test]
async fn in_flight_requests_never_exceed_limit() {
    let mock = MockServer::start(MockConfig {
        latency: Duration::from_millis(40),
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let client = client_for(&mock, 2);
    let params = GenerationParams {
        num_samples: 8,
        ..GenerationParams::default()
    };
    let runs = (0..3).map(|i| {
        let c = client.clone();
        async move {
            c.generate(&i.to_string(), &user("Repeat the phrase: a b c"), &params, RecordPlan::default()).await
        }
    });
    for r in futures::future::join_all(runs).await {
        r.unwrap();
    }
    let peak = mock.stats.max_in_flight.load(Ordering::SeqCst);
    assert!(peak <= 2, "peak {peak}");
    assert_eq!(peak, 2);
}

#[tokio::test]
async fn retries_503_then_succeeds() {
    let mock = MockServer::start(MockConfig {
        fail_first: 2,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let client = client_for(&mock, 1);
    client.p_true("q", "a").await.unwrap();
    assert_eq!(mock.stats.chat_requests.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn retry_budget_exhaustion_surfaces_retry_after() {
    let mock = MockServer::start(MockConfig {
        fail_first: 10,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let err = client_for(&mock, 1).p_true("q", "a").await.unwrap_err();
    match err {
        GatewayError::Upstream { status, retry_after, .. } => {
            assert_eq!(status, 503);
            assert_eq!(retry_after, Some(Duration::ZERO));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(mock.stats.chat_requests.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn upstream_error_bodies_are_scrubbed() {
    async fn leak(headers: HeaderMap) -> (StatusCode, String) {
        let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).unwrap_or("").to_string();
        (StatusCode::BAD_REQUEST, format!("rejected credentials {auth}"))
    }
    let app = Router::new().route("/v1/chat/completions", post(leak));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });

    let endpoint = ModelEndpoint {
        api_key: ApiKey::new("sk-live-abcdef123456"),
        ..ModelEndpoint::new(format!("http://{addr}/v1"), "m")
    };
    let err = LlmClient::new(endpoint).unwrap().p_true("q", "a").await.unwrap_err();
    let shown = format!("{err} {err:?}");
    assert!(shown.contains("rejected credentials"));
    assert!(!shown.contains("sk-live-abcdef123456"), "{shown}");
}

async fn nli_with(mode: NliMode) -> (MockServer, NliClient) {
    let mock = MockServer::start(MockConfig {
        nli: mode,
        ..MockConfig::default()
    })
    .await
    .unwrap();
    let client = NliClient::new(mock.nli_url()).unwrap();
    (mock, client)
}

#[tokio::test]
async fn nli_all_entail_fills_off_diagonal_ones() {
    let (_mock, client) = nli_with(NliMode::AllEntail).await;
    let s = client.pairwise(&["a", "b", "c"]).await.unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(s.entail[(i, j)], 1.0);
            assert_eq!(s.contra[(i, j)], 0.0);
        }
    }
}

#[tokio::test]
async fn nli_single_text_is_a_precondition_error() {
    let (mock, client) = nli_with(NliMode::Lexical).await;
    let err = client.pairwise(&["only"]).await.unwrap_err();
    assert!(matches!(err, GatewayError::Precondition(_)));
    assert_eq!(mock.stats.nli_requests.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn nli_invalid_mass_names_the_pair() {
    let (_mock, client) = nli_with(NliMode::Invalid).await;
    let err = client.pairwise(&["a", "b"]).await.unwrap_err();
    match err {
        GatewayError::Validation(m) => assert!(m.contains("(0, 1)"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn nli_batches_keep_pair_order() {
    let (mock, client) = nli_with(NliMode::Lexical).await;
    let texts: Vec<String> = (0..10).map(|i| format!("w{} shared w{}", i % 3, i % 4)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let s = client.pairwise(&refs).await.unwrap();
    assert_eq!(mock.stats.nli_requests.load(Ordering::SeqCst), 2);
    assert_eq!(mock.stats.nli_pairs.load(Ordering::SeqCst), 90);
    use hedge_core::textmetrics::{rouge_l, TokenizedText};
    for i in 0..10 {
        for j in 0..10 {
            if i == j {
                assert_eq!(s.entail[(i, j)], 1.0);
                continue;
            }
            let sim: f64 = rouge_l(&TokenizedText::new(refs[j]), &TokenizedText::new(refs[i]));
            assert_eq!(s.entail[(i, j)], 0.9 * sim);
        }
    }
}
