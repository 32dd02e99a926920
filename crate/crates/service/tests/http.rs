mod common;

use common::{chat_body, config_for, serve, stack};
use hedge_core::calibration::fit_bins;
use hedge_core::registry::{registry, TABLE_ROWS};
use hedge_gateway::mock::{CompletionMode, MockConfig, MockServer};
use hedge_gateway::wire::{TokenLogprob, TopLogprob};
use serde_json::json;

fn one_token(p: f64) -> MockConfig {
    MockConfig {
        completion: CompletionMode::Fixed(vec![TokenLogprob {
            token: "yes".into(),
            logprob: p.ln(),
            top_logprobs: vec![
                TopLogprob { token: "yes".into(), logprob: p.ln() },
                TopLogprob { token: "no".into(), logprob: (1.0 - p).ln() },
            ],
        }]),
        ..MockConfig::default()
    }
}

#[tokio::test]
async fn msp_pipeline_returns_one_minus_p() {
    let s = stack(one_token(0.8), false).await;
    let (status, body, _) = s.chat(chat_body("msp", "Is it?")).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["text"], "yes");
    assert_eq!(body["estimator"], "msp");
    assert!((body["uncertainty_raw"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!(body.get("confidence").is_none());
}

#[tokio::test]
async fn identical_samples_give_zero_degree_uncertainty() {
    let s = stack(one_token(0.8), false).await;
    let (status, body, _) = s.chat(chat_body("degmat_jaccard", "Is it?")).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["uncertainty_raw"].as_f64().unwrap(), 0.0);
    assert_eq!(body["diagnostics"]["samples"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn density_estimator_is_a_capability_gap() {
    let s = stack(MockConfig::default(), true).await;
    let (status, body, _) = s.chat(chat_body("mahalanobis", "Repeat the phrase: a b")).await;
    assert_eq!(status, 422, "{body}");
    assert_eq!(body["error"]["kind"], "capability_gap");
    let missing: Vec<&str> = body["error"]["missing"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(missing.contains(&"embedding"), "{missing:?}");
    assert_eq!(s.mock.stats.chat_requests.load(std::sync::atomic::Ordering::SeqCst), 0);
}

#[tokio::test]
async fn nli_estimator_without_provider_is_a_gap() {
    let s = stack(MockConfig::default(), false).await;
    let (status, body, _) = s.chat(chat_body("semantic_entropy", "Repeat the phrase: a b")).await;
    assert_eq!(status, 422, "{body}");
    assert!(body["error"]["missing"].as_array().unwrap().contains(&json!("nli")));
}

#[tokio::test]
async fn unknown_estimator_lists_valid_names() {
    let s = stack(MockConfig::default(), false).await;
    let (status, body, _) = s.chat(chat_body("vibes", "hi")).await;
    assert_eq!(status, 400);
    let valid = body["error"]["valid"].as_array().unwrap();
    assert_eq!(valid.len(), registry().len());
    assert!(valid.contains(&json!("msp")));
}

#[tokio::test]
async fn malformed_body_is_400() {
    let s = stack(MockConfig::default(), false).await;
    let resp = s
        .http
        .post(format!("{}/v1/chat", s.url))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}

#[tokio::test]
async fn identical_requests_identical_bodies() {
    let s = stack(MockConfig::default(), true).await;
    for est in ["semantic_entropy", "msp", "pmi", "p_true", "eccentricity_nli_contra"] {
        let b = chat_body(est, "Repeat the phrase: quiet river under stone");
        let (s1, _, t1) = s.chat(b.clone()).await;
        let (s2, _, t2) = s.chat(b).await;
        assert_eq!(s1, 200, "{t1}");
        assert_eq!(s2, 200);
        assert_eq!(t1, t2, "{est}");
    }
}

#[tokio::test]
async fn every_entry_scores_or_reports_a_typed_gap() {
    let s = stack(MockConfig::default(), true).await;
    for spec in registry() {
        let (status, body, text) = s.chat(chat_body(spec.name, "Repeat the phrase: red fox jumps over logs")).await;
        match status {
            200 => assert!(body["uncertainty_raw"].as_f64().unwrap().is_finite(), "{}", spec.name),
            422 => assert_eq!(body["error"]["kind"], "capability_gap", "{}", spec.name),
            other => panic!("{} -> {other}: {text}", spec.name),
        }
    }
}

#[tokio::test]
async fn listing_covers_table_rows_and_is_stable() {
    let s = stack(MockConfig::default(), false).await;
    let a = s.get("/v1/estimators").await;
    let b = s.get("/v1/estimators").await;
    assert_eq!(a, b);
    let list = a["estimators"].as_array().unwrap();
    for row in TABLE_ROWS {
        assert!(list.iter().any(|e| e["table_row"] == row), "{row}");
    }
    let msp = list.iter().find(|e| e["name"] == "msp").unwrap();
    assert_eq!(msp["compute"], "Low");
    assert_eq!(msp["category"], "information-based");
    assert_eq!(msp["inputs"], json!(["output_logprobs"]));
    assert_eq!(msp["api_obtainable"], true);
    let md = list.iter().find(|e| e["name"] == "mahalanobis").unwrap();
    assert_eq!(md["api_obtainable"], false);
}

#[tokio::test]
async fn disabled_entry_is_absent() {
    let mock = MockServer::start(MockConfig::default()).await.unwrap();
    let mut cfg = config_for(&mock, false);
    cfg.disabled_estimators = vec!["perplexity".into()];
    let url = serve(&cfg).await;
    let http = reqwest::Client::new();
    let list: serde_json::Value = http.get(format!("{url}/v1/estimators")).send().await.unwrap().json().await.unwrap();
    let names: Vec<&str> = list["estimators"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert!(!names.contains(&"perplexity"));
    assert_eq!(names.len(), registry().len() - 1);
    let resp = http.post(format!("{url}/v1/chat")).json(&chat_body("perplexity", "hi")).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}

#[tokio::test]
async fn calibration_adds_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let table = fit_bins("msp", &[0.1, 0.15, 0.3, 0.4], &[0.9, 0.7, 0.2, 0.0], 2).unwrap().table;
    let path = dir.path().join("msp.toml");
    table.save(&path).unwrap();

    let mock = MockServer::start(one_token(0.8)).await.unwrap();
    let mut cfg = config_for(&mock, false);
    cfg.calibration = vec![path];
    let url = serve(&cfg).await;
    let http = reqwest::Client::new();
    let body: serde_json::Value = http
        .post(format!("{url}/v1/chat"))
        .json(&chat_body("msp", "q"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!((body["uncertainty_raw"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(body["confidence"].as_f64().unwrap(), table.normalize(0.2));
    assert!((body["confidence"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    let other: serde_json::Value = http
        .post(format!("{url}/v1/chat"))
        .json(&chat_body("perplexity", "q"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(other.get("confidence").is_none());
}

#[tokio::test]
async fn request_api_key_overrides_and_never_leaks() {
    let s = stack(
        MockConfig {
            required_api_key: Some("sk-request-key-777".into()),
            ..MockConfig::default()
        },
        false,
    )
    .await;
    let (status, body, text) = s.chat(chat_body("msp", "Repeat the phrase: a b")).await;
    assert_eq!(status, 502, "{body}");
    assert_eq!(body["error"]["kind"], "upstream");

    let mut wrong = chat_body("msp", "Repeat the phrase: a b");
    wrong["api_key"] = json!("sk-wrong-key-123");
    let (status, _, text2) = s.chat(wrong).await;
    assert_eq!(status, 502);
    assert!(!text2.contains("sk-wrong-key-123"));
    assert!(!text.contains("sk-"));

    let mut right = chat_body("msp", "Repeat the phrase: a b");
    right["api_key"] = json!("sk-request-key-777");
    let (status, body, text3) = s.chat(right).await;
    assert_eq!(status, 200, "{body}");
    assert!(!text3.contains("sk-request-key-777"));
}

#[tokio::test]
async fn upstream_outage_is_502() {
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let mock = MockServer::start(MockConfig::default()).await.unwrap();
    let mut cfg = config_for(&mock, false);
    cfg.model.base_url = format!("http://{dead}/v1");
    let url = serve(&cfg).await;
    let resp = reqwest::Client::new()
        .post(format!("{url}/v1/chat"))
        .json(&chat_body("msp", "q"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 502);
}

#[tokio::test]
async fn health_reports_model() {
    let s = stack(MockConfig::default(), true).await;
    let h = s.get("/v1/health").await;
    assert_eq!(h["status"], "ok");
    assert_eq!(h["model"], "mock-1");
    assert_eq!(h["nli"], true);
}

#[tokio::test]
async fn model_override_reaches_upstream() {
    let s = stack(one_token(0.5), false).await;
    let mut b = chat_body("msp", "q");
    b["model"] = json!("other-model");
    b["params"] = json!({"max_new_tokens": 3});
    let (status, body, _) = s.chat(b).await;
    assert_eq!(status, 200, "{body}");
    assert!((body["uncertainty_raw"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}
