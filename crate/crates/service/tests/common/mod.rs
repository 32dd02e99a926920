#![allow(dead_code)]

use std::sync::Arc;

use hedge_gateway::mock::{MockConfig, MockServer};
use hedge_service::service::{app, AppState, ModelSection, ServiceConfig};

pub struct Stack {
    pub mock: MockServer,
    pub url: String,
    pub http: reqwest::Client,
}

pub fn config_for(mock: &MockServer, nli: bool) -> ServiceConfig {
    ServiceConfig {
        model: ModelSection {
            base_url: mock.base_url(),
            name: "mock-1".into(),
            timeout_secs: 10,
            max_parallel: 4,
        },
        nli_url: nli.then(|| mock.nli_url()),
        ..ServiceConfig::default()
    }
}

pub async fn serve(cfg: &ServiceConfig) -> String {
    let state = Arc::new(AppState::from_config(cfg).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app(state)).await });
    format!("http://{addr}")
}

pub async fn stack(mock_cfg: MockConfig, nli: bool) -> Stack {
    let mock = MockServer::start(mock_cfg).await.unwrap();
    let url = serve(&config_for(&mock, nli)).await;
    Stack {
        mock,
        url,
        http: reqwest::Client::new(),
    }
}

impl Stack {
    pub async fn chat(&self, body: serde_json::Value) -> (u16, serde_json::Value, String) {
        let resp = self.http.post(format!("{}/v1/chat", self.url)).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        let json = serde_json::from_str(&text).unwrap_or(serde_json::Value::Null);
        (status, json, text)
    }

    pub async fn get(&self, path: &str) -> serde_json::Value {
        self.http.get(format!("{}{path}", self.url)).send().await.unwrap().json().await.unwrap()
    }
}

pub fn chat_body(estimator: &str, prompt: &str) -> serde_json::Value {
    serde_json::json!({
        "messages": [{"role": "user", "content": prompt}],
        "estimator": estimator,
    })
}
