mod common;

use std::io::Write;
use std::sync::{Arc, Mutex};

use common::{chat_body, stack};
use hedge_gateway::mock::MockConfig;
use serde_json::json;

#[derive(Clone, Default)]
struct Buf(Arc<Mutex<Vec<u8>>>);

impl Write for Buf {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

const KEY: &str = "sk-secret-logcheck-4242";

#[tokio::test]
async fn keys_never_reach_the_logs() {
    let buf = Buf::default();
    let sink = buf.clone();
    tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_ansi(false)
        .with_writer(move || sink.clone())
        .init();

    let s = stack(
        MockConfig {
            required_api_key: Some(KEY.into()),
            fail_first: 2,
            ..MockConfig::default()
        },
        false,
    )
    .await;

    let mut ok = chat_body("msp", "Repeat the phrase: alpha beta");
    ok["api_key"] = json!(KEY);
    let (status, _, _) = s.chat(ok).await;
    assert_eq!(status, 200);

    let mut bad = chat_body("msp", "Repeat the phrase: alpha beta");
    bad["api_key"] = json!("sk-other-secret-9999");
    let (status, _, text) = s.chat(bad).await;
    assert_eq!(status, 502);
    assert!(!text.contains("sk-other-secret-9999"));

    let logs = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
    assert!(logs.contains("retrying upstream request"), "{logs}");
    assert!(logs.contains("chat turn failed"), "{logs}");
    assert!(!logs.contains(KEY));
    assert!(!logs.contains("sk-other-secret-9999"));
}
