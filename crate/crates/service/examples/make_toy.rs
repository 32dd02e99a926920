//! Regenerates the bundled toy dataset under the given directory
//! (default `data/toy`):
//!
//! ```text
//! cargo run -p hedge-service --example make_toy -- data/toy
//! ```
//!
//! Records come from the deterministic mock model. Embeddings and ensemble
//! traces cannot come from an API, so they are synthesized: embeddings drift
//! away from the training cloud as the mock's confidence drops, and ensemble
//! members perturb the greedy step distributions more when it is low.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use hedge_core::records::save_dataset;
use hedge_core::EnsembleTrace;
use hedge_gateway::mock::{prompt_confidence, MockConfig, MockServer};
use hedge_gateway::{GenerationParams, LlmClient, ModelEndpoint, RecordPlan};
use hedge_service::generate::{generate_dataset, Prompt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const WORDS: [&str; 40] = [
    "apple", "river", "stone", "cloud", "lantern", "maple", "copper", "signal", "harvest", "window", "garden",
    "thunder", "velvet", "canyon", "pepper", "silver", "marble", "falcon", "orchard", "candle", "glacier", "meadow",
    "anchor", "rocket", "timber", "saddle", "pillow", "violet", "ladder", "mirror", "basket", "dragon", "island",
    "pocket", "rabbit", "spring", "tunnel", "winter", "yellow", "zipper",
];
const DIM: usize = 6;
const MEMBERS: usize = 3;

fn gaussian_lines(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> String {
    let normal = Normal::new(0.0, scale).expect("valid scale");
    let mut out = String::new();
    for _ in 0..n {
        let v: Vec<f64> = (0..DIM).map(|_| normal.sample(rng)).collect();
        out.push_str(&serde_json::to_string(&v).expect("serializes"));
        out.push('\n');
    }
    out
}

#[tokio::main]
async fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    fs::create_dir_all(&dir).expect("output dir");
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let prompts: Vec<Prompt> = (0..50)
        .map(|i| {
            let n = rng.random_range(3..=7);
            let phrase: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            let phrase = phrase.join(" ");
            Prompt {
                id: Some(format!("toy-{i:02}")),
                prompt: format!("Repeat the phrase: {phrase}"),
                reference: Some(phrase),
            }
        })
        .collect();
    let mut f = fs::File::create(dir.join("prompts.jsonl")).expect("prompts file");
    for p in &prompts {
        let line = serde_json::json!({"id": p.id, "prompt": p.prompt, "reference": p.reference});
        writeln!(f, "{line}").expect("write");
    }

    let mock = MockServer::start(MockConfig::default()).await.expect("mock");
    let client = LlmClient::new(ModelEndpoint {
        api_key: None,
        ..ModelEndpoint::new(mock.base_url(), "mock-1")
    })
    .expect("client");
    let params = GenerationParams::default();
    let mut ds = generate_dataset(&client, &prompts, &params, RecordPlan::default())
        .await
        .expect("generation");

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for (r, p) in ds.records.iter_mut().zip(&prompts) {
        let doubt = 1.0 - prompt_confidence(&p.prompt);
        let mut h: Vec<f64> = (0..DIM).map(|_| 0.5 * unit.sample(&mut rng)).collect();
        h[0] += 4.0 * doubt;
        h[1] -= 2.0 * doubt;
        r.embedding = Some(h);

        let spread = 0.2 + 1.5 * doubt;
        r.ensemble_traces = (0..MEMBERS)
            .map(|m| EnsembleTrace {
                model_id: format!("member-{m}"),
                steps: r
                    .output_tokens
                    .iter()
                    .map(|s| {
                        let w: Vec<f64> = s
                            .alternatives
                            .iter()
                            .map(|&(_, lp)| (lp + spread * unit.sample(&mut rng)).exp())
                            .collect();
                        let total: f64 = w.iter().sum();
                        s.alternatives.iter().zip(w).map(|(&(id, _), x)| (id, x / total)).collect()
                    })
                    .collect(),
            })
            .collect();
    }
    ds.metadata.insert("synthetic".into(), "embedding, ensemble_traces".into());
    save_dataset(&ds, dir.join("records.jsonl")).expect("records");

    fs::write(dir.join("train_embeddings.jsonl"), gaussian_lines(&mut rng, 200, 0.5)).expect("train");
    fs::write(dir.join("background_embeddings.jsonl"), gaussian_lines(&mut rng, 200, 2.0)).expect("background");
    eprintln!("wrote toy dataset to {}", dir.display());
}
