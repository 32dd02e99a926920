use std::fs;
use std::path::Path;

use futures::future::try_join_all;
use hedge_core::registry::Input;
use hedge_core::Dataset;
use hedge_gateway::wire::ChatMessage;
use hedge_gateway::{GatewayError, GenerationParams, LlmClient, RecordPlan};
use serde::Deserialize;

use crate::error::CliError;

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    #[serde(default)]
    pub id: Option<String>,
    pub prompt: String,
    #[serde(default)]
    pub reference: Option<String>,
}

pub fn load_prompts(path: &Path) -> Result<Vec<Prompt>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Generates one record per prompt. Records are produced concurrently
/// within the client's parallelism budget and returned in prompt order.
pub async fn generate_dataset(
    client: &LlmClient,
    prompts: &[Prompt],
    params: &GenerationParams,
    plan: RecordPlan,
) -> Result<Dataset, CliError> {
    let jobs = prompts.iter().enumerate().map(|(i, p)| async move {
        let id = p.id.clone().unwrap_or_else(|| format!("{i:04}"));
        let mut g = client.generate(&id, &[ChatMessage::user(p.prompt.clone())], params, plan).await?;
        if params.num_samples > 0 && g.missing(Input::SampleLogprobs) {
            return Err(GatewayError::Capability {
                field: "sample logprobs (required for stored records)".into(),
            });
        }
        g.record.reference_text = p.reference.clone();
        Ok::<_, GatewayError>(g.record)
    });
    let records = try_join_all(jobs).await?;
    let mut ds = Dataset::new(records);
    ds.metadata.insert("model".into(), client.endpoint().model_name.clone());
    ds.metadata.insert("num_samples".into(), params.num_samples.to_string());
    ds.metadata.insert("max_new_tokens".into(), params.max_new_tokens.to_string());
    Ok(ds)
}
