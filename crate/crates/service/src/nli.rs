//! Bridges the async NLI client to the synchronous [`NliSource`] the
//! estimators consume: scores are fetched up front, keyed by record id.

use std::collections::HashMap;

use futures::future::try_join_all;
use hedge_core::registry::NliSource;
use hedge_core::{Error, GenerationRecord, PairwiseScores};
use hedge_gateway::{GatewayError, NliClient};

#[derive(Debug, Clone, Default)]
pub struct PrecomputedNli {
    scores: HashMap<String, PairwiseScores>,
}

impl PrecomputedNli {
    pub fn insert(&mut self, id: impl Into<String>, scores: PairwiseScores) {
        self.scores.insert(id.into(), scores);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl NliSource for PrecomputedNli {
    fn pairwise(&self, record: &GenerationRecord) -> hedge_core::Result<PairwiseScores> {
        self.scores.get(&record.id).cloned().ok_or_else(|| Error::Unavailable {
            estimator: "nli".into(),
            input: format!("nli scores for record {}", record.id),
        })
    }
}

/// Scores every record with at least two samples.
pub async fn prefetch<'a>(
    client: &NliClient,
    records: impl IntoIterator<Item = &'a GenerationRecord>,
) -> Result<PrecomputedNli, GatewayError> {
    let jobs = records.into_iter().filter(|r| r.samples.len() >= 2).map(|r| async move {
        let texts = r.sample_texts();
        client.pairwise(&texts).await.map(|s| (r.id.clone(), s))
    });
    let mut out = PrecomputedNli::default();
    for (id, s) in try_join_all(jobs).await? {
        out.insert(id, s);
    }
    Ok(out)
}
