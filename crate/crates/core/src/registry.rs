//! Named estimator roster. Each entry carries its taxonomy (method family, access,
//! category, compute and memory cost, training-data need) and the record
//! inputs it consumes; [`evaluate`] dispatches a name to its estimator.

use serde::Serialize;

use crate::density::{huq_combine, mahalanobis, rde_score, relative_mahalanobis, DensityModels};
use crate::ensemble::{aggregate_token_measure, seq_msp_ensemble, seq_rmi, Aggregation, TokenMeasure};
use crate::error::{Error, Result};
use crate::info::{self, InfoConfig};
use crate::meaning::{
    build_similarity_matrix, cluster_bidirectional_entailment, degmat_uncertainty, eccentricity,
    eigv_laplacian, lexical_similarity, semantic_entropy, LexicalKernel, PairwiseScores, SimilarityKernel,
};
use crate::records::GenerationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    WhiteBox,
    BlackBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    InformationBased,
    MeaningDiversity,
    Ensembling,
    DensityBased,
    Reflexive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cost {
    Low,
    Medium,
    High,
}

/// A record input or fitted artifact an estimator depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    OutputLogprobs,
    TopkAlternatives,
    UnconditionalLogprobs,
    Samples,
    SampleLogprobs,
    Nli,
    EnsembleTraces,
    Embedding,
    GaussianFit,
    BackgroundFit,
    RdeFit,
    HuqCalibration,
    PTrue,
}

impl Input {
    /// Inputs that only exist for locally hosted models with exposed
    /// internals or pre-extracted artifacts; an API endpoint cannot supply them.
    pub fn api_obtainable(self) -> bool {
        !matches!(
            self,
            Input::EnsembleTraces
                | Input::Embedding
                | Input::GaussianFit
                | Input::BackgroundFit
                | Input::RdeFit
                | Input::HuqCalibration
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EstimatorSpec {
    pub name: &'static str,
    pub table_row: &'static str,
    pub access: Access,
    pub category: Category,
    pub compute: Cost,
    pub memory: Cost,
    pub needs_training_data: bool,
    pub inputs: &'static [Input],
}

macro_rules! spec {
    ($name:expr, $row:expr, $acc:ident, $cat:ident, $c:ident, $m:ident, $train:expr, [$($inp:ident),*]) => {
        EstimatorSpec {
            name: $name,
            table_row: $row,
            access: Access::$acc,
            category: Category::$cat,
            compute: Cost::$c,
            memory: Cost::$m,
            needs_training_data: $train,
            inputs: &[$(Input::$inp),*],
        }
    };
}

pub const TABLE_ROWS: [&str; 19] = [
    "Maximum sequence probability",
    "Perplexity",
    "Mean token entropy",
    "Monte Carlo sequence entropy",
    "Pointwise mutual information (PMI)",
    "Conditional PMI",
    "Semantic entropy",
    "Sentence-level ensemble-based measures",
    "Token-level ensemble-based measures",
    "Mahalanobis distance (MD)",
    "Robust density estimation (RDE)",
    "Relative Mahalanobis distance (RMD)",
    "Hybrid Uncertainty Quantification (HUQ)",
    "p(True)",
    "Number of semantic sets (NumSets)",
    "Sum of eigenvalues of the graph Laplacian (EigV)",
    "Degree matrix (Deg)",
    "Eccentricity (Ecc)",
    "Lexical similarity (LexSim)",
];

static REGISTRY: &[EstimatorSpec] = &[
    spec!("msp", TABLE_ROWS[0], WhiteBox, InformationBased, Low, Low, false, [OutputLogprobs]),
    spec!("perplexity", TABLE_ROWS[1], WhiteBox, InformationBased, Low, Low, false, [OutputLogprobs]),
    spec!("mean_token_entropy", TABLE_ROWS[2], WhiteBox, InformationBased, Low, Low, false, [TopkAlternatives]),
    spec!("mc_sequence_entropy", TABLE_ROWS[3], WhiteBox, InformationBased, High, Low, false, [Samples, SampleLogprobs]),
    spec!("mc_normalized_sequence_entropy", TABLE_ROWS[3], WhiteBox, InformationBased, High, Low, false, [Samples, SampleLogprobs]),
    spec!("pmi", TABLE_ROWS[4], WhiteBox, InformationBased, Medium, Low, false, [OutputLogprobs, UnconditionalLogprobs]),
    spec!("cpmi", TABLE_ROWS[5], WhiteBox, InformationBased, Medium, Medium, false, [OutputLogprobs, TopkAlternatives, UnconditionalLogprobs]),
    spec!("semantic_entropy", TABLE_ROWS[6], WhiteBox, MeaningDiversity, High, Low, false, [Samples, SampleLogprobs, Nli]),
    spec!("ensemble_seq_msp", TABLE_ROWS[7], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("ensemble_seq_rmi", TABLE_ROWS[7], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("ensemble_tok_total_entropy", TABLE_ROWS[8], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("ensemble_tok_data_uncertainty", TABLE_ROWS[8], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("ensemble_tok_mi", TABLE_ROWS[8], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("ensemble_tok_epkl", TABLE_ROWS[8], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("ensemble_tok_rmi", TABLE_ROWS[8], WhiteBox, Ensembling, High, High, true, [EnsembleTraces]),
    spec!("mahalanobis", TABLE_ROWS[9], WhiteBox, DensityBased, Low, Low, true, [Embedding, GaussianFit]),
    spec!("rde", TABLE_ROWS[10], WhiteBox, DensityBased, Low, Low, true, [Embedding, RdeFit]),
    spec!("rmd", TABLE_ROWS[11], WhiteBox, DensityBased, Low, Low, true, [Embedding, GaussianFit, BackgroundFit]),
    spec!("huq", TABLE_ROWS[12], WhiteBox, DensityBased, Low, Low, true, [Embedding, GaussianFit, HuqCalibration, OutputLogprobs]),
    spec!("p_true", TABLE_ROWS[13], WhiteBox, Reflexive, Medium, Low, false, [PTrue]),
    spec!("num_sem_sets", TABLE_ROWS[14], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("eigv_jaccard", TABLE_ROWS[15], BlackBox, MeaningDiversity, High, Low, false, [Samples]),
    spec!("eigv_nli_entail", TABLE_ROWS[15], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("eigv_nli_contra", TABLE_ROWS[15], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("degmat_jaccard", TABLE_ROWS[16], BlackBox, MeaningDiversity, High, Low, false, [Samples]),
    spec!("degmat_nli_entail", TABLE_ROWS[16], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("degmat_nli_contra", TABLE_ROWS[16], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("eccentricity_jaccard", TABLE_ROWS[17], BlackBox, MeaningDiversity, High, Low, false, [Samples]),
    spec!("eccentricity_nli_entail", TABLE_ROWS[17], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("eccentricity_nli_contra", TABLE_ROWS[17], BlackBox, MeaningDiversity, High, Low, false, [Samples, Nli]),
    spec!("lexsim_rouge1", TABLE_ROWS[18], BlackBox, MeaningDiversity, High, Low, false, [Samples]),
    spec!("lexsim_rougeL", TABLE_ROWS[18], BlackBox, MeaningDiversity, High, Low, false, [Samples]),
    spec!("lexsim_bleu", TABLE_ROWS[18], BlackBox, MeaningDiversity, High, Low, false, [Samples]),
];

pub fn registry() -> &'static [EstimatorSpec] {
    REGISTRY
}

pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|s| s.name).collect()
}

pub fn lookup(name: &str) -> Result<&'static EstimatorSpec> {
    REGISTRY.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownEstimator {
        name: name.to_string(),
        valid: names().join(", "),
    })
}

/// NLI scores over a record's sampled responses.
pub trait NliSource: Sync {
    fn pairwise(&self, record: &GenerationRecord) -> Result<PairwiseScores<f64>>;
}

#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub info: InfoConfig<f64>,
    pub aggregation: Aggregation,
    pub eccentricity_threshold: f64,
    pub density: Option<&'a DensityModels>,
    pub nli: Option<&'a dyn NliSource>,
}

impl Default for EvalContext<'_> {
    fn default() -> Self {
        Self {
            info: InfoConfig::default(),
            aggregation: Aggregation::default(),
            eccentricity_threshold: 0.9,
            density: None,
            nli: None,
        }
    }
}

fn embedding<'r>(name: &str, r: &'r GenerationRecord) -> Result<&'r [f64]> {
    r.embedding.as_deref().ok_or_else(|| Error::unavailable(name, "embedding"))
}

fn fitted<'m, T>(name: &str, what: &str, x: Option<&'m T>) -> Result<&'m T> {
    x.ok_or_else(|| Error::unavailable(name, what))
}

impl EvalContext<'_> {
    fn nli_scores(&self, name: &str, r: &GenerationRecord) -> Result<PairwiseScores<f64>> {
        let texts = r.sample_texts();
        if texts.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: texts.len(),
            });
        }
        self.nli.ok_or_else(|| Error::unavailable(name, "nli provider"))?.pairwise(r)
    }

    fn graph(&self, name: &str, kernel: SimilarityKernel, r: &GenerationRecord) -> Result<crate::meaning::SimilarityMatrix<f64>> {
        let texts = r.sample_texts();
        let pw = if kernel.needs_nli() {
            Some(self.nli_scores(name, r)?)
        } else {
            None
        };
        build_similarity_matrix(&texts, kernel, pw.as_ref())
    }

    fn density(&self, name: &str) -> Result<&DensityModels> {
        fitted(name, "fitted density model", self.density)
    }
}

/// Uncertainty of `record` under the named estimator.
pub fn evaluate(name: &str, record: &GenerationRecord, ctx: &EvalContext<'_>) -> Result<f64> {
    let spec = lookup(name)?;
    let name = spec.name;
    let kernel_of = |suffix: &str| match suffix {
        "jaccard" => SimilarityKernel::Jaccard,
        "nli_entail" => SimilarityKernel::NliEntail,
        _ => SimilarityKernel::NliContra,
    };
    let tok = |m| aggregate_token_measure(record, m, ctx.aggregation);
    match name {
        "msp" => info::msp(record),
        "perplexity" => info::perplexity(record),
        "mean_token_entropy" => info::mean_token_entropy(record, &ctx.info),
        "mc_sequence_entropy" => info::mc_sequence_entropy(record, false),
        "mc_normalized_sequence_entropy" => info::mc_sequence_entropy(record, true),
        "pmi" => info::pmi(record),
        "cpmi" => info::cpmi(record, &ctx.info),
        "p_true" => info::p_true_uncertainty(record),
        "semantic_entropy" => {
            let pw = ctx.nli_scores(name, record)?;
            semantic_entropy(record, &cluster_bidirectional_entailment(&pw))
        }
        "num_sem_sets" => Ok(cluster_bidirectional_entailment(&ctx.nli_scores(name, record)?).cluster_count as f64),
        "ensemble_seq_msp" => seq_msp_ensemble(record),
        "ensemble_seq_rmi" => seq_rmi(record),
        "ensemble_tok_total_entropy" => tok(TokenMeasure::TotalEntropy),
        "ensemble_tok_data_uncertainty" => tok(TokenMeasure::DataUncertainty),
        "ensemble_tok_mi" => tok(TokenMeasure::MutualInformation),
        "ensemble_tok_epkl" => tok(TokenMeasure::Epkl),
        "ensemble_tok_rmi" => tok(TokenMeasure::Rmi),
        "mahalanobis" => {
            let h = embedding(name, record)?;
            mahalanobis(fitted(name, "gaussian fit", ctx.density(name)?.gaussian.as_ref())?, h)
        }
        "rmd" => {
            let h = embedding(name, record)?;
            let d = ctx.density(name)?;
            relative_mahalanobis(
                fitted(name, "gaussian fit", d.gaussian.as_ref())?,
                fitted(name, "background fit", d.background.as_ref())?,
                h,
            )
        }
        "rde" => {
            let h = embedding(name, record)?;
            rde_score(fitted(name, "rde fit", ctx.density(name)?.rde.as_ref())?, h)
        }
        "huq" => {
            let h = embedding(name, record)?;
            let d = ctx.density(name)?;
            let md = mahalanobis(fitted(name, "gaussian fit", d.gaussian.as_ref())?, h)?;
            let cfg = fitted(name, "huq calibration", d.huq.as_ref())?;
            huq_combine(cfg, md, info::msp(record)?)
        }
        "lexsim_rouge1" => lexical_similarity(&record.sample_texts(), LexicalKernel::Rouge1),
        "lexsim_rougeL" => lexical_similarity(&record.sample_texts(), LexicalKernel::RougeL),
        "lexsim_bleu" => lexical_similarity(&record.sample_texts(), LexicalKernel::Bleu),
        other => {
            if let Some(k) = other.strip_prefix("eigv_") {
                eigv_laplacian(&ctx.graph(name, kernel_of(k), record)?)
            } else if let Some(k) = other.strip_prefix("degmat_") {
                Ok(degmat_uncertainty(&ctx.graph(name, kernel_of(k), record)?))
            } else if let Some(k) = other.strip_prefix("eccentricity_") {
                Ok(eccentricity(&ctx.graph(name, kernel_of(k), record)?, ctx.eccentricity_threshold)?.total)
            } else {
                unreachable!("registry entry {other} has no dispatch arm")
            }
        }
    }
}

/// The error is a missing input or fitted artifact rather than bad data.
pub fn is_capability_gap(e: &Error) -> bool {
    matches!(e, Error::Unavailable { .. } | Error::InsufficientSamples { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{SampledOutput, TokenStep};

    #[test]
    fn roster_covers_every_table_row() {
        for row in TABLE_ROWS {
            assert!(REGISTRY.iter().any(|s| s.table_row == row), "{row}");
        }
        let mut n = names();
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), REGISTRY.len());
    }

    #[test]
    fn unknown_name_lists_valid() {
        let e = lookup("nope").unwrap_err();
        assert!(e.to_string().contains("msp") && e.to_string().contains("lexsim_bleu"));
    }

    fn sample(text: &str) -> SampledOutput {
        SampledOutput {
            text: text.into(),
            tokens: vec![],
            total_logprob: -1.0,
            length: 1,
        }
    }

    #[test]
    fn every_entry_scores_or_reports_a_gap() {
        let mut r = GenerationRecord::text_only("r", "q", "a");
        r.output_tokens = vec![TokenStep {
            token_id: 1,
            token_text: "a".into(),
            logprob: 0.8f64.ln(),
            alternatives: vec![(1, 0.8f64.ln()), (2, 0.2f64.ln())],
            unconditional_logprob: None,
        }];
        r.samples = vec![sample("same"), sample("same"), sample("same")];
        let ctx = EvalContext::default();
        for s in registry() {
            match evaluate(s.name, &r, &ctx) {
                Ok(v) => assert!(v.is_finite(), "{}", s.name),
                Err(e) => assert!(is_capability_gap(&e), "{}: {e}", s.name),
            }
        }
        assert!((evaluate("msp", &r, &ctx).unwrap() - 0.2).abs() < 1e-12);
        assert!(evaluate("degmat_jaccard", &r, &ctx).unwrap().abs() < 1e-12);
    }
}
