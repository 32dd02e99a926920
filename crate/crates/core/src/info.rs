//! Information-based white-box estimators over token and sequence
//! probabilities of a single model, plus the p(True) score.
//!
//! Every estimator is oriented "higher = more uncertain".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{GenerationRecord, TokenStep};
use crate::scalar::{entropy, Real};

/// How a step entropy is computed from a truncated top-k distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Divide the alternative masses by their sum.
    #[default]
    Renormalize,
    /// Add one pseudo-outcome carrying the missing mass `1 - sum`.
    RemainderBucket,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoConfig<T> {
    /// Entropy threshold (nats) above which CPMI adds the marginal term.
    pub cpmi_tau: T,
    pub cpmi_lambda: T,
    #[serde(default)]
    pub truncation_mode: TruncationMode,
}

impl<T: Real> InfoConfig<T> {
    pub fn new(cpmi_tau: T, cpmi_lambda: T, truncation_mode: TruncationMode) -> Result<Self> {
        let cfg = Self {
            cpmi_tau,
            cpmi_lambda,
            truncation_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cpmi_tau > T::zero()) {
            return Err(Error::Input(format!("cpmi_tau must be > 0, got {}", self.cpmi_tau)));
        }
        if !(self.cpmi_lambda >= T::zero()) {
            return Err(Error::Input(format!("cpmi_lambda must be >= 0, got {}", self.cpmi_lambda)));
        }
        Ok(())
    }
}

impl<T: Real> Default for InfoConfig<T> {
    fn default() -> Self {
        Self {
            cpmi_tau: T::lit(2.0),
            cpmi_lambda: T::one(),
            truncation_mode: TruncationMode::Renormalize,
        }
    }
}

/// Entropy of one step's top-k distribution.
pub fn step_entropy<T: Real>(alternatives: &[(u32, f64)], mode: TruncationMode) -> T {
    let mut p: Vec<T> = alternatives.iter().map(|&(_, lp)| T::lit(lp).exp()).collect();
    let total: T = p.iter().copied().sum();
    match mode {
        TruncationMode::Renormalize => {
            if total > T::zero() {
                p.iter_mut().for_each(|x| *x = *x / total);
            }
        }
        TruncationMode::RemainderBucket => {
            let rest = T::one() - total;
            if rest > T::zero() {
                p.push(rest);
            }
        }
    }
    entropy(&p)
}

fn tokens<'a>(record: &'a GenerationRecord, estimator: &str) -> Result<&'a [TokenStep]> {
    if record.output_tokens.is_empty() {
        Err(Error::unavailable(estimator, "output_tokens"))
    } else {
        Ok(&record.output_tokens)
    }
}

fn sum_logprob<T: Real>(steps: &[TokenStep]) -> T {
    steps.iter().map(|s| T::lit(s.logprob)).sum()
}

/// `1 - P(y | x)`.
pub fn msp<T: Real>(record: &GenerationRecord) -> Result<T> {
    let steps = tokens(record, "msp")?;
    Ok(T::one() - sum_logprob::<T>(steps).exp())
}

/// `exp(-(1/L) sum_l ln P(y_l | y_<l, x))`, i.e. the exponentiated average
/// negative log-probability of the generated tokens. Always >= 1.
pub fn perplexity<T: Real>(record: &GenerationRecord) -> Result<T> {
    let steps = tokens(record, "perplexity")?;
    Ok((-sum_logprob::<T>(steps) / T::count(steps.len())).exp())
}

pub fn mean_token_entropy<T: Real>(record: &GenerationRecord, cfg: &InfoConfig<T>) -> Result<T> {
    let steps = tokens(record, "mean_token_entropy")?;
    let mut total = T::zero();
    for s in steps {
        if s.alternatives.is_empty() {
            return Err(Error::unavailable("mean_token_entropy", "alternatives"));
        }
        total = total + step_entropy::<T>(&s.alternatives, cfg.truncation_mode);
    }
    Ok(total / T::count(steps.len()))
}

/// Monte Carlo sequence entropy `-(1/K) sum_k ln P(y_k | x)`; with
/// `normalized`, each log-probability is divided by its sample length.
pub fn mc_sequence_entropy<T: Real>(record: &GenerationRecord, normalized: bool) -> Result<T> {
    let name = if normalized {
        "mc_normalized_sequence_entropy"
    } else {
        "mc_sequence_entropy"
    };
    if record.samples.is_empty() {
        return Err(Error::unavailable(name, "samples"));
    }
    let mut total = T::zero();
    for s in &record.samples {
        let lp = T::lit(s.total_logprob);
        total = total
            + if normalized {
                if s.length == 0 {
                    return Err(Error::unavailable(name, "sample length"));
                }
                lp / T::count(s.length)
            } else {
                lp
            };
    }
    Ok(-total / T::count(record.samples.len()))
}

fn unconditional(step: &TokenStep, estimator: &str) -> Result<f64> {
    step.unconditional_logprob
        .ok_or_else(|| Error::unavailable(estimator, "unconditional_logprob"))
}

/// Negative mean pointwise mutual information between output tokens and input:
/// `(1/L) sum_l [ln P(y_l | y_<l) - ln P(y_l | y_<l, x)]`.
pub fn pmi<T: Real>(record: &GenerationRecord) -> Result<T> {
    let steps = tokens(record, "pmi")?;
    let mut total = T::zero();
    for s in steps {
        total = total + T::lit(unconditional(s, "pmi")?) - T::lit(s.logprob);
    }
    Ok(total / T::count(steps.len()))
}

/// Conditional PMI: the length-normalized negative log-likelihood plus
/// `lambda / L` times the unconditional log-probabilities of the steps whose
/// conditional entropy is at least `tau`.
pub fn cpmi<T: Real>(record: &GenerationRecord, cfg: &InfoConfig<T>) -> Result<T> {
    let steps = tokens(record, "cpmi")?;
    let len = T::count(steps.len());
    let mut nll = T::zero();
    let mut marginal = T::zero();
    for s in steps {
        let u = unconditional(s, "cpmi")?;
        if s.alternatives.is_empty() {
            return Err(Error::unavailable("cpmi", "alternatives"));
        }
        nll = nll - T::lit(s.logprob);
        if step_entropy::<T>(&s.alternatives, cfg.truncation_mode) >= cfg.cpmi_tau {
            marginal = marginal + T::lit(u);
        }
    }
    Ok(nll / len + cfg.cpmi_lambda * marginal / len)
}

/// `1 - p_true`.
pub fn p_true_uncertainty<T: Real>(record: &GenerationRecord) -> Result<T> {
    record
        .p_true
        .map(|p| T::one() - T::lit(p))
        .ok_or_else(|| Error::unavailable("p_true", "p_true"))
}
