//! Ensemble uncertainty over M member traces aligned to the greedy output.
//!
//! Every ingested distribution is floored at [`EPSILON_FLOOR`] over the
//! union support of the members and renormalized, so all KL terms are
//! finite.
//!
//! EPKL is the mean KL divergence over ordered member pairs,
//! `1/(M(M-1)) * sum_{i != j} KL(P_i || P_j)`. With this normalization
//! `EPKL >= MI` holds (KL is convex in its second argument), so token RMI
//! `EPKL - MI` is non-negative.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::GenerationRecord;
use crate::scalar::{entropy, kl_divergence, log_sum_exp, Real};

pub const EPSILON_FLOOR: f64 = 1e-12;

/// M member distributions over one shared support for a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistributionSet<T> {
    pub support: Vec<u32>,
    /// `per_model[i][s]` is member i's probability of `support[s]`.
    pub per_model: Vec<Vec<T>>,
}

fn floor_and_normalize<T: Real>(p: &mut [T]) {
    let eps = T::lit(EPSILON_FLOOR);
    p.iter_mut().for_each(|x| *x = x.max(eps));
    let total: T = p.iter().copied().sum();
    p.iter_mut().for_each(|x| *x = *x / total);
}

impl<T: Real> StepDistributionSet<T> {
    /// Aligns sparse `(token_id, probability)` member distributions on the
    /// union of their supports.
    pub fn from_sparse(members: &[&[(u32, f64)]]) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Alignment(format!("need at least 2 members, got {}", members.len())));
        }
        let support: Vec<u32> = members
            .iter()
            .flat_map(|m| m.iter().map(|&(id, _)| id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if support.is_empty() {
            return Err(Error::Alignment("empty support".into()));
        }
        let per_model = members
            .iter()
            .map(|m| {
                let mut p = vec![T::zero(); support.len()];
                for &(id, prob) in m.iter() {
                    let pos = support.binary_search(&id).expect("id is in the union support");
                    p[pos] = p[pos] + T::lit(prob);
                }
                floor_and_normalize(&mut p);
                p
            })
            .collect();
        Ok(Self { support, per_model })
    }

    /// Dense member distributions that already share a support of equal length.
    pub fn from_dense(per_model: Vec<Vec<T>>) -> Result<Self> {
        if per_model.len() < 2 {
            return Err(Error::Alignment(format!("need at least 2 members, got {}", per_model.len())));
        }
        let n = per_model[0].len();
        if n == 0 || per_model.iter().any(|p| p.len() != n) {
            return Err(Error::Alignment("member supports differ in length".into()));
        }
        let mut per_model = per_model;
        per_model.iter_mut().for_each(|p| floor_and_normalize(p));
        Ok(Self {
            support: (0..n as u32).collect(),
            per_model,
        })
    }

    pub fn members(&self) -> usize {
        self.per_model.len()
    }

    pub fn mean_distribution(&self) -> Vec<T> {
        let m = T::count(self.members());
        (0..self.support.len())
            .map(|s| self.per_model.iter().map(|p| p[s]).sum::<T>() / m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenMeasures<T> {
    pub total_entropy: T,
    pub data_uncertainty: T,
    pub mi: T,
    pub epkl: T,
    pub rmi: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMeasure {
    TotalEntropy,
    DataUncertainty,
    MutualInformation,
    Epkl,
    Rmi,
}

impl<T: Copy> TokenMeasures<T> {
    pub fn get(&self, m: TokenMeasure) -> T {
        match m {
            TokenMeasure::TotalEntropy => self.total_entropy,
            TokenMeasure::DataUncertainty => self.data_uncertainty,
            TokenMeasure::MutualInformation => self.mi,
            TokenMeasure::Epkl => self.epkl,
            TokenMeasure::Rmi => self.rmi,
        }
    }
}

pub fn token_measures<T: Real>(step: &StepDistributionSet<T>) -> TokenMeasures<T> {
    let m = step.members();
    let mean = step.mean_distribution();
    let total_entropy = entropy(&mean);
    let data_uncertainty = step.per_model.iter().map(|p| entropy(p)).sum::<T>() / T::count(m);
    let mi = total_entropy - data_uncertainty;
    let mut kl_sum = T::zero();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kl_sum = kl_sum + kl_divergence(&step.per_model[i], &step.per_model[j]);
            }
        }
    }
    let epkl = kl_sum / T::count(m * (m - 1));
    TokenMeasures {
        total_entropy,
        data_uncertainty,
        mi,
        epkl,
        rmi: epkl - mi,
    }
}

/// How per-token measures become a sequence score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

fn traces<'a>(record: &'a GenerationRecord, estimator: &str) -> Result<&'a [crate::records::EnsembleTrace]> {
    if record.ensemble_traces.len() < 2 {
        return Err(Error::unavailable(estimator, "ensemble_traces (need >= 2 members)"));
    }
    let steps = record.ensemble_traces[0].steps.len();
    if record.ensemble_traces.iter().any(|t| t.steps.len() != steps) {
        return Err(Error::Alignment("ensemble traces have unequal step counts".into()));
    }
    if !record.output_tokens.is_empty() && steps != record.output_tokens.len() {
        return Err(Error::Alignment(format!(
            "traces have {steps} steps, greedy output has {} tokens",
            record.output_tokens.len()
        )));
    }
    if steps == 0 {
        return Err(Error::unavailable(estimator, "ensemble steps"));
    }
    Ok(&record.ensemble_traces)
}

pub fn aggregate_token_measure<T: Real>(
    record: &GenerationRecord,
    measure: TokenMeasure,
    aggregation: Aggregation,
) -> Result<T> {
    let traces = traces(record, "ensemble token measure")?;
    let steps = traces[0].steps.len();
    let mut total = T::zero();
    for l in 0..steps {
        let members: Vec<&[(u32, f64)]> = traces.iter().map(|t| t.steps[l].as_slice()).collect();
        let set = StepDistributionSet::<T>::from_sparse(&members)?;
        total = total + token_measures(&set).get(measure);
    }
    Ok(match aggregation {
        Aggregation::Sum => total,
        Aggregation::Mean => total / T::count(steps),
    })
}

/// Per-member `ln P(y | x, theta_i)` of the greedy output, with floored step probabilities.
fn member_sequence_logprobs<T: Real>(record: &GenerationRecord, estimator: &str) -> Result<(Vec<T>, usize)> {
    let traces = traces(record, estimator)?;
    if record.output_tokens.is_empty() {
        return Err(Error::unavailable(estimator, "output_tokens"));
    }
    let eps = T::lit(EPSILON_FLOOR);
    let lps = traces
        .iter()
        .map(|t| {
            t.steps
                .iter()
                .zip(&record.output_tokens)
                .map(|(step, tok)| {
                    let p: T = step
                        .iter()
                        .filter(|&&(id, _)| id == tok.token_id)
                        .map(|&(_, p)| T::lit(p))
                        .sum();
                    p.max(eps).ln()
                })
                .sum()
        })
        .collect();
    Ok((lps, record.output_tokens.len()))
}

/// `1 - (1/M) sum_i Pbar_i` with `Pbar_i` the length-normalized sequence probability under member i.
pub fn seq_msp_ensemble<T: Real>(record: &GenerationRecord) -> Result<T> {
    let (lps, len) = member_sequence_logprobs::<T>(record, "ensemble_seq_msp")?;
    let len = T::count(len);
    let mean = lps.iter().map(|&lp| (lp / len).exp()).sum::<T>() / T::count(lps.len());
    Ok(T::one() - mean)
}

/// Sequence-level reverse mutual information,
/// `(1/M) sum_i ln(P(y|x) / P(y|x, theta_i))` with `P(y|x)` the member mean.
pub fn seq_rmi<T: Real>(record: &GenerationRecord) -> Result<T> {
    let (lps, _) = member_sequence_logprobs::<T>(record, "ensemble_seq_rmi")?;
    let m = T::count(lps.len());
    let log_mean = log_sum_exp(&lps) - m.ln();
    Ok(lps.iter().map(|&lp| log_mean - lp).sum::<T>() / m)
}
