//! Meaning-diversity estimators built on a K x K similarity matrix over
//! sampled responses: semantic sets, semantic entropy, the normalized graph
//! Laplacian spectrum, degree matrix, eccentricity and lexical similarity.
//!
//! Semantic entropy uses the cluster *mean* of sample probabilities,
//! `P_m = (1/|C_m|) sum_{y in C_m} P(y|x)`. Earlier semantic-entropy
//! formulations sum the probabilities instead; the two coincide only for
//! singleton clusters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::records::GenerationRecord;
use crate::scalar::Real;
use crate::textmetrics::{TextMetric, TokenizedText};

/// Directional NLI probabilities: `entail[(i, j)] = p_entail(premise = y_i, hypothesis = y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseScores<T> {
    pub entail: Matrix<T>,
    pub contra: Matrix<T>,
}

impl<T: Real> PairwiseScores<T> {
    pub fn new(entail: Matrix<T>, contra: Matrix<T>) -> Result<Self> {
        if !entail.is_square() || entail.rows() != contra.rows() || !contra.is_square() {
            return Err(Error::Shape {
                expected: entail.rows(),
                got: contra.rows(),
            });
        }
        Ok(Self { entail, contra })
    }

    pub fn len(&self) -> usize {
        self.entail.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Both directions of `(a, b)` favour entailment over contradiction.
    pub fn mutually_entail(&self, a: usize, b: usize) -> bool {
        self.entail[(a, b)] > self.contra[(a, b)] && self.entail[(b, a)] > self.contra[(b, a)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKernel {
    Jaccard,
    NliEntail,
    NliContra,
    Rouge1,
    #[serde(rename = "rougeL")]
    RougeL,
    Bleu,
}

impl SimilarityKernel {
    pub fn needs_nli(self) -> bool {
        matches!(self, SimilarityKernel::NliEntail | SimilarityKernel::NliContra)
    }

    fn text_metric(self) -> Option<TextMetric> {
        match self {
            SimilarityKernel::Jaccard => Some(TextMetric::Jaccard),
            SimilarityKernel::Rouge1 => Some(TextMetric::Rouge1),
            SimilarityKernel::RougeL => Some(TextMetric::RougeL),
            SimilarityKernel::Bleu => Some(TextMetric::Bleu),
            SimilarityKernel::NliEntail | SimilarityKernel::NliContra => None,
        }
    }
}

/// Symmetric similarity matrix with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    pub s: Matrix<T>,
    pub kernel: SimilarityKernel,
}

impl<T: Real> SimilarityMatrix<T> {
    /// Wraps an explicit matrix, symmetrizing it as `(S + S^T) / 2`.
    pub fn from_matrix(s: Matrix<T>, kernel: SimilarityKernel) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::Shape {
                expected: s.rows(),
                got: s.cols(),
            });
        }
        let half = T::lit(0.5);
        let sym = Matrix::from_fn(s.rows(), s.cols(), |i, j| {
            if i == j {
                s[(i, i)]
            } else {
                (s[(i, j)] + s[(j, i)]) * half
            }
        });
        Ok(Self { s: sym, kernel })
    }

    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds `S[i][j] = (s(y_i, y_j) + s(y_j, y_i)) / 2` over the response texts.
///
/// Text kernels put 1 on the diagonal (a response is identical to itself,
/// even when its token set is empty).
pub fn build_similarity_matrix<T: Real, S: AsRef<str>>(
    texts: &[S],
    kernel: SimilarityKernel,
    pairwise: Option<&PairwiseScores<T>>,
) -> Result<SimilarityMatrix<T>> {
    let k = texts.len();
    if k < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: k });
    }
    let raw = match kernel.text_metric() {
        Some(metric) => {
            let toks: Vec<TokenizedText> = texts.iter().map(|t| TokenizedText::new(t.as_ref())).collect();
            Matrix::from_fn(k, k, |i, j| {
                if i == j {
                    T::one()
                } else {
                    metric.score::<T>(&toks[i], &toks[j])
                }
            })
        }
        None => {
            let pw = pairwise.ok_or_else(|| Error::unavailable("similarity", "nli pairwise scores"))?;
            if pw.len() != k {
                return Err(Error::Shape {
                    expected: k,
                    got: pw.len(),
                });
            }
            if kernel == SimilarityKernel::NliEntail {
                pw.entail.clone()
            } else {
                pw.contra.map(|c| T::one() - c)
            }
        }
    };
    SimilarityMatrix::from_matrix(raw, kernel)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub cluster_count: usize,
}

/// Greedy left-to-right clustering: response `j` joins the first cluster
/// whose earliest member mutually entails it, otherwise it opens a new one.
pub fn cluster_bidirectional_entailment<T: Real>(pairwise: &PairwiseScores<T>) -> ClusterAssignment {
    let mut representatives: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(pairwise.len());
    for j in 0..pairwise.len() {
        match representatives.iter().position(|&r| pairwise.mutually_entail(r, j)) {
            Some(c) => labels.push(c),
            None => {
                labels.push(representatives.len());
                representatives.push(j);
            }
        }
    }
    ClusterAssignment {
        labels,
        cluster_count: representatives.len(),
    }
}

pub fn num_semantic_sets<T: Real>(pairwise: &PairwiseScores<T>) -> usize {
    cluster_bidirectional_entailment(pairwise).cluster_count
}

pub fn semantic_entropy<T: Real>(record: &GenerationRecord, assignment: &ClusterAssignment) -> Result<T> {
    if record.samples.is_empty() {
        return Err(Error::unavailable("semantic_entropy", "samples"));
    }
    if assignment.labels.len() != record.samples.len() {
        return Err(Error::Shape {
            expected: record.samples.len(),
            got: assignment.labels.len(),
        });
    }
    let mut sums = vec![T::zero(); assignment.cluster_count];
    let mut counts = vec![0usize; assignment.cluster_count];
    for (s, &label) in record.samples.iter().zip(&assignment.labels) {
        if label >= assignment.cluster_count {
            return Err(Error::Input(format!("cluster label {label} out of range")));
        }
        sums[label] = sums[label] + T::lit(s.total_logprob).exp();
        counts[label] += 1;
    }
    Ok(-sums
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| (s / T::count(c)).xlnx())
        .sum::<T>())
}

/// Normalized Laplacian `L = I - D^{-1/2} S D^{-1/2}` with `D` the row sums of `S`.
pub fn normalized_laplacian<T: Real>(sim: &SimilarityMatrix<T>) -> Result<Matrix<T>> {
    let deg = sim.s.row_sums();
    if let Some(row) = deg.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::DegenerateSimilarity { row });
    }
    let inv_sqrt: Vec<T> = deg.iter().map(|&d| T::one() / d.sqrt()).collect();
    let k = sim.len();
    Ok(Matrix::from_fn(k, k, |i, j| {
        let delta = if i == j { T::one() } else { T::zero() };
        delta - inv_sqrt[i] * sim.s[(i, j)] * inv_sqrt[j]
    }))
}

/// Laplacian eigenpairs, eigenvalues ascending and clamped to [0, 2];
/// magnitudes within 1e-10 of zero are snapped to zero.
pub fn laplacian_spectrum<T: Real>(sim: &SimilarityMatrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let lap = normalized_laplacian(sim)?;
    let eig = symmetric_eigen(&lap)?;
    let snap = T::lit(1e-10);
    let two = T::lit(2.0);
    let values = eig
        .values
        .into_iter()
        .map(|v| if v.abs() <= snap { T::zero() } else { v.max(T::zero()).min(two) })
        .collect();
    Ok((values, eig.vectors))
}

/// `sum_k max(0, 1 - lambda_k)` over the normalized Laplacian spectrum.
pub fn eigv_laplacian<T: Real>(sim: &SimilarityMatrix<T>) -> Result<T> {
    let (values, _) = laplacian_spectrum(sim)?;
    Ok(values.into_iter().map(|l| (T::one() - l).max(T::zero())).sum())
}

/// `1 - trace(D) / K^2`.
pub fn degmat_uncertainty<T: Real>(sim: &SimilarityMatrix<T>) -> T {
    let k = T::count(sim.len());
    let trace: T = sim.s.row_sums().into_iter().sum();
    T::one() - trace / (k * k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eccentricity<T> {
    pub total: T,
    pub per_response: Vec<T>,
}

/// Spectral embedding eccentricity. Responses are embedded by the
/// eigenvectors whose eigenvalue is below `eig_threshold` (at least the
/// smallest one); the score is the norm of the centred embeddings.
pub fn eccentricity<T: Real>(sim: &SimilarityMatrix<T>, eig_threshold: T) -> Result<Eccentricity<T>> {
    let (values, vectors) = laplacian_spectrum(sim)?;
    let k = sim.len();
    let dims = values.iter().filter(|&&v| v < eig_threshold).count().max(1);
    let mean: Vec<T> = (0..dims)
        .map(|d| (0..k).map(|j| vectors[(j, d)]).sum::<T>() / T::count(k))
        .collect();
    let per_response: Vec<T> = (0..k)
        .map(|j| {
            (0..dims)
                .map(|d| {
                    let c = vectors[(j, d)] - mean[d];
                    c * c
                })
                .sum::<T>()
                .sqrt()
        })
        .collect();
    let total = per_response.iter().map(|&r| r * r).sum::<T>().sqrt();
    Ok(Eccentricity { total, per_response })
}

/// Lexical-similarity kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LexicalKernel {
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "bleu")]
    Bleu,
}

/// Negative mean pairwise similarity over unordered pairs. BLEU is not
/// symmetric, so each pair contributes the mean of both directions.
pub fn lexical_similarity<T: Real, S: AsRef<str>>(texts: &[S], kernel: LexicalKernel) -> Result<T> {
    let k = texts.len();
    if k < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: k });
    }
    let metric = match kernel {
        LexicalKernel::Rouge1 => TextMetric::Rouge1,
        LexicalKernel::RougeL => TextMetric::RougeL,
        LexicalKernel::Bleu => TextMetric::Bleu,
    };
    let toks: Vec<TokenizedText> = texts.iter().map(|t| TokenizedText::new(t.as_ref())).collect();
    let mut total = T::zero();
    let mut pairs = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            let s = if metric == TextMetric::Bleu {
                (metric.score::<T>(&toks[i], &toks[j]) + metric.score::<T>(&toks[j], &toks[i])) * T::lit(0.5)
            } else {
                metric.score::<T>(&toks[i], &toks[j])
            };
            total = total + s;
            pairs += 1;
        }
    }
    Ok(-total / T::count(pairs))
}
