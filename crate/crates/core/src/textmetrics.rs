//! Sentence-level text overlap metrics used both as generation quality
//! scores and as lexical similarity kernels between sampled responses.
//!
//! Tokenization: lowercase, drop every character that is neither
//! alphanumeric nor whitespace, split on whitespace.
//!
//! BLEU is sentence BLEU with uniform weights over 1..=4-grams:
//!
//! ```text
//! p_1 = clipped_matches_1 / candidate_unigrams
//! p_n = (clipped_matches_n + 1) / (candidate_ngrams_n + 1)     n = 2..4
//! BP  = 1 if c > r else exp(1 - r / c)
//! BLEU = BP * exp(sum_n ln(p_n) / 4)
//! ```
//!
//! An empty candidate or reference scores 0. Unigram precision is left
//! unsmoothed so fully disjoint texts score exactly 0.

use std::collections::{HashMap, HashSet};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn new(text: &str) -> Self {
        let cleaned: String = text
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect();
        Self {
            tokens: cleaned.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<&str> for TokenizedText {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

fn f1<T: Real>(matches: usize, cand: usize, reference: usize) -> T {
    if matches == 0 || cand == 0 || reference == 0 {
        return T::zero();
    }
    let p = T::count(matches) / T::count(cand);
    let r = T::count(matches) / T::count(reference);
    T::lit(2.0) * p * r / (p + r)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> usize {
    let rc = ngram_counts(reference, n);
    ngram_counts(cand, n)
        .into_iter()
        .map(|(g, c)| c.min(rc.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Unigram-overlap F1 with clipped counts.
pub fn rouge1<T: Real>(candidate: &TokenizedText, reference: &TokenizedText) -> T {
    let m = clipped_matches(&candidate.tokens, &reference.tokens, 1);
    f1(m, candidate.len(), reference.len())
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l<T: Real>(candidate: &TokenizedText, reference: &TokenizedText) -> T {
    let lcs = lcs_len(&candidate.tokens, &reference.tokens);
    f1(lcs, candidate.len(), reference.len())
}

pub fn bleu<T: Real>(candidate: &TokenizedText, reference: &TokenizedText) -> T {
    let c = candidate.len();
    let r = reference.len();
    if c == 0 || r == 0 {
        return T::zero();
    }
    let mut log_sum = T::zero();
    for n in 1..=4 {
        let m = clipped_matches(&candidate.tokens, &reference.tokens, n);
        let total = c.saturating_sub(n - 1);
        let p = if n == 1 {
            T::count(m) / T::count(total)
        } else {
            T::count(m + 1) / T::count(total + 1)
        };
        if p == T::zero() {
            return T::zero();
        }
        log_sum = log_sum + p.ln();
    }
    let bp = if c > r {
        T::one()
    } else {
        (T::one() - T::count(r) / T::count(c)).exp()
    };
    bp * (log_sum / T::lit(4.0)).exp()
}

/// Set Jaccard over unique tokens; two empty texts are identical (1).
pub fn jaccard<T: Real>(a: &TokenizedText, b: &TokenizedText) -> T {
    let sa: HashSet<&str> = a.tokens.iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.tokens.iter().map(String::as_str).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return T::one();
    }
    T::count(sa.intersection(&sb).count()) / T::count(union)
}

/// Text-overlap metric selector shared by quality scoring and lexical similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TextMetric {
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "bleu")]
    Bleu,
    #[serde(rename = "jaccard")]
    Jaccard,
}

impl TextMetric {
    pub fn score<T: Real>(self, candidate: &TokenizedText, reference: &TokenizedText) -> T {
        match self {
            TextMetric::Rouge1 => rouge1(candidate, reference),
            TextMetric::RougeL => rouge_l(candidate, reference),
            TextMetric::Bleu => bleu(candidate, reference),
            TextMetric::Jaccard => jaccard(candidate, reference),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TextMetric::Rouge1 => "rouge1",
            TextMetric::RougeL => "rougeL",
            TextMetric::Bleu => "bleu",
            TextMetric::Jaccard => "jaccard",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TokenizedText {
        TokenizedText::new(s)
    }

    #[test]
    fn tokenizer_strips_and_lowercases() {
        assert_eq!(t("Hello, World!  it's").tokens, vec!["hello", "world", "its"]);
        assert!(t(" ,. ").is_empty());
    }

    #[test]
    fn rouge1_cases() {
        assert_eq!(rouge1::<f64>(&t("a b c"), &t("a b c")), 1.0);
        assert_eq!(rouge1::<f64>(&t("a b"), &t("c d")), 0.0);
        // matches 2, P = 2/3, R = 1/2
        assert!((rouge1::<f64>(&t("a b c"), &t("a c d e")) - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(rouge1::<f64>(&t(""), &t("a")), 0.0);
    }

    #[test]
    fn rouge1_clips_repeats() {
        // candidate "a a a" vs reference "a": one clipped match
        let v: f64 = rouge1(&t("a a a"), &t("a"));
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_cases() {
        assert_eq!(rouge_l::<f64>(&t("x y z"), &t("x y z")), 1.0);
        assert_eq!(rouge_l::<f64>(&t("x y"), &t("z w")), 0.0);
        assert_eq!(rouge_l::<f64>(&t("a b c"), &t("a c")), 0.8);
    }

    #[test]
    fn bleu_cases() {
        assert_eq!(bleu::<f64>(&t("the cat sat on the mat"), &t("the cat sat on the mat")), 1.0);
        assert_eq!(bleu::<f64>(&t("a"), &t("a")), 1.0);
        assert!(bleu::<f64>(&t("a b"), &t("c d")) < 0.05);
        // c = 2, r = 4: BP = e^{-1}; p1 = 1, p2 = (1+1)/(1+1), p3 = p4 = (0+1)/(0+1)
        let v: f64 = bleu(&t("a b"), &t("a b c d"));
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        // c = 3, r = 3, p1 = 2/3, p2 = (0+1)/(2+1), p3 = 1/2, p4 = 1/1
        let v: f64 = bleu(&t("a x b"), &t("a y b"));
        let expect = ((2.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln() + 0.5f64.ln()) / 4.0;
        assert!((v - expect.exp()).abs() < 1e-15);
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard::<f64>(&t("a b c"), &t("c b a")), 1.0);
        assert_eq!(jaccard::<f64>(&t("a b"), &t("c d")), 0.0);
        assert_eq!(jaccard::<f64>(&t("a b c"), &t("b c d")), 0.5);
        assert_eq!(jaccard::<f64>(&t(""), &t("")), 1.0);
        assert_eq!(jaccard::<f64>(&t(""), &t("a")), 0.0);
    }

    #[test]
    fn f32_scores() {
        assert!((rouge_l::<f32>(&t("a b c"), &t("a c")) - 0.8).abs() < 1e-6);
    }
}
