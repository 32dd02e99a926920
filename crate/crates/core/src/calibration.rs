//! Maps raw uncertainty to a confidence in [0, 1]: the mean quality of the
//! calibration examples that fell into the same uncertainty bin.
//!
//! Bins are half-open `[lo, hi)`, so a score equal to an interior edge goes
//! to the right bin. The outer edges are -inf and +inf, which makes
//! [`CalibrationTable::normalize`] total. NaN maps to the last bin (the
//! most uncertain one).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
/// Bins holding fewer calibration examples than this trigger a warning.
pub const SMALL_BIN_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable {
    pub estimator_name: String,
    /// `B + 1` strictly increasing edges, `-inf` first and `+inf` last.
    pub bin_edges: Vec<f64>,
    pub bin_confidence: Vec<f64>,
    pub bin_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub table: CalibrationTable,
    pub warnings: Vec<String>,
}

pub fn fit_bins(estimator_name: &str, ue_scores: &[f64], qualities: &[f64], num_bins: usize) -> Result<Fitted> {
    if ue_scores.len() != qualities.len() {
        return Err(Error::Shape {
            expected: ue_scores.len(),
            got: qualities.len(),
        });
    }
    if num_bins == 0 {
        return Err(Error::Input("num_bins must be >= 1".into()));
    }
    if ue_scores.len() < num_bins {
        return Err(Error::InsufficientData {
            needed: num_bins,
            got: ue_scores.len(),
        });
    }
    if ue_scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("calibration uncertainty scores must be finite".into()));
    }
    if let Some(q) = qualities.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::Input(format!("quality {q} outside [0, 1]")));
    }

    let n = ue_scores.len();
    let mut sorted = ue_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut interior: Vec<f64> = (1..num_bins).map(|b| sorted[b * n / num_bins]).collect();
    interior.dedup();
    // an edge at the minimum would leave the first bin empty
    interior.retain(|&e| e > sorted[0]);

    let mut warnings = Vec::new();
    if interior.len() + 1 < num_bins {
        warnings.push(format!(
            "only {} distinct quantile edges; merged down to {} bins",
            interior.len(),
            interior.len() + 1
        ));
    }

    let mut sums = vec![0.0; interior.len() + 1];
    let mut counts = vec![0usize; interior.len() + 1];
    for (&u, &q) in ue_scores.iter().zip(qualities) {
        let b = interior.partition_point(|&e| e <= u);
        sums[b] += q;
        counts[b] += 1;
    }
    // quantile edges leave no bin empty, but keep the merge for safety
    let mut k = 0;
    while k < counts.len() {
        if counts[k] == 0 && counts.len() > 1 {
            let edge = if k == 0 { 0 } else { k - 1 };
            interior.remove(edge);
            counts.remove(k);
            sums.remove(k);
        } else {
            k += 1;
        }
    }
    if let Some(min) = counts.iter().min().filter(|&&c| c < SMALL_BIN_COUNT) {
        warnings.push(format!(
            "smallest bin holds {min} calibration examples; confidences depend heavily on calibration set size"
        ));
    }

    let mut bin_edges = Vec::with_capacity(interior.len() + 2);
    bin_edges.push(f64::NEG_INFINITY);
    bin_edges.extend(&interior);
    bin_edges.push(f64::INFINITY);
    Ok(Fitted {
        table: CalibrationTable {
            estimator_name: estimator_name.to_string(),
            bin_edges,
            bin_confidence: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
            bin_counts: counts,
        },
        warnings,
    })
}

impl CalibrationTable {
    pub fn num_bins(&self) -> usize {
        self.bin_confidence.len()
    }

    pub fn bin_index(&self, ue: f64) -> usize {
        if ue.is_nan() {
            return self.num_bins() - 1;
        }
        let interior = &self.bin_edges[1..self.bin_edges.len() - 1];
        interior.partition_point(|&e| e <= ue)
    }

    pub fn normalize(&self, ue: f64) -> f64 {
        self.bin_confidence[self.bin_index(ue)]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("calibration table {:?}: {m}", self.estimator_name)));
        let b = self.bin_confidence.len();
        if b == 0 || self.bin_edges.len() != b + 1 || self.bin_counts.len() != b {
            return bad("edge, confidence and count lengths disagree");
        }
        if self.bin_edges[0] != f64::NEG_INFINITY || self.bin_edges[b] != f64::INFINITY {
            return bad("outer edges must be -inf and +inf");
        }
        if self.bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("edges must be strictly increasing");
        }
        if self.bin_confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("confidences must lie in [0, 1]");
        }
        if self.bin_counts.contains(&0) {
            return bad("empty bin");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration table serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let t: Self = toml::from_str(s).map_err(|e| Error::Format(format!("calibration table: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
