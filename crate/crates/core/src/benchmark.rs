//! Selective-generation evaluation: prediction-rejection curves, PRR and
//! the benchmark report.
//!
//! Records are rejected highest uncertainty first. Items with equal
//! uncertainty form a tied block; every item of a block contributes the
//! block's mean quality, which equals the expected curve under a uniformly
//! random tie-break.
//!
//! With N records the curve is sampled at `a = j/N`, `j = 0..=N`. The point
//! at `a = 1` repeats the value at `j = N-1` and is left out of the area,
//! which is a trapezoid integral over `j = 0..N-1` of the curve minus the
//! overall mean quality.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Dataset, GenerationRecord};
use crate::textmetrics::{TextMetric, TokenizedText};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub rejection_rates: Vec<f64>,
    pub mean_quality: Vec<f64>,
    pub auc_vs_random: f64,
}

fn check_inputs(quality: &[f64], uncertainty: &[f64]) -> Result<()> {
    if quality.len() != uncertainty.len() {
        return Err(Error::Shape {
            expected: quality.len(),
            got: uncertainty.len(),
        });
    }
    if quality.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: quality.len(),
        });
    }
    if quality.iter().chain(uncertainty).any(|x| !x.is_finite()) {
        return Err(Error::Input("quality and uncertainty must be finite".into()));
    }
    Ok(())
}

/// Qualities in rejection order with tied blocks replaced by their mean.
/// Within a block items are ordered by quality so the result does not
/// depend on input order.
fn rejection_order(quality: &[f64], uncertainty: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..quality.len()).collect();
    idx.sort_by(|&a, &b| {
        uncertainty[b]
            .partial_cmp(&uncertainty[a])
            .unwrap_or(Ordering::Equal)
            .then(quality[a].partial_cmp(&quality[b]).unwrap_or(Ordering::Equal))
    });
    let mut out = Vec::with_capacity(idx.len());
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && uncertainty[idx[end]] == uncertainty[idx[start]] {
            end += 1;
        }
        let block_mean = idx[start..end].iter().map(|&i| quality[i]).sum::<f64>() / (end - start) as f64;
        out.extend(std::iter::repeat_n(block_mean, end - start));
        start = end;
    }
    out
}

pub fn pr_curve(quality: &[f64], uncertainty: &[f64]) -> Result<PrCurve> {
    check_inputs(quality, uncertainty)?;
    let ordered = rejection_order(quality, uncertainty);
    let n = ordered.len();
    let mut mean_quality = vec![0.0; n + 1];
    let mut suffix = 0.0;
    for j in (0..n).rev() {
        suffix += ordered[j];
        mean_quality[j] = suffix / (n - j) as f64;
    }
    mean_quality[n] = mean_quality[n - 1];
    let baseline = quality.iter().sum::<f64>() / n as f64;
    let area: f64 = mean_quality[..n]
        .windows(2)
        .map(|w| (w[0] + w[1]) / 2.0 - baseline)
        .sum();
    Ok(PrCurve {
        rejection_rates: (0..=n).map(|j| j as f64 / n as f64).collect(),
        mean_quality,
        auc_vs_random: area / n as f64,
    })
}

/// Ratio of the uncertainty curve area to the oracle (reject lowest
/// quality first) curve area.
pub fn prr(quality: &[f64], uncertainty: &[f64]) -> Result<f64> {
    let unc = pr_curve(quality, uncertainty)?;
    let neg: Vec<f64> = quality.iter().map(|q| -q).collect();
    let oracle = pr_curve(quality, &neg)?;
    if oracle.auc_vs_random <= 0.0 {
        return Err(Error::UndefinedPrr);
    }
    Ok(unc.auc_vs_random / oracle.auc_vs_random)
}

/// Sample standard deviation of PRR over bootstrap resamples. Resamples with
/// undefined PRR (all qualities equal) are skipped.
pub fn bootstrap_stderr(quality: &[f64], uncertainty: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    check_inputs(quality, uncertainty)?;
    let n = quality.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut q = vec![0.0; n];
    let mut u = vec![0.0; n];
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.random_range(0..n);
            q[k] = quality[i];
            u[k] = uncertainty[i];
        }
        match prr(&q, &u) {
            Ok(v) => values.push(v),
            Err(Error::UndefinedPrr) => {}
            Err(e) => return Err(e),
        }
    }
    if values.len() < 2 {
        return Ok(0.0);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityMetric {
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "bleu")]
    Bleu,
    /// Scores supplied by an external scorer.
    #[serde(rename = "external")]
    External,
}

impl QualityMetric {
    pub fn name(self) -> &'static str {
        match self {
            QualityMetric::RougeL => "rougeL",
            QualityMetric::Rouge1 => "rouge1",
            QualityMetric::Bleu => "bleu",
            QualityMetric::External => "external",
        }
    }

    fn text_metric(self) -> Option<TextMetric> {
        match self {
            QualityMetric::RougeL => Some(TextMetric::RougeL),
            QualityMetric::Rouge1 => Some(TextMetric::Rouge1),
            QualityMetric::Bleu => Some(TextMetric::Bleu),
            QualityMetric::External => None,
        }
    }
}

/// External quality scorer: `(output, reference) -> quality`.
pub type ExternalScorer<'a> = &'a (dyn Fn(&str, &str) -> Result<f64> + Sync);

pub fn quality_scores(dataset: &Dataset, metric: QualityMetric, external: Option<ExternalScorer<'_>>) -> Vec<Result<f64>> {
    dataset
        .records
        .iter()
        .map(|r| {
            let reference = r
                .reference_text
                .as_deref()
                .ok_or_else(|| Error::unavailable(metric.name(), "reference_text"))?;
            match (metric.text_metric(), external) {
                (Some(m), _) => Ok(m.score(&TokenizedText::new(&r.output_text), &TokenizedText::new(reference))),
                (None, Some(f)) => f(&r.output_text, reference),
                (None, None) => Err(Error::unavailable("external", "quality scorer endpoint")),
            }
        })
        .collect()
}

/// Extra rows for sanity checking the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planted {
    /// Uncertainty = -quality (PRR 1 by construction).
    Oracle,
    /// Constant uncertainty (PRR 0 by construction).
    Constant,
}

impl Planted {
    pub fn name(self) -> &'static str {
        match self {
            Planted::Oracle => "oracle",
            Planted::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// One bootstrap stream of `bootstrap_resamples` draws per seed.
    pub seeds: Vec<u64>,
    pub bootstrap_resamples: usize,
    pub ignore_exceptions: bool,
    pub planted: Vec<Planted>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            bootstrap_resamples: 1000,
            ignore_exceptions: true,
            planted: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// No record had the inputs this estimator needs.
    Unavailable,
    /// All qualities equal: the oracle area is zero.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub status: CellStatus,
    pub prr_mean: Option<f64>,
    pub prr_stderr: Option<f64>,
    pub scored: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub dataset: String,
    pub metric: QualityMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub cells: Vec<Cell>,
    /// First skip reason per distinct message, with the number of records it hit.
    pub skip_reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    pub metadata: BTreeMap<String, String>,
}

/// Per-record uncertainty for a named estimator.
pub type Scorer<'a> = &'a (dyn Fn(&str, &GenerationRecord) -> Result<f64> + Sync);

fn cell(quality: &[Result<f64>], scores: &[Option<f64>], cfg: &BenchConfig) -> Result<Cell> {
    let (q, u): (Vec<f64>, Vec<f64>) = quality
        .iter()
        .zip(scores)
        .filter_map(|(q, u)| match (q, u) {
            (Ok(q), Some(u)) if q.is_finite() && u.is_finite() => Some((*q, *u)),
            _ => None,
        })
        .unzip();
    let skipped = quality.len() - q.len();
    let empty = |status| Cell {
        status,
        prr_mean: None,
        prr_stderr: None,
        scored: q.len(),
        skipped,
    };
    if q.len() < 2 {
        return Ok(empty(CellStatus::Unavailable));
    }
    let mean = match prr(&q, &u) {
        Ok(v) => v,
        Err(Error::UndefinedPrr) => return Ok(empty(CellStatus::Undefined)),
        Err(e) => return Err(e),
    };
    let mut stderr = 0.0;
    for (k, &seed) in cfg.seeds.iter().enumerate() {
        let s = bootstrap_stderr(&q, &u, cfg.bootstrap_resamples, seed)?;
        // pooled over seeds: mean of variances
        stderr += (s * s - stderr) / (k + 1) as f64;
    }
    Ok(Cell {
        status: CellStatus::Ok,
        prr_mean: Some(mean),
        prr_stderr: Some(stderr.sqrt()),
        scored: q.len(),
        skipped,
    })
}

/// Scores every estimator on every record of every dataset and reports PRR
/// per (estimator, dataset, metric).
pub fn run_benchmark(
    datasets: &[(String, Dataset)],
    estimators: &[String],
    metrics: &[QualityMetric],
    cfg: &BenchConfig,
    scorer: Scorer<'_>,
    external: Option<ExternalScorer<'_>>,
) -> Result<BenchmarkReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    let mut columns = Vec::new();
    let mut qualities = Vec::new();
    for (d, (name, ds)) in datasets.iter().enumerate() {
        for &m in metrics {
            columns.push(Column {
                dataset: name.clone(),
                metric: m,
            });
            qualities.push((d, quality_scores(ds, m, external)));
        }
    }

    let mut rows = Vec::new();
    for est in estimators {
        let mut skip_reasons = BTreeMap::new();
        let mut per_dataset = Vec::new();
        for (_, ds) in datasets {
            let results: Vec<Result<f64>> = ds.records.par_iter().map(|r| scorer(est, r)).collect();
            let mut scores = Vec::with_capacity(results.len());
            for (r, rec) in results.into_iter().zip(&ds.records) {
                match r {
                    Ok(v) => scores.push(Some(v)),
                    Err(e) => {
                        if !cfg.ignore_exceptions && !matches!(e, Error::Unavailable { .. }) {
                            return Err(Error::Input(format!("estimator {est} failed on record {}: {e}", rec.id)));
                        }
                        *skip_reasons.entry(e.to_string()).or_insert(0) += 1;
                        scores.push(None);
                    }
                }
            }
            per_dataset.push(scores);
        }
        let cells = qualities
            .iter()
            .map(|(d, q)| cell(q, &per_dataset[*d], cfg))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            name: est.clone(),
            cells,
            skip_reasons,
        });
    }

    for &p in &cfg.planted {
        let cells = qualities
            .iter()
            .map(|(_, q)| {
                let scores: Vec<Option<f64>> = q
                    .iter()
                    .map(|q| match (p, q) {
                        (Planted::Oracle, Ok(v)) => Some(-v),
                        (Planted::Constant, Ok(_)) => Some(0.0),
                        (_, Err(_)) => None,
                    })
                    .collect();
                cell(q, &scores, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            name: p.name().to_string(),
            cells,
            skip_reasons: BTreeMap::new(),
        });
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("bootstrap_resamples".into(), cfg.bootstrap_resamples.to_string());
    metadata.insert(
        "seeds".into(),
        cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    for (name, ds) in datasets {
        metadata.insert(format!("records.{name}"), ds.len().to_string());
        for (k, v) in &ds.metadata {
            metadata.insert(format!("meta.{name}.{k}"), v.clone());
        }
    }
    Ok(BenchmarkReport {
        columns,
        rows,
        metadata,
    })
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("benchmark report: {e}")))
    }

    /// Aligned text table, `mean±stderr` per cell.
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = std::iter::once("estimator".to_string())
            .chain(self.columns.iter().map(|c| format!("{}/{}", c.dataset, c.metric.name())))
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.name.clone())
                    .chain(r.cells.iter().map(|c| match (c.status, c.prr_mean, c.prr_stderr) {
                        (CellStatus::Ok, Some(m), Some(s)) => format!("{m:.3}±{s:.3}"),
                        (CellStatus::Undefined, ..) => "undefined".to_string(),
                        _ => "unavailable".to_string(),
                    }))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|i| {
                std::iter::once(&headers)
                    .chain(&body)
                    .map(|r| r[i].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &headers);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule);
        for r in &body {
            line(&mut out, r);
        }
        out
    }
}
