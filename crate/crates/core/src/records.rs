//! Generation records: the universal input of every estimator.
//!
//! On disk a dataset is line-delimited JSON, one [`GenerationRecord`] per
//! line. Dataset metadata, when present, lives in a sidecar
//! `<file>.meta.json` so the record file stays one-object-per-line.
//! All log-probabilities are natural logs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability-mass and log-probability consistency checks.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    pub token_id: u32,
    pub token_text: String,
    /// `ln P(y_l | y_<l, x)`.
    pub logprob: f64,
    /// Top-k `(token_id, logprob)` of the step distribution, descending.
    #[serde(default)]
    pub alternatives: Vec<(u32, f64)>,
    /// `ln P(y_l | y_<l)` scored without the input context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditional_logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledOutput {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<TokenStep>,
    pub total_logprob: f64,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTrace {
    pub model_id: String,
    /// One categorical distribution `(token_id, probability)` per greedy output token.
    pub steps: Vec<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub input_text: String,
    pub output_text: String,
    #[serde(default)]
    pub output_tokens: Vec<TokenStep>,
    #[serde(default)]
    pub samples: Vec<SampledOutput>,
    #[serde(default)]
    pub ensemble_traces: Vec<EnsembleTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true: Option<f64>,
}

impl GenerationRecord {
    /// Minimal record with only texts; white-box fields empty.
    pub fn text_only(id: impl Into<String>, input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input_text: input.into(),
            output_text: output.into(),
            output_tokens: Vec::new(),
            samples: Vec::new(),
            ensemble_traces: Vec::new(),
            embedding: None,
            reference_text: None,
            p_true: None,
        }
    }

    /// `ln P(y | x)` of the greedy output.
    pub fn total_logprob(&self) -> f64 {
        self.output_tokens.iter().map(|t| t.logprob).sum()
    }

    pub fn sample_texts(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.text.as_str()).collect()
    }

    /// Rescales every ensemble step distribution to unit mass. Steps with
    /// zero total mass are left untouched and reported by validation.
    pub fn normalize_ensemble(&mut self) {
        for trace in &mut self.ensemble_traces {
            for step in &mut trace.steps {
                let total: f64 = step.iter().map(|&(_, p)| p).sum();
                if total > 0.0 && total.is_finite() {
                    for (_, p) in step.iter_mut() {
                        *p /= total;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<GenerationRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(records: Vec<GenerationRecord>) -> Self {
        Self {
            records,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GenerationRecord> {
        self.records.iter()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a GenerationRecord;
    type IntoIter = std::slice::Iter<'a, GenerationRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

fn check_step(step: &TokenStep, prefix: &str, out: &mut Vec<Violation>) {
    if !(step.logprob <= 0.0) {
        out.push(Violation::new("logprob", format!("{prefix}: logprob {} is not <= 0", step.logprob)));
    }
    if let Some(u) = step.unconditional_logprob {
        if !(u <= 0.0) {
            out.push(Violation::new(
                "unconditional_logprob",
                format!("{prefix}: unconditional logprob {u} is not <= 0"),
            ));
        }
    }
    if step.alternatives.is_empty() {
        return;
    }
    if let Some(&(_, lp)) = step.alternatives.iter().find(|&&(_, lp)| !(lp <= 0.0)) {
        out.push(Violation::new("logprob", format!("{prefix}: alternative logprob {lp} is not <= 0")));
    }
    if step.alternatives.windows(2).any(|w| w[0].1 < w[1].1) {
        out.push(Violation::new("alternatives order", format!("{prefix}: alternatives not sorted descending")));
    }
    let mass: f64 = step.alternatives.iter().map(|&(_, lp)| lp.exp()).sum();
    if mass > 1.0 + MASS_TOLERANCE {
        out.push(Violation::new("alternatives mass", format!("{prefix}: alternative mass {mass} exceeds 1")));
    }
    if !step.alternatives.iter().any(|&(id, _)| id == step.token_id) {
        out.push(Violation::new(
            "chosen token",
            format!("{prefix}: token {} missing from alternatives", step.token_id),
        ));
    }
}

/// Checks every record invariant. An empty report means the record is valid.
pub fn validate_record(record: &GenerationRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.id.is_empty() {
        out.push(Violation::new("id", "empty id"));
    }
    for (l, step) in record.output_tokens.iter().enumerate() {
        check_step(step, &format!("output step {l}"), &mut out);
    }
    for (k, s) in record.samples.iter().enumerate() {
        if !(s.total_logprob <= 0.0) {
            out.push(Violation::new("total_logprob", format!("sample {k}: {} is not <= 0", s.total_logprob)));
        }
        if s.length < 1 {
            out.push(Violation::new("length", format!("sample {k}: length must be >= 1")));
        }
        if !s.tokens.is_empty() {
            for (l, step) in s.tokens.iter().enumerate() {
                check_step(step, &format!("sample {k} step {l}"), &mut out);
            }
            let sum: f64 = s.tokens.iter().map(|t| t.logprob).sum();
            if (sum - s.total_logprob).abs() > MASS_TOLERANCE {
                out.push(Violation::new(
                    "total_logprob",
                    format!("sample {k}: total {} != step sum {sum}", s.total_logprob),
                ));
            }
            if s.length != s.tokens.len() {
                out.push(Violation::new(
                    "length",
                    format!("sample {k}: length {} != token count {}", s.length, s.tokens.len()),
                ));
            }
        }
    }
    if let Some(first) = record.ensemble_traces.first() {
        let steps = first.steps.len();
        let aligned = record.ensemble_traces.iter().all(|t| t.steps.len() == steps);
        if !aligned || (!record.output_tokens.is_empty() && steps != record.output_tokens.len()) {
            out.push(Violation::new(
                "ensemble alignment",
                format!(
                    "trace step counts {:?} do not match output length {}",
                    record.ensemble_traces.iter().map(|t| t.steps.len()).collect::<Vec<_>>(),
                    record.output_tokens.len()
                ),
            ));
        }
    }
    for trace in &record.ensemble_traces {
        for (l, step) in trace.steps.iter().enumerate() {
            let bad = step.iter().any(|&(_, p)| !(0.0..=1.0).contains(&p));
            let mass: f64 = step.iter().map(|&(_, p)| p).sum();
            if bad || (mass - 1.0).abs() > MASS_TOLERANCE {
                out.push(Violation::new(
                    "ensemble distribution",
                    format!("trace {} step {l}: mass {mass} or probabilities outside [0,1]", trace.model_id),
                ));
            }
        }
    }
    if let Some(e) = &record.embedding {
        if e.iter().any(|x| !x.is_finite()) {
            out.push(Violation::new("embedding", "non-finite embedding component"));
        }
    }
    if let Some(p) = record.p_true {
        if !(0.0..=1.0).contains(&p) {
            out.push(Violation::new("p_true", format!("{p} outside [0,1]")));
        }
    }
    out
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Parses one line of the record format, normalizes ensemble traces and
/// validates the result.
pub fn parse_record_line(line: &str, line_no: usize) -> Result<GenerationRecord> {
    let mut record: GenerationRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    record.normalize_ensemble();
    if let Some(v) = validate_record(&record).into_iter().next() {
        return Err(Error::Validation {
            record_id: record.id,
            field: v.field,
            message: v.message,
        });
    }
    Ok(record)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(&line, i + 1)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    let meta = meta_path(path);
    let metadata = if meta.exists() {
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta.display())))?
    } else {
        BTreeMap::new()
    };
    Ok(Dataset { records, metadata })
}

/// Loads several record files as one dataset; ids must be unique across files.
pub fn load_datasets<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut out = Dataset::default();
    let mut seen = HashSet::new();
    for p in paths {
        let d = load_dataset(p)?;
        for r in d.records {
            if !seen.insert(r.id.clone()) {
                return Err(Error::DuplicateId(r.id));
            }
            out.records.push(r);
        }
        out.metadata.extend(d.metadata);
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &dataset.records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    if !dataset.metadata.is_empty() {
        let text = serde_json::to_string_pretty(&dataset.metadata).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
    } else if meta.exists() {
        fs::remove_file(&meta).map_err(|e| Error::io(&meta, e))?;
    }
    Ok(())
}
