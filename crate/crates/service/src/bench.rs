//! `hedge bench`: a TOML experiment file in, a PRR report out.
//!
//! ```toml
//! seed = [1]
//! ignore_exceptions = false
//! subsample_eval_dataset = -1
//! use_density_based_ue = true
//! use_seq_ue = true
//! use_tok_ue = false
//! metrics = ["rougeL"]
//! planted = ["oracle", "constant"]
//!
//! [[dataset]]
//! name = "coqa"
//! path = "coqa.jsonl"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hedge_core::benchmark::{run_benchmark, BenchConfig, BenchmarkReport, Planted, QualityMetric};
use hedge_core::records::load_dataset;
use hedge_core::registry::{evaluate, registry, Category, NliSource};
use hedge_core::{Dataset, GenerationRecord};
use hedge_gateway::{GenerationParams, LlmClient, ModelEndpoint, RecordPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::density_fit::{fit_models, load_embeddings, DensitySpec};
use crate::error::CliError;
use crate::estimate::{check_names, context, nli_for, nli_url};
use crate::generate::{generate_dataset, load_prompts};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    One(u64),
    Many(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::One(s) => vec![*s],
            Seeds::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
}

/// Records generated against a live (or mock) endpoint before scoring.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub prompts: PathBuf,
    /// Where the generated records are written; a dataset entry may point here.
    pub out: PathBuf,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default = "yes")]
    pub p_true: bool,
    #[serde(default = "yes")]
    pub unconditional: bool,
    #[serde(default = "four")]
    pub max_parallel: usize,
}

fn default_model() -> String {
    "mock-1".into()
}

fn yes() -> bool {
    true
}

fn four() -> usize {
    4
}

fn all() -> i64 {
    -1
}

fn default_seeds() -> Seeds {
    Seeds::Many(vec![1])
}

fn default_metrics() -> Vec<QualityMetric> {
    vec![QualityMetric::RougeL]
}

fn default_resamples() -> usize {
    1000
}

fn default_out() -> PathBuf {
    PathBuf::from("bench-out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    #[serde(default = "default_seeds")]
    pub seed: Seeds,
    #[serde(default)]
    pub ignore_exceptions: bool,
    /// Records kept per evaluation dataset; -1 keeps all.
    #[serde(default = "all")]
    pub subsample_eval_dataset: i64,
    #[serde(default = "all")]
    pub subsample_train_dataset: i64,
    #[serde(default = "all")]
    pub subsample_background_train_dataset: i64,
    #[serde(default = "yes")]
    pub use_density_based_ue: bool,
    #[serde(default = "yes")]
    pub use_seq_ue: bool,
    #[serde(default)]
    pub use_tok_ue: bool,
    /// Explicit roster. When empty, every registry entry passing the
    /// `use_*_ue` toggles runs.
    #[serde(default)]
    pub estimators: Vec<String>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<QualityMetric>,
    #[serde(default)]
    pub planted: Vec<Planted>,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub nli_url: Option<String>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
    #[serde(default)]
    pub generate: Option<GenerateSection>,
}

impl BenchFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let f: BenchFile = toml::from_str(text).map_err(|e| CliError::Usage(format!("bench config: {e}")))?;
        if f.datasets.is_empty() {
            return Err(CliError::Usage("bench config: at least one [[dataset]] is required".into()));
        }
        if f.seed.to_vec().is_empty() {
            return Err(CliError::Usage("bench config: seed list is empty".into()));
        }
        Ok(f)
    }

    pub fn roster(&self) -> Result<Vec<String>, CliError> {
        if !self.estimators.is_empty() {
            check_names(&self.estimators)?;
            return Ok(self.estimators.clone());
        }
        Ok(registry()
            .iter()
            .filter(|s| match s.category {
                Category::DensityBased => self.use_density_based_ue,
                _ if s.name.starts_with("ensemble_tok_") => self.use_tok_ue,
                _ => self.use_seq_ue,
            })
            .map(|s| s.name.to_string())
            .collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub nli_url: Option<String>,
    pub model_url: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub out_dir: PathBuf,
    pub report: BenchmarkReport,
}

/// Keeps `n` items chosen by a seeded draw, in their original order.
/// Negative `n` or `n >= len` keeps everything.
pub fn subsample<T>(items: Vec<T>, n: i64, seed: u64) -> Vec<T> {
    if n < 0 || n as usize >= items.len() {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, items.len(), n as usize).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, x)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(x)
            } else {
                None
            }
        })
        .collect()
}

async fn run_generate(g: &GenerateSection, base: &Path, model_url: Option<&str>) -> Result<(), CliError> {
    let url = model_url
        .map(str::to_string)
        .or_else(|| g.base_url.clone())
        .ok_or_else(|| CliError::Usage("[generate] needs base_url or --model-url".into()))?;
    let endpoint = ModelEndpoint {
        max_parallel: g.max_parallel,
        timeout: Duration::from_secs(60),
        ..ModelEndpoint::new(url, g.model.clone())
    };
    let client = LlmClient::new(endpoint)?;
    let prompts = load_prompts(&base.join(&g.prompts))?;
    let plan = RecordPlan {
        p_true: g.p_true,
        unconditional: g.unconditional,
    };
    let ds = generate_dataset(&client, &prompts, &g.params, plan).await?;
    let out = base.join(&g.out);
    hedge_core::records::save_dataset(&ds, &out).map_err(CliError::from)
}

pub async fn run_bench(config: &Path, ov: &BenchOverrides) -> Result<BenchOutcome, CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::Data(format!("{}: {e}", config.display())))?;
    let file = BenchFile::parse(&text)?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let roster = file.roster()?;
    let seeds = ov.seed.map(|s| vec![s]).unwrap_or_else(|| file.seed.to_vec());
    let seed0 = seeds[0];

    if let Some(g) = &file.generate {
        run_generate(g, &base, ov.model_url.as_deref()).await?;
    }

    let mut datasets: Vec<(String, Dataset)> = Vec::new();
    for entry in &file.datasets {
        let path = base.join(&entry.path);
        let mut ds = load_dataset(&path).map_err(|e| CliError::from(e).context(path.display()))?;
        ds.records = subsample(ds.records, file.subsample_eval_dataset, seed0);
        datasets.push((entry.name.clone(), ds));
    }

    let density = match &file.density {
        Some(spec) => {
            let spec = spec.clone().resolve(&base);
            let train = subsample(load_embeddings(&spec.train)?, file.subsample_train_dataset, seed0);
            let background = match &spec.background {
                Some(p) => Some(subsample(load_embeddings(p)?, file.subsample_background_train_dataset, seed0)),
                None => None,
            };
            let huq = spec.huq_calibration.as_ref().map(load_dataset).transpose()?;
            Some(fit_models(&spec, &train, background.as_deref(), huq.as_ref())?)
        }
        None => None,
    };

    let url = nli_url(ov.nli_url.as_deref(), file.nli_url.as_deref());
    let refs: Vec<&Dataset> = datasets.iter().map(|(_, d)| d).collect();
    let nli = nli_for(&roster, url, &refs).await?;

    let ctx = context(density.as_ref(), nli.as_ref().map(|n| n as &dyn NliSource));
    let scorer = |name: &str, r: &GenerationRecord| evaluate(name, r, &ctx);
    let cfg = BenchConfig {
        seeds,
        bootstrap_resamples: file.bootstrap_resamples,
        ignore_exceptions: file.ignore_exceptions,
        planted: file.planted.clone(),
    };
    let report = run_benchmark(&datasets, &roster, &file.metrics, &cfg, &scorer, None)?;

    let out_dir = ov.out.clone().unwrap_or_else(|| base.join(&file.out_dir));
    fs::create_dir_all(&out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    for (name, body) in [(REPORT_JSON, report.to_json()), (REPORT_TEXT, report.to_text())] {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    Ok(BenchOutcome { out_dir, report })
}
