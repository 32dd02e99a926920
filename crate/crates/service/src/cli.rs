use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use hedge_core::benchmark::{quality_scores, QualityMetric};
use hedge_core::calibration::{fit_bins, DEFAULT_BINS};
use hedge_core::density::persist::save_models;
use hedge_core::records::{load_dataset, save_dataset};
use hedge_core::registry::{evaluate, is_capability_gap, NliSource};
use hedge_gateway::mock::MockConfig;
use hedge_gateway::{GenerationParams, LlmClient, ModelEndpoint, RecordPlan};
use tokio::net::TcpListener;

use crate::bench::{run_bench, BenchOverrides, REPORT_TEXT};
use crate::density_fit::{fit_models, load_embeddings, DensitySpec};
use crate::error::CliError;
use crate::estimate::{check_names, context, nli_for, nli_url, read_records, score_dataset, write_csv};
use crate::generate::{generate_dataset, load_prompts};
use crate::service::{app, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "hedge", version, about = "Uncertainty estimation for LLM generations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score record files with one or more estimators (CSV out).
    Estimate {
        #[arg(long, required = true)]
        records: Vec<PathBuf>,
        #[arg(long, required = true, value_delimiter = ',')]
        estimators: Vec<String>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fitted density models from `fit-density`.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long)]
        nli_url: Option<String>,
    },
    /// Run a benchmark described by a TOML config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        nli_url: Option<String>,
        /// Model base URL for the config's [generate] section.
        #[arg(long)]
        model_url: Option<String>,
    },
    /// Fit Gaussian / background / RDE / HUQ artifacts from embeddings.
    FitDensity {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long)]
        rde_dim: Option<usize>,
        /// Records with embeddings and logprobs for HUQ rank calibration.
        #[arg(long)]
        huq_calibration: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        huq_alpha: f64,
        /// Seed for the robust (MCD) fit inside RDE.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a quantile-binned confidence table for one estimator.
    Calibrate {
        #[arg(long, required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        estimator: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value = "rougeL")]
        metric: String,
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long)]
        nli_url: Option<String>,
    },
    /// Turn a prompt file into records against an OpenAI-compatible endpoint.
    Generate {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_url: String,
        #[arg(long, default_value = "mock-1")]
        model: String,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        max_new_tokens: u32,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        max_parallel: usize,
        #[arg(long)]
        no_p_true: bool,
        #[arg(long)]
        no_unconditional: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Serve the deterministic mock LLM and NLI provider.
    MockServer {
        #[arg(long, default_value = "127.0.0.1:8099")]
        addr: String,
    },
}

fn parse_metric(s: &str) -> Result<QualityMetric, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Usage(format!("unknown metric {s:?}; valid: rougeL, rouge1, bleu")))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))
}

fn write_out(path: &PathBuf, body: &[u8]) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_density(path: Option<&PathBuf>) -> Result<Option<hedge_core::density::DensityModels>, CliError> {
    path.map(|p| hedge_core::density::persist::load_models(p).map_err(CliError::from))
        .transpose()
}

fn init_logging(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(filter)
        .try_init();
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Estimate {
            records,
            estimators,
            out,
            density,
            nli_url: flag,
        } => {
            check_names(&estimators)?;
            let ds = read_records(&records)?;
            let density = load_density(density.as_ref())?;
            let nli = runtime()?.block_on(nli_for(&estimators, nli_url(flag.as_deref(), None), &[&ds]))?;
            let ctx = context(density.as_ref(), nli.as_ref().map(|n| n as &dyn NliSource));
            let table = score_dataset(&ds, &estimators, &ctx)?;
            match out {
                Some(p) => {
                    let mut buf = Vec::new();
                    write_csv(&mut buf, &ds, &estimators, &table)?;
                    write_out(&p, &buf)
                }
                None => write_csv(std::io::stdout().lock(), &ds, &estimators, &table),
            }
        }
        Command::Bench {
            config,
            seed,
            out,
            nli_url,
            model_url,
        } => {
            let ov = BenchOverrides {
                seed,
                out,
                nli_url,
                model_url,
            };
            let outcome = runtime()?.block_on(run_bench(&config, &ov))?;
            let text = fs::read_to_string(outcome.out_dir.join(REPORT_TEXT)).unwrap_or_default();
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            eprintln!("report written to {}", outcome.out_dir.display());
            Ok(())
        }
        Command::FitDensity {
            train,
            background,
            rde_dim,
            huq_calibration,
            huq_alpha,
            seed,
            out,
        } => {
            let mut spec = DensitySpec::new(train);
            spec.background = background;
            spec.rde_dim = rde_dim;
            spec.huq_calibration = huq_calibration;
            spec.huq_alpha = huq_alpha;
            spec.mcd.seed = seed;
            let train = load_embeddings(&spec.train)?;
            let bg = spec.background.as_ref().map(|p| load_embeddings(p)).transpose()?;
            let huq = spec.huq_calibration.as_ref().map(load_dataset).transpose()?;
            let models = fit_models(&spec, &train, bg.as_deref(), huq.as_ref())?;
            save_models(&out, &models)?;
            Ok(())
        }
        Command::Calibrate {
            records,
            estimator,
            out,
            bins,
            metric,
            density,
            nli_url: flag,
        } => {
            let names = vec![estimator.clone()];
            check_names(&names)?;
            let metric = parse_metric(&metric)?;
            let ds = read_records(&records)?;
            let density = load_density(density.as_ref())?;
            let nli = runtime()?.block_on(nli_for(&names, nli_url(flag.as_deref(), None), &[&ds]))?;
            let ctx = context(density.as_ref(), nli.as_ref().map(|n| n as &dyn NliSource));
            let quality = quality_scores(&ds, metric, None);
            let (mut ue, mut q) = (Vec::new(), Vec::new());
            for (r, qv) in ds.iter().zip(quality) {
                let Ok(qv) = qv else { continue };
                match evaluate(&estimator, r, &ctx) {
                    Ok(u) => {
                        ue.push(u);
                        q.push(qv);
                    }
                    Err(e) if is_capability_gap(&e) => {}
                    Err(e) => {
                        return Err(CliError::Data(format!("estimator {estimator} failed on record {}: {e}", r.id)));
                    }
                }
            }
            let fitted = fit_bins(&estimator, &ue, &q, bins)?;
            for w in &fitted.warnings {
                eprintln!("warning: {w}");
            }
            fitted.table.save(&out)?;
            Ok(())
        }
        Command::Generate {
            prompts,
            out,
            model_url,
            model,
            samples,
            max_new_tokens,
            temperature,
            max_parallel,
            no_p_true,
            no_unconditional,
        } => {
            let prompts = load_prompts(&prompts)?;
            let params = GenerationParams {
                num_samples: samples,
                max_new_tokens,
                temperature,
                ..GenerationParams::default()
            };
            let endpoint = ModelEndpoint {
                max_parallel,
                timeout: Duration::from_secs(60),
                ..ModelEndpoint::new(model_url, model)
            };
            let client = LlmClient::new(endpoint)?;
            let plan = RecordPlan {
                p_true: !no_p_true,
                unconditional: !no_unconditional,
            };
            let ds = runtime()?.block_on(generate_dataset(&client, &prompts, &params, plan))?;
            save_dataset(&ds, &out)?;
            Ok(())
        }
        Command::Serve { config, addr } => {
            let cfg = match &config {
                Some(p) => ServiceConfig::load(p)?,
                None => ServiceConfig::default(),
            };
            let state = Arc::new(AppState::from_config(&cfg)?);
            runtime()?.block_on(async move {
                let listener = TcpListener::bind(&addr)
                    .await
                    .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
                eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?);
                axum::serve(listener, app(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| CliError::Data(format!("server error: {e}")))
            })
        }
        Command::MockServer { addr } => runtime()?.block_on(async move {
            let listener = TcpListener::bind(&addr)
                .await
                .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
            eprintln!("mock listening on http://{}", listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?);
            hedge_gateway::mock::serve(listener, MockConfig::default())
                .await
                .map_err(|e| CliError::Data(format!("server error: {e}")))
        }),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let serving = matches!(cli.command, Command::Serve { .. } | Command::MockServer { .. });
    init_logging(if serving { "info" } else { "warn" });
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
