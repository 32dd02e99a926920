use std::io::Write;
use std::path::Path;

use hedge_core::density::DensityModels;
use hedge_core::registry::{evaluate, is_capability_gap, lookup, EvalContext, Input, NliSource};
use hedge_core::records::{load_dataset, load_datasets};
use hedge_core::{Dataset, Error};
use hedge_gateway::{NliClient, NLI_URL_ENV};

use crate::error::CliError;
use crate::nli::{prefetch, PrecomputedNli};

pub const UNAVAILABLE: &str = "unavailable";

pub fn check_names(names: &[String]) -> Result<(), CliError> {
    if names.is_empty() {
        return Err(CliError::Usage("no estimators given".into()));
    }
    for n in names {
        lookup(n)?;
    }
    Ok(())
}

/// Loads and merges record files; parse errors name the offending file.
pub fn read_records<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset, CliError> {
    load_datasets(paths).map_err(|e| {
        if !matches!(e, Error::Parse { .. } | Error::Validation { .. }) {
            return e.into();
        }
        match paths.iter().find(|p| load_dataset(p).is_err()) {
            Some(p) => CliError::from(e).context(p.as_ref().display()),
            None => e.into(),
        }
    })
}

pub fn needs_nli(names: &[String]) -> bool {
    names
        .iter()
        .filter_map(|n| lookup(n).ok())
        .any(|s| s.inputs.contains(&Input::Nli))
}

/// Flag value, then config value, then the environment.
pub fn nli_url(flag: Option<&str>, config: Option<&str>) -> Option<String> {
    flag.or(config)
        .map(str::to_string)
        .or_else(|| std::env::var(NLI_URL_ENV).ok())
        .filter(|u| !u.trim().is_empty())
}

/// Fetches NLI scores for every dataset when an estimator needs them and a
/// provider is configured.
pub async fn nli_for(names: &[String], url: Option<String>, datasets: &[&Dataset]) -> Result<Option<PrecomputedNli>, CliError> {
    let Some(url) = url.filter(|_| needs_nli(names)) else {
        return Ok(None);
    };
    let client = NliClient::new(url)?;
    let mut all = PrecomputedNli::default();
    for ds in datasets {
        let got = prefetch(&client, ds.iter()).await?;
        for r in ds.iter() {
            if let Ok(s) = got.pairwise(r) {
                all.insert(r.id.clone(), s);
            }
        }
    }
    Ok(Some(all))
}

pub fn context<'a>(density: Option<&'a DensityModels>, nli: Option<&'a dyn NliSource>) -> EvalContext<'a> {
    EvalContext {
        density,
        nli,
        ..EvalContext::default()
    }
}

/// `[record][estimator]` scores; capability gaps become `None`, any other
/// estimator failure aborts with the record id.
pub fn score_dataset(ds: &Dataset, names: &[String], ctx: &EvalContext<'_>) -> Result<Vec<Vec<Option<f64>>>, CliError> {
    ds.iter()
        .map(|r| {
            names
                .iter()
                .map(|n| match evaluate(n, r, ctx) {
                    Ok(v) => Ok(Some(v)),
                    Err(e) if is_capability_gap(&e) => Ok(None),
                    Err(e) => Err(CliError::Data(format!("estimator {n} failed on record {}: {e}", r.id))),
                })
                .collect()
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, ds: &Dataset, names: &[String], table: &[Vec<Option<f64>>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Data(format!("writing score table: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("id").chain(names.iter().map(String::as_str)))
        .map_err(io)?;
    for (r, row) in ds.iter().zip(table) {
        let cells = row.iter().map(|v| match v {
            Some(x) => x.to_string(),
            None => UNAVAILABLE.to_string(),
        });
        w.write_record(std::iter::once(r.id.clone()).chain(cells)).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("writing score table: {e}")))
}
