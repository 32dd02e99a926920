use std::fs;
use std::path::{Path, PathBuf};

use hedge_core::density::{fit_gaussian, fit_rde, mahalanobis, DensityModels, HuqConfig, McdConfig, Regularization};
use hedge_core::info::msp;
use hedge_core::Dataset;
use serde::Deserialize;

use crate::error::CliError;

/// Density fitting inputs, shared by `fit-density` and the bench `[density]` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub train: PathBuf,
    #[serde(default)]
    pub background: Option<PathBuf>,
    /// Reduced dimension for RDE; no RDE fit when absent.
    #[serde(default)]
    pub rde_dim: Option<usize>,
    /// Records whose MD and MSP scores calibrate HUQ.
    #[serde(default)]
    pub huq_calibration: Option<PathBuf>,
    #[serde(default = "half")]
    pub huq_alpha: f64,
    #[serde(default)]
    pub mcd: McdConfig,
    #[serde(default)]
    pub regularization: Regularization,
}

fn half() -> f64 {
    0.5
}

impl DensitySpec {
    pub fn new(train: impl Into<PathBuf>) -> Self {
        Self {
            train: train.into(),
            background: None,
            rde_dim: None,
            huq_calibration: None,
            huq_alpha: 0.5,
            mcd: McdConfig::default(),
            regularization: Regularization::default(),
        }
    }

    pub fn resolve(mut self, base: &Path) -> Self {
        let join = |p: &PathBuf| base.join(p);
        self.train = join(&self.train);
        self.background = self.background.as_ref().map(join);
        self.huq_calibration = self.huq_calibration.as_ref().map(join);
        self
    }
}

/// Reads an embedding file: one JSON array per line, or one record object
/// carrying an `embedding` field. Blank lines are skipped.
pub fn load_embeddings(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{}: line {}: {m}", path.display(), i + 1));
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let arr = match &v {
            serde_json::Value::Array(_) => v,
            serde_json::Value::Object(o) => o.get("embedding").cloned().ok_or_else(|| bad("object has no embedding".into()))?,
            _ => return Err(bad("expected an array or an object".into())),
        };
        let e: Vec<f64> = serde_json::from_value(arr).map_err(|e| bad(e.to_string()))?;
        if e.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite embedding value".into()));
        }
        out.push(e);
    }
    Ok(out)
}

fn ctx_err(what: &'static str) -> impl Fn(hedge_core::Error) -> CliError {
    move |e| CliError::from(e).context(what)
}

/// Fits every density artifact `spec` asks for. `train` and `background`
/// are already loaded (and possibly subsampled) embeddings.
pub fn fit_models(
    spec: &DensitySpec,
    train: &[Vec<f64>],
    background: Option<&[Vec<f64>]>,
    huq_records: Option<&Dataset>,
) -> Result<DensityModels, CliError> {
    let gaussian = fit_gaussian(train, spec.regularization).map_err(ctx_err("gaussian fit"))?;
    let background = background
        .map(|b| fit_gaussian(b, spec.regularization))
        .transpose()
        .map_err(ctx_err("background fit"))?;
    let rde = spec
        .rde_dim
        .map(|d| fit_rde(train, d, &spec.mcd, spec.regularization))
        .transpose()
        .map_err(ctx_err("rde fit"))?;
    let huq = match huq_records {
        Some(ds) => {
            let (mut dens, mut info) = (Vec::new(), Vec::new());
            for r in ds {
                if let (Some(h), Ok(u)) = (r.embedding.as_deref(), msp::<f64>(r)) {
                    dens.push(mahalanobis(&gaussian, h).map_err(ctx_err("huq calibration"))?);
                    info.push(u);
                }
            }
            Some(HuqConfig::new(spec.huq_alpha, &dens, &info).map_err(ctx_err("huq calibration"))?)
        }
        None => None,
    };
    Ok(DensityModels {
        gaussian: Some(gaussian),
        background,
        rde,
        huq,
    })
}
