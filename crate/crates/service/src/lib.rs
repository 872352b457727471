//! Command line and HTTP front ends for scenario runs.

pub mod api;
pub mod cli;
pub mod store;

use std::path::Path;

use serde::Serialize;
use stormflux_core::evacmodel::{load_observations, DEFAULT_INTENDED_WEIGHT};
use stormflux_core::{fit, CoefficientSet, Datasets, Error, FitOptions, FittedModel};

/// Structured error body shared by the CLI (stderr) and the HTTP API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ErrorBody {
            code: code.to_string(),
            message: message.into(),
            detail: serde_json::Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        let detail = match e {
            Error::UnknownCounty(fips) => serde_json::json!({ "unknown_fips": fips }),
            Error::MissingPrevalence(f) | Error::MissingCases(f) | Error::UnmappedCounty(f) => {
                serde_json::json!({ "fips": f })
            }
            Error::Parse { path, line, .. } => serde_json::json!({ "path": path, "line": line }),
            Error::NonConvergence {
                iterations,
                gradient_norm,
                ..
            } => serde_json::json!({ "iterations": iterations, "gradient_norm": gradient_norm }),
            _ => serde_json::Value::Null,
        };
        let code = if is_validation(e) { "validation" } else { "internal" };
        ErrorBody::new(code, e.to_string()).with_detail(detail)
    }
}

/// Errors caused by the caller's input rather than by the service.
pub fn is_validation(e: &Error) -> bool {
    e.is_validation() || matches!(e, Error::Json(_))
}

/// Everything a scenario run needs, loaded once.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub datasets: Datasets,
    pub model: FittedModel,
    pub coeffs: CoefficientSet,
    pub manifest: Option<serde_json::Value>,
}

impl Inputs {
    /// Loads the data directory. Without `model`, the evacuation model is
    /// fitted from `evac_observations.csv` in the data directory. Without
    /// `coeffs`, `config/od_coefficients.json` next to the data directory is used.
    pub fn load(data: &Path, model: Option<&Path>, coeffs: Option<&Path>) -> stormflux_core::Result<Self> {
        let datasets = Datasets::load_dir(data)?;
        let model = match model {
            Some(p) => FittedModel::load(p)?,
            None => {
                let obs = load_observations(data.join("evac_observations.csv"), DEFAULT_INTENDED_WEIGHT)?;
                fit(&obs, &FitOptions::default())?
            }
        };
        let coeffs_path = match coeffs {
            Some(p) => p.to_path_buf(),
            None => data
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("config")
                .join("od_coefficients.json"),
        };
        let coeffs = CoefficientSet::load(coeffs_path)?;
        let manifest = std::fs::read_to_string(data.join("manifest.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        Ok(Inputs {
            datasets,
            model,
            coeffs,
            manifest,
        })
    }
}
