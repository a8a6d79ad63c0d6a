//! JSON documents written by the tool. Every struct rejects unknown keys.

use gcm_core::inference::AsymptoticLaw;
use gcm_core::matlib::serde_rows;
use gcm_core::mc::{CellRecords, McConfig, McKind, McReport, Scenario};
use gcm_core::model::NoiseSpec;
use gcm_core::Matrix;
use serde::{Deserialize, Serialize};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::error::ErrorRecord;

/// Top-level layout shared by every `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report<I, R> {
    pub meta: Meta,
    pub inputs: I,
    pub results: Option<R>,
    pub errors: Vec<ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub version: String,
    pub seed: Option<u64>,
    /// RFC 3339, taken from `SOURCE_DATE_EPOCH` when set; otherwise null so
    /// that reruns stay byte-identical.
    pub timestamp: Option<String>,
}

impl Meta {
    pub fn new(seed: Option<u64>) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .and_then(|secs| OffsetDateTime::from_unix_timestamp(secs).ok())
            .and_then(|t| t.format(&Rfc3339).ok());
        Meta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timestamp,
        }
    }
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub seed: u64,
    pub noise: NoiseSpec,
    #[serde(with = "serde_rows")]
    pub theta: Matrix,
    #[serde(with = "serde_rows")]
    pub sigma: Matrix,
    /// Lower-triangular `L` with `L L' = Σ`; rows of the error are `L z`.
    #[serde(with = "serde_rows")]
    pub sigma_chol_lower: Matrix,
}

/// Input of `gcm simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    /// Group size; the dataset has `n = m r` rows.
    pub r: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateInputs {
    pub config: SimulateConfig,
    pub header: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateResults {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `Σ̂` plugged into the GLS formula.
    TwoStage,
    /// Caller supplied `Σ₀`.
    KnownSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateInputs {
    pub y: String,
    pub x: String,
    pub z: String,
    pub c: String,
    pub d: String,
    pub header: bool,
    pub sigma0: Option<String>,
    pub truth: Option<String>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthErrors {
    /// `‖Θ̂ - Θ‖_F`
    pub theta_fro: f64,
    /// `‖γ̂ - C Θ D'‖_F`
    pub gamma_fro: f64,
    /// `‖Σ̂ - Σ‖_F`, two-stage only
    pub sigma_fro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateResults {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    #[serde(with = "serde_rows")]
    pub theta_hat: Matrix,
    #[serde(with = "serde_rows")]
    pub gamma_hat: Matrix,
    #[serde(with = "serde_rows::option")]
    pub sigma_hat: Option<Matrix>,
    /// Plug-in covariance `left ⊗ right` of `vec_t(γ̂)`.
    pub plugin_cov: AsymptoticLaw,
    /// `sqrt(left_ii right_jj)`
    #[serde(with = "serde_rows")]
    pub standard_errors: Matrix,
    pub truth_errors: Option<TruthErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestResults {
    pub method: Method,
    #[serde(with = "serde_rows")]
    pub gamma_hat: Matrix,
    #[serde(with = "serde_rows")]
    pub t_stat: Matrix,
    pub chi_sq: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McInputs {
    pub kind: McKind,
    pub config: McConfig,
    pub dump_replicates: bool,
}

/// Per-replicate records; re-summarizing them reproduces the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateDump {
    pub kind: McKind,
    pub config: McConfig,
    pub cells: Vec<CellRecords>,
}

pub type SimulateReport = Report<SimulateInputs, SimulateResults>;
pub type EstimateReport = Report<EstimateInputs, EstimateResults>;
pub type TestReport = Report<EstimateInputs, TestResults>;
pub type McRunReport = Report<McInputs, McReport>;
