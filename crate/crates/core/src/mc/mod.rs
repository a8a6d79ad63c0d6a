//! Monte Carlo harness for the large-sample properties of the estimators.
//!
//! A run is a list of cells, one per sample size. Replicate `i` of cell `k`
//! draws its data from a generator seeded by [`replicate_seed`]`(seed, k, i)`
//! only, and replicates are collected in index order, so the report does not
//! depend on how many worker threads ran them. Summaries are computed from the
//! per-replicate records alone; [`summarize`] on a persisted dump reproduces
//! the report.

mod config;
pub mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ContrastSpec, DesignSpec, McConfig, Prepared, Scenario};

use crate::error::{GcmError, Result};
use crate::estimators;
use crate::inference;
use crate::matlib::{self, serde_rows, Matrix, Vector};
use crate::model::{self, Dataset, NoiseSpec};

/// Bias is flagged beyond this many Monte Carlo standard errors.
pub const BIAS_SE_MULTIPLE: f64 = 4.0;
/// Relative Frobenius tolerance between empirical and limit covariance.
pub const COVARIANCE_REL_TOL: f64 = 0.10;
pub const SKEWNESS_TOL: f64 = 0.15;
pub const EXCESS_KURTOSIS_TOL: f64 = 0.3;
/// Half-width of the accepted rejection-rate band, relative to alpha.
pub const LEVEL_BAND_REL: f64 = 0.3;
/// Same, for heavy-tailed (student t) errors.
pub const LEVEL_BAND_REL_HEAVY: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McKind {
    Consistency,
    Unbiasedness,
    Normality,
    Level,
}

impl McKind {
    pub fn name(self) -> &'static str {
        match self {
            McKind::Consistency => "consistency",
            McKind::Unbiasedness => "unbiasedness",
            McKind::Normality => "normality",
            McKind::Level => "level",
        }
    }
}

/// Seed of replicate `index` in cell `cell`.
pub fn replicate_seed(seed: u64, cell: usize, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ cell as u64) ^ index as u64)
}

/// Values recorded for a replicate whose first stage succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateValues {
    /// `‖Σ̂ - Σ‖_F`
    pub sigma_err: f64,
    /// `‖γ̂ - γ‖_F`
    pub gamma_err: f64,
    /// `‖H(Y) - H‖_max`
    pub h_gap: f64,
    /// `vec_t(γ̂)`
    pub gamma_hat: Vec<f64>,
    /// `√n vec_t(γ̂ - γ)` whitened by the limit-law factors (true Σ).
    pub z_true: Vec<f64>,
    /// `√n vec_t(γ̂ - γ)` whitened by the plug-in factors (Σ̂).
    pub z_plugin: Vec<f64>,
    /// p-value of the χ² test of `C Θ D' = 0`.
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value_alt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<ReplicateValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRecords {
    pub r: usize,
    pub n: usize,
    pub records: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSummary {
    pub median: f64,
    pub mean: f64,
}

impl ErrorSummary {
    fn of(xs: &[f64]) -> Self {
        Self {
            median: stats::median(xs),
            mean: stats::mean(xs),
        }
    }
}

/// Distribution diagnostics of one standardized coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordDiag {
    pub coordinate: usize,
    pub ks_distance: f64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub ex_kurtosis: f64,
}

fn coord_diags(rows: &[&Vec<f64>]) -> Vec<CoordDiag> {
    let dim = rows.first().map_or(0, |r| r.len());
    (0..dim)
        .map(|k| {
            let xs: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            CoordDiag {
                coordinate: k,
                ks_distance: stats::ks_distance_normal(&xs),
                mean: stats::mean(&xs),
                variance: stats::variance(&xs),
                skewness: stats::skewness(&xs),
                ex_kurtosis: stats::excess_kurtosis(&xs),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSummary {
    pub r: usize,
    pub n: usize,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    #[serde(with = "serde_rows")]
    pub gamma_true: Matrix,
    #[serde(with = "serde_rows")]
    pub mean_gamma: Matrix,
    #[serde(with = "serde_rows")]
    pub bias: Matrix,
    /// Monte Carlo standard error of each entry of `mean_gamma`.
    #[serde(with = "serde_rows")]
    pub bias_se: Matrix,
    pub max_abs_bias_z: f64,
    pub bias_flagged: bool,
    pub sigma_err: ErrorSummary,
    pub gamma_err: ErrorSummary,
    pub h_gap: ErrorSummary,
    /// Empirical covariance of `√n vec_t(γ̂ - γ)`.
    #[serde(with = "serde_rows")]
    pub s_emp: Matrix,
    /// `(C R^{-1} C') ⊗ (D (Z'Σ^{-1}Z)^{-1} D')`
    #[serde(with = "serde_rows")]
    pub s_theory: Matrix,
    pub relative_frobenius: f64,
    /// `n C (X'X)^{-1} C'`, the plug-in left factor on the √n scale.
    #[serde(with = "serde_rows")]
    pub scaled_plugin_left: Matrix,
    /// `‖n C (X'X)^{-1} C' - C R^{-1} C'‖_max`
    pub plugin_left_gap: f64,
    pub ks_critical: f64,
    pub true_sigma_whitened: Vec<CoordDiag>,
    pub plugin_whitened: Vec<CoordDiag>,
    pub alpha: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_rate_alt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McReport {
    pub kind: McKind,
    pub config: McConfig,
    pub cells: Vec<CellSummary>,
    pub checks: Vec<Check>,
}

impl McReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn replicate(prep: &Prepared, noise: &NoiseSpec, index: usize, seed: u64) -> ReplicateRecord {
    match replicate_values(prep, noise, seed) {
        Ok(values) => ReplicateRecord {
            index,
            seed,
            values: Some(values),
            error: None,
        },
        Err(e) => ReplicateRecord {
            index,
            seed,
            values: None,
            error: Some(e.to_string()),
        },
    }
}

fn test_p_value(data: &Dataset, prep: &Prepared) -> Result<f64> {
    let sh = estimators::sigma_hat(data)?;
    let gamma = estimators::two_stage_gamma_with(data, &sh, &prep.contrast)?;
    let t = inference::standardized_stat_with(&data.design, &sh, &gamma)?;
    Ok(inference::chi_square_sf(t.norm_squared(), t.len()))
}

fn replicate_values(prep: &Prepared, noise: &NoiseSpec, seed: u64) -> Result<ReplicateValues> {
    let data = model::simulate(&prep.design, &prep.params, noise, seed)?;
    let sh = estimators::sigma_hat(&data)?;
    let gamma = estimators::two_stage_gamma_with(&data, &sh, &prep.contrast)?;
    let h = estimators::h_matrix(&sh.value, &data.design.z)?;
    let n = data.design.n() as f64;

    let scaled_err = (&gamma.value - &prep.gamma_true) * n.sqrt();
    let z_true = &prep.limit_left_isqrt * &scaled_err * &prep.limit_right_isqrt;
    let plug = inference::plugin_cov_with(&data.design, &prep.contrast, &sh)?;
    let z_plugin = inference::whiten(&(plug.left * n), &scaled_err, &plug.right)?;
    let t = inference::standardized_stat_with(&data.design, &sh, &gamma)?;
    let p_value = inference::chi_square_sf(t.norm_squared(), t.len());

    let p_value_alt = match &prep.alternative_theta {
        Some(alt) => {
            let d = &data.design;
            let shift = &d.x * (alt - &prep.params.theta) * d.z.transpose();
            let alt_data = Dataset::new(&data.y + shift, d.clone())?;
            Some(test_p_value(&alt_data, prep)?)
        }
        None => None,
    };

    Ok(ReplicateValues {
        sigma_err: (sh.value.matrix() - prep.params.sigma.matrix()).norm(),
        gamma_err: (&gamma.value - &prep.gamma_true).norm(),
        h_gap: matlib::max_abs(&(&h.value - &prep.h_true.value)),
        gamma_hat: matlib::vec_t(&gamma.value).as_slice().to_vec(),
        z_true: matlib::vec_t(&z_true).as_slice().to_vec(),
        z_plugin: matlib::vec_t(&z_plugin).as_slice().to_vec(),
        p_value,
        p_value_alt,
    })
}

fn check_preconditions(kind: McKind, cfg: &McConfig) -> Result<()> {
    cfg.validate()?;
    match kind {
        McKind::Consistency => {
            if cfg.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GcmError::InvalidConfig(
                    "consistency runs need strictly increasing sample sizes".into(),
                ));
            }
        }
        McKind::Level => {
            let prep = Prepared::new(&cfg.scenario, cfg.sample_sizes[0])?;
            let scale = matlib::max_abs(&prep.params.theta).max(1.0);
            if matlib::max_abs(&prep.gamma_true) > 1e-12 * scale {
                return Err(GcmError::InvalidConfig(
                    "level runs need a parameter satisfying C Theta D' = 0".into(),
                ));
            }
        }
        McKind::Unbiasedness | McKind::Normality => {}
    }
    Ok(())
}

/// Simulates every replicate of every cell.
pub fn simulate_cells(cfg: &McConfig) -> Result<Vec<CellRecords>> {
    cfg.validate()?;
    cfg.sample_sizes
        .iter()
        .enumerate()
        .map(|(cell, &r)| {
            let prep = Prepared::new(&cfg.scenario, r)?;
            let noise = cfg.scenario.noise;
            let records: Vec<ReplicateRecord> = (0..cfg.replications)
                .into_par_iter()
                .map(|i| replicate(&prep, &noise, i, replicate_seed(cfg.seed, cell, i)))
                .collect();
            Ok(CellRecords {
                r,
                n: prep.n(),
                records,
            })
        })
        .collect()
}

fn summarize_cell(prep: &Prepared, cell: &CellRecords, alpha: f64) -> Result<CellSummary> {
    let ok: Vec<&ReplicateValues> = cell.records.iter().filter_map(|r| r.values.as_ref()).collect();
    let successes = ok.len();
    if successes < 2 {
        return Err(GcmError::InvalidConfig(format!(
            "cell r = {} has {successes} successful replicates, need at least 2",
            cell.r
        )));
    }
    let (s, t) = prep.gamma_true.shape();
    let dim = s * t;
    let count = successes as f64;
    let n = prep.n() as f64;

    let mut mean_vec = Vector::zeros(dim);
    for v in &ok {
        mean_vec += Vector::from_column_slice(&v.gamma_hat);
    }
    mean_vec /= count;
    let mut centered_ss = Vector::zeros(dim);
    let mut s_emp = Matrix::zeros(dim, dim);
    for v in &ok {
        let d = Vector::from_column_slice(&v.gamma_hat) - &mean_vec;
        centered_ss += d.component_mul(&d);
        s_emp.ger(1.0, &d, &d, 1.0);
    }
    // covariance of √n vec_t(γ̂ - γ) around its sample mean
    s_emp *= n / (count - 1.0);
    let se_vec = centered_ss.map(|ss| (ss / (count - 1.0) / count).sqrt());

    let mean_gamma = matlib::unvec_t(&mean_vec, s, t)?;
    let bias = &mean_gamma - &prep.gamma_true;
    let bias_se = matlib::unvec_t(&se_vec, s, t)?;
    let max_abs_bias_z = bias.iter().zip(bias_se.iter()).fold(0.0_f64, |acc, (b, se)| {
        let z = if *se > 0.0 {
            b.abs() / se
        } else if *b == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        acc.max(z)
    });

    let s_theory = prep.limit_law.covariance();
    let relative_frobenius = (&s_emp - &s_theory).norm() / s_theory.norm();

    let collect = |f: fn(&ReplicateValues) -> f64| ok.iter().map(|v| f(v)).collect::<Vec<f64>>();
    let rejections = ok.iter().filter(|v| v.p_value < alpha).count();
    let rejection_rate_alt = if ok.iter().all(|v| v.p_value_alt.is_some()) && prep.alternative_theta.is_some() {
        let hits = ok.iter().filter(|v| v.p_value_alt.is_some_and(|p| p < alpha)).count();
        Some(hits as f64 / count)
    } else {
        None
    };

    Ok(CellSummary {
        r: cell.r,
        n: cell.n,
        replications: cell.records.len(),
        successes,
        failures: cell.records.len() - successes,
        gamma_true: prep.gamma_true.clone(),
        mean_gamma,
        bias,
        bias_se,
        max_abs_bias_z,
        bias_flagged: max_abs_bias_z > BIAS_SE_MULTIPLE,
        sigma_err: ErrorSummary::of(&collect(|v| v.sigma_err)),
        gamma_err: ErrorSummary::of(&collect(|v| v.gamma_err)),
        h_gap: ErrorSummary::of(&collect(|v| v.h_gap)),
        s_emp,
        s_theory,
        relative_frobenius,
        plugin_left_gap: matlib::max_abs(&(&prep.scaled_plugin_left - &prep.limit_law.left)),
        scaled_plugin_left: prep.scaled_plugin_left.clone(),
        ks_critical: stats::ks_critical_1pct(successes),
        true_sigma_whitened: coord_diags(&ok.iter().map(|v| &v.z_true).collect::<Vec<_>>()),
        plugin_whitened: coord_diags(&ok.iter().map(|v| &v.z_plugin).collect::<Vec<_>>()),
        alpha,
        rejections,
        rejection_rate: rejections as f64 / count,
        rejection_rate_alt,
    })
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn level_band(cfg: &McConfig) -> (f64, f64) {
    let rel = match cfg.scenario.noise {
        NoiseSpec::StudentT { .. } => LEVEL_BAND_REL_HEAVY,
        _ => LEVEL_BAND_REL,
    };
    (cfg.alpha * (1.0 - rel), cfg.alpha * (1.0 + rel))
}

fn checks_for(kind: McKind, cfg: &McConfig, cells: &[CellSummary]) -> Vec<Check> {
    let mut out = Vec::new();
    match kind {
        McKind::Consistency => {
            let trend = |name: &str, xs: Vec<f64>| Check {
                name: format!("{name}_decreasing"),
                passed: strictly_decreasing(&xs),
                detail: format!("medians {xs:?}"),
            };
            out.push(trend("median_sigma_err", cells.iter().map(|c| c.sigma_err.median).collect()));
            out.push(trend("median_gamma_err", cells.iter().map(|c| c.gamma_err.median).collect()));
            out.push(trend("median_h_gap", cells.iter().map(|c| c.h_gap.median).collect()));
        }
        McKind::Unbiasedness => {
            for c in cells {
                out.push(Check {
                    name: format!("bias_within_{BIAS_SE_MULTIPLE}se_r{}", c.r),
                    passed: !c.bias_flagged,
                    detail: format!("max |bias|/se = {:.4}", c.max_abs_bias_z),
                });
            }
        }
        McKind::Normality => {
            for c in cells {
                out.push(Check {
                    name: format!("covariance_match_r{}", c.r),
                    passed: c.relative_frobenius < COVARIANCE_REL_TOL,
                    detail: format!("relative Frobenius {:.5} (tol {COVARIANCE_REL_TOL})", c.relative_frobenius),
                });
                for d in &c.true_sigma_whitened {
                    out.push(Check {
                        name: format!("coordinate_{}_normal_r{}", d.coordinate, c.r),
                        passed: d.ks_distance < c.ks_critical
                            && d.skewness.abs() < SKEWNESS_TOL
                            && d.ex_kurtosis.abs() < EXCESS_KURTOSIS_TOL,
                        detail: format!(
                            "ks {:.5} (crit {:.5}), skewness {:.4}, excess kurtosis {:.4}",
                            d.ks_distance, c.ks_critical, d.skewness, d.ex_kurtosis
                        ),
                    });
                }
            }
        }
        McKind::Level => {
            let (lo, hi) = level_band(cfg);
            for c in cells {
                out.push(Check {
                    name: format!("level_r{}", c.r),
                    passed: (lo..=hi).contains(&c.rejection_rate),
                    detail: format!("rejection rate {:.4} in [{lo:.4}, {hi:.4}]", c.rejection_rate),
                });
            }
        }
    }
    out
}

/// Builds a report from per-replicate records.
pub fn summarize(kind: McKind, cfg: &McConfig, cells: &[CellRecords]) -> Result<McReport> {
    check_preconditions(kind, cfg)?;
    if cells.len() != cfg.sample_sizes.len() {
        return Err(GcmError::InvalidConfig(format!(
            "{} cells of records for {} sample sizes",
            cells.len(),
            cfg.sample_sizes.len()
        )));
    }
    let summaries = cells
        .iter()
        .zip(&cfg.sample_sizes)
        .map(|(cell, &r)| {
            if cell.r != r || cell.records.len() != cfg.replications {
                return Err(GcmError::InvalidConfig(format!(
                    "records for r = {} do not match the configuration",
                    cell.r
                )));
            }
            let prep = Prepared::new(&cfg.scenario, r)?;
            summarize_cell(&prep, cell, cfg.alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    let checks = checks_for(kind, cfg, &summaries);
    Ok(McReport {
        kind,
        config: cfg.clone(),
        cells: summaries,
        checks,
    })
}

/// Runs a suite and returns the report together with the replicate records.
pub fn run_with_records(kind: McKind, cfg: &McConfig) -> Result<(McReport, Vec<CellRecords>)> {
    check_preconditions(kind, cfg)?;
    let cells = simulate_cells(cfg)?;
    let report = summarize(kind, cfg, &cells)?;
    Ok((report, cells))
}

pub fn run(kind: McKind, cfg: &McConfig) -> Result<McReport> {
    run_with_records(kind, cfg).map(|(report, _)| report)
}

/// Error trends of `Σ̂`, `γ̂` and `H(Y)` over increasing sample sizes.
pub fn run_consistency(cfg: &McConfig) -> Result<McReport> {
    run(McKind::Consistency, cfg)
}

/// Mean of `γ̂` against `C Θ D'` with Monte Carlo standard errors.
pub fn run_unbiasedness(cfg: &McConfig) -> Result<McReport> {
    run(McKind::Unbiasedness, cfg)
}

/// Covariance match and coordinate normality of `√n (γ̂ - γ)`.
pub fn run_normality(cfg: &McConfig) -> Result<McReport> {
    run(McKind::Normality, cfg)
}

/// Rejection rate of the χ² test under `C Θ D' = 0`.
pub fn run_level(cfg: &McConfig) -> Result<McReport> {
    run(McKind::Level, cfg)
}
