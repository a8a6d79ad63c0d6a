//! Browser demo. Three operations, each returning JSON for the page to draw:
//!
//! - [`fit_curves`]: simulate a Potthoff–Roy experiment, fit the group curves
//!   by two-stage GLS and test whether they coincide;
//! - [`consistency_curve`]: median estimation errors over growing group sizes;
//! - [`null_statistic`]: draws of the standardized statistic under the null,
//!   for a histogram against the standard normal density.
//!
//! The plain functions are usable (and tested) natively; the `*_json`
//! wrappers are what the page calls through wasm-bindgen.

use gcm_core::estimators;
use gcm_core::inference;
use gcm_core::matlib::SpdMatrix;
use gcm_core::mc::{self, ContrastSpec, DesignSpec, McConfig, McKind, Scenario};
use gcm_core::model::{self, Contrast, ModelParams, NoiseSpec};
use gcm_core::Matrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const TIMES: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
/// Points per fitted curve.
const GRID: usize = 41;

pub fn noise_from_name(name: &str) -> Result<NoiseSpec, String> {
    match name {
        "gaussian" => Ok(NoiseSpec::Gaussian),
        "uniform" => Ok(NoiseSpec::Uniform),
        "student_t" => Ok(NoiseSpec::StudentT { df: 6.0 }),
        other => Err(format!("unknown noise family {other:?}")),
    }
}

/// AR(1) covariance with correlation `rho` and unit variances.
fn ar_sigma(rho: f64) -> Matrix {
    let p = TIMES.len();
    Matrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// Quadratic curves for `groups` groups; the last group's slope is raised by `gap`.
fn demo_theta(groups: usize, gap: f64) -> Matrix {
    Matrix::from_fn(groups, 3, |g, k| match k {
        0 => 2.0,
        1 => 0.8 + if g + 1 == groups { gap } else { 0.0 },
        _ => -0.08,
    })
}

fn polynomial(coefs: &[f64], t: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupFit {
    pub times: Vec<f64>,
    /// observed group mean at each time point
    pub means: Vec<f64>,
    pub grid: Vec<f64>,
    pub fitted: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveFit {
    pub groups: Vec<GroupFit>,
    pub theta_hat: Vec<Vec<f64>>,
    pub chi_sq: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject: bool,
}

/// Simulates `groups` groups of `per_group` subjects and fits quadratic curves.
pub fn fit_curves(
    groups: usize,
    per_group: usize,
    slope_gap: f64,
    rho: f64,
    noise: &str,
    seed: u64,
) -> Result<CurveFit, String> {
    let noise = noise_from_name(noise)?;
    let design = model::potthoff_roy_design(groups, per_group, &TIMES, 3).map_err(|e| e.to_string())?;
    model::validate(&design).map_err(|e| e.to_string())?;
    let sigma = SpdMatrix::named(ar_sigma(rho), "Sigma").map_err(|e| e.to_string())?;
    let theta = demo_theta(groups, slope_gap);
    let params = ModelParams::new(theta.clone(), sigma);
    let data = model::simulate(&design, &params, &noise, seed).map_err(|e| e.to_string())?;

    let sh = estimators::sigma_hat(&data).map_err(|e| e.to_string())?;
    let theta_hat = estimators::two_stage_gamma_with(&data, &sh, &Contrast::identity(groups, 3))
        .map_err(|e| e.to_string())?
        .value;
    let contrast = model::equality_contrast(groups, 3).map_err(|e| e.to_string())?;
    let gamma = estimators::two_stage_gamma_with(&data, &sh, &contrast).map_err(|e| e.to_string())?;
    let t = inference::standardized_stat_with(&data.design, &sh, &gamma).map_err(|e| e.to_string())?;
    let test = inference::chi_square_test(t, 0.05).map_err(|e| e.to_string())?;

    let (t0, t1) = (TIMES[0], TIMES[TIMES.len() - 1]);
    let grid: Vec<f64> = (0..GRID).map(|i| t0 + (t1 - t0) * i as f64 / (GRID - 1) as f64).collect();
    let row = |m: &Matrix, g: usize| m.row(g).iter().copied().collect::<Vec<f64>>();
    let out = (0..groups)
        .map(|g| {
            let rows = g * per_group..(g + 1) * per_group;
            let means = (0..TIMES.len())
                .map(|j| rows.clone().map(|i| data.y[(i, j)]).sum::<f64>() / per_group as f64)
                .collect();
            let (fit, truth) = (row(&theta_hat, g), row(&theta, g));
            GroupFit {
                times: TIMES.to_vec(),
                means,
                fitted: grid.iter().map(|&t| polynomial(&fit, t)).collect(),
                truth: grid.iter().map(|&t| polynomial(&truth, t)).collect(),
                grid: grid.clone(),
            }
        })
        .collect();
    Ok(CurveFit {
        groups: out,
        theta_hat: (0..groups).map(|g| row(&theta_hat, g)).collect(),
        chi_sq: test.chi_sq,
        dof: test.dof,
        p_value: test.p_value,
        reject: test.reject,
    })
}

fn scenario(groups: usize, slope_gap: f64, rho: f64, noise: NoiseSpec) -> Scenario {
    Scenario {
        design: DesignSpec::PotthoffRoy {
            m: groups,
            times: TIMES.to_vec(),
            q: 3,
        },
        theta: demo_theta(groups, slope_gap),
        sigma: ar_sigma(rho),
        contrast: ContrastSpec::Equality,
        noise,
        alternative_theta: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyCurve {
    pub n: Vec<usize>,
    pub median_sigma_err: Vec<f64>,
    pub median_gamma_err: Vec<f64>,
    pub median_h_gap: Vec<f64>,
}

/// Median errors of `Σ̂`, `γ̂` and `H(Y)` for 8, 16, ..., 128 subjects per group (two groups).
pub fn consistency_curve(replications: usize, rho: f64, noise: &str, seed: u64) -> Result<ConsistencyCurve, String> {
    let cfg = McConfig {
        scenario: scenario(2, 0.3, rho, noise_from_name(noise)?),
        sample_sizes: vec![8, 16, 32, 64, 128],
        replications,
        seed,
        alpha: 0.05,
    };
    let report = mc::run(McKind::Consistency, &cfg).map_err(|e| e.to_string())?;
    Ok(ConsistencyCurve {
        n: report.cells.iter().map(|c| c.n).collect(),
        median_sigma_err: report.cells.iter().map(|c| c.sigma_err.median).collect(),
        median_gamma_err: report.cells.iter().map(|c| c.gamma_err.median).collect(),
        median_h_gap: report.cells.iter().map(|c| c.h_gap.median).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NullStatistic {
    pub n: usize,
    /// every entry of every replicate's standardized statistic
    pub draws: Vec<f64>,
    pub rejection_rate: f64,
    pub alpha: f64,
}

/// Standardized statistic under equal curves, for `replications` datasets.
pub fn null_statistic(
    per_group: usize,
    replications: usize,
    rho: f64,
    noise: &str,
    seed: u64,
) -> Result<NullStatistic, String> {
    let cfg = McConfig {
        scenario: scenario(2, 0.0, rho, noise_from_name(noise)?),
        sample_sizes: vec![per_group],
        replications,
        seed,
        alpha: 0.05,
    };
    let (report, cells) = mc::run_with_records(McKind::Level, &cfg).map_err(|e| e.to_string())?;
    let draws = cells[0]
        .records
        .iter()
        .filter_map(|r| r.values.as_ref())
        .flat_map(|v| v.z_plugin.iter().copied())
        .collect();
    let cell = &report.cells[0];
    Ok(NullStatistic {
        n: cell.n,
        draws,
        rejection_rate: cell.rejection_rate,
        alpha: cell.alpha,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn fit_curves_json(
    groups: usize,
    per_group: usize,
    slope_gap: f64,
    rho: f64,
    noise: &str,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(fit_curves(groups, per_group, slope_gap, rho, noise, seed as u64))
}

#[wasm_bindgen]
pub fn consistency_curve_json(replications: usize, rho: f64, noise: &str, seed: u32) -> Result<String, JsValue> {
    to_js(consistency_curve(replications, rho, noise, seed as u64))
}

#[wasm_bindgen]
pub fn null_statistic_json(
    per_group: usize,
    replications: usize,
    rho: f64,
    noise: &str,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(null_statistic(per_group, replications, rho, noise, seed as u64))
}
