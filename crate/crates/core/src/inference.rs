//! Large-sample inference for `γ = C Θ D'`.
//!
//! Covariances of `√n·vec_t(γ̂ - γ)` are Kronecker factored as
//! `kron(left, right)`, with `left` s×s and `right` t×t, in the row-stacking
//! orientation of [`crate::matlib::vec_t`].

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{GcmError, Result};
use crate::estimators::{self, GammaHat, SigmaHat};
use crate::matlib::{self, Matrix, SpdMatrix};
use crate::model::{Contrast, Dataset, Design};

/// Inputs of the limiting law: `R = lim X'X/n`, the true `Σ`, `Z` and the contrast.
#[derive(Debug, Clone)]
pub struct AsymptoticSpec {
    pub r: SpdMatrix,
    pub sigma: SpdMatrix,
    pub z: Matrix,
    pub contrast: Contrast,
}

/// Kronecker-factored covariance `kron(left, right)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticLaw {
    #[serde(with = "matlib::serde_rows")]
    pub left: Matrix,
    #[serde(with = "matlib::serde_rows")]
    pub right: Matrix,
}

impl AsymptoticLaw {
    /// Full st×st covariance of the row-stacked estimate.
    pub fn covariance(&self) -> Matrix {
        matlib::kron(&self.left, &self.right)
    }

    /// `sqrt(left_ii * right_jj)` for every entry of an s×t estimate.
    pub fn standard_errors(&self) -> Matrix {
        Matrix::from_fn(self.left.nrows(), self.right.nrows(), |i, j| {
            (self.left[(i, i)] * self.right[(j, j)]).max(0.0).sqrt()
        })
    }
}

/// Outcome of the χ² test of `C Θ D' = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestResult {
    #[serde(with = "matlib::serde_rows")]
    pub t_stat: Matrix,
    pub chi_sq: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// `D (Z' Σ^{-1} Z)^{-1} D'`.
fn right_factor(z: &Matrix, sigma: &SpdMatrix, d: &Matrix) -> Result<Matrix> {
    if sigma.dim() != z.nrows() || d.ncols() != z.ncols() {
        return Err(GcmError::DimensionMismatch(format!(
            "Sigma is {0}x{0}, Z is {1}x{2}, D has {3} columns",
            sigma.dim(),
            z.nrows(),
            z.ncols(),
            d.ncols()
        )));
    }
    let info = SpdMatrix::named(matlib::symmetrize(&z.tr_mul(&sigma.solve(z))), "Z' Sigma^-1 Z")?;
    Ok(matlib::symmetrize(&(d * info.solve(&d.transpose()))))
}

/// Limiting covariance `(C R^{-1} C') ⊗ (D (Z'Σ^{-1}Z)^{-1} D')`.
pub fn asym_cov(spec: &AsymptoticSpec) -> Result<AsymptoticLaw> {
    let c = &spec.contrast.c;
    if spec.r.dim() != c.ncols() {
        return Err(GcmError::DimensionMismatch(format!(
            "R is {0}x{0}, C has {1} columns",
            spec.r.dim(),
            c.ncols()
        )));
    }
    let left = matlib::symmetrize(&(c * spec.r.solve(&c.transpose())));
    let right = right_factor(&spec.z, &spec.sigma, &spec.contrast.d)?;
    Ok(AsymptoticLaw { left, right })
}

/// Finite-sample plug-in covariance `(C (X'X)^{-1} C') ⊗ (D (Z'Σ̂^{-1}Z)^{-1} D')`.
pub fn plugin_cov_with(design: &Design, contrast: &Contrast, sigma_hat: &SigmaHat) -> Result<AsymptoticLaw> {
    plugin_cov_known(design, contrast, &sigma_hat.value)
}

/// Same covariance with a known `Σ₀` in place of `Σ̂`.
pub fn plugin_cov_known(design: &Design, contrast: &Contrast, sigma: &SpdMatrix) -> Result<AsymptoticLaw> {
    contrast.check_conforms(design)?;
    let xtx = SpdMatrix::named(design.x.tr_mul(&design.x), "X'X")?;
    let left = matlib::symmetrize(&(&contrast.c * xtx.solve(&contrast.c.transpose())));
    let right = right_factor(&design.z, sigma, &contrast.d)?;
    Ok(AsymptoticLaw { left, right })
}

pub fn plugin_cov(data: &Dataset, contrast: &Contrast) -> Result<AsymptoticLaw> {
    contrast.check_conforms(&data.design)?;
    let sh = estimators::sigma_hat(data)?;
    plugin_cov_with(&data.design, contrast, &sh)
}

/// `left^{-1/2} · g · right^{-1/2}` with symmetric inverse square roots.
pub fn whiten(left: &Matrix, g: &Matrix, right: &Matrix) -> Result<Matrix> {
    let l = SpdMatrix::named(left.clone(), "left standardizer")?;
    let r = SpdMatrix::named(right.clone(), "right standardizer")?;
    if g.shape() != (l.dim(), r.dim()) {
        return Err(GcmError::DimensionMismatch(format!(
            "cannot whiten a {}x{} matrix with {}x{} and {}x{} factors",
            g.nrows(),
            g.ncols(),
            l.dim(),
            l.dim(),
            r.dim(),
            r.dim()
        )));
    }
    Ok(matlib::inv_sqrt_spd(&l) * g * matlib::inv_sqrt_spd(&r))
}

/// Standardized statistic from an already computed first stage and estimate.
pub fn standardized_stat_with(design: &Design, sigma_hat: &SigmaHat, gamma: &GammaHat) -> Result<Matrix> {
    standardized_stat_known(design, &sigma_hat.value, gamma)
}

/// Standardized statistic with a known `Σ₀` in both standardizers.
pub fn standardized_stat_known(design: &Design, sigma: &SpdMatrix, gamma: &GammaHat) -> Result<Matrix> {
    let n = design.n() as f64;
    let law = plugin_cov_known(design, &gamma.contrast, sigma)?;
    whiten(&(law.left * n), &(&gamma.value * n.sqrt()), &law.right)
}

/// `(C n(X'X)^{-1} C')^{-1/2} √n γ̂(Y) (D (Z'Σ̂^{-1}Z)^{-1} D')^{-1/2}`.
pub fn standardized_stat(data: &Dataset, contrast: &Contrast) -> Result<Matrix> {
    contrast.check_conforms(&data.design)?;
    let sh = estimators::sigma_hat(data)?;
    let gamma = estimators::two_stage_gamma_with(data, &sh, contrast)?;
    standardized_stat_with(&data.design, &sh, &gamma)
}

/// Upper tail `P(χ²_dof > x)`.
pub fn chi_square_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(GcmError::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Aggregates a standardized statistic into a χ² decision.
pub fn chi_square_test(t_stat: Matrix, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let chi_sq = t_stat.norm_squared();
    let dof = t_stat.len();
    let p_value = chi_square_sf(chi_sq, dof);
    Ok(TestResult {
        t_stat,
        chi_sq,
        dof,
        p_value,
        alpha,
        reject: p_value < alpha,
    })
}

/// Test of `C Θ D' = 0` with `‖T‖²_F` referred to `χ²_{st}`.
pub fn test_gamma_zero(data: &Dataset, contrast: &Contrast, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    chi_square_test(standardized_stat(data, contrast)?, alpha)
}
