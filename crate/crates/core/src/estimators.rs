//! Covariance estimator, known-covariance GLS and the two-stage GLS estimator.
//!
//! The production path for `γ̂` solves against `Σ̂` with Cholesky factors.
//! The `H(Y)` route through the Moore–Penrose inverse is kept as an
//! independent evaluation and is what [`two_stage_theta`] uses.

use crate::error::{GcmError, Result};
use crate::matlib::{self, Matrix, SpdMatrix};
use crate::model::{self, Contrast, Dataset, Design};

/// `Σ̂(Y) = Y' W Y` with `W = (I - P_X) / (n - m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaHat {
    pub value: SpdMatrix,
    /// `n - m`
    pub divisor: usize,
}

/// Estimate of `γ = C Θ D'`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaHat {
    pub value: Matrix,
    pub contrast: Contrast,
}

/// `H = Σ^{-1} (P_Z Σ^{-1} P_Z)^+`.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub value: Matrix,
}

fn gram(design: &Design) -> Result<SpdMatrix> {
    SpdMatrix::named(design.x.tr_mul(&design.x), "X'X")
}

/// `(X'X)^{-1} X' Y`, the m×p least-squares coefficient matrix.
pub fn ols_coefficients(design: &Design, y: &Matrix) -> Result<Matrix> {
    Ok(gram(design)?.solve(&design.x.tr_mul(y)))
}

/// `K = Z (Z'Z)^{-1}`.
pub fn k_matrix(z: &Matrix) -> Result<Matrix> {
    let ztz = SpdMatrix::named(z.tr_mul(z), "Z'Z")?;
    Ok(ztz.solve(&z.transpose()).transpose())
}

/// `Σ^{-1} Z (Z' Σ^{-1} Z)^{-1}` (p×q), evaluated with two SPD solves.
fn gls_right_factor(z: &Matrix, sigma: &SpdMatrix) -> Result<Matrix> {
    let sinv_z = sigma.solve(z);
    let info = SpdMatrix::named(matlib::symmetrize(&z.tr_mul(&sinv_z)), "Z' Sigma^-1 Z")?;
    Ok(info.solve(&sinv_z.transpose()).transpose())
}

fn check_sigma_dim(design: &Design, sigma: &SpdMatrix) -> Result<()> {
    if sigma.dim() != design.p() {
        return Err(GcmError::DimensionMismatch(format!(
            "covariance is {0}x{0}, design has p = {1}",
            sigma.dim(),
            design.p()
        )));
    }
    Ok(())
}

/// Invariant quadratic estimator of `Σ`.
pub fn sigma_hat(data: &Dataset) -> Result<SigmaHat> {
    let design = &data.design;
    model::validate(design)?;
    let (n, m, p) = (design.n(), design.m(), design.p());
    let residual_dof = n - m;
    if residual_dof < p {
        return Err(GcmError::TooFewSamples { residual_dof, p });
    }
    // Y'(I - P_X)Y formed from residuals
    let coef = ols_coefficients(design, &data.y)?;
    let resid = &data.y - &design.x * coef;
    if matlib::max_abs(&resid) <= matlib::RANK_TOL * matlib::max_abs(&data.y) {
        return Err(GcmError::not_spd("first-stage covariance estimate: residuals vanish"));
    }
    let value = matlib::symmetrize(&(resid.tr_mul(&resid) / residual_dof as f64));
    let value = SpdMatrix::named(value, "first-stage covariance estimate")?;
    Ok(SigmaHat {
        value,
        divisor: residual_dof,
    })
}

/// Least-squares `Θ̂₀` for a known covariance `Σ₀`.
pub fn theta_hat_known(data: &Dataset, sigma0: &SpdMatrix) -> Result<Matrix> {
    let design = &data.design;
    model::validate(design)?;
    check_sigma_dim(design, sigma0)?;
    let coef = ols_coefficients(design, &data.y)?;
    Ok(coef * gls_right_factor(&design.z, sigma0)?)
}

/// `γ̂₀ = C Θ̂₀ D'`.
pub fn gamma_hat_known(data: &Dataset, sigma0: &SpdMatrix, contrast: &Contrast) -> Result<GammaHat> {
    contrast.check_conforms(&data.design)?;
    let theta = theta_hat_known(data, sigma0)?;
    Ok(GammaHat {
        value: contrast.apply(&theta),
        contrast: contrast.clone(),
    })
}

/// `H = Σ^{-1} (P_Z Σ^{-1} P_Z)^+` for any SPD `Σ`; with `Σ̂` this is `H(Y)`.
pub fn h_matrix(sigma: &SpdMatrix, z: &Matrix) -> Result<HMatrix> {
    if sigma.dim() != z.nrows() {
        return Err(GcmError::DimensionMismatch(format!(
            "covariance is {0}x{0}, Z has {1} rows",
            sigma.dim(),
            z.nrows()
        )));
    }
    let pz = matlib::orth_projector(z)?;
    let sinv = sigma.inverse();
    let middle = matlib::moore_penrose(&matlib::symmetrize(&(&pz * &sinv * &pz)));
    Ok(HMatrix { value: sinv * middle })
}

/// Two-stage estimator of `Θ` through `H(Y)`:
/// `(X'X)^{-1} X' Y H(Y) Z (Z'Z)^{-1}`.
pub fn two_stage_theta(data: &Dataset) -> Result<Matrix> {
    let sh = sigma_hat(data)?;
    let design = &data.design;
    let h = h_matrix(&sh.value, &design.z)?;
    let coef = ols_coefficients(design, &data.y)?;
    Ok(coef * h.value * k_matrix(&design.z)?)
}

/// Two-stage GLS estimator of `γ` given an already computed first stage.
pub fn two_stage_gamma_with(data: &Dataset, sigma_hat: &SigmaHat, contrast: &Contrast) -> Result<GammaHat> {
    let design = &data.design;
    contrast.check_conforms(design)?;
    check_sigma_dim(design, &sigma_hat.value)?;
    let coef = ols_coefficients(design, &data.y)?;
    let theta = coef * gls_right_factor(&design.z, &sigma_hat.value)?;
    Ok(GammaHat {
        value: contrast.apply(&theta),
        contrast: contrast.clone(),
    })
}

/// Two-stage GLS estimator `C (X'X)^{-1} X' Y Σ̂^{-1} Z (Z'Σ̂^{-1}Z)^{-1} D'`.
pub fn two_stage_gamma(data: &Dataset, contrast: &Contrast) -> Result<GammaHat> {
    contrast.check_conforms(&data.design)?;
    let sh = sigma_hat(data)?;
    two_stage_gamma_with(data, &sh, contrast)
}

/// Same estimator evaluated as `C Θ̂(Y) D'` with [`two_stage_theta`].
pub fn two_stage_gamma_via_h(data: &Dataset, contrast: &Contrast) -> Result<GammaHat> {
    contrast.check_conforms(&data.design)?;
    let theta = two_stage_theta(data)?;
    Ok(GammaHat {
        value: contrast.apply(&theta),
        contrast: contrast.clone(),
    })
}
