use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::estimators::{self, HMatrix};
use crate::inference::{self, AsymptoticLaw, AsymptoticSpec};
use crate::matlib::{self, serde_rows, Matrix, SpdMatrix};
use crate::model::{self, Contrast, Design, ModelParams, NoiseSpec};

/// Design family; the per-cell sample size parameter is the group size `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    PotthoffRoy { m: usize, times: Vec<f64>, q: usize },
}

impl DesignSpec {
    pub fn m(&self) -> usize {
        match self {
            DesignSpec::PotthoffRoy { m, .. } => *m,
        }
    }

    pub fn q(&self) -> usize {
        match self {
            DesignSpec::PotthoffRoy { q, .. } => *q,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            DesignSpec::PotthoffRoy { times, .. } => times.len(),
        }
    }

    pub fn build(&self, r: usize) -> Result<Design> {
        match self {
            DesignSpec::PotthoffRoy { m, times, q } => model::potthoff_roy_design(*m, r, times, *q),
        }
    }

    /// `R = lim X'X / n`, known analytically for each family.
    pub fn limit_gram(&self) -> Result<SpdMatrix> {
        match self {
            DesignSpec::PotthoffRoy { m, .. } => {
                SpdMatrix::named(Matrix::identity(*m, *m) / *m as f64, "R")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ContrastSpec {
    /// `C = [I | -1]`, `D = [0 | I]`.
    Equality,
    Identity,
    Explicit {
        #[serde(with = "serde_rows")]
        c: Matrix,
        #[serde(with = "serde_rows")]
        d: Matrix,
    },
}

impl ContrastSpec {
    pub fn build(&self, m: usize, q: usize) -> Result<Contrast> {
        match self {
            ContrastSpec::Equality => model::equality_contrast(m, q),
            ContrastSpec::Identity => Ok(Contrast::identity(m, q)),
            ContrastSpec::Explicit { c, d } => Contrast::new(c.clone(), d.clone()),
        }
    }
}

/// Data-generating scenario shared by every cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub design: DesignSpec,
    #[serde(with = "serde_rows")]
    pub theta: Matrix,
    #[serde(with = "serde_rows")]
    pub sigma: Matrix,
    pub contrast: ContrastSpec,
    pub noise: NoiseSpec,
    /// Parameter used for the power figure of level runs.
    #[serde(default, with = "serde_rows::option", skip_serializing_if = "Option::is_none")]
    pub alternative_theta: Option<Matrix>,
}

/// Monte Carlo configuration. `sample_sizes` lists group sizes `r`, so
/// each cell has `n = m r` individuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub scenario: Scenario,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(GcmError::InvalidConfig("sample_sizes is empty".into()));
        }
        if self.replications < 2 {
            return Err(GcmError::InvalidConfig("replications must be at least 2".into()));
        }
        inference::check_alpha(self.alpha)?;
        self.scenario.noise.validate()?;
        for &r in &self.sample_sizes {
            Prepared::new(&self.scenario, r)?;
        }
        Ok(())
    }
}

/// Everything a cell needs that does not depend on the replicate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub r: usize,
    pub design: Design,
    pub params: ModelParams,
    pub contrast: Contrast,
    pub gamma_true: Matrix,
    pub h_true: HMatrix,
    /// `(C R^{-1} C') ⊗ (D (Z'Σ^{-1}Z)^{-1} D')`
    pub limit_law: AsymptoticLaw,
    /// symmetric inverse square roots of the two limit factors
    pub limit_left_isqrt: Matrix,
    pub limit_right_isqrt: Matrix,
    /// `n C (X'X)^{-1} C'`
    pub scaled_plugin_left: Matrix,
    pub alternative_theta: Option<Matrix>,
}

impl Prepared {
    pub fn new(scenario: &Scenario, r: usize) -> Result<Self> {
        let design = scenario.design.build(r)?;
        model::validate(&design)?;
        let sigma = SpdMatrix::named(scenario.sigma.clone(), "Sigma")?;
        let params = ModelParams::new(scenario.theta.clone(), sigma);
        params.check_conforms(&design)?;
        let (n, m, p) = (design.n(), design.m(), design.p());
        if n - m < p {
            return Err(GcmError::TooFewSamples { residual_dof: n - m, p });
        }
        let contrast = scenario.contrast.build(design.m(), design.q())?;
        contrast.check_conforms(&design)?;
        if let Some(alt) = &scenario.alternative_theta {
            ModelParams::new(alt.clone(), params.sigma.clone()).check_conforms(&design)?;
        }
        let gamma_true = contrast.apply(&params.theta);
        let h_true = estimators::h_matrix(&params.sigma, &design.z)?;
        let limit_law = inference::asym_cov(&AsymptoticSpec {
            r: scenario.design.limit_gram()?,
            sigma: params.sigma.clone(),
            z: design.z.clone(),
            contrast: contrast.clone(),
        })?;
        let left = SpdMatrix::named(limit_law.left.clone(), "limit left factor")?;
        let right = SpdMatrix::named(limit_law.right.clone(), "limit right factor")?;
        let xtx = SpdMatrix::named(design.x.tr_mul(&design.x), "X'X")?;
        let scaled_plugin_left =
            matlib::symmetrize(&(&contrast.c * xtx.solve(&contrast.c.transpose()))) * n as f64;
        Ok(Self {
            r,
            limit_left_isqrt: matlib::inv_sqrt_spd(&left),
            limit_right_isqrt: matlib::inv_sqrt_spd(&right),
            design,
            params,
            contrast,
            gamma_true,
            h_true,
            limit_law,
            scaled_plugin_left,
            alternative_theta: scenario.alternative_theta.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }
}
