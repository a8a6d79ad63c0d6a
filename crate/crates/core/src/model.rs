//! Model specification, design builders, error families and simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::matlib::{self, Matrix, SpdMatrix};

/// Condition number of `Z` above which a warning is logged.
pub const Z_CONDITION_WARN: f64 = 1e8;

/// Between-individual design `X` (n×m) and within-individual design `Z` (p×q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    #[serde(with = "matlib::serde_rows")]
    pub x: Matrix,
    #[serde(with = "matlib::serde_rows")]
    pub z: Matrix,
}

impl Design {
    /// Builds and validates a design.
    pub fn new(x: Matrix, z: Matrix) -> Result<Self> {
        let design = Design { x, z };
        validate(&design)?;
        Ok(design)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.z.nrows()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }
}

/// Checks the shape constraints `n > m`, `p > q` and full column rank of `X` and `Z`.
pub fn validate(design: &Design) -> Result<()> {
    let (n, m) = design.x.shape();
    let (p, q) = design.z.shape();
    if m == 0 || q == 0 {
        return Err(GcmError::ShapeViolation(format!(
            "design matrices need at least one column (X is {n}x{m}, Z is {p}x{q})"
        )));
    }
    if n <= m {
        return Err(GcmError::ShapeViolation(format!("X is {n}x{m}, need n > m")));
    }
    if p <= q {
        return Err(GcmError::ShapeViolation(format!("Z is {p}x{q}, need p > q")));
    }
    matlib::check_full_column_rank(&design.x, "X")?;
    matlib::check_full_column_rank(&design.z, "Z")?;
    let cond = matlib::condition_number(&design.z);
    if cond > Z_CONDITION_WARN {
        log::warn!("Z is ill-conditioned (condition number {cond:.3e})");
    }
    Ok(())
}

/// First-order parameter `Θ` (m×q) and row covariance `Σ` (p×p).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Matrix,
    pub sigma: SpdMatrix,
}

impl ModelParams {
    pub fn new(theta: Matrix, sigma: SpdMatrix) -> Self {
        Self { theta, sigma }
    }

    pub fn check_conforms(&self, design: &Design) -> Result<()> {
        if self.theta.shape() != (design.m(), design.q()) {
            return Err(GcmError::DimensionMismatch(format!(
                "Theta is {}x{}, design needs {}x{}",
                self.theta.nrows(),
                self.theta.ncols(),
                design.m(),
                design.q()
            )));
        }
        if self.sigma.dim() != design.p() {
            return Err(GcmError::DimensionMismatch(format!(
                "Sigma is {0}x{0}, design needs {1}x{1}",
                self.sigma.dim(),
                design.p()
            )));
        }
        matlib::ensure_finite(&self.theta, "Theta")
    }
}

/// Contrast pair defining `γ = C Θ D'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contrast {
    /// s×m
    #[serde(with = "matlib::serde_rows")]
    pub c: Matrix,
    /// t×q
    #[serde(with = "matlib::serde_rows")]
    pub d: Matrix,
}

impl Contrast {
    pub fn new(c: Matrix, d: Matrix) -> Result<Self> {
        if c.nrows() == 0 || d.nrows() == 0 || c.ncols() == 0 || d.ncols() == 0 {
            return Err(GcmError::DimensionMismatch("contrast matrices must be non-empty".into()));
        }
        matlib::ensure_finite(&c, "C")?;
        matlib::ensure_finite(&d, "D")?;
        Ok(Self { c, d })
    }

    /// `C = I_m`, `D = I_q`, so that `γ = Θ`.
    pub fn identity(m: usize, q: usize) -> Self {
        Self {
            c: Matrix::identity(m, m),
            d: Matrix::identity(q, q),
        }
    }

    pub fn s(&self) -> usize {
        self.c.nrows()
    }

    pub fn t(&self) -> usize {
        self.d.nrows()
    }

    pub fn check_conforms(&self, design: &Design) -> Result<()> {
        if self.c.ncols() != design.m() || self.d.ncols() != design.q() {
            return Err(GcmError::DimensionMismatch(format!(
                "contrast C is {}x{} and D is {}x{}, design has m = {}, q = {}",
                self.c.nrows(),
                self.c.ncols(),
                self.d.nrows(),
                self.d.ncols(),
                design.m(),
                design.q()
            )));
        }
        Ok(())
    }

    /// `C Θ D'`.
    pub fn apply(&self, theta: &Matrix) -> Matrix {
        &self.c * theta * self.d.transpose()
    }
}

/// Symmetric error families. Base draws are standardized to unit variance
/// before the covariance transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian,
    /// Uniform on `[-√3, √3]`.
    Uniform,
    /// Student t with `df > 4`, scaled by `√((df-2)/df)`.
    StudentT { df: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::StudentT { df } if !(df.is_finite() && df > 4.0) => Err(
                GcmError::InvalidNoise(format!("student_t needs df > 4, got {df}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian => "gaussian",
            NoiseSpec::Uniform => "uniform",
            NoiseSpec::StudentT { .. } => "student_t",
        }
    }
}

enum Sampler {
    Gaussian,
    Uniform(f64),
    StudentT(StudentT<f64>, f64),
}

impl Sampler {
    fn new(noise: &NoiseSpec) -> Result<Self> {
        noise.validate()?;
        Ok(match *noise {
            NoiseSpec::Gaussian => Sampler::Gaussian,
            NoiseSpec::Uniform => Sampler::Uniform(3f64.sqrt()),
            NoiseSpec::StudentT { df } => {
                let dist = StudentT::new(df).map_err(|e| GcmError::InvalidNoise(e.to_string()))?;
                Sampler::StudentT(dist, ((df - 2.0) / df).sqrt())
            }
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Gaussian => StandardNormal.sample(rng),
            Sampler::Uniform(half_width) => rng.random_range(-*half_width..*half_width),
            Sampler::StudentT(dist, scale) => dist.sample(rng) * scale,
        }
    }
}

/// Observations together with their design.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n×p
    pub y: Matrix,
    pub design: Design,
}

impl Dataset {
    pub fn new(y: Matrix, design: Design) -> Result<Self> {
        if y.shape() != (design.n(), design.p()) {
            return Err(GcmError::DimensionMismatch(format!(
                "Y is {}x{}, design needs {}x{}",
                y.nrows(),
                y.ncols(),
                design.n(),
                design.p()
            )));
        }
        matlib::ensure_finite(&y, "Y")?;
        Ok(Self { y, design })
    }
}

/// Error matrix with iid rows of covariance `Σ`. Row `l` is drawn from
/// stream `l` of the generator seeded by `seed`.
pub fn simulate_errors(n: usize, sigma: &SpdMatrix, noise: &NoiseSpec, seed: u64) -> Result<Matrix> {
    let sampler = Sampler::new(noise)?;
    let p = sigma.dim();
    let lower = sigma.cholesky_lower();
    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Matrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for l in 0..n {
        let mut rng = base.clone();
        rng.set_stream(l as u64);
        for v in z.iter_mut() {
            *v = sampler.draw(&mut rng);
        }
        // row = z L'
        for j in 0..p {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += lower[(j, k)] * z[k];
            }
            e[(l, j)] = acc;
        }
    }
    Ok(e)
}

/// Draws `Y = X Θ Z' + E`.
pub fn simulate(design: &Design, params: &ModelParams, noise: &NoiseSpec, seed: u64) -> Result<Dataset> {
    validate(design)?;
    params.check_conforms(design)?;
    let e = simulate_errors(design.n(), &params.sigma, noise, seed)?;
    let mean = &design.x * &params.theta * design.z.transpose();
    Dataset::new(mean + e, design.clone())
}

/// `m` groups of `r` individuals measured at `times`, with a polynomial
/// profile of `q` coefficients per group. Shape and rank constraints are
/// left to [`validate`], so `r = 1` still builds.
pub fn potthoff_roy_design(m: usize, r: usize, times: &[f64], q: usize) -> Result<Design> {
    if m == 0 || r == 0 || q == 0 {
        return Err(GcmError::InvalidConfig(format!(
            "potthoff-roy design needs m, r, q >= 1 (got m={m}, r={r}, q={q})"
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(GcmError::NonFinite("time points".into()));
    }
    for (i, a) in times.iter().enumerate() {
        if times[i + 1..].contains(a) {
            return Err(GcmError::DegenerateTimes);
        }
    }
    let p = times.len();
    if q > p {
        return Err(GcmError::ShapeViolation(format!("q = {q} exceeds the {p} time points")));
    }
    let n = m * r;
    let x = Matrix::from_fn(n, m, |row, col| if row / r == col { 1.0 } else { 0.0 });
    let z = Matrix::from_fn(p, q, |row, col| times[row].powi(col as i32));
    Ok(Design { x, z })
}

/// Contrast testing that all group curves coincide up to their intercepts:
/// `C = [I_{m-1} | -1]`, `D = [0 | I_{q-1}]`.
pub fn equality_contrast(m: usize, q: usize) -> Result<Contrast> {
    if m < 2 || q < 2 {
        return Err(GcmError::InvalidConfig(format!(
            "equality contrast needs m >= 2 and q >= 2 (got m={m}, q={q})"
        )));
    }
    let c = Matrix::from_fn(m - 1, m, |i, j| {
        if j == m - 1 {
            -1.0
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    let d = Matrix::from_fn(q - 1, q, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    Contrast::new(c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{max_abs, Vector};

    fn ar1(p: usize, rho: f64) -> SpdMatrix {
        SpdMatrix::new(Matrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))).unwrap()
    }

    #[test]
    fn potthoff_roy_small_case() {
        let d = potthoff_roy_design(2, 1, &[0.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(d.x, Matrix::identity(2, 2));
        assert_eq!(d.z, Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn potthoff_roy_gram_is_r_identity() {
        for (m, r) in [(2, 3), (3, 4), (4, 10)] {
            let d = potthoff_roy_design(m, r, &[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
            assert_eq!(d.x.tr_mul(&d.x), Matrix::identity(m, m) * r as f64);
            let n = (m * r) as f64;
            let scaled_inv = d.x.tr_mul(&d.x).try_inverse().unwrap() * n;
            assert_eq!(scaled_inv, Matrix::identity(m, m) * m as f64);
        }
    }

    #[test]
    fn potthoff_roy_full_rank_case() {
        let d = potthoff_roy_design(3, 4, &[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        assert_eq!((d.n(), d.m(), d.p(), d.q()), (12, 3, 5, 3));
        validate(&d).unwrap();
        let sv = d.z.singular_values();
        assert!(sv.min() > 1e-10 * sv.max());
    }

    #[test]
    fn potthoff_roy_repeated_times() {
        assert_eq!(
            potthoff_roy_design(2, 3, &[1.0, 2.0, 2.0, 4.0], 2),
            Err(GcmError::DegenerateTimes)
        );
    }

    #[test]
    fn equality_contrast_two_by_two() {
        let k = equality_contrast(2, 2).unwrap();
        assert_eq!(k.c, Matrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert_eq!(k.d, Matrix::from_row_slice(1, 2, &[0.0, 1.0]));
    }

    #[test]
    fn equality_contrast_annihilates_constants() {
        for m in 2..6 {
            for q in 2..5 {
                let k = equality_contrast(m, q).unwrap();
                assert_eq!((k.s(), k.t()), (m - 1, q - 1));
                assert_eq!(max_abs(&(&k.c * Matrix::from_element(m, 1, 1.0))), 0.0);
                let mut e1 = Matrix::zeros(q, 1);
                e1[0] = 1.0;
                assert_eq!(max_abs(&(&k.d * e1)), 0.0);
            }
        }
        assert!(equality_contrast(1, 2).is_err());
    }

    #[test]
    fn validate_cases() {
        let i3 = Matrix::identity(3, 3);
        let mut x = Matrix::zeros(6, 3);
        x.view_mut((0, 0), (3, 3)).copy_from(&i3);
        x.view_mut((3, 0), (3, 3)).copy_from(&i3);
        let z = Matrix::from_fn(4, 2, |i, j| (i as f64 + 1.0).powi(j as i32));
        assert!(Design::new(x.clone(), z.clone()).is_ok());

        let mut dup = x.clone();
        let c0 = dup.column(0).clone_owned();
        dup.set_column(2, &c0);
        assert!(matches!(
            validate(&Design { x: dup, z: z.clone() }),
            Err(GcmError::RankDeficient { .. })
        ));

        let square_z = Matrix::from_fn(2, 2, |i, j| (i as f64 + 1.0).powi(j as i32));
        assert!(matches!(
            validate(&Design { x: x.clone(), z: square_z }),
            Err(GcmError::ShapeViolation(_))
        ));
        assert!(matches!(
            validate(&Design { x: Matrix::identity(3, 3), z }),
            Err(GcmError::ShapeViolation(_))
        ));
    }

    #[test]
    fn student_t_needs_df_above_four() {
        let design = potthoff_roy_design(2, 5, &[1.0, 2.0, 3.0], 2).unwrap();
        let params = ModelParams::new(Matrix::zeros(2, 2), ar1(3, 0.3));
        for df in [4.0, 2.5, f64::NAN] {
            assert!(matches!(
                simulate(&design, &params, &NoiseSpec::StudentT { df }, 1),
                Err(GcmError::InvalidNoise(_))
            ));
        }
        assert!(simulate(&design, &params, &NoiseSpec::StudentT { df: 4.5 }, 1).is_ok());
    }

    #[test]
    fn simulate_rejects_mismatched_params() {
        let design = potthoff_roy_design(2, 5, &[1.0, 2.0, 3.0], 2).unwrap();
        let params = ModelParams::new(Matrix::zeros(3, 2), ar1(3, 0.3));
        assert!(matches!(
            simulate(&design, &params, &NoiseSpec::Gaussian, 1),
            Err(GcmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn simulate_is_deterministic() {
        let design = potthoff_roy_design(2, 5, &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let params = ModelParams::new(Matrix::from_row_slice(2, 2, &[1.0, 0.5, 2.0, 0.5]), ar1(4, 0.5));
        for noise in [NoiseSpec::Gaussian, NoiseSpec::Uniform, NoiseSpec::StudentT { df: 6.0 }] {
            let a = simulate(&design, &params, &noise, 77).unwrap();
            let b = simulate(&design, &params, &noise, 77).unwrap();
            assert_eq!(a.y.shape(), (10, 4));
            let bits = |m: &Matrix| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.y), bits(&b.y));
            let c = simulate(&design, &params, &noise, 78).unwrap();
            assert_ne!(bits(&a.y), bits(&c.y));
        }
    }

    // Rows come from independent substreams, so a prefix of a longer draw equals a shorter draw.
    #[test]
    fn rows_use_fixed_substreams() {
        let sigma = ar1(3, 0.2);
        let long = simulate_errors(20, &sigma, &NoiseSpec::Gaussian, 5).unwrap();
        let short = simulate_errors(7, &sigma, &NoiseSpec::Gaussian, 5).unwrap();
        assert_eq!(long.rows(0, 7).clone_owned(), short);
    }

    // Mean within 4 standard errors and covariance within 5% relative Frobenius error.
    #[test]
    fn error_moments_match_sigma() {
        let n = 100_000;
        let sigma = SpdMatrix::new(Matrix::from_row_slice(
            3,
            3,
            &[2.0, 0.6, 0.2, 0.6, 1.0, 0.3, 0.2, 0.3, 0.5],
        ))
        .unwrap();
        for noise in [NoiseSpec::Gaussian, NoiseSpec::Uniform, NoiseSpec::StudentT { df: 6.0 }] {
            let e = simulate_errors(n, &sigma, &noise, 2024).unwrap();
            let mean: Vector = e.row_mean().transpose();
            for j in 0..3 {
                let se = (sigma.matrix()[(j, j)] / n as f64).sqrt();
                assert!(mean[j].abs() < 4.0 * se, "{noise:?} coord {j}: mean {}", mean[j]);
            }
            let centered = Matrix::from_fn(n, 3, |i, j| e[(i, j)] - mean[j]);
            let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
            let rel = (&cov - sigma.matrix()).norm() / sigma.matrix().norm();
            assert!(rel < 0.05, "{noise:?}: relative covariance error {rel}");
        }
    }

    #[test]
    fn noise_spec_json_shape() {
        let t: NoiseSpec = serde_json_like("{\"family\":\"student_t\",\"df\":6.0}");
        assert_eq!(t, NoiseSpec::StudentT { df: 6.0 });
        let g: NoiseSpec = serde_json_like("{\"family\":\"gaussian\"}");
        assert_eq!(g, NoiseSpec::Gaussian);
    }

    fn serde_json_like<T: serde::de::DeserializeOwned>(s: &str) -> T {
        serde_json::from_str(s).unwrap()
    }
}
