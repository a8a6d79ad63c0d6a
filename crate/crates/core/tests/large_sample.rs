use gcm_core::estimators;
use gcm_core::inference;
use gcm_core::matlib::{max_abs, SpdMatrix};
use gcm_core::model::{self, Contrast, Dataset, Design, ModelParams, NoiseSpec};
use gcm_core::Matrix;
use rayon::prelude::*;

fn ar_sigma(p: usize, rho: f64) -> SpdMatrix {
    SpdMatrix::new(Matrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))).unwrap()
}

#[test]
fn standardized_entries_are_standard_normal_under_the_null() {
    let design = model::potthoff_roy_design(2, 250, &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
    let theta = Matrix::from_row_slice(2, 2, &[0.7, -0.2, 0.7, -0.2]);
    let params = ModelParams::new(theta, ar_sigma(4, 0.4));
    // identity D keeps two entries in T
    let contrast = Contrast::new(Matrix::from_row_slice(1, 2, &[1.0, -1.0]), Matrix::identity(2, 2)).unwrap();
    assert_eq!(max_abs(&contrast.apply(&params.theta)), 0.0);

    let draws: Vec<Matrix> = (0..5000u64)
        .into_par_iter()
        .map(|i| {
            let data = model::simulate(&design, &params, &NoiseSpec::Gaussian, 0xfeed_0000 + i).unwrap();
            inference::standardized_stat(&data, &contrast).unwrap()
        })
        .collect();
    for j in 0..2 {
        let xs: Vec<f64> = draws.iter().map(|t| t[(0, j)]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        assert!(mean.abs() < 0.05, "entry {j}: mean {mean}");
        assert!((0.9..=1.1).contains(&var), "entry {j}: variance {var}");
    }
}

#[test]
fn scaled_plugin_left_factor_approaches_its_limit() {
    // X = [1, t] with t uniform on (0, 1]: X'X / n -> R = [[1, 1/2], [1/2, 1/3]]
    let r_limit = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0 / 3.0]);
    let c = Matrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let limit = &c * r_limit.try_inverse().unwrap() * c.transpose();
    let z = Matrix::from_fn(4, 2, |i, j| ((i + 1) as f64).powi(j as i32));
    let contrast = Contrast::new(c, Matrix::identity(2, 2)).unwrap();

    let gaps: Vec<f64> = [50usize, 200, 800]
        .iter()
        .map(|&n| {
            let x = Matrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i + 1) as f64 / n as f64 });
            let design = Design::new(x, z.clone()).unwrap();
            let params = ModelParams::new(Matrix::zeros(2, 2), ar_sigma(4, 0.3));
            let data = model::simulate(&design, &params, &NoiseSpec::Gaussian, n as u64).unwrap();
            let law = inference::plugin_cov(&data, &contrast).unwrap();
            max_abs(&(law.left * n as f64 - &limit))
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[2] < 0.1, "{gaps:?}");
}

#[test]
fn plugin_right_factor_is_spd_and_symmetric() {
    let design = model::potthoff_roy_design(3, 10, &[0.0, 1.0, 2.0, 3.0, 4.0], 3).unwrap();
    let theta = Matrix::from_row_slice(3, 3, &[1.0, 0.2, -0.1, 0.5, 0.1, 0.0, 2.0, -0.3, 0.05]);
    let params = ModelParams::new(theta, ar_sigma(5, 0.6));
    let data = model::simulate(&design, &params, &NoiseSpec::Uniform, 17).unwrap();
    let law = inference::plugin_cov(&data, &Contrast::identity(3, 3)).unwrap();
    assert!(max_abs(&(&law.right - law.right.transpose())) <= 1e-10 * max_abs(&law.right));
    SpdMatrix::new(law.right.clone()).unwrap();
    // Potthoff–Roy: C (X'X)^{-1} C' = I / r
    assert!(max_abs(&(law.left - Matrix::identity(3, 3) / 10.0)) < 1e-15);
}

#[test]
fn simulate_estimate_test_pipeline() {
    let design = model::potthoff_roy_design(3, 40, &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
    let theta = Matrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, 0.5, 1.0, 1.5]);
    let params = ModelParams::new(theta.clone(), ar_sigma(4, 0.5));
    let contrast = model::equality_contrast(3, 2).unwrap();
    let data = model::simulate(&design, &params, &NoiseSpec::StudentT { df: 8.0 }, 5).unwrap();

    let gamma = estimators::two_stage_gamma(&data, &contrast).unwrap();
    assert_eq!(gamma.value.shape(), (2, 1));
    let se = inference::plugin_cov(&data, &contrast).unwrap().standard_errors();
    let truth = contrast.apply(&theta);
    // true γ = [-1, -1]': within a generous 5 standard errors
    for i in 0..2 {
        assert!((gamma.value[(i, 0)] - truth[(i, 0)]).abs() < 5.0 * se[(i, 0)]);
    }
    let res = inference::test_gamma_zero(&data, &contrast, 0.05).unwrap();
    assert_eq!(res.dof, 2);
    assert!(res.reject, "slope difference of 1 should be detected, p = {}", res.p_value);

    // same data with the difference removed: a null dataset
    let d = &data.design;
    let shift = &d.x * (Matrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0])) * d.z.transpose();
    let null = Dataset::new(&data.y + shift, d.clone()).unwrap();
    let g0 = estimators::two_stage_gamma(&null, &contrast).unwrap();
    assert!(max_abs(&(&gamma.value - &g0.value - &truth)) < 1e-12);
}

#[test]
fn cholesky_factor_reproduces_the_draws() {
    // rows of the error are L z with the lower Cholesky factor of Σ
    let sigma = ar_sigma(3, 0.7);
    let id = SpdMatrix::new(Matrix::identity(3, 3)).unwrap();
    let z = model::simulate_errors(6, &id, &NoiseSpec::Gaussian, 21).unwrap();
    let e = model::simulate_errors(6, &sigma, &NoiseSpec::Gaussian, 21).unwrap();
    let l = sigma.cholesky_lower();
    assert!(max_abs(&(e - z * l.transpose())) < 1e-14);
    assert!(max_abs(&(&l * l.transpose() - sigma.matrix())) < 1e-15);
    assert!((0..3).all(|i| (i + 1..3).all(|j| l[(i, j)] == 0.0)));
}
