//! The subcommands. Each `run_*` writes a `report.json` in the output
//! directory whether it succeeds or fails (unless the failure is writing the
//! report itself), and returns the error so the caller can pick an exit code.

use std::path::{Path, PathBuf};

use gcm_core::estimators::{self, SigmaHat};
use gcm_core::inference;
use gcm_core::matlib::SpdMatrix;
use gcm_core::mc::{self, McConfig, McKind};
use gcm_core::model::{self, Contrast, Dataset, Design, ModelParams};
use gcm_core::{GcmError, Matrix};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io;
use crate::report::*;
use crate::tables;

pub const REPORT_FILE: &str = "report.json";
pub const REPLICATES_FILE: &str = "replicates.json";
pub const TABLES_DIR: &str = "tables";

/// Maps a failure of the `Σ̂` stage: a singular estimate gets its own code.
fn first_stage(e: GcmError) -> CliError {
    match e {
        GcmError::TooFewSamples { .. } | GcmError::NotSpd { .. } => CliError::SingularFirstStage(e),
        other => CliError::Model(other),
    }
}

fn standardizer(e: GcmError) -> CliError {
    match e {
        GcmError::NotSpd { .. } => CliError::SingularStandardizer(e),
        other => CliError::Model(other),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Writes the report for `outcome` and hands the outcome back.
fn finish<I: Serialize, R: Serialize>(
    out: &Path,
    meta: Meta,
    inputs: I,
    outcome: CliResult<R>,
) -> CliResult<R> {
    let (results, errors) = match &outcome {
        Ok(r) => (Some(r), Vec::new()),
        Err(e) => (None, vec![e.record()]),
    };
    let report = Report {
        meta,
        inputs,
        results,
        errors,
    };
    let written = io::write_json(&out.join(REPORT_FILE), &report);
    match (outcome, written) {
        (Err(e), _) => Err(e),
        (Ok(_), Err(e)) => Err(e),
        (Ok(r), Ok(())) => Ok(r),
    }
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub header: bool,
}

struct Simulated {
    files: Vec<(String, Vec<u8>)>,
    results: SimulateResults,
}

fn simulate_files(cfg: &SimulateConfig, seed: u64, header: bool) -> CliResult<Simulated> {
    let scenario = &cfg.scenario;
    scenario.noise.validate()?;
    let design = scenario.design.build(cfg.r)?;
    model::validate(&design)?;
    let sigma = SpdMatrix::named(scenario.sigma.clone(), "Sigma")?;
    let params = ModelParams::new(scenario.theta.clone(), sigma);
    params.check_conforms(&design)?;
    let contrast = scenario.contrast.build(design.m(), design.q())?;
    contrast.check_conforms(&design)?;
    let data = model::simulate(&design, &params, &scenario.noise, seed)?;

    let names = |prefix: &str, m: &Matrix| header.then(|| io::column_names(prefix, m.ncols()));
    let mut files = Vec::new();
    for (file, prefix, m) in [
        ("Y.csv", "y", &data.y),
        ("X.csv", "x", &design.x),
        ("Z.csv", "z", &design.z),
        ("C.csv", "c", &contrast.c),
        ("D.csv", "d", &contrast.d),
    ] {
        let text = io::matrix_to_csv(m, names(prefix, m).as_deref());
        files.push((file.to_string(), text.into_bytes()));
    }
    let truth = Truth {
        seed,
        noise: scenario.noise,
        theta: params.theta.clone(),
        sigma: params.sigma.matrix().clone(),
        sigma_chol_lower: params.sigma.cholesky_lower(),
    };
    files.push(("truth.json".to_string(), io::to_json(&truth)));
    let results = SimulateResults {
        n: design.n(),
        m: design.m(),
        p: design.p(),
        q: design.q(),
        files: files.iter().map(|(f, _)| f.clone()).collect(),
    };
    Ok(Simulated { files, results })
}

pub fn run_simulate(args: &SimulateArgs) -> CliResult<SimulateResults> {
    let cfg: SimulateConfig = io::read_json(&args.config)?;
    let seed = args.seed.or(cfg.seed);
    let inputs = SimulateInputs {
        config: SimulateConfig { seed, ..cfg.clone() },
        header: args.header,
    };
    let outcome = seed
        .ok_or_else(|| CliError::Validation("no seed: pass --seed or set \"seed\" in the config".into()))
        .and_then(|seed| simulate_files(&cfg, seed, args.header))
        .and_then(|sim| {
            for (file, bytes) in &sim.files {
                io::write_atomic(&args.out.join(file), bytes)?;
            }
            Ok(sim.results)
        });
    finish(&args.out, Meta::new(seed), inputs, outcome)
}

/// Input files of `estimate` and `test`.
#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub y: PathBuf,
    pub x: PathBuf,
    pub z: PathBuf,
    pub c: PathBuf,
    pub d: PathBuf,
    pub header: bool,
    pub sigma0: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
}

impl EstimateArgs {
    /// `Y.csv`, `X.csv`, ... inside `dir`.
    pub fn in_dir(dir: &Path, out: &Path) -> Self {
        EstimateArgs {
            y: dir.join("Y.csv"),
            x: dir.join("X.csv"),
            z: dir.join("Z.csv"),
            c: dir.join("C.csv"),
            d: dir.join("D.csv"),
            header: false,
            sigma0: None,
            truth: None,
            out: out.to_path_buf(),
        }
    }

    fn inputs(&self, alpha: Option<f64>) -> EstimateInputs {
        EstimateInputs {
            y: display(&self.y),
            x: display(&self.x),
            z: display(&self.z),
            c: display(&self.c),
            d: display(&self.d),
            header: self.header,
            sigma0: self.sigma0.as_deref().map(display),
            truth: self.truth.as_deref().map(display),
            alpha,
        }
    }
}

/// Parsed and validated estimation inputs.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub data: Dataset,
    pub contrast: Contrast,
    pub sigma0: Option<SpdMatrix>,
    pub truth: Option<Truth>,
}

pub fn load(args: &EstimateArgs) -> CliResult<Loaded> {
    let read = |p: &Path| io::read_matrix(p, args.header);
    let (y, x, z, c, d) = (read(&args.y)?, read(&args.x)?, read(&args.z)?, read(&args.c)?, read(&args.d)?);
    let design = Design::new(x, z)?;
    let data = Dataset::new(y, design)?;
    let contrast = Contrast::new(c, d)?;
    contrast.check_conforms(&data.design)?;
    let p = data.design.p();

    let sigma0 = match &args.sigma0 {
        Some(path) => {
            let s = SpdMatrix::named(read(path)?, "sigma0")?;
            if s.dim() != p {
                return Err(CliError::Validation(format!("sigma0 is {0}x{0}, data has p = {p}", s.dim())));
            }
            Some(s)
        }
        None => None,
    };

    let truth = match &args.truth {
        Some(path) => {
            let t: Truth = io::read_json(path)?;
            let sigma = SpdMatrix::named(t.sigma.clone(), "truth sigma")?;
            ModelParams::new(t.theta.clone(), sigma.clone()).check_conforms(&data.design)?;
            let l = &t.sigma_chol_lower;
            let scale = gcm_core::matlib::max_abs(&t.sigma);
            if l.shape() != t.sigma.shape() || gcm_core::matlib::max_abs(&(l * l.transpose() - &t.sigma)) > 1e-10 * scale {
                return Err(CliError::Validation(format!(
                    "{}: sigma_chol_lower does not factor sigma",
                    path.display()
                )));
            }
            Some(t)
        }
        None => None,
    };

    Ok(Loaded {
        data,
        contrast,
        sigma0,
        truth,
    })
}

fn estimate_loaded(l: &Loaded) -> CliResult<EstimateResults> {
    let data = &l.data;
    let design = &data.design;
    let (m, q) = (design.m(), design.q());
    let identity = Contrast::identity(m, q);

    let (method, theta_hat, gamma_hat, sigma_hat, plugin) = match &l.sigma0 {
        Some(s0) => {
            let theta = estimators::theta_hat_known(data, s0)?;
            let gamma = estimators::gamma_hat_known(data, s0, &l.contrast)?;
            let plugin = inference::plugin_cov_known(design, &l.contrast, s0)?;
            (Method::KnownSigma, theta, gamma.value, None, plugin)
        }
        None => {
            let sh = estimators::sigma_hat(data).map_err(first_stage)?;
            let theta = estimators::two_stage_gamma_with(data, &sh, &identity).map_err(first_stage)?;
            let gamma = estimators::two_stage_gamma_with(data, &sh, &l.contrast).map_err(first_stage)?;
            let plugin = inference::plugin_cov_with(design, &l.contrast, &sh).map_err(first_stage)?;
            (Method::TwoStage, theta.value, gamma.value, Some(sh.value.into_matrix()), plugin)
        }
    };

    let truth_errors = l.truth.as_ref().map(|t| TruthErrors {
        theta_fro: (&theta_hat - &t.theta).norm(),
        gamma_fro: (&gamma_hat - l.contrast.apply(&t.theta)).norm(),
        sigma_fro: sigma_hat.as_ref().map(|s| (s - &t.sigma).norm()),
    });

    Ok(EstimateResults {
        method,
        n: design.n(),
        m,
        p: design.p(),
        q,
        theta_hat,
        gamma_hat,
        sigma_hat,
        standard_errors: plugin.standard_errors(),
        plugin_cov: plugin,
        truth_errors,
    })
}

/// Estimation without writing anything.
pub fn estimate(args: &EstimateArgs) -> CliResult<EstimateResults> {
    estimate_loaded(&load(args)?)
}

pub fn run_estimate(args: &EstimateArgs) -> CliResult<EstimateResults> {
    let loaded = load(args);
    let seed = loaded.as_ref().ok().and_then(|l| l.truth.as_ref()).map(|t| t.seed);
    let outcome = loaded.and_then(|l| estimate_loaded(&l));
    finish(&args.out, Meta::new(seed), args.inputs(None), outcome)
}

fn test_loaded(l: &Loaded, alpha: f64) -> CliResult<TestResults> {
    inference::check_alpha(alpha)?;
    let data = &l.data;
    let (method, gamma, t_stat) = match &l.sigma0 {
        Some(s0) => {
            let gamma = estimators::gamma_hat_known(data, s0, &l.contrast)?;
            let t = inference::standardized_stat_known(&data.design, s0, &gamma).map_err(standardizer)?;
            (Method::KnownSigma, gamma, t)
        }
        None => {
            let sh: SigmaHat = estimators::sigma_hat(data).map_err(first_stage)?;
            let gamma = estimators::two_stage_gamma_with(data, &sh, &l.contrast).map_err(first_stage)?;
            let t = inference::standardized_stat_with(&data.design, &sh, &gamma).map_err(standardizer)?;
            (Method::TwoStage, gamma, t)
        }
    };
    let res = inference::chi_square_test(t_stat, alpha)?;
    Ok(TestResults {
        method,
        gamma_hat: gamma.value,
        t_stat: res.t_stat,
        chi_sq: res.chi_sq,
        dof: res.dof,
        p_value: res.p_value,
        alpha: res.alpha,
        reject: res.reject,
    })
}

pub fn test(args: &EstimateArgs, alpha: f64) -> CliResult<TestResults> {
    test_loaded(&load(args)?, alpha)
}

pub fn run_test(args: &EstimateArgs, alpha: f64) -> CliResult<TestResults> {
    let loaded = load(args);
    let seed = loaded.as_ref().ok().and_then(|l| l.truth.as_ref()).map(|t| t.seed);
    let outcome = loaded.and_then(|l| test_loaded(&l, alpha));
    finish(&args.out, Meta::new(seed), args.inputs(Some(alpha)), outcome)
}

#[derive(Debug, Clone)]
pub struct McArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub dump_replicates: bool,
}

pub fn run_mc(kind: McKind, args: &McArgs) -> CliResult<mc::McReport> {
    let mut cfg: McConfig = io::read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let inputs = McInputs {
        kind,
        config: cfg.clone(),
        dump_replicates: args.dump_replicates,
    };
    let outcome = mc::run_with_records(kind, &cfg).map_err(CliError::from).and_then(|(report, cells)| {
        // everything is rendered before the first write
        let mut files: Vec<(PathBuf, Vec<u8>)> = tables::for_report(&report)
            .iter()
            .map(|t| (args.out.join(TABLES_DIR).join(t.file_name()), t.to_csv().into_bytes()))
            .collect();
        if args.dump_replicates {
            let dump = ReplicateDump {
                kind,
                config: cfg.clone(),
                cells,
            };
            files.push((args.out.join(REPLICATES_FILE), io::to_json(&dump)));
        }
        for (path, bytes) in &files {
            io::write_atomic(path, bytes)?;
        }
        Ok(report)
    });
    finish(&args.out, Meta::new(Some(cfg.seed)), inputs, outcome)
}
