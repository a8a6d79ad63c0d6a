use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcm_cli::commands::{self, EstimateArgs, McArgs, SimulateArgs};
use gcm_cli::{CliError, CliResult};
use gcm_core::mc::McKind;

/// Growth curve model: simulate, estimate, test and Monte Carlo checks.
#[derive(Debug, Parser)]
#[command(name = "gcm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset: Y, X, Z, C, D as CSV plus truth.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Write a header row in every CSV.
        #[arg(long)]
        header: bool,
    },
    /// Two-stage (or known-covariance) estimate of C Θ D'.
    Estimate(EstimateOpts),
    /// Chi-square test of C Θ D' = 0.
    Test {
        #[command(flatten)]
        est: EstimateOpts,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Error trends of the estimators over increasing sample sizes.
    McConsistency(McOpts),
    /// Mean of the estimator against the truth.
    McUnbiasedness(McOpts),
    /// Covariance match and coordinate normality of the scaled estimator.
    McNormality(McOpts),
    /// Rejection rate of the test under the null.
    McLevel(McOpts),
}

#[derive(Debug, Args)]
struct EstimateOpts {
    /// Directory holding Y.csv, X.csv, Z.csv, C.csv and D.csv.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    z: Option<PathBuf>,
    #[arg(long)]
    c: Option<PathBuf>,
    #[arg(long)]
    d: Option<PathBuf>,
    /// Skip the first row of every CSV.
    #[arg(long)]
    header: bool,
    /// Known row covariance; switches to the known-covariance estimator.
    #[arg(long)]
    sigma0: Option<PathBuf>,
    /// truth.json from `simulate`, for error reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl EstimateOpts {
    fn resolve(self) -> EstimateArgs {
        let base = EstimateArgs::in_dir(&self.data, &self.out);
        EstimateArgs {
            y: self.y.unwrap_or(base.y),
            x: self.x.unwrap_or(base.x),
            z: self.z.unwrap_or(base.z),
            c: self.c.unwrap_or(base.c),
            d: self.d.unwrap_or(base.d),
            header: self.header,
            sigma0: self.sigma0,
            truth: self.truth,
            out: self.out,
        }
    }
}

#[derive(Debug, Args)]
struct McOpts {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write every replicate's values to replicates.json.
    #[arg(long)]
    dump_replicates: bool,
}

impl From<McOpts> for McArgs {
    fn from(o: McOpts) -> Self {
        McArgs {
            config: o.config,
            seed: o.seed,
            out: o.out,
            dump_replicates: o.dump_replicates,
        }
    }
}

/// Worker count from `GCM_THREADS`; unset or 0 leaves the choice to rayon.
fn configure_threads() -> CliResult<()> {
    let threads = match std::env::var("GCM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Validation(format!("GCM_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("cannot start worker pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            header,
        } => {
            let res = commands::run_simulate(&SimulateArgs {
                config,
                seed,
                out: out.clone(),
                header,
            })?;
            println!("wrote {} files to {} (n = {}, p = {})", res.files.len(), out.display(), res.n, res.p);
        }
        Command::Estimate(opts) => {
            let res = commands::run_estimate(&opts.resolve())?;
            println!("gamma_hat = {:?}", gcm_core::matlib::serde_rows::to_rows(&res.gamma_hat));
        }
        Command::Test { est, alpha } => {
            let res = commands::run_test(&est.resolve(), alpha)?;
            println!(
                "chi_sq = {:.6}, dof = {}, p_value = {:.6}, reject = {}",
                res.chi_sq, res.dof, res.p_value, res.reject
            );
        }
        Command::McConsistency(o) => mc(McKind::Consistency, o)?,
        Command::McUnbiasedness(o) => mc(McKind::Unbiasedness, o)?,
        Command::McNormality(o) => mc(McKind::Normality, o)?,
        Command::McLevel(o) => mc(McKind::Level, o)?,
    }
    Ok(())
}

fn mc(kind: McKind, opts: McOpts) -> CliResult<()> {
    let report = commands::run_mc(kind, &opts.into())?;
    for check in &report.checks {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.record() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
