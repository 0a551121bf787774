use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvsmooth::io::{self, OutputPolicy};
use mvsmooth::study::{self, RunContext, StudyConfig};
use mvsmooth::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mvsmooth",
    version,
    about = "Theoretical and empirical smoothing of multivariate CAR priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Full,
}

#[derive(Args, Clone)]
struct Common {
    /// Study configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out`; `pg` prints only unless given).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long, conflicts_with = "resume")]
    force: bool,
    /// Keep completed job files in an existing output directory.
    #[arg(long)]
    resume: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// MultiTCV table over the configured priors and grids.
    Tcv(Common),
    /// Scenario datasets.
    Simulate(Common),
    /// Posterior rates and hyperparameters for each configured prior.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
    },
    /// Smoothing metrics for a posterior rate file.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// CSV with `disease,area,post_mean_rate`.
        #[arg(long)]
        posterior: PathBuf,
    },
    /// Poisson-Gamma posterior table, printed as CSV.
    Pg(Common),
    /// Fixed-hyperparameter study over the covariance and λ grids.
    WithinStudy(Common),
    /// Full-Bayes study over scenarios and priors.
    AcrossStudy(Common),
    /// Fits observed counts.
    RealData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        /// Fit every pair of diseases instead of all jointly.
        #[arg(long)]
        pairwise: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Tcv(c)
            | Command::Simulate(c)
            | Command::Pg(c)
            | Command::WithinStudy(c)
            | Command::AcrossStudy(c) => c,
            Command::Fit { common, .. } | Command::Metrics { common, .. } | Command::RealData { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Tcv(_) => "tcv",
            Command::Simulate(_) => "simulate",
            Command::Fit { .. } => "fit",
            Command::Metrics { .. } => "metrics",
            Command::Pg(_) => "pg",
            Command::WithinStudy(_) => "within-study",
            Command::AcrossStudy(_) => "across-study",
            Command::RealData { .. } => "real-data",
        }
    }
}

fn load_config(common: &Common) -> Result<StudyConfig> {
    let mut cfg = match &common.config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common().clone();
    let cfg = load_config(&common)?;
    let policy = if common.force {
        OutputPolicy::Force
    } else if common.resume {
        OutputPolicy::Resume
    } else {
        OutputPolicy::Fresh
    };
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let ctx = RunContext::new(&cfg, cli.command.name(), &out, policy);
    if let Command::Pg(_) = cli.command {
        let table = study::run_pg(&cfg, &ctx.provenance)?;
        print!("{table}");
        if common.out.is_some() {
            io::prepare_output_dir(&out, policy)?;
            io::write_atomic(&out.join("pg.csv"), &table)?;
        }
        return Ok(());
    }
    io::prepare_output_dir(&out, policy)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Parameter(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Tcv(_) => study::run_tcv(&cfg, &ctx),
        Command::Simulate(_) => study::run_simulate(&cfg, &ctx),
        Command::Fit { mode, .. } => study::run_fit(&cfg, &ctx, matches!(mode, Mode::Full)),
        Command::Metrics { posterior, .. } => study::run_metrics(&cfg, &ctx, posterior),
        Command::Pg(_) => unreachable!("handled above"),
        Command::WithinStudy(_) => study::run_within_study(&cfg, &ctx).map(drop),
        Command::AcrossStudy(_) => study::run_across_study(&cfg, &ctx).map(drop),
        Command::RealData { mode, pairwise, .. } => {
            study::run_real_data(&cfg, &ctx, matches!(mode, Mode::Full), *pairwise).map(drop)
        }
    })?;
    eprintln!("{}: wrote {}", cli.command.name(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
