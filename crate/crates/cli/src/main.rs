use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foldfit::{AugLagOptions, CountDistribution, FitOptions, Hypothesis, ReplicationSettings, SimDesign, TestSet, ZPolicy};
use foldfit_cli::{
    run_analysis, run_simulation, AnalysisSettings, CliError, ConstraintArg, DesignSource, RunConfig, SimulationConfig,
    TestChoice,
};

#[derive(Parser)]
#[command(name = "foldfit", version, about = "Fold-change estimation and robust tests for multivariate counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and test every category for one covariate.
    Fit(FitArgs),
    /// Run a simulation study and report rejection rates.
    Simulate(SimArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Samples x categories count table (TSV or CSV, sample ids in the first column).
    #[arg(long)]
    counts: PathBuf,
    /// Covariate table; text columns are one-hot encoded and an intercept is added.
    #[arg(long, conflicts_with = "design", required_unless_present = "design")]
    covariates: Option<PathBuf>,
    /// Prebuilt design matrix whose first column is the intercept.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Design column to test.
    #[arg(long)]
    target: String,
    /// `pseudo-huber:<delta>` or `reference:<category_id>`.
    #[arg(long, default_value = "pseudo-huber:0.1")]
    constraint: String,
    #[arg(long, default_value = "score")]
    test: String,
    /// FDR level used for the significance count.
    #[arg(long, default_value_t = 0.05)]
    fdr: f64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Output prefix for `.results.csv`, `.results.json` and `.diagnostics.json`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Recorded in the outputs.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct Tuning {
    /// Convergence tolerance of the penalized fit.
    #[arg(long)]
    fit_tol: Option<f64>,
    #[arg(long)]
    fit_max_iter: Option<usize>,
    /// Skip the bias-reducing penalty (plain maximum likelihood).
    #[arg(long)]
    no_penalty: bool,
    #[arg(long)]
    auglag_max_outer: Option<usize>,
    #[arg(long)]
    auglag_max_inner: Option<usize>,
    #[arg(long)]
    auglag_feasibility_tol: Option<f64>,
    #[arg(long)]
    auglag_rho0: Option<f64>,
}

impl Tuning {
    fn apply(&self, fit: &mut FitOptions<f64>, auglag: &mut AugLagOptions<f64>) {
        if let Some(v) = self.fit_tol {
            fit.tol = v;
        }
        if let Some(v) = self.fit_max_iter {
            fit.max_iter = v;
        }
        fit.penalize = !self.no_penalty;
        if let Some(v) = self.auglag_max_outer {
            auglag.max_outer = v;
        }
        if let Some(v) = self.auglag_max_inner {
            auglag.max_inner = v;
        }
        if let Some(v) = self.auglag_feasibility_tol {
            auglag.feasibility_tol = v;
        }
        if let Some(v) = self.auglag_rho0 {
            auglag.rho0 = v;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Poisson,
    Zinb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Hyp {
    Null,
    WeakAlt,
    StrongAlt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Offsets {
    Zero,
    Normal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimTests {
    Score,
    Wald,
    Both,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum)]
    dist: Dist,
    #[arg(long)]
    n: usize,
    /// Number of categories.
    #[arg(long = "J")]
    j: usize,
    #[arg(long, value_enum, default_value = "null")]
    hypothesis: Hyp,
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output prefix for `.report.csv`, `.report.json` and `.pvalues.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    tests: SimTests,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Sample offsets used by the generator.
    #[arg(long, value_enum, default_value = "zero")]
    offsets: Offsets,
    #[arg(long, default_value = "pseudo-huber:0.1")]
    constraint: String,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    tuning: Tuning,
}

fn fit_config(args: FitArgs) -> Result<RunConfig, CliError> {
    let design = match (args.covariates, args.design) {
        (Some(p), None) => DesignSource::Covariates(p),
        (None, Some(p)) => DesignSource::Design(p),
        _ => return Err(CliError::Config("exactly one of --covariates and --design is required".into())),
    };
    let mut settings = AnalysisSettings::new(args.target);
    settings.constraint = args.constraint.parse()?;
    settings.test = args.test.parse::<TestChoice>()?;
    settings.fdr = args.fdr;
    settings.ci_level = args.ci_level;
    settings.threads = args.threads;
    settings.seed = args.seed;
    args.tuning.apply(&mut settings.fit, &mut settings.auglag);
    Ok(RunConfig { counts: args.counts, design, out_prefix: args.out_prefix, settings })
}

fn sim_config(args: SimArgs) -> Result<SimulationConfig, CliError> {
    let distribution = match args.dist {
        Dist::Poisson => CountDistribution::Poisson,
        Dist::Zinb => CountDistribution::zinb(),
    };
    let hypothesis = match args.hypothesis {
        Hyp::Null => Hypothesis::Null,
        Hyp::WeakAlt => Hypothesis::WeakAlt,
        Hyp::StrongAlt => Hypothesis::StrongAlt,
    };
    let mut design = SimDesign::new(args.n, args.j, distribution, hypothesis, args.seed);
    design.z_policy = match args.offsets {
        Offsets::Zero => ZPolicy::Zero,
        Offsets::Normal => ZPolicy::Normal,
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Config(format!("alpha must be in (0, 1), got {}", args.alpha)));
    }
    if args.threads == Some(0) {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    let constraint = match args.constraint.parse::<ConstraintArg>()? {
        ConstraintArg::PseudoHuber(delta) => foldfit::ConstraintSpec::PseudoHuber { delta },
        // simulated categories are unnamed; ids are their 1-based positions
        ConstraintArg::Reference(id) => match id.parse::<usize>() {
            Ok(c) if (1..=args.j).contains(&c) => foldfit::ConstraintSpec::Reference { category: c - 1 },
            _ => return Err(CliError::Config(format!("simulated reference category must be 1..={}, got '{id}'", args.j))),
        },
    };
    let mut settings = ReplicationSettings {
        tests: match args.tests {
            SimTests::Score => TestSet { score: true, wald: false },
            SimTests::Wald => TestSet { score: false, wald: true },
            SimTests::Both => TestSet::default(),
        },
        alpha: args.alpha,
        constraint,
        threads: args.threads,
        ..Default::default()
    };
    args.tuning.apply(&mut settings.fit, &mut settings.auglag);
    Ok(SimulationConfig { design, replicates: args.reps, settings, out: args.out })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => {
            let analysis = run_analysis(&fit_config(args)?)?;
            let s = &analysis.summary;
            log::info!("{} of {} categories tested, {} significant", s.n_tested, s.n_categories, s.n_significant);
        }
        Command::Simulate(args) => {
            let report = run_simulation(&sim_config(args)?)?;
            log::info!(
                "score rate {:?}, wald rate {:?}",
                report.rejection_rate_score(),
                report.rejection_rate_wald()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::FAILURE
        }
    }
}
