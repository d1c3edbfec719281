//! `pte`: surrogate marker evaluation on trial CSVs and the simulation bench.

mod report;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pte_core::bootstrap::{bootstrap_inference, DEFAULT_REPLICATES};
use pte_core::data::save_trial_csv;
use pte_core::sim::{
    generate_trial, run_study, weight_misspec_sweep, write_metrics_csv, write_sweep_csv, Method, MissingnessLaw,
    SettingSpec, StudyConfig, DEFAULT_N, DESK_REPS,
};
use pte_core::smle::{EmOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use pte_core::{load_trial_csv, Correction, ErrorClass, EstimatorKind, PipelineConfig, PteError, WeightSpec};

use report::{ConfigEcho, Report};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_UNRELIABLE: u8 = 4;

#[derive(Parser)]
#[command(name = "pte", version, about = "Proportion of treatment effect explained by a surrogate marker with missing surrogates")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "PTE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the PTE on a trial CSV with bootstrap inference.
    Evaluate(EvaluateArgs),
    /// Monte Carlo study for one simulation setting.
    Simulate(SimulateArgs),
    /// Write one simulated trial as CSV.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Parametric,
    Nonparametric,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cc,
    Ipw,
    Smle,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    Wald,
    Quantile,
    Both,
}

impl CiArg {
    fn name(self) -> &'static str {
        match self {
            CiArg::Wald => "wald",
            CiArg::Quantile => "quantile",
            CiArg::Both => "both",
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV with columns y, s, z (missing s as empty or NA).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "parametric")]
    estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "cc")]
    method: MethodArg,
    /// IPW weight model: `empirical` or logistic terms from {z, y, y:z}, e.g. `y,z,y:z`;
    /// include `y` when missingness may depend on the outcome.
    #[arg(long, default_value = "z")]
    weights: String,
    /// Upper bound applied to IPW weights.
    #[arg(long)]
    weight_cap: Option<f64>,
    /// Fixed Epanechnikov bandwidth for the nonparametric estimator.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    boot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    ci: CiArg,
    /// EM convergence tolerance (SMLE).
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// EM iteration limit (SMLE).
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional one-row-per-estimand CSV summary.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation setting, 1-5.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    setting: u8,
    #[arg(long, default_value_t = DESK_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_N)]
    n: usize,
    /// Bootstrap replicates per Monte Carlo replicate (0 skips ASE and coverage).
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    boot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated methods (default: all seven).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// IPW weight model (default: the setting's own).
    #[arg(long)]
    weights: Option<String>,
    /// Run the five-formula weight-model sweep instead (settings 3 and 4).
    #[arg(long)]
    sweep: bool,
    /// Output file; `.csv` writes CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    setting: u8,
    #[arg(long, default_value_t = DEFAULT_N)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo replicate index.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Replace the setting's observation law with a constant probability.
    #[arg(long)]
    observe_prob: Option<f64>,
    /// Write the full data (no missing surrogates).
    #[arg(long)]
    full: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<PteError> for Failure {
    fn from(e: PteError) -> Self {
        let code = match e.class() {
            ErrorClass::Validation => EXIT_VALIDATION,
            ErrorClass::Numerical => EXIT_NUMERICAL,
            ErrorClass::InferenceUnreliable => EXIT_UNRELIABLE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        PteError::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let result = match cli.command {
        Command::Evaluate(args) => evaluate(args),
        Command::Simulate(args) => simulate(args),
        Command::Generate(args) => generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(PteError::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let estimator = match args.estimator {
        EstimatorArg::Parametric => EstimatorKind::Parametric,
        EstimatorArg::Nonparametric => EstimatorKind::Nonparametric,
    };
    let correction = match args.method {
        MethodArg::Cc => Correction::Cc,
        MethodArg::Ipw => Correction::Ipw,
        MethodArg::Smle => Correction::Smle,
    };
    let weights: WeightSpec = args.weights.parse()?;
    let config = PipelineConfig {
        estimator,
        correction,
        weights: weights.clone(),
        weight_cap: args.weight_cap,
        bandwidth: args.bandwidth,
        em: EmOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            trace_loglik: false,
        },
    };
    config.validate()?;
    if args.boot == 0 {
        return Err(usage("--boot must be at least 1"));
    }

    let data = load_trial_csv(&args.input)?;
    let fit = config.run(&data)?;
    if let Some(overlap) = &fit.overlap {
        if !overlap.ok {
            log::warn!(
                "{} control surrogates lie outside the treated range [{}, {}]; the nonparametric estimate extrapolates",
                overlap.n_outside,
                overlap.min1,
                overlap.max1
            );
        }
    }
    if let Some(em) = &fit.em {
        if !em.converged {
            log::warn!("EM stopped after {} iterations without converging", em.iterations);
        }
    }
    let boot = bootstrap_inference(&data, |d| config.estimate(d), args.boot, args.seed)?;

    let smle = correction == Correction::Smle;
    let echo = ConfigEcho {
        input: args.input.display().to_string(),
        estimator: estimator.to_string(),
        method: correction.to_string(),
        weights: (correction == Correction::Ipw).then(|| weights.to_string()),
        weight_cap: args.weight_cap,
        bandwidth: args.bandwidth,
        boot: args.boot,
        seed: args.seed,
        ci: args.ci.name().to_string(),
        tol: smle.then_some(args.tol),
        max_iter: smle.then_some(args.max_iter),
    };
    let report = Report::new(echo, &data, &fit, &boot);
    report.print_table(&mut io::stdout().lock(), args.ci.name())?;

    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(PteError::from)?;
        w.write_record(["estimand", "estimate", "se", "wald_lo", "wald_hi", "quantile_lo", "quantile_hi"])
            .map_err(PteError::from)?;
        let b = &report.bootstrap;
        let e = &report.estimate;
        for (name, est, se, wald, quant) in [
            ("delta", e.delta, b.se.delta, b.ci_wald.delta, b.ci_quantile.delta),
            ("delta_s", e.delta_s, b.se.delta_s, b.ci_wald.delta_s, b.ci_quantile.delta_s),
            ("r_s", e.r_s, b.se.r_s, b.ci_wald.r_s, b.ci_quantile.r_s),
        ] {
            w.write_record([
                name.to_string(),
                est.to_string(),
                se.to_string(),
                wald.0.to_string(),
                wald.1.to_string(),
                quant.0.to_string(),
                quant.1.to_string(),
            ])
            .map_err(PteError::from)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let setting = SettingSpec::standard(args.setting, args.n)?;
    let as_csv = args
        .out
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")));

    if args.sweep {
        if !matches!(args.setting, 3 | 4) {
            return Err(usage("--sweep is defined for settings 3 and 4"));
        }
        let result = weight_misspec_sweep(&setting, args.reps, args.seed)?;
        let mut out = io::stdout().lock();
        writeln!(out, "setting {} weight-model sweep, {} reps", args.setting, args.reps)?;
        writeln!(out, "{:<4} {:<10} {:<11} {:>9} {:>8}", "", "formula", "method", "bias", "ese")?;
        for r in result.rows.iter().chain(&result.complete_case) {
            writeln!(out, "{:<4} {:<10} {:<11} {:>9.4} {:>8.4}", r.version, r.formula, r.method, r.bias, r.ese)?;
        }
        if let Some(path) = &args.out {
            if as_csv {
                write_sweep_csv(&result, BufWriter::new(File::create(path)?))?;
            } else {
                write_json(path, &result)?;
            }
        }
        return Ok(());
    }

    let methods = match &args.methods {
        Some(list) => list.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>()?,
        None => Method::ALL.to_vec(),
    };
    let weights = args.weights.as_deref().map(str::parse::<WeightSpec>).transpose()?;
    let config = StudyConfig {
        setting,
        methods,
        reps: args.reps,
        boot_d: args.boot,
        seed: args.seed,
        weights,
    };
    let result = run_study(&config)?;

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "setting {}: {} reps, n = {}, D = {}, mean missing {:.1}%",
        args.setting,
        args.reps,
        args.n,
        args.boot,
        100.0 * result.mean_missing_fraction
    )?;
    writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>7} {:>7} {:>6} {:>6} {:>6} {:>5}",
        "method", "bias", "%bias", "ese", "ase", "cp_n", "cp_q", "re", "fail"
    )?;
    let f = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
    for r in &result.rows {
        writeln!(
            out,
            "{:<12} {:>8.4} {:>8.2} {:>7.4} {:>7} {:>6} {:>6} {:>6} {:>5}{}",
            r.method.label(),
            r.bias,
            r.pct_bias,
            r.ese,
            f(r.ase, 4),
            f(r.cp_n, 3),
            f(r.cp_q, 3),
            f(r.re, 3),
            r.failures,
            if r.flagged { "  (flagged)" } else { "" }
        )?;
    }
    if let Some(path) = &args.out {
        if as_csv {
            write_metrics_csv(&result.rows, BufWriter::new(File::create(path)?))?;
        } else {
            write_json(path, &result)?;
        }
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let mut setting = SettingSpec::standard(args.setting, args.n)?;
    if let Some(p) = args.observe_prob {
        if !(p > 0.0 && p <= 1.0) {
            return Err(usage("--observe-prob must lie in (0, 1]"));
        }
        setting.missingness = MissingnessLaw::Constant { prob: p };
    }
    let trial = generate_trial(&setting, args.seed, args.replicate)?;
    let data = if args.full { &trial.full } else { &trial.masked };
    save_trial_csv(data, &args.out)?;
    Ok(())
}
