use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gladsim::runner::{self, Format, RunnerError, ScenarioConfig};
use gladsim::traffic::{fit_gpd, ks_test, read_inter_arrivals_csv};

#[derive(Parser)]
#[command(name = "gladsim", version, about = "H2M/R latency and coordinated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Round-trip latency over the span and load grids, with and without AI.
    LatencySweep(ScenarioArgs),
    /// Accuracy timeline, training-time savings and alpha table.
    Onboarding(ScenarioArgs),
    /// Fit a generalized Pareto law to inter-arrival times and test it.
    TrafficFit {
        /// CSV with an `inter_arrival_us` or `timestamp_us` column.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        significance: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
    },
    /// Run the fast self-check suite.
    Validate {
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn from_runner(e: RunnerError) -> Failure {
    if e.is_config() {
        usage(e)
    } else {
        runtime(e)
    }
}

fn load_config(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(usage)?;
            ScenarioConfig::from_toml(&text)
                .map_err(from_runner)
                .map_err(|f| Failure { error: f.error.context(format!("in {}", path.display())), ..f })?
        }
        None => ScenarioConfig::default(),
    };
    Ok(match args.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write(report: &runner::Report, out: &Path, format: OutFormat) -> Result<(), Failure> {
    for path in runner::export_report(report, out, format.into()).map_err(from_runner)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn traffic_fit(input: &Path, significance: f64, format: OutFormat) -> Result<(), Failure> {
    if !(significance > 0.0 && significance <= 0.5) {
        return Err(usage(anyhow::anyhow!("--significance must lie in (0, 0.5], got {significance}")));
    }
    let file = File::open(input).with_context(|| format!("opening {}", input.display())).map_err(usage)?;
    let gaps = read_inter_arrivals_csv(BufReader::new(file)).map_err(usage)?;
    let fit = fit_gpd(&gaps).map_err(runtime)?;
    let ks = ks_test(&gaps, &fit, significance).map_err(runtime)?;
    let verdict = if ks.pass { "accept" } else { "reject" };
    match format {
        OutFormat::Csv => {
            println!("shape,scale_us,location_us,samples,ks_statistic,ks_critical,significance,verdict");
            println!(
                "{:.6},{:.6},{:.6},{},{:.6},{:.6},{},{verdict}",
                fit.shape,
                fit.scale_us,
                fit.location_us,
                gaps.len(),
                ks.statistic,
                ks.critical,
                significance
            );
        }
        OutFormat::Json => {
            let v = serde_json::json!({
                "shape": fit.shape,
                "scale_us": fit.scale_us,
                "location_us": fit.location_us,
                "samples": gaps.len(),
                "ks_statistic": ks.statistic,
                "ks_critical": ks.critical,
                "significance": significance,
                "verdict": verdict,
            });
            println!("{}", serde_json::to_string_pretty(&v).map_err(runtime)?);
        }
    }
    Ok(())
}

fn validate(format: OutFormat) -> Result<(), Failure> {
    let checks = runner::run_validation();
    match format {
        OutFormat::Csv => {
            println!("check,status,detail");
            for c in &checks {
                println!("{},{},\"{}\"", c.name, if c.pass { "pass" } else { "fail" }, c.detail.replace('"', "'"));
            }
        }
        OutFormat::Json => {
            let v: Vec<_> = checks
                .iter()
                .map(|c| serde_json::json!({ "check": c.name, "pass": c.pass, "detail": c.detail }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&v).map_err(runtime)?);
        }
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(runtime(anyhow::anyhow!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::LatencySweep(args) => {
            let cfg = load_config(&args)?;
            let report = runner::run_latency_sweep(&cfg).map_err(from_runner)?;
            write(&report, &args.out, args.format)
        }
        Command::Onboarding(args) => {
            let cfg = load_config(&args)?;
            let report = runner::run_onboarding_study(&cfg).map_err(from_runner)?;
            write(&report, &args.out, args.format)
        }
        Command::TrafficFit { input, significance, format } => traffic_fit(&input, significance, format),
        Command::Validate { format } => validate(format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(command) = cli.command else {
        use clap::CommandFactory;
        let _ = Cli::command().print_help();
        return ExitCode::SUCCESS;
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
