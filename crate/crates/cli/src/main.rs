//! Batch experiment driver. Parses one JSON config, dispatches a
//! subcommand, and writes CSV/JSON artifacts that are byte-identical for
//! identical inputs. Exit code 0 means every gate passed, 1 means some
//! gate failed, 2 means the config or an argument was rejected.

mod config;
mod drivers;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use glauber::TestReport;

use crate::config::{Experiment, Overrides};
use crate::report::{summarize, write_json, ReportDocument};

#[derive(Parser)]
#[command(
    name = "glauber",
    version,
    about = "Seeded sampling runs and closed-form verification gates for the \
             free birth-death dynamics"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "path")]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true, value_name = "dir")]
    out: Option<PathBuf>,
    /// Replica count override.
    #[arg(long, global = true)]
    replicas: Option<u64>,
    /// Negative control: tamper one constant of the named test. The run
    /// must then exit 1, demonstrating the gate would catch such a bug.
    #[arg(long, global = true, value_name = "name")]
    fault_inject: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw invariant-law configurations and write them as CSV.
    SamplePoisson,
    /// Apply one kernel step to the initial state and write the results.
    KernelStep,
    /// Simulate one event log over the configured horizon.
    SimulatePath,
    /// Monte Carlo Laplace functional of the invariant law vs closed form.
    Laplace,
    /// Run one verification suite, or all of them.
    Test {
        #[arg(value_enum)]
        which: TestName,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestName {
    Mecke,
    Chapman,
    CountLaw,
    Dirichlet,
    Generator,
    Gap,
    Marginal,
    Feller,
    Ergodic,
    All,
}

impl TestName {
    fn label(self) -> &'static str {
        match self {
            TestName::Mecke => "mecke",
            TestName::Chapman => "chapman",
            TestName::CountLaw => "count-law",
            TestName::Dirichlet => "dirichlet",
            TestName::Generator => "generator",
            TestName::Gap => "gap",
            TestName::Marginal => "marginal",
            TestName::Feller => "feller",
            TestName::Ergodic => "ergodic",
            TestName::All => "all",
        }
    }

    fn all() -> Vec<TestName> {
        vec![
            TestName::Mecke,
            TestName::Chapman,
            TestName::CountLaw,
            TestName::Dirichlet,
            TestName::Generator,
            TestName::Gap,
            TestName::Marginal,
            TestName::Feller,
            TestName::Ergodic,
        ]
    }
}

fn run_one(which: TestName, exp: &Experiment, fault: Option<&str>) -> Result<Vec<TestReport>> {
    let faulted = fault == Some(which.label());
    match which {
        TestName::Mecke => drivers::mecke(exp, faulted),
        TestName::Chapman => drivers::chapman(exp, faulted),
        TestName::CountLaw => drivers::count_law(exp, faulted),
        TestName::Dirichlet => drivers::dirichlet(exp, faulted),
        TestName::Generator => drivers::generator(exp, faulted),
        TestName::Gap => drivers::gap(exp, faulted),
        TestName::Marginal => drivers::marginal(exp, faulted),
        TestName::Feller => drivers::feller(exp, faulted),
        TestName::Ergodic => drivers::ergodic(exp, faulted),
        TestName::All => unreachable!("expanded before dispatch"),
    }
    .with_context(|| format!("running test {}", which.label()))
}

fn emit(exp: &Experiment, command: String, reports: Vec<TestReport>) -> Result<bool> {
    let summary = summarize(&reports);
    let all_pass = summary.failed == 0;
    let doc = ReportDocument {
        command,
        config_sha256: &exp.config_sha256,
        master_seed: exp.seed,
        summary,
        tests: &reports,
    };
    write_json(&exp.out.join("report.json"), &doc)?;
    for r in &reports {
        println!(
            "{:<44} {}  statistic {:.6e}  p_or_sigma {:.3e}",
            r.name,
            if r.passed() { "pass" } else { "FAIL" },
            r.statistic,
            r.p_or_sigma,
        );
    }
    Ok(all_pass)
}

fn run(cli: Cli) -> Result<bool> {
    let Some(path) = cli.config.as_deref() else {
        bail!("--config <path> is required");
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        replicas: cli.replicas,
    };
    let exp = config::load(path, &overrides)?;
    std::fs::create_dir_all(&exp.out)
        .with_context(|| format!("creating output directory {}", exp.out.display()))?;
    let fault = cli.fault_inject.as_deref();
    if fault.is_some() && !matches!(cli.command, Command::Test { .. }) {
        bail!("--fault-inject only applies to `test` subcommands");
    }

    match cli.command {
        Command::SamplePoisson => {
            let samples = drivers::invariant_samples(&exp)?;
            report::write_points_csv(
                &exp.out.join("poisson_points.csv"),
                exp.window().dim(),
                &samples,
            )?;
            Ok(true)
        }
        Command::KernelStep => {
            let samples = drivers::kernel_step_samples(&exp)?;
            report::write_points_csv(
                &exp.out.join("kernel_points.csv"),
                exp.window().dim(),
                &samples,
            )?;
            Ok(true)
        }
        Command::SimulatePath => {
            let log = drivers::one_path(&exp)?;
            report::write_events_csv(&exp.out.join("events.csv"), &log)?;
            let births = log
                .events()
                .iter()
                .filter(|e| e.kind == glauber::EventKind::Birth)
                .count();
            let deaths = log.events().len() - births;
            let summary = report::PathSummary {
                horizon: log.horizon(),
                initial_count: log.initial().len(),
                final_count: glauber::path::configuration_at(&log, log.horizon())?.len(),
                births,
                deaths,
                births_per_unit_time: births as f64 / log.horizon(),
                deaths_per_unit_time: deaths as f64 / log.horizon(),
            };
            write_json(&exp.out.join("path_summary.json"), &summary)?;
            Ok(true)
        }
        Command::Laplace => {
            let reports = drivers::laplace(&exp)?;
            emit(&exp, "laplace".into(), reports)
        }
        Command::Test { which } => {
            let list = if which == TestName::All {
                TestName::all()
            } else {
                vec![which]
            };
            if let Some(f) = fault {
                if !list.iter().any(|t| t.label() == f) {
                    bail!(
                        "--fault-inject {f:?} does not apply here; valid names: {}",
                        list.iter()
                            .map(|t| t.label())
                            .collect::<Vec<_>>()
                            .join(", ")
                    );
                }
            }
            let results: Result<Vec<Vec<TestReport>>> = list
                .par_iter()
                .map(|t| run_one(*t, &exp, fault))
                .collect();
            let reports: Vec<TestReport> = results?.into_iter().flatten().collect();
            emit(&exp, format!("test {}", which.label()), reports)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
    }
}
