use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tracing_subscriber::EnvFilter;

use specrepair_core::config::{Ablation, RepairMode, RunConfig};
use specrepair_core::corpus::load_corpus;
use specrepair_core::evaluation::{
    cohen_kappa, judge_instances, win_draw_rates, BugStatus, JudgeInstance, Preference,
};
use specrepair_core::executor::{RecordedCollector, RunnerCollector, Sandbox, TraceCollector};
use specrepair_core::genai::{
    HttpClient, HttpSettings, MockClient, ModelClient, PriceTable, PRICE_TABLE_ENV,
};
use specrepair_core::signals::{sweep_grid, Threshold, Thresholds};
use specrepair_core::trace::ProbePlan;
use specrepair_core::workflow::{build_report, select_bugs, sweep_dir, BugResult, Step, Workflow};

#[derive(Parser)]
#[command(
    name = "specrepair",
    version,
    about = "Postcondition-guided program repair"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every test on the original programs and split P/F.
    Partition(Common),
    /// Generate (or load) postconditions and compute their signals.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Hand-written probe plan used instead of the generator.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Sample and validate candidate patches.
    Repair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: bool,
    },
    /// Aggregate artifacts into report files.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: bool,
    },
    /// partition, validate, repair and report in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        sweep: bool,
    },
    /// Agreement and preference metrics over judgment files.
    Evaluate {
        #[command(subcommand)]
        metric: Metric,
    },
}

#[derive(Subcommand)]
enum Metric {
    /// Cohen's kappa between two label files (one label per line).
    Kappa { a: PathBuf, b: PathBuf },
    /// Win/draw rates from a JSONL file of fault-localization comparisons.
    Judge { instances: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pure,
    Refine,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Restrict to these bug ids (repeatable).
    #[arg(long = "bug")]
    bugs: Vec<String>,
    #[arg(long, default_value = "0.9")]
    theta: Threshold,
    #[arg(long, default_value = "1.0")]
    gamma: Threshold,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    regen_attempts: usize,
    #[arg(long, default_value_t = 21)]
    max_iters: usize,
    #[arg(long, default_value_t = 10)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value = "pure")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "mock")]
    client: ClientKind,
    #[arg(long, default_value = "mock")]
    mock_dir: PathBuf,
    /// Runner command line; recorded traces are replayed when absent.
    #[arg(long)]
    runner: Option<String>,
    #[arg(long)]
    drop_alpha: bool,
    #[arg(long)]
    drop_beta: bool,
    /// Exclude specs erroring on more than half of the reaching passing tests.
    #[arg(long)]
    exclude_error_heavy: bool,
    /// Write every prompt and response under `<out>/<bug>/prompts/`.
    #[arg(long)]
    prompt_dump: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        for (name, v) in [
            ("--samples", self.samples),
            ("--regen-attempts", self.regen_attempts),
            ("--max-iters", self.max_iters),
            ("--jobs", self.jobs),
        ] {
            if v == 0 {
                bail!("{name} must be at least 1");
            }
        }
        if self.timeout_secs == 0 {
            bail!("--timeout-secs must be at least 1");
        }
        Ok(RunConfig {
            corpus: self.corpus.clone(),
            thresholds: Thresholds::new(self.theta, self.gamma),
            n_samples: self.samples,
            regen_attempts: self.regen_attempts,
            max_refine_iterations: self.max_iters,
            timeout_secs: self.timeout_secs,
            jobs: self.jobs,
            ablation: Ablation {
                drop_alpha: self.drop_alpha,
                drop_beta: self.drop_beta,
            },
            mode: match self.mode {
                ModeArg::Pure => RepairMode::Pure,
                ModeArg::Refine => RepairMode::Refine,
            },
            exclude_error_heavy: self.exclude_error_heavy,
            ..RunConfig::default()
        })
    }

    fn client(&self) -> Result<Box<dyn ModelClient>> {
        Ok(match self.client {
            ClientKind::Mock => Box::new(MockClient::from_dir(&self.mock_dir)),
            ClientKind::Http => Box::new(HttpClient::new(HttpSettings::from_env()?)?),
        })
    }

    fn prices(&self) -> Result<PriceTable> {
        match std::env::var_os(PRICE_TABLE_ENV) {
            Some(path) => Ok(PriceTable::load(Path::new(&path))?),
            None => Ok(PriceTable::default()),
        }
    }

    fn collector(&self, config: &RunConfig) -> Result<Box<dyn TraceCollector>> {
        Ok(match &self.runner {
            Some(cmd) => {
                let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
                if argv.is_empty() {
                    bail!("--runner is empty");
                }
                Box::new(RunnerCollector::new(argv, Sandbox::python(config.limits())))
            }
            None => Box::new(RecordedCollector::default()),
        })
    }
}

fn load_plan(path: &Path) -> Result<ProbePlan> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

/// Runs one step over the selected bugs and prints a line per bug.
fn run_step(
    common: &Common,
    config: &RunConfig,
    out: &Path,
    step: Step,
    plan: Option<&ProbePlan>,
) -> Result<Vec<BugResult>> {
    let bugs = load_corpus(&config.corpus)?;
    let (bugs, mut results) = select_bugs(bugs, &common.bugs);
    let collector = common.collector(config)?;
    let client = common.client()?;
    let mut wf = Workflow::new(config.clone(), out, collector.as_ref());
    wf.client = Some(client.as_ref());
    wf.prices = common.prices()?;
    wf.prompt_dump = common.prompt_dump;
    wf.plan_override = plan.cloned();
    results.extend(wf.run(&bugs, step)?);
    for r in &results {
        let detail = match &r.status {
            BugStatus::Skipped(why) => format!("skipped ({why})"),
            BugStatus::Failed(why) => format!("failed: {why}"),
            _ => describe(&wf, &r.bug_id, step),
        };
        println!("{}: {detail}", r.bug_id);
    }
    Ok(results)
}

fn describe(wf: &Workflow<'_>, bug: &str, step: Step) -> String {
    let dir = wf.bug_dir(bug);
    let read = |name: &str| fs::read_to_string(dir.join(name)).unwrap_or_default();
    match step {
        Step::Partition => {
            let v: serde_json::Value =
                serde_json::from_str(&read("partition.json")).unwrap_or_default();
            let count = |k: &str| v["partition"][k].as_array().map_or(0, Vec::len);
            format!("P={} F={}", count("passing"), count("failing"))
        }
        Step::Validate => format!(
            "selected {}",
            read("selected.json").split_whitespace().collect::<String>()
        ),
        Step::Repair => {
            let lines = read("attempts.jsonl");
            let total = lines.lines().count();
            let passed = lines
                .lines()
                .filter(|l| l.contains("\"passed_all\":true"))
                .count();
            format!("{passed}/{total} attempts passed")
        }
    }
}

fn repair_with_sweep(
    common: &Common,
    config: &RunConfig,
    plan: Option<&ProbePlan>,
    sweep: bool,
) -> Result<Vec<BugResult>> {
    let mut results = run_step(common, config, &common.out, Step::Repair, plan)?;
    if sweep {
        for t in sweep_grid() {
            let mut cfg = config.clone();
            cfg.thresholds = t;
            let dir = sweep_dir(&common.out, t);
            println!("sweep theta={} gamma={}", t.theta, t.gamma);
            // a fresh client per grid point keeps scripted mocks aligned
            results.extend(run_step(common, &cfg, &dir, Step::Repair, plan)?);
        }
    }
    Ok(results)
}

fn report(common: &Common, config: &RunConfig, sweep: bool) -> Result<()> {
    let report = build_report(config, &common.out, &common.prices()?, sweep)?;
    for (k, v) in &report.pass_at {
        println!("pass@{k} = {v:.4}");
    }
    println!("total cost = ${:.6}", report.cost.total);
    println!("report written to {}", common.out.join("report").display());
    Ok(())
}

fn exit_for(results: &[BugResult]) -> ExitCode {
    if results.iter().any(BugResult::failed) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

#[derive(Deserialize)]
struct JudgedInstance {
    #[serde(flatten)]
    instance: JudgeInstance,
    judge: Option<Preference>,
}

fn evaluate(metric: Metric) -> Result<()> {
    match metric {
        Metric::Kappa { a, b } => {
            let labels = |p: &Path| -> Result<Vec<String>> {
                Ok(fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_owned)
                    .collect())
            };
            let k = cohen_kappa(&labels(&a)?, &labels(&b)?)?;
            println!("kappa = {:.4}", k.value());
        }
        Metric::Judge { instances } => {
            let raw = fs::read_to_string(&instances)
                .with_context(|| format!("reading {}", instances.display()))?;
            let items: Vec<JudgedInstance> = raw
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()?;
            let plain: Vec<JudgeInstance> = items.iter().map(|i| i.instance.clone()).collect();
            let outcomes = judge_instances(&plain, |inst| {
                items
                    .iter()
                    .find(|i| i.instance.bug_id == inst.bug_id)
                    .and_then(|i| i.judge)
                    .with_context(|| format!("no judgment for `{}`", inst.bug_id))
            })?;
            let (t, b, d) = win_draw_rates(&outcomes)?.percentages();
            println!("instances = {}", outcomes.len());
            println!("win_treatment = {t:.1}%");
            println!("win_baseline = {b:.1}%");
            println!("draw = {d:.1}%");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Partition(common) => {
            let config = common.config()?;
            Ok(exit_for(&run_step(
                &common,
                &config,
                &common.out,
                Step::Partition,
                None,
            )?))
        }
        Command::Validate { common, plan } => {
            let config = common.config()?;
            let plan = plan.as_deref().map(load_plan).transpose()?;
            Ok(exit_for(&run_step(
                &common,
                &config,
                &common.out,
                Step::Validate,
                plan.as_ref(),
            )?))
        }
        Command::Repair { common, sweep } => {
            let config = common.config()?;
            Ok(exit_for(&repair_with_sweep(&common, &config, None, sweep)?))
        }
        Command::Report { common, sweep } => {
            report(&common, &common.config()?, sweep)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            common,
            plan,
            sweep,
        } => {
            let config = common.config()?;
            let plan = plan.as_deref().map(load_plan).transpose()?;
            run_step(&common, &config, &common.out, Step::Partition, None)?;
            run_step(&common, &config, &common.out, Step::Validate, plan.as_ref())?;
            let results = repair_with_sweep(&common, &config, plan.as_ref(), sweep)?;
            report(&common, &config, sweep)?;
            Ok(exit_for(&results))
        }
        Command::Evaluate { metric } => {
            evaluate(metric)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
