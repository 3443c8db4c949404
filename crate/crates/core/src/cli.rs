//! `csense` command-line front end.
//!
//! Every artifact written here embeds the tool version and a full echo of the
//! run configuration, including the model itself, so any output can be
//! regenerated from its own header. Failures are reported on stderr as one
//! line of JSON, `{"error": <class>, "detail": <message>}`, with exit status 1.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::controller::DEFAULT_EXPLORATION;
use crate::harness::{
    run_experiment_with_threads, sweep_rows, threshold_sweep, write_rows_csv, Experiment,
    HarnessError,
};
use crate::model::{load_model, Model, ModelError, RawModel};
use crate::solver::{solve_policy, PolicySolution, SolverError};
use crate::testbench::{StoppingRule, TrialError, DEFAULT_MAX_STEPS};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "csense", version, about = "Controlled-sensing sequential hypothesis testing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file and print its invariant report.
    Validate {
        model: PathBuf,
    },
    /// Solve for the optimal sensing policy of each hypothesis.
    Solve {
        model: PathBuf,
        /// Solve only this hypothesis.
        #[arg(long)]
        hypothesis: Option<usize>,
        /// Directory receiving one `policy_<i>.json` per hypothesis.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo campaign and report error rates, risks and costs.
    Simulate(SimulateArgs),
    /// Run a single-threshold campaign for each of several thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Trials per true hypothesis.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    pub seed: u64,
    /// Exploration base `a > 1`; exploration happens at steps ⌈a^ℓ⌉.
    #[arg(long, default_value_t = DEFAULT_EXPLORATION)]
    pub a: f64,
    /// Step cap per trial; trials reaching it are censored.
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (all cores when omitted). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    /// Single likelihood-ratio threshold `T > 1`.
    #[arg(long, conflicts_with = "risk_constraints", required_unless_present = "risk_constraints")]
    pub threshold: Option<f64>,
    /// One risk target per hypothesis, in index order.
    #[arg(long, value_delimiter = ',')]
    pub risk_constraints: Option<Vec<f64>>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Exit 0 even if some trials hit the step cap.
    #[arg(long)]
    pub allow_censoring: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub model: PathBuf,
    /// Strictly increasing comma-separated thresholds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub threshold: Vec<f64>,
    #[command(flatten)]
    pub run: RunArgs,
}

/// A failure with its machine-readable class.
#[derive(Debug)]
pub struct CliError {
    pub class: String,
    pub detail: String,
}

impl CliError {
    fn new(class: &str, detail: impl ToString) -> Self {
        CliError {
            class: class.to_string(),
            detail: detail.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.class, "detail": self.detail}).to_string()
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::new(e.class(), e)
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::new(e.class(), e)
    }
}

impl From<TrialError> for CliError {
    fn from(e: TrialError) -> Self {
        let class = match e {
            TrialError::InvalidRule(_) => "InvalidRule",
            TrialError::HypothesisOutOfRange { .. } => "HypothesisOutOfRange",
            TrialError::SolutionMismatch => "SolutionMismatch",
            TrialError::InvalidMaxSteps => "UsageError",
            TrialError::Controller(_) => "InvalidExploration",
        };
        CliError::new(class, e)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Trial(t) => t.into(),
            other => CliError::new(other.class(), other),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::new("IoError", format!("{}: {e}", path.display()))
}

fn read_model(path: &Path) -> Result<(Model, RawModel), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let model = load_model(&text)?;
    let raw = model.to_raw();
    Ok((model, raw))
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| io_error(path, e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::new("IoError", e))
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable output");
    bytes.push(b'\n');
    bytes
}

#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'static str,
    model_path: String,
    model: &'a RawModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<&'a StoppingRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exploration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_steps: Option<u64>,
}

impl<'a> RunConfig<'a> {
    fn new(command: &'static str, path: &Path, model: &'a RawModel) -> Self {
        RunConfig {
            command,
            model_path: path.display().to_string(),
            model,
            rule: None,
            thresholds: None,
            exploration: None,
            trials: None,
            seed: None,
            max_steps: None,
        }
    }

    fn with_run(mut self, run: &RunArgs) -> Self {
        self.exploration = Some(run.a);
        self.trials = Some(run.trials);
        self.seed = Some(run.seed);
        self.max_steps = Some(run.max_steps);
        self
    }
}

fn csv_header(config: &RunConfig) -> Vec<u8> {
    let echo = serde_json::to_string(config).expect("serializable config");
    format!("# csense {TOOL_VERSION}\n# config: {echo}\n").into_bytes()
}

fn validate(path: &Path) -> Result<i32, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    match load_model(&text) {
        Ok(model) => {
            let report = json!({
                "valid": true,
                "tool_version": TOOL_VERSION,
                "model_path": path.display().to_string(),
                "num_hypotheses": model.num_hypotheses(),
                "num_observations": model.num_observations(),
                "num_controls": model.num_controls(),
                "y0": model.observation_labels()[model.y0()],
                "min_cost": model.min_cost(),
            });
            write_output(None, &pretty(&report))?;
            Ok(0)
        }
        Err(ModelError::Invalid(violations)) => {
            let report = json!({
                "valid": false,
                "tool_version": TOOL_VERSION,
                "model_path": path.display().to_string(),
                "violations": violations,
            });
            write_output(None, &pretty(&report))?;
            Err(ModelError::Invalid(violations).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn solve(path: &Path, hypothesis: Option<usize>, out: &Path) -> Result<i32, CliError> {
    let (model, raw) = read_model(path)?;
    let hypotheses: Vec<usize> = match hypothesis {
        Some(i) if i >= model.num_hypotheses() => {
            return Err(SolverError::HypothesisOutOfRange {
                hypothesis: i,
                num_hypotheses: model.num_hypotheses(),
            }
            .into())
        }
        Some(i) => vec![i],
        None => (0..model.num_hypotheses()).collect(),
    };
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let config = RunConfig::new("solve", path, &raw);
    for i in hypotheses {
        let policy = solve_policy(&model, i)?;
        let artifact = json!({
            "tool_version": TOOL_VERSION,
            "config": config,
            "hypothesis": i,
            "d_star": policy.d_star,
            "q_star": policy.q_star.to_vecs(),
            "occupation": policy.occupation,
            "residuals": {
                "flow": policy.diagnostics.flow_residual,
                "cost": policy.diagnostics.cost_residual,
            },
            "diagnostics": policy.diagnostics,
        });
        let file = out.join(format!("policy_{i}.json"));
        fs::write(&file, pretty(&artifact)).map_err(|e| io_error(&file, e))?;
    }
    Ok(0)
}

fn run_campaign(
    model: &Model,
    solution: &PolicySolution,
    experiment: &Experiment,
    threads: Option<usize>,
) -> Result<crate::harness::RunStats, CliError> {
    let threads = threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(CliError::new("UsageError", "--threads must be at least 1"));
    }
    Ok(run_experiment_with_threads(model, solution, experiment, threads)?)
}

fn simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let (model, raw) = read_model(&args.model)?;
    let rule = match (&args.threshold, &args.risk_constraints) {
        (Some(t), None) => StoppingRule::single_threshold(*t)?,
        (None, Some(r)) => StoppingRule::per_hypothesis(r.clone())?,
        _ => {
            return Err(CliError::new(
                "UsageError",
                "exactly one of --threshold and --risk-constraints is required",
            ))
        }
    };
    rule.check(Some(model.num_hypotheses()))?;
    let solution = PolicySolution::solve(&model)?;
    let experiment = Experiment {
        rule: rule.clone(),
        exploration: args.run.a,
        trials: args.run.trials as usize,
        master_seed: args.run.seed,
        max_steps: args.run.max_steps,
    };
    let stats = run_campaign(&model, &solution, &experiment, args.run.threads)?;
    let mut config = RunConfig::new("simulate", &args.model, &raw).with_run(&args.run);
    config.rule = Some(&rule);

    let bytes = match args.format {
        Format::Json => pretty(&json!({
            "tool_version": TOOL_VERSION,
            "config": config,
            "d_star": (0..model.num_hypotheses()).map(|i| solution.d_star(i)).collect::<Vec<_>>(),
            "stats": stats,
        })),
        Format::Csv => {
            let thresholds: Vec<f64> = (0..model.num_hypotheses()).map(|i| rule.threshold(i)).collect();
            let mut bytes = csv_header(&config);
            write_rows_csv(&sweep_rows(&stats, &solution, &thresholds), &mut bytes)?;
            bytes
        }
    };
    write_output(args.run.out.as_deref(), &bytes)?;

    let censored = stats.total_censored();
    if censored > 0 && !args.allow_censoring {
        return Err(CliError::new(
            "Censored",
            format!("{censored} trial(s) reached the step cap; pass --allow-censoring to accept"),
        ));
    }
    Ok(0)
}

fn sweep(args: &SweepArgs) -> Result<i32, CliError> {
    let (model, raw) = read_model(&args.model)?;
    let solution = PolicySolution::solve(&model)?;
    let threads = args.run.threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(CliError::new("UsageError", "--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new("ThreadPoolError", e))?;
    let table = pool.install(|| {
        threshold_sweep(
            &model,
            &solution,
            &args.threshold,
            args.run.a,
            args.run.trials as usize,
            args.run.seed,
            args.run.max_steps,
        )
    })?;
    let mut config = RunConfig::new("sweep", &args.model, &raw).with_run(&args.run);
    config.thresholds = Some(&args.threshold);
    let mut bytes = csv_header(&config);
    table.write_csv(&mut bytes)?;
    write_output(args.run.out.as_deref(), &bytes)?;
    Ok(0)
}

/// Executes a parsed command, returning the process exit status.
pub fn run_command(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Validate { model } => validate(model),
        Command::Solve {
            model,
            hypothesis,
            out,
        } => solve(model, *hypothesis, out),
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
    }
}

/// Parses `args`, runs the command and reports failures on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let detail = e.render().to_string();
            let detail = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::new("UsageError", detail).to_json());
            return 1;
        }
    };
    match run_command(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}
