//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input, 3 runtime failure.
//! Every command that writes a file also writes `<out>.manifest.json` with
//! the full flag set, seed and tool version.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use tgsim_core::analysis::{compare_logs, HistogramSpec};
use tgsim_core::hgt::{fine_tune, train};
use tgsim_core::sim::{collect_dataset, run, Backend, RolloutConfig};
use tgsim_core::{HgtError, ModelConfig, ScenarioSpec, SimError};

use crate::bench::{covering_horizon, scaling_benchmark, BenchError};
use crate::formats::{
    read_dataset, read_model, read_scenario, read_trajectory, report_to_json, report_to_text, write_dataset,
    write_model, write_text, write_trajectory, FormatError,
};

#[derive(Debug, Parser)]
#[command(name = "tgsim", version, about = "Graph-based traffic microsimulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and print its size
    Validate(ValidateArgs),
    /// Roll out a scenario and write the trajectory CSV
    Simulate(SimulateArgs),
    /// Roll out an oracle and write a training dataset
    Collect(CollectArgs),
    /// Train a graph transformer on a dataset
    Train(TrainArgs),
    /// Compare two trajectories
    Eval(EvalArgs),
    /// Measure rollout wall time against demand
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Idm,
    Krauss,
    Learned,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    pub scenario: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "krauss")]
    pub backend: BackendArg,
    /// model file, required by the learned backend
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    pub steps: u64,
    /// overrides the scenario's step length, s
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// data collection interval in steps
    #[arg(long, default_value_t = 1)]
    pub dci: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// allow the output to replace an input file
    #[arg(long)]
    pub force: bool,
}

pub type SimulateArgs = RolloutArgs;
pub type CollectArgs = RolloutArgs;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// continue training this model instead of starting fresh
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// reference trajectory CSV
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// trajectory CSV to score
    #[arg(long)]
    pub cmp: PathBuf,
    /// report path; `.txt` gives a text table, anything else JSON
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub hist_bin: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hist_range: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "krauss")]
    pub backend: BackendArg,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// ascending demand multipliers
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1")]
    pub scales: Vec<f64>,
    /// rollout length; defaults to the full departure window plus 600 steps
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::NotOracle | SimError::EmptyDataset { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<HgtError> for CliError {
    fn from(e: HgtError) -> Self {
        match e {
            HgtError::NonFinite(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Sim(s) => s.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Validate(a) => validate(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Collect(a) => collect(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{msg}").map_err(|e| CliError::Runtime(format!("cannot write to stdout: {e}")))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn check_output(out: &Path, inputs: &[&Path], force: bool) -> Result<(), CliError> {
    if !force {
        if let Some(i) = inputs.iter().find(|i| same_file(out, i)) {
            return Err(CliError::Usage(format!(
                "output '{}' would overwrite input '{}'; pass --force to allow",
                out.display(),
                i.display()
            )));
        }
    }
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(
    out: &Path,
    command: &str,
    flags: &impl Serialize,
    seed: u64,
    extra: serde_json::Value,
) -> Result<(), CliError> {
    let manifest = json!({
        "tool": "tgsim",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "flags": flags,
        "output": out.display().to_string(),
        "summary": extra,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_text(&manifest_path(out), &text)?;
    Ok(())
}

fn load_scenario(path: &Path, dt: Option<f64>) -> Result<ScenarioSpec, CliError> {
    let spec = read_scenario(path)?;
    match dt {
        Some(dt) => Ok(spec.with_dt(dt).map_err(FormatError::from)?),
        None => Ok(spec),
    }
}

fn backend(kind: BackendArg, model: Option<&Path>) -> Result<Backend, CliError> {
    match (kind, model) {
        (BackendArg::Idm, _) => Ok(Backend::Idm),
        (BackendArg::Krauss, _) => Ok(Backend::Krauss),
        (BackendArg::Learned, Some(p)) => Ok(Backend::Learned(Arc::new(read_model(p)?))),
        (BackendArg::Learned, None) => Err(CliError::Usage("the learned backend needs --model".into())),
    }
}

fn rollout_config(a: &RolloutArgs, spec: &ScenarioSpec) -> Result<RolloutConfig, CliError> {
    let b = backend(a.backend, a.model.as_deref())?;
    Ok(RolloutConfig::new(b, spec, a.steps, a.seed).with_dci(a.dci))
}

fn rollout_inputs(a: &RolloutArgs) -> Vec<&Path> {
    let mut v = vec![a.scenario.as_path()];
    if let Some(m) = &a.model {
        v.push(m.as_path());
    }
    v
}

fn validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = read_scenario(&a.scenario)?;
    let signals = spec.signals.len();
    say(
        out,
        format_args!(
            "{} roads, {} lanes, {} vehicles, {} signal{}",
            spec.network.roads.len(),
            spec.network.lanes.len(),
            spec.demand.count,
            signals,
            if signals == 1 { "" } else { "s" }
        ),
    )
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_output(&a.out, &rollout_inputs(a), a.force)?;
    let spec = load_scenario(&a.scenario, a.dt)?;
    let cfg = rollout_config(a, &spec)?;
    let log = run(&spec, &cfg)?;
    write_trajectory(&a.out, &log)?;
    let vehicles = log.rows.iter().map(|r| r.vehicle_id).collect::<std::collections::BTreeSet<_>>().len();
    write_manifest(
        &a.out,
        "simulate",
        a,
        a.seed,
        json!({ "rows": log.rows.len(), "vehicles": vehicles, "violations": log.violations }),
    )?;
    say(
        out,
        format_args!(
            "{} rows, {} vehicles, {} clearance violations -> {}",
            log.rows.len(),
            vehicles,
            log.violations,
            a.out.display()
        ),
    )
}

fn collect(a: &CollectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_output(&a.out, &rollout_inputs(a), a.force)?;
    if a.backend == BackendArg::Learned {
        return Err(CliError::Usage("collect needs an oracle backend (idm or krauss)".into()));
    }
    let spec = load_scenario(&a.scenario, a.dt)?;
    let cfg = rollout_config(a, &spec)?;
    let data = collect_dataset(&spec, &cfg)?;
    write_dataset(&a.out, &data.batches)?;
    let targets: usize = data.batches.iter().map(|b| b.active_count()).sum();
    write_manifest(&a.out, "collect", a, a.seed, json!({ "batches": data.batches.len(), "targets": targets }))?;
    say(out, format_args!("{} batches, {} targets -> {}", data.batches.len(), targets, a.out.display()))
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut inputs = vec![a.data.as_path()];
    if let Some(i) = &a.init {
        inputs.push(i);
    }
    check_output(&a.out, &inputs, a.force)?;
    let data = read_dataset(&a.data)?;
    let (params, losses) = match &a.init {
        Some(path) => {
            let mut m = read_model(path)?;
            m.config.learning_rate = a.lr;
            m.config.epochs = a.epochs;
            let losses = fine_tune(&mut m, &data, a.epochs)?;
            (m, losses)
        }
        None => {
            let config = ModelConfig {
                layers: a.layers,
                heads: a.heads,
                hidden: a.hidden,
                learning_rate: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                ..ModelConfig::default()
            };
            let t = train(&data, config)?;
            (t.params, t.losses)
        }
    };
    write_model(&a.out, &params)?;
    write_manifest(&a.out, "train", a, a.seed, json!({ "parameters": params.len(), "loss_curve": losses }))?;
    say(
        out,
        format_args!(
            "{} parameters, loss {:.6e} -> {:.6e} over {} epochs -> {}",
            params.len(),
            losses.first().copied().unwrap_or(f64::NAN),
            losses.last().copied().unwrap_or(f64::NAN),
            losses.len(),
            a.out.display()
        ),
    )
}

/// Violation count from the manifest written beside a simulated log, since
/// the CSV itself does not carry it.
fn recorded_violations(log: &Path) -> Option<u64> {
    let text = std::fs::read_to_string(manifest_path(log)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["summary"]["violations"].as_u64()
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_output(&a.report, &[&a.reference, &a.cmp], a.force)?;
    let reference = read_trajectory(&a.reference)?;
    let mut cmp = read_trajectory(&a.cmp)?;
    if let Some(n) = recorded_violations(&a.cmp) {
        cmp.violations = n;
    }
    let hist = HistogramSpec { bin_width: a.hist_bin, range: a.hist_range };
    let report = compare_logs(&reference, &cmp, hist).map_err(|e| CliError::Validation(e.to_string()))?;
    let text = report_to_text(&report);
    let body = if a.report.extension().is_some_and(|e| e == "txt") { text.clone() } else { report_to_json(&report) };
    write_text(&a.report, &body)?;
    write_manifest(&a.report, "eval", a, 0, serde_json::Value::Null)?;
    write!(out, "{text}").map_err(|e| CliError::Runtime(e.to_string()))
}

fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut inputs = vec![a.scenario.as_path()];
    if let Some(m) = &a.model {
        inputs.push(m);
    }
    check_output(&a.out, &inputs, a.force)?;
    let spec = read_scenario(&a.scenario)?;
    let b = backend(a.backend, a.model.as_deref())?;
    let horizon = a.steps.unwrap_or_else(|| covering_horizon(&spec, 600));
    let cfg = RolloutConfig::new(b, &spec, horizon, a.seed);
    let report = scaling_benchmark(&spec, &cfg, &a.scales, a.reps)?;
    let body = if a.out.extension().is_some_and(|e| e == "txt") {
        report_to_text(&report)
    } else {
        report_to_json(&report)
    };
    write_text(&a.out, &body)?;
    write_manifest(&a.out, "bench", a, a.seed, json!({ "horizon": horizon }))?;
    writeln!(out, "wall time of the simulation only; file output excluded")
        .and_then(|_| write!(out, "{}", report_to_text(&report)))
        .map_err(|e| CliError::Runtime(e.to_string()))
}
