//! The `lfi` command line: run inference from a model file, summarize or
//! reproduce a result.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

pub mod model_file;
pub mod report;

use crate::executor::Executor;
use crate::methods::bolfi::{fit_bolfi_with_progress, sample_posterior, BolfiConfig};
use crate::methods::rejection::{sample_rejection_with_progress, Acceptance, RejectionConfig};
use crate::methods::smc::{sample_smc_with_progress, SmcConfig};
use crate::methods::{InferenceError, InferenceResult, Progress};
use crate::store::Store;
use clap::{Args, Parser, Subcommand, ValueEnum};
use model_file::parse_model;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "lfi", version, about = "Likelihood-free inference on simulator graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run inference on a model file.
    Run(RunArgs),
    /// Print per-parameter statistics of a result file.
    Summarize(SummarizeArgs),
    /// Re-run the invocation recorded in a result file.
    Reproduce(ReproduceArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rejection,
    Smc,
    Bolfi,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Model file (JSON, schema 1).
    model: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory for stored node outputs.
    #[arg(long, env = "LFI_STORE")]
    store: Option<PathBuf>,
    /// Node to store (repeatable); defaults to the observed simulator.
    #[arg(long = "store-node")]
    store_nodes: Vec<String>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated quantiles, one per round.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<f64>>,
    /// Comma-separated `lo:hi` pairs, one per parameter.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_bounds)]
    bounds: Option<Bounds>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    n_total: Option<usize>,
    /// Simulation cap.
    #[arg(long)]
    budget: Option<u64>,
    /// Result file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the samples as CSV.
    #[arg(long)]
    samples_csv: Option<PathBuf>,
    /// Suppress progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    result: PathBuf,
    /// Emit the samples as CSV instead of the text report.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    result: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, env = "LFI_STORE")]
    store: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Bounds(Vec<(f64, f64)>);

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    s.split(',')
        .map(|pair| {
            let (lo, hi) = pair.split_once(':').ok_or_else(|| format!("'{pair}' is not lo:hi"))?;
            let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in '{pair}'"))?;
            let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in '{pair}'"))?;
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(format!("bounds '{pair}' need finite lo < hi"));
            }
            Ok((lo, hi))
        })
        .collect::<Result<_, _>>()
        .map(Bounds)
}

/// Everything that determines a run's output; recorded in result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub model: String,
    pub method: Method,
    pub n_samples: usize,
    pub seed: u64,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_init: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

impl Invocation {
    /// `run` arguments that repeat this invocation (without `--out`).
    pub fn to_args(&self) -> Vec<String> {
        let mut a = vec![
            "run".to_string(),
            self.model.clone(),
            "--method".into(),
            format!("{:?}", self.method).to_lowercase(),
            "--n-samples".into(),
            self.n_samples.to_string(),
            "--seed".into(),
            self.seed.to_string(),
            "--batch-size".into(),
            self.batch_size.to_string(),
        ];
        let f = |x: f64| format!("{x:?}");
        if let Some(q) = self.quantile {
            a.extend(["--quantile".into(), f(q)]);
        }
        if let Some(t) = self.threshold {
            a.extend(["--threshold".into(), f(t)]);
        }
        if let Some(s) = &self.schedule {
            a.extend([
                "--schedule".into(),
                s.iter().map(|q| f(*q)).collect::<Vec<_>>().join(","),
            ]);
        }
        if let Some(b) = &self.bounds {
            let pairs: Vec<String> = b.iter().map(|(lo, hi)| format!("{}:{}", f(*lo), f(*hi))).collect();
            a.push(format!("--bounds={}", pairs.join(",")));
        }
        for (flag, v) in [("--n-init", self.n_init), ("--n-total", self.n_total)] {
            if let Some(v) = v {
                a.extend([flag.into(), v.to_string()]);
            }
        }
        if let Some(b) = self.budget {
            a.extend(["--budget".into(), b.to_string()]);
        }
        a
    }
}

/// Result file: the inference result plus provenance. Worker count and
/// wall time are left out so files are identical across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub engine_version: String,
    pub model_name: String,
    /// Subgraph digest of the distance node.
    pub model_digest: String,
    pub invocation: Invocation,
    #[serde(flatten)]
    pub result: InferenceResult,
}

impl ResultFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::ResultParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] model_file::ModelError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: cannot parse result file: {message}", path.display())]
    ResultParse { path: PathBuf, message: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_run_args(a: &RunArgs) -> Result<(), CliError> {
    if a.n_samples == 0 {
        return Err(usage("--n-samples must be positive"));
    }
    if a.batch_size == 0 || a.workers == 0 {
        return Err(usage("--batch-size and --workers must be positive"));
    }
    let has = |b: bool, flag: &str, allowed: bool| {
        if b && !allowed {
            Err(usage(
                format!("{flag} is not valid with --method {:?}", a.method).to_lowercase(),
            ))
        } else {
            Ok(())
        }
    };
    let is = |m: Method| a.method == m;
    has(a.quantile.is_some(), "--quantile", is(Method::Rejection))?;
    has(a.threshold.is_some(), "--threshold", is(Method::Rejection))?;
    has(a.schedule.is_some(), "--schedule", is(Method::Smc))?;
    has(a.bounds.is_some(), "--bounds", is(Method::Bolfi))?;
    has(
        a.n_init.is_some() || a.n_total.is_some(),
        "--n-init/--n-total",
        is(Method::Bolfi),
    )?;
    match a.method {
        Method::Rejection => match (a.quantile, a.threshold) {
            (Some(_), Some(_)) => Err(usage("give either --quantile or --threshold, not both")),
            (None, None) => Err(usage("rejection needs --quantile or --threshold")),
            _ => Ok(()),
        },
        Method::Smc if a.schedule.is_none() => Err(usage("smc needs --schedule q1,q2,...")),
        Method::Bolfi if a.bounds.is_none() => Err(usage("bolfi needs --bounds lo:hi,... (one pair per parameter)")),
        _ => Ok(()),
    }
}

struct Reporter {
    quiet: bool,
    last: Option<Instant>,
}

impl Reporter {
    const INTERVAL: Duration = Duration::from_millis(500);

    fn report(&mut self, p: &Progress) {
        if self.quiet || self.last.is_some_and(|t| t.elapsed() < Self::INTERVAL) {
            return;
        }
        self.last = Some(Instant::now());
        eprintln!("{p}");
    }
}

fn run(a: &RunArgs) -> Result<(), CliError> {
    check_run_args(a)?;
    let model = parse_model(&a.model)?;
    let cg = model.graph.compile()?;
    let distance = crate::methods::check_inferable(&cg)?;
    let digest = cg.digest(distance).expect("distance digest").to_hex();
    let store = a.store.as_ref().map(Store::open).transpose()?;
    let mut exec = Executor::new(&cg, a.seed, a.batch_size).workers(a.workers);
    if let Some(s) = &store {
        let nodes = if a.store_nodes.is_empty() {
            cg.observed_simulator().map(|n| vec![n.to_string()]).unwrap_or_default()
        } else {
            a.store_nodes.clone()
        };
        if let Some(bad) = nodes.iter().find(|n| cg.spec().node(n).is_none()) {
            return Err(usage(format!("--store-node '{bad}' is not a node of the model")));
        }
        exec = exec.with_store(s, nodes);
    }
    let mut reporter = Reporter {
        quiet: a.quiet,
        last: None,
    };
    let mut progress = |p: &Progress| reporter.report(p);
    let started = Instant::now();
    let outcome = match a.method {
        Method::Rejection => {
            let acceptance = match (a.quantile, a.threshold) {
                (Some(q), _) => Acceptance::Quantile(q),
                (_, Some(t)) => Acceptance::Threshold(t),
                _ => unreachable!("checked above"),
            };
            let cfg = RejectionConfig {
                n_samples: a.n_samples,
                acceptance,
                budget: a.budget,
                parameters: model.parameters.clone(),
            };
            sample_rejection_with_progress(&exec, &cfg, &mut progress)
        }
        Method::Smc => {
            let cfg = SmcConfig {
                n_samples: a.n_samples,
                schedule: a.schedule.clone().unwrap_or_default(),
                budget: a.budget,
                parameters: model.parameters.clone(),
            };
            sample_smc_with_progress(&exec, &cfg, &mut progress).map(|(r, _)| r)
        }
        Method::Bolfi => {
            let bounds = a.bounds.clone().expect("checked above").0;
            let n_init = a.n_init.unwrap_or(10.max(bounds.len() + 2));
            let mut cfg = BolfiConfig::new(bounds, n_init, a.n_total.unwrap_or(n_init + 40));
            cfg.parameters = model.parameters.clone();
            fit_bolfi_with_progress(&exec, &cfg, &mut progress)
                .and_then(|post| sample_posterior(&post, a.n_samples, a.seed))
        }
    };
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(InferenceError::BudgetExhausted { partial }) => {
            let msg = format!(
                "simulation budget exhausted after {} simulations; partial result written",
                partial.n_sim
            );
            (*partial, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    let invocation = Invocation {
        model: a.model.display().to_string(),
        method: a.method,
        n_samples: a.n_samples,
        seed: a.seed,
        batch_size: a.batch_size,
        quantile: a.quantile,
        threshold: a.threshold,
        schedule: a.schedule.clone(),
        bounds: a.bounds.clone().map(|b| b.0),
        n_init: a.n_init,
        n_total: a.n_total,
        budget: a.budget,
    };
    let file = ResultFile {
        engine_version: ENGINE_VERSION.to_string(),
        model_name: model.name.clone(),
        model_digest: digest,
        invocation,
        result,
    };
    std::fs::write(&a.out, file.to_json()).map_err(|e| CliError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    if let Some(csv) = &a.samples_csv {
        std::fs::write(csv, report::samples_csv(&file.result)).map_err(|e| CliError::Io {
            path: csv.clone(),
            source: e,
        })?;
    }
    if !a.quiet {
        eprintln!(
            "[{}] done: {} samples from {} simulations in {:.2} s -> {}",
            file.result.method,
            file.result.len(),
            file.result.n_sim,
            started.elapsed().as_secs_f64(),
            a.out.display()
        );
    }
    match failure {
        Some(msg) => Err(CliError::Runtime(msg)),
        None => Ok(()),
    }
}

fn summarize(a: &SummarizeArgs) -> Result<(), CliError> {
    let file = ResultFile::read(&a.result)?;
    if a.csv {
        print!("{}", report::samples_csv(&file.result));
    } else {
        println!("model {} ({})", file.model_name, file.model_digest);
        print!("{}", report::render_text(&file.result));
    }
    Ok(())
}

fn reproduce(a: &ReproduceArgs) -> Result<(), CliError> {
    let file = ResultFile::read(&a.result)?;
    let mut argv: Vec<String> = vec!["lfi".into()];
    argv.extend(file.invocation.to_args());
    argv.extend([
        "--out".into(),
        a.out.display().to_string(),
        "--workers".into(),
        a.workers.to_string(),
    ]);
    if let Some(s) = &a.store {
        argv.extend(["--store".into(), s.display().to_string()]);
    }
    if a.quiet {
        argv.push("--quiet".into());
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| usage(format!("recorded invocation does not parse: {e}")))?;
    match cli.command {
        Command::Run(r) => run(&r),
        _ => unreachable!("to_args starts with run"),
    }
}

/// Parses `argv` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize(a),
        Command::Reproduce(a) => reproduce(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}\n\nFor more information, try 'lfi run --help'."),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}
