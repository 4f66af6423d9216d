use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use fedpd_core::algorithms::{run, Algorithm};
use fedpd_core::config::{ExperimentConfig, ResolvedExperiment};
use fedpd_core::metrics::{fmt_f64, write_trace_csv, Trace, TraceRow};
use fedpd_core::ModelVec;
use serde::Serialize;

use crate::{emit, CliError, ExperimentArgs};

const DEFAULT_OUT_DIR: &str = "fedpd-out";

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,

    /// Parameter to vary: p, eta, Q or algorithm.
    #[arg(long)]
    pub param: String,

    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub values: Vec<String>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ResolvedExperiment,
    pub rounds_completed: usize,
    pub final_gap: Option<f64>,
    pub min_gap: Option<f64>,
    pub comm_rounds: u64,
    pub local_iters: u64,
    pub samples: u64,
    pub diverged: bool,
    pub unconverged_solves: u64,
    pub max_dual_residual: f64,
    pub warnings: Vec<String>,
    pub final_x0: ModelVec,
}

impl RunSummary {
    fn new(config: ResolvedExperiment, trace: &Trace) -> Self {
        Self {
            config,
            rounds_completed: trace.rows.len(),
            final_gap: trace.final_gap(),
            min_gap: trace.min_gap(),
            comm_rounds: trace.comm_rounds(),
            local_iters: trace.local_iters(),
            samples: trace.samples(),
            diverged: trace.diverged,
            unconverged_solves: trace.unconverged_solves,
            max_dual_residual: trace.max_dual_residual,
            warnings: trace.warnings.clone(),
            final_x0: trace.final_x0.clone(),
        }
    }
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(&args.config).map_err(|e| match e {
        fedpd_core::Error::Io(io) => {
            CliError::Config(format!("cannot read {}: {io}", args.config.display()))
        }
        other => CliError::Config(format!("{}: {other}", args.config.display())),
    })?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(args: &ExperimentArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Rows kept in `trace.csv`: every `every`-th round plus the last one.
fn thinned(rows: &[TraceRow], every: usize) -> Vec<TraceRow> {
    let last = rows.len();
    rows.iter()
        .enumerate()
        .filter(|(k, r)| (r.round as usize).is_multiple_of(every) || k + 1 == last)
        .map(|(_, r)| r.clone())
        .collect()
}

fn write_outputs(dir: &Path, rows: &[TraceRow], summary: &RunSummary) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let path = dir.join("trace.csv");
    let file = File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
    write_trace_csv(BufWriter::new(file), rows).map_err(|e| CliError::io(path.display(), e))?;

    let path = dir.join("summary.json");
    let file = File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, summary).map_err(|e| CliError::io(path.display(), e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path.display(), e))
}

fn execute_config(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary, CliError> {
    let (problem, resolved) = cfg.resolve()?;
    log::info!(
        "{} on {} agents, d = {}, L = {:.6}, {} rounds",
        resolved.run.algorithm,
        problem.n_agents(),
        problem.dim(),
        problem.lipschitz(),
        resolved.run.rounds
    );
    let trace = run(&problem, &resolved.run)?;
    let rows = thinned(&trace.rows, resolved.trace_every);
    let summary = RunSummary::new(resolved, &trace);
    write_outputs(dir, &rows, &summary)?;
    Ok(summary)
}

fn describe(summary: &RunSummary) -> String {
    let gap = |g: Option<f64>| g.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
    format!(
        "rounds {} | final gap {} | min gap {} | RC {} | LC {} | AS {}{}",
        summary.rounds_completed,
        gap(summary.final_gap),
        gap(summary.min_gap),
        summary.comm_rounds,
        summary.local_iters,
        summary.samples,
        if summary.diverged { " | DIVERGED" } else { "" }
    )
}

/// `run`: one experiment.
pub fn run_experiment(
    args: &RunArgs,
    out: &mut (dyn Write + Send),
) -> Result<RunSummary, CliError> {
    let cfg = load_config(&args.common)?;
    let dir = out_dir(&args.common, &cfg);
    let summary = execute_config(&cfg, &dir)?;
    emit(out, format!("{}: {}", dir.display(), describe(&summary)))?;
    Ok(summary)
}

fn apply(cfg: &mut ExperimentConfig, param: &str, value: &str) -> Result<(), CliError> {
    let bad = |e: &dyn std::fmt::Display| {
        CliError::Config(format!("invalid value `{value}` for {param}: {e}"))
    };
    match param {
        "p" => cfg.run.p = value.parse().map_err(|e| bad(&e))?,
        "eta" | "η" => cfg.run.eta = Some(value.parse().map_err(|e| bad(&e))?),
        "Q" | "local_steps" => cfg.run.local_steps = value.parse().map_err(|e| bad(&e))?,
        "algorithm" => cfg.run.algorithm = value.parse::<Algorithm>().map_err(|e| bad(&e))?,
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep parameter `{other}` (expected p, eta, Q or algorithm)"
            )))
        }
    }
    Ok(())
}

/// `sweep`: one run per value under `<out>/<param>=<value>/`, plus `sweep.csv`.
pub fn sweep(args: &SweepArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let values: Vec<&str> = args
        .values
        .iter()
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let base = load_config(&args.common)?;
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            apply(&mut cfg, &args.param, v)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let root = out_dir(&args.common, &base);
    let mut table = format!(
        "{},final_gap,min_gap,comm_rounds,local_iters,samples,rounds_completed,diverged\n",
        args.param
    );
    for (value, cfg) in values.iter().zip(&configs) {
        let dir = root.join(format!("{}={}", args.param, value));
        let s = execute_config(cfg, &dir)?;
        emit(out, format!("{}={value}: {}", args.param, describe(&s)))?;
        let gap = |g: Option<f64>| g.map_or_else(String::new, fmt_f64);
        table.push_str(&format!(
            "{value},{},{},{},{},{},{},{}\n",
            gap(s.final_gap),
            gap(s.min_gap),
            s.comm_rounds,
            s.local_iters,
            s.samples,
            s.rounds_completed,
            s.diverged
        ));
    }
    let path = root.join("sweep.csv");
    fs::write(&path, table).map_err(|e| CliError::io(path.display(), e))
}
