//! Convergence and resource metrics and per-round trace records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::problems::Problem;
use crate::vector::ModelVec;

/// Metrics recorded after one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Completed rounds, starting at 1.
    pub round: u64,
    pub comm_rounds_cum: u64,
    pub local_iters_cum: u64,
    pub samples_cum: u64,
    /// `‖∇f(x₀)‖²`.
    pub gap: f64,
    /// `max_{i,j} ‖x_{0,i} - x_{0,j}‖`.
    pub consensus_err: f64,
    /// Mean local augmented Lagrangian (FedPD) or global loss at the server model (baselines).
    pub al_mean: f64,
    pub diverged: bool,
    pub wall_ms: u64,
}

pub const TRACE_HEADER: &str =
    "round,comm_rounds_cum,local_iters_cum,samples_cum,gap,consensus_err,al_mean,diverged,wall_ms";

/// Full record of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Server model (or mean of local anchors) after the last round.
    pub final_x0: ModelVec,
    pub diverged: bool,
    pub warnings: Vec<String>,
    /// Oracle I calls that stopped at their iteration budget.
    pub unconverged_solves: u64,
    /// Largest `‖∇f_i(x_i) + λ_i‖²` seen after a FedPD dual step.
    pub max_dual_residual: f64,
}

impl Trace {
    pub fn final_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.gap).reduce(f64::min)
    }

    pub fn comm_rounds(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.comm_rounds_cum)
    }

    pub fn local_iters(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.local_iters_cum)
    }

    pub fn samples(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.samples_cum)
    }
}

/// `‖∇f(x)‖²` with the exact mean gradient over agents.
pub fn stationarity_gap(problem: &Problem, x: &ModelVec) -> Result<f64> {
    Ok(problem.global_grad(x)?.norm_sq())
}

/// Largest pairwise distance between the given vectors.
pub fn consensus_error(points: &[ModelVec]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            worst = worst.max(a.distance(b));
        }
    }
    worst
}

/// Prefix minimum of the gap, as `(round, best gap so far)`.
pub fn min_gap_curve(rows: &[TraceRow]) -> Result<Vec<(u64, f64)>> {
    if rows.is_empty() {
        return Err(invalid("trace is empty"));
    }
    let mut best = f64::INFINITY;
    Ok(rows
        .iter()
        .map(|r| {
            best = best.min(r.gap);
            (r.round, best)
        })
        .collect())
}

/// Prefix mean of the gap, as `(round, average gap so far)`.
pub fn running_average_gap(rows: &[TraceRow]) -> Vec<(u64, f64)> {
    let mut total = 0.0;
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            total += r.gap;
            (r.round, total / (k + 1) as f64)
        })
        .collect()
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the trace as CSV with the fixed column order of [`TRACE_HEADER`].
pub fn write_trace_csv(mut out: impl Write, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.comm_rounds_cum,
            r.local_iters_cum,
            r.samples_cum,
            fmt_f64(r.gap),
            fmt_f64(r.consensus_err),
            fmt_f64(r.al_mean),
            r.diverged,
            r.wall_ms
        )?;
    }
    out.flush()
}
