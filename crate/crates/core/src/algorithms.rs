//! Federated drivers: FedAvg (GD and SGD local steps), FedProx, and FedPD with
//! Oracle I or Oracle II and probabilistic communication skipping.
//!
//! Agents interact only through the aggregation step. Within a round agents
//! run in parallel on the rayon pool; every agent draws from its own stream and
//! results are reduced in agent order, so output is independent of thread count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::local_solvers::{
    al_value, draw_batch, oracle1_solve, oracle2_solve, OracleIConfig, OracleIIConfig,
    OracleVariant, VrState,
};
use crate::metrics::{consensus_error, stationarity_gap, Trace, TraceRow};
use crate::problems::Problem;
use crate::rng::{agent_stream, server_stream};
use crate::vector::ModelVec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "fedavg-gd")]
    FedAvgGd,
    #[serde(rename = "fedavg-sgd")]
    FedAvgSgd,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "fedpd-gd")]
    FedPdGd,
    #[serde(rename = "fedpd-sgd")]
    FedPdSgd,
    #[serde(rename = "fedpd-vr")]
    FedPdVr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::FedAvgGd,
        Algorithm::FedAvgSgd,
        Algorithm::FedProx,
        Algorithm::FedPdGd,
        Algorithm::FedPdSgd,
        Algorithm::FedPdVr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvgGd => "fedavg-gd",
            Algorithm::FedAvgSgd => "fedavg-sgd",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedPdGd => "fedpd-gd",
            Algorithm::FedPdSgd => "fedpd-sgd",
            Algorithm::FedPdVr => "fedpd-vr",
        }
    }

    pub fn is_fedpd(self) -> bool {
        matches!(
            self,
            Algorithm::FedPdGd | Algorithm::FedPdSgd | Algorithm::FedPdVr
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid(format!("unknown algorithm {s:?}")))
    }
}

/// Local step sizes of FedAvg and FedProx.
///
/// Steps are indexed by round `r` (0-based) and local step `q` (0-based); the
/// global step counter is `s = rQ + q + 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `η` everywhere.
    #[default]
    Constant,
    /// `η / √s`.
    InvSqrt,
    /// Explicit per-step values indexed by `s - 1`; the last value repeats.
    Custom { steps: Vec<f64> },
    /// `η` for `q = 0`, then `min{1/(2(Q-1)L), η/Q} / √(r+1)`.
    StageDecay,
    /// `1/2` on the first local step of every round, `1/√s` otherwise.
    HalfRestart,
}

impl StepSchedule {
    pub fn step(
        &self,
        eta: f64,
        round: usize,
        q: usize,
        local_steps: usize,
        lipschitz: f64,
    ) -> f64 {
        let s = round * local_steps + q + 1;
        match self {
            StepSchedule::Constant => eta,
            StepSchedule::InvSqrt => eta / (s as f64).sqrt(),
            StepSchedule::Custom { steps } => steps[(s - 1).min(steps.len() - 1)],
            StepSchedule::StageDecay => {
                if q == 0 {
                    eta
                } else {
                    let cap = 1.0 / (2.0 * (local_steps - 1) as f64 * lipschitz);
                    cap.min(eta / local_steps as f64) / ((round + 1) as f64).sqrt()
                }
            }
            StepSchedule::HalfRestart => {
                if q == 0 {
                    0.5
                } else {
                    1.0 / (s as f64).sqrt()
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let StepSchedule::Custom { steps } = self {
            if steps.is_empty() || steps.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(invalid("custom schedule needs positive finite steps"));
            }
        }
        Ok(())
    }
}

/// Starting point: a constant fill or explicit values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitPoint {
    Fill(f64),
    Values(Vec<f64>),
}

impl Default for InitPoint {
    fn default() -> Self {
        InitPoint::Fill(0.0)
    }
}

impl InitPoint {
    pub fn materialize(&self, dim: usize) -> Result<ModelVec> {
        let v = match self {
            InitPoint::Fill(c) => ModelVec::filled(dim, *c),
            InitPoint::Values(v) => {
                let v = ModelVec::from(v.clone());
                v.ensure_dim(dim)?;
                v
            }
        };
        v.ensure_finite("initial point")?;
        Ok(v)
    }
}

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e8;
pub const DEFAULT_EPS1: f64 = 1e-8;
pub const DEFAULT_REFRESH_PERIOD: usize = 20;

/// Upper end `(√5 - 1)/(4L)` of the FedPD step range.
pub fn fedpd_eta_limit(lipschitz: f64) -> f64 {
    (5f64.sqrt() - 1.0) / (4.0 * lipschitz)
}

/// Everything that defines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Rounds `T`.
    pub rounds: usize,
    /// Local steps `Q` of FedAvg/FedProx; default step count of Oracle II.
    pub local_steps: usize,
    /// Local step of FedAvg/FedProx, or the AL parameter of FedPD.
    pub eta: f64,
    /// Probability of skipping aggregation (FedPD only).
    pub p: f64,
    /// Proximal weight of FedProx.
    pub rho: f64,
    pub schedule: StepSchedule,
    /// Minibatch size of FedAvg-SGD and default batch of Oracle II.
    pub batch: usize,
    pub oracle1: Option<OracleIConfig>,
    pub oracle2: Option<OracleIIConfig>,
    pub init: InitPoint,
    pub seed: u64,
    /// A run stops and is marked diverged once any model norm exceeds this.
    pub divergence_threshold: f64,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, eta: f64) -> Self {
        Self {
            algorithm,
            rounds: 100,
            local_steps: 8,
            eta,
            p: 0.0,
            rho: 1.0,
            schedule: StepSchedule::Constant,
            batch: 1,
            oracle1: None,
            oracle2: None,
            init: InitPoint::default(),
            seed: 0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    /// Fills in oracle settings that depend on the problem and validates the result.
    pub fn resolved(&self, problem: &Problem) -> Result<RunConfig> {
        let mut cfg = self.clone();
        let l = problem.lipschitz();
        match cfg.algorithm {
            Algorithm::FedPdGd | Algorithm::FedPdSgd => {
                let variant = if cfg.algorithm == Algorithm::FedPdGd {
                    OracleVariant::Gd
                } else {
                    OracleVariant::Sgd
                };
                let mut o = cfg.oracle1.take().unwrap_or_else(|| {
                    OracleIConfig::with_defaults(variant, cfg.eta, l, DEFAULT_EPS1)
                });
                o.variant = variant;
                cfg.oracle1 = Some(o);
                cfg.oracle2 = None;
            }
            Algorithm::FedPdVr => {
                let batch = cfg.batch;
                let o = cfg.oracle2.take().unwrap_or_else(|| OracleIIConfig {
                    gamma: 10.0 * cfg.eta / (batch as f64 * l.sqrt()),
                    q: cfg.local_steps,
                    refresh_period: DEFAULT_REFRESH_PERIOD,
                    batch,
                });
                cfg.oracle2 = Some(o);
                cfg.oracle1 = None;
            }
            _ => {
                cfg.oracle1 = None;
                cfg.oracle2 = None;
            }
        }
        cfg.validate(problem)?;
        Ok(cfg)
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(invalid(format!("p must lie in [0, 1), got {}", self.p)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(invalid(format!(
                "rho must be nonnegative, got {}",
                self.rho
            )));
        }
        if self.local_steps == 0 {
            return Err(invalid("local_steps must be at least 1"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return Err(invalid("divergence_threshold must be positive"));
        }
        if self.schedule == StepSchedule::StageDecay && self.local_steps < 2 {
            return Err(invalid("stage_decay schedule needs local_steps >= 2"));
        }
        self.schedule.validate()?;
        self.init.materialize(problem.dim())?;
        if let Some(o) = &self.oracle1 {
            o.validate()?;
            if self.eta * problem.lipschitz() >= 1.0 {
                return Err(Error::NonconvexSubproblem {
                    eta: self.eta,
                    lipschitz: problem.lipschitz(),
                });
            }
        }
        if let Some(o) = &self.oracle2 {
            o.validate()?;
        }
        Ok(())
    }

    /// Non-fatal configuration warnings.
    pub fn lints(&self, problem: &Problem) -> Vec<String> {
        let mut out = Vec::new();
        let limit = fedpd_eta_limit(problem.lipschitz());
        if self.algorithm.is_fedpd() && self.eta >= limit {
            out.push(format!(
                "eta = {} is outside the guaranteed FedPD range (0, {limit:.6}) for L = {}",
                self.eta,
                problem.lipschitz()
            ));
        }
        if !self.algorithm.is_fedpd() && self.p > 0.0 {
            out.push(format!("p = {} is ignored by {}", self.p, self.algorithm));
        }
        out
    }
}

/// One agent's private state.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub x: ModelVec,
    pub lambda: ModelVec,
    /// Local copy of the global model `x_{0,i}`.
    pub x0: ModelVec,
    pub vr: Option<VrState>,
    pub local_iters: u64,
    pub samples: u64,
    rng: ChaCha8Rng,
}

impl AgentState {
    pub fn new(agent: usize, init: ModelVec, seed: u64) -> Self {
        let dim = init.dim();
        Self {
            x: init.clone(),
            lambda: ModelVec::zeros(dim),
            x0: init,
            vr: None,
            local_iters: 0,
            samples: 0,
            rng: agent_stream(seed, agent),
        }
    }
}

/// Summary of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// Server model, or mean of the local anchors after a skipped round.
    pub x0: ModelVec,
    pub communicated: bool,
    pub local_iters: u64,
    pub samples: u64,
    pub diverged: bool,
    pub unconverged: u64,
    /// Largest `‖∇f_i(x_i) + λ_i‖²` after the dual step (FedPD only).
    pub max_dual_residual: f64,
}

#[derive(Default)]
struct AgentReport {
    iters: u64,
    samples: u64,
    diverged: bool,
    unconverged: bool,
    dual_residual: f64,
}

fn within(x: &ModelVec, threshold: f64) -> bool {
    let n = x.norm();
    n.is_finite() && n <= threshold
}

fn collect_reports(
    states: &mut [AgentState],
    reports: Vec<Result<AgentReport>>,
) -> Result<Vec<AgentReport>> {
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    for (s, r) in states.iter_mut().zip(&reports) {
        s.local_iters += r.iters;
        s.samples += r.samples;
    }
    Ok(reports)
}

/// FedAvg (GD or SGD) or FedProx: `Q` local steps from `server_x`, then the exact mean.
///
/// FedProx adds `ρ(x - server_x)` to every local gradient.
pub fn local_steps_round(
    problem: &Problem,
    states: &mut [AgentState],
    server_x: &ModelVec,
    round: usize,
    cfg: &RunConfig,
) -> Result<RoundOutcome> {
    let sgd = cfg.algorithm == Algorithm::FedAvgSgd;
    let rho = if cfg.algorithm == Algorithm::FedProx {
        cfg.rho
    } else {
        0.0
    };
    let l = problem.lipschitz();
    let reports = states
        .par_iter_mut()
        .enumerate()
        .map(|(i, st)| {
            let mut rep = AgentReport::default();
            st.x = server_x.clone();
            let m = problem.shard_len(i);
            for q in 0..cfg.local_steps {
                let step = cfg.schedule.step(cfg.eta, round, q, cfg.local_steps, l);
                let mut g = if sgd {
                    let batch = draw_batch(&mut st.rng, m, cfg.batch);
                    rep.samples += batch.len() as u64;
                    problem.stoch_grad(i, &st.x, &batch)?
                } else {
                    rep.samples += m as u64;
                    problem.grad(i, &st.x)?
                };
                if rho != 0.0 {
                    for ((g, x), c) in g.iter_mut().zip(st.x.iter()).zip(server_x.iter()) {
                        *g += rho * (x - c);
                    }
                }
                st.x.axpy(-step, &g);
                rep.iters += 1;
                if !within(&st.x, cfg.divergence_threshold) {
                    rep.diverged = true;
                    break;
                }
            }
            Ok(rep)
        })
        .collect::<Vec<_>>();
    let reports = collect_reports(states, reports)?;
    let x0 = ModelVec::mean_of(states.iter().map(|s| &s.x), problem.dim());
    for s in states.iter_mut() {
        s.x0 = x0.clone();
    }
    Ok(RoundOutcome {
        diverged: reports.iter().any(|r| r.diverged) || !within(&x0, cfg.divergence_threshold),
        local_iters: reports.iter().map(|r| r.iters).sum(),
        samples: reports.iter().map(|r| r.samples).sum(),
        x0,
        communicated: true,
        unconverged: 0,
        max_dual_residual: 0.0,
    })
}

/// FedAvg round; `cfg.algorithm` selects GD or SGD local steps.
pub fn fedavg_round(
    problem: &Problem,
    states: &mut [AgentState],
    server_x: &ModelVec,
    round: usize,
    cfg: &RunConfig,
) -> Result<RoundOutcome> {
    if !matches!(cfg.algorithm, Algorithm::FedAvgGd | Algorithm::FedAvgSgd) {
        return Err(invalid(format!(
            "{} is not a FedAvg variant",
            cfg.algorithm
        )));
    }
    local_steps_round(problem, states, server_x, round, cfg)
}

/// FedProx round: `Q` GD steps on `f_i(x) + (ρ/2)‖x - x₀‖²`.
pub fn fedprox_round(
    problem: &Problem,
    states: &mut [AgentState],
    server_x: &ModelVec,
    round: usize,
    cfg: &RunConfig,
) -> Result<RoundOutcome> {
    if cfg.algorithm != Algorithm::FedProx {
        return Err(invalid(format!("{} is not FedProx", cfg.algorithm)));
    }
    local_steps_round(problem, states, server_x, round, cfg)
}

/// One FedPD round: oracle solve, dual ascent, tentative anchor, then a single
/// server draw decides between aggregation and local continuation.
///
/// `cfg` must be resolved (see [`RunConfig::resolved`]).
pub fn fedpd_round(
    problem: &Problem,
    states: &mut [AgentState],
    round: usize,
    cfg: &RunConfig,
    server_rng: &mut impl Rng,
) -> Result<RoundOutcome> {
    let eta = cfg.eta;
    let reports = states
        .par_iter_mut()
        .enumerate()
        .map(|(i, st)| {
            let solved = match cfg.algorithm {
                Algorithm::FedPdGd | Algorithm::FedPdSgd => {
                    let o = cfg
                        .oracle1
                        .as_ref()
                        .ok_or_else(|| invalid("missing oracle1 settings"))?;
                    oracle1_solve(problem, i, &st.x, &st.x0, &st.lambda, eta, o, &mut st.rng)
                }
                Algorithm::FedPdVr => {
                    let o = cfg
                        .oracle2
                        .as_ref()
                        .ok_or_else(|| invalid("missing oracle2 settings"))?;
                    let prev = st.vr.take();
                    oracle2_solve(
                        problem,
                        i,
                        &st.x,
                        &st.x0,
                        &st.lambda,
                        eta,
                        o,
                        prev,
                        round,
                        &mut st.rng,
                    )
                    .map(|(out, vr)| {
                        st.vr = Some(vr);
                        out
                    })
                }
                other => return Err(invalid(format!("{other} is not a FedPD variant"))),
            };
            let out = match solved {
                Ok(out) => out,
                Err(Error::SolverDiverged { .. }) => {
                    return Ok(AgentReport {
                        diverged: true,
                        ..AgentReport::default()
                    })
                }
                Err(e) => return Err(e),
            };
            st.x = out.x;
            for ((l, x), a) in st.lambda.iter_mut().zip(st.x.iter()).zip(st.x0.iter()) {
                *l += (x - a) / eta;
            }
            for ((a, x), l) in st.x0.iter_mut().zip(st.x.iter()).zip(st.lambda.iter()) {
                *a = x + eta * l;
            }
            let diverged = !within(&st.x, cfg.divergence_threshold)
                || !within(&st.x0, cfg.divergence_threshold);
            let dual_residual = if diverged {
                f64::INFINITY
            } else {
                problem.grad(i, &st.x)?.add(&st.lambda).norm_sq()
            };
            Ok(AgentReport {
                iters: out.inner_iters as u64,
                samples: out.samples as u64,
                diverged,
                unconverged: !out.converged,
                dual_residual,
            })
        })
        .collect::<Vec<_>>();
    let reports = collect_reports(states, reports)?;
    let u: f64 = server_rng.random();
    let communicated = u >= cfg.p;
    let x0 = ModelVec::mean_of(states.iter().map(|s| &s.x0), problem.dim());
    if communicated {
        for s in states.iter_mut() {
            s.x0 = x0.clone();
        }
    }
    Ok(RoundOutcome {
        diverged: reports.iter().any(|r| r.diverged),
        local_iters: reports.iter().map(|r| r.iters).sum(),
        samples: reports.iter().map(|r| r.samples).sum(),
        unconverged: reports.iter().filter(|r| r.unconverged).count() as u64,
        max_dual_residual: reports.iter().map(|r| r.dual_residual).fold(0.0, f64::max),
        x0,
        communicated,
    })
}

/// Stateful driver for a single run.
pub struct Simulator<'p> {
    problem: &'p Problem,
    cfg: RunConfig,
    agents: Vec<AgentState>,
    server_x: ModelVec,
    server_rng: ChaCha8Rng,
    round: usize,
    comm_rounds: u64,
    local_iters: u64,
    samples: u64,
    diverged: bool,
    unconverged: u64,
    max_dual_residual: f64,
    warnings: Vec<String>,
}

impl<'p> Simulator<'p> {
    pub fn new(problem: &'p Problem, cfg: &RunConfig) -> Result<Self> {
        let cfg = cfg.resolved(problem)?;
        let warnings = cfg.lints(problem);
        for w in &warnings {
            log::warn!("{w}");
        }
        let init = cfg.init.materialize(problem.dim())?;
        let agents = (0..problem.n_agents())
            .map(|i| AgentState::new(i, init.clone(), cfg.seed))
            .collect();
        Ok(Self {
            problem,
            server_rng: server_stream(cfg.seed),
            cfg,
            agents,
            server_x: init,
            round: 0,
            comm_rounds: 0,
            local_iters: 0,
            samples: 0,
            diverged: false,
            unconverged: 0,
            max_dual_residual: 0.0,
            warnings,
        })
    }

    /// The configuration with all defaults filled in.
    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    /// Server model after the last round (mean of anchors when desynchronized).
    pub fn server_model(&self) -> &ModelVec {
        &self.server_x
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn comm_rounds(&self) -> u64 {
        self.comm_rounds
    }

    pub fn local_iters(&self) -> u64 {
        self.local_iters
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Executes one round.
    pub fn step(&mut self) -> Result<RoundOutcome> {
        if self.diverged {
            return Err(invalid("cannot continue a diverged run"));
        }
        let out = match self.cfg.algorithm {
            Algorithm::FedAvgGd | Algorithm::FedAvgSgd | Algorithm::FedProx => local_steps_round(
                self.problem,
                &mut self.agents,
                &self.server_x,
                self.round,
                &self.cfg,
            )?,
            _ => fedpd_round(
                self.problem,
                &mut self.agents,
                self.round,
                &self.cfg,
                &mut self.server_rng,
            )?,
        };
        self.round += 1;
        self.comm_rounds += out.communicated as u64;
        self.local_iters += out.local_iters;
        self.samples += out.samples;
        self.unconverged += out.unconverged;
        self.max_dual_residual = self.max_dual_residual.max(out.max_dual_residual);
        self.diverged |= out.diverged;
        self.server_x = out.x0.clone();
        Ok(out)
    }

    /// Metrics of the current state.
    pub fn row(&self, started: Instant) -> TraceRow {
        let gap = match stationarity_gap(self.problem, &self.server_x) {
            Ok(g) if g.is_finite() => g,
            _ => f64::INFINITY,
        };
        let al_mean = if self.cfg.algorithm.is_fedpd() {
            let mut total = 0.0;
            for (i, s) in self.agents.iter().enumerate() {
                total += al_value(self.problem, i, &s.x, &s.x0, &s.lambda, self.cfg.eta)
                    .unwrap_or(f64::NAN);
            }
            total / self.agents.len() as f64
        } else {
            self.problem.global_loss(&self.server_x).unwrap_or(f64::NAN)
        };
        let anchors: Vec<ModelVec> = self.agents.iter().map(|s| s.x0.clone()).collect();
        TraceRow {
            round: self.round as u64,
            comm_rounds_cum: self.comm_rounds,
            local_iters_cum: self.local_iters,
            samples_cum: self.samples,
            gap,
            consensus_err: consensus_error(&anchors),
            al_mean,
            diverged: self.diverged,
            wall_ms: started.elapsed().as_millis() as u64,
        }
    }

    /// Runs the remaining rounds, stopping early on divergence.
    pub fn run(mut self) -> Result<Trace> {
        let started = Instant::now();
        let mut rows = Vec::with_capacity(self.cfg.rounds);
        while self.round < self.cfg.rounds && !self.diverged {
            self.step()?;
            rows.push(self.row(started));
        }
        if self.diverged {
            log::info!("run diverged after {} rounds", self.round);
        }
        Ok(Trace {
            rows,
            final_x0: self.server_x,
            diverged: self.diverged,
            warnings: self.warnings,
            unconverged_solves: self.unconverged,
            max_dual_residual: self.max_dual_residual,
        })
    }
}

/// Runs `cfg` on `problem` from scratch.
pub fn run(problem: &Problem, cfg: &RunConfig) -> Result<Trace> {
    Simulator::new(problem, cfg)?.run()
}

/// Single-machine gradient descent on `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralRun {
    pub x: ModelVec,
    /// Gap at the start point followed by the gap after each step.
    pub gaps: Vec<f64>,
}

impl CentralRun {
    pub fn min_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn centralized_gd(
    problem: &Problem,
    init: &ModelVec,
    step: f64,
    iters: usize,
) -> Result<CentralRun> {
    let mut x = init.clone();
    let mut g = problem.global_grad(&x)?;
    let mut gaps = vec![g.norm_sq()];
    for _ in 0..iters {
        x.axpy(-step, &g);
        g = problem.global_grad(&x)?;
        gaps.push(g.norm_sq());
    }
    Ok(CentralRun { x, gaps })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipRegime {
    Linear,
    Log,
}

/// Skip probability chosen from `ε/δ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipChoice {
    pub p: f64,
    pub regime: SkipRegime,
    /// `C₃` at the chosen `p`.
    pub c3: f64,
    /// Regime boundary `(1 - 2Lη)/(1 + Lη)`.
    pub threshold: f64,
}

pub const MAX_SKIP_PROBABILITY: f64 = 1.0 - 1e-6;

/// `C₃ = (p(1+Lη) + Lη)/(1 - Lη)`.
pub fn c3(p: f64, eta: f64, lipschitz: f64) -> f64 {
    let le = lipschitz * eta;
    (p * (1.0 + le) + le) / (1.0 - le)
}

/// `C(p) = η(1 - C₃^{1/(1-p)})² p (p²(3+Lη)² + 4) / (1 - 2Lη - p(1+Lη))²`.
pub fn comm_penalty(p: f64, eta: f64, lipschitz: f64) -> f64 {
    let le = lipschitz * eta;
    let a = 1.0 - c3(p, eta, lipschitz).powf(1.0 / (1.0 - p));
    let d = 1.0 - 2.0 * le - p * (1.0 + le);
    eta * a * a * p * (p * p * (3.0 + le).powi(2) + 4.0) / (d * d)
}

/// Piecewise rule: `p = (ε/δ²)/(36η)` while below the regime boundary, then
/// `p = 1 - 2/ln((ε/δ²)/(42η))` floored at the boundary; clamped to `[0, 1 - 1e-6)`.
pub fn select_skip_probability(
    eps: f64,
    delta: f64,
    eta: f64,
    lipschitz: f64,
) -> Result<SkipChoice> {
    if !(eps > 0.0 && eta > 0.0 && lipschitz > 0.0 && delta >= 0.0) {
        return Err(invalid(
            "eps, eta, L must be positive and delta nonnegative",
        ));
    }
    let ratio = eps / (delta * delta);
    let le = lipschitz * eta;
    let threshold = (1.0 - 2.0 * le) / (1.0 + le);
    let linear = ratio / (36.0 * eta);
    let (p, regime) = if linear < threshold {
        (linear, SkipRegime::Linear)
    } else {
        let log = 1.0 - 2.0 / (ratio / (42.0 * eta)).ln();
        // ln ≤ 0 makes the formula meaningless; fall back to the boundary.
        let log = if log.is_nan() || log > 1.0 {
            threshold
        } else {
            log
        };
        (log.max(threshold), SkipRegime::Log)
    };
    let p = p.clamp(0.0, MAX_SKIP_PROBABILITY);
    Ok(SkipChoice {
        p,
        regime,
        c3: c3(p, eta, lipschitz),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                format!("\"{}\"", a.name())
            );
        }
        assert!("fedsgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::Constant.step(0.3, 5, 2, 4, 1.0), 0.3);
        assert_eq!(StepSchedule::InvSqrt.step(1.0, 0, 3, 4, 1.0), 0.5);
        let custom = StepSchedule::Custom {
            steps: vec![0.1, 0.2],
        };
        assert_eq!(custom.step(9.0, 3, 0, 2, 1.0), 0.2);
        assert_eq!(StepSchedule::HalfRestart.step(1.0, 2, 0, 2, 1.0), 0.5);
        assert_eq!(StepSchedule::HalfRestart.step(1.0, 1, 1, 2, 1.0), 0.5);
        let sd = StepSchedule::StageDecay;
        assert_eq!(sd.step(0.5, 3, 0, 4, 1.0), 0.5);
        assert_eq!(sd.step(0.5, 3, 1, 4, 1.0), (1.0f64 / 8.0) / 2.0);
    }

    #[test]
    fn init_point_from_json() {
        let a: InitPoint = serde_json::from_str("1.5").unwrap();
        assert_eq!(a.materialize(2).unwrap()[1], 1.5);
        let b: InitPoint = serde_json::from_str("[1, 2]").unwrap();
        assert!(b.materialize(3).is_err());
    }

    #[test]
    fn skip_probability_reference() {
        let eta = (5f64.sqrt() - 1.0) / 8.0;
        let c = select_skip_probability(1.0, 1.0, eta, 1.0).unwrap();
        assert_eq!(c.regime, SkipRegime::Linear);
        assert!((c.p - 1.0 / (36.0 * eta)).abs() < 1e-15);
        assert!((c.p - 0.17982).abs() < 5e-5);
        let tiny = select_skip_probability(1e-12, 1e6, eta, 1.0).unwrap();
        assert!(tiny.p < 1e-20);
        let homogeneous = select_skip_probability(1.0, 0.0, eta, 1.0).unwrap();
        assert_eq!(homogeneous.regime, SkipRegime::Log);
        assert_eq!(homogeneous.p, MAX_SKIP_PROBABILITY);
        assert_eq!(c3(0.0, eta, 1.0), eta / (1.0 - eta));
        assert_eq!(comm_penalty(0.0, eta, 1.0), 0.0);
    }
}
