//! Local oracles for FedPD.
//!
//! Oracle I runs (stochastic) gradient descent on the local augmented
//! Lagrangian `L_i(x) = f_i(x) + ⟨λ, x - x₀⟩ + ‖x - x₀‖² / (2η)` until the exact
//! gradient norm squared drops below `ε₁`. Oracle II takes `Q` closed-form steps
//! on a linearized AL driven by a SARAH-type gradient estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problems::Problem;
use crate::vector::ModelVec;

/// Norm above which a local iterate counts as diverged.
pub const SOLVER_DIVERGENCE_NORM: f64 = 1e8;

/// `f_i(x) + ⟨λ, x - x₀⟩ + ‖x - x₀‖² / (2η)`.
pub fn al_value(
    problem: &Problem,
    agent: usize,
    x: &ModelVec,
    x0: &ModelVec,
    lambda: &ModelVec,
    eta: f64,
) -> Result<f64> {
    check_al_inputs(problem, x0, lambda, eta)?;
    let diff = x.sub(x0);
    Ok(problem.loss(agent, x)? + lambda.dot(&diff) + diff.norm_sq() / (2.0 * eta))
}

/// `∇f_i(x) + λ + (x - x₀)/η`.
pub fn al_grad_x(
    problem: &Problem,
    agent: usize,
    x: &ModelVec,
    x0: &ModelVec,
    lambda: &ModelVec,
    eta: f64,
) -> Result<ModelVec> {
    check_al_inputs(problem, x0, lambda, eta)?;
    let g = problem.grad(agent, x)?;
    Ok(al_grad_from(&g, x, x0, lambda, eta))
}

/// AL gradient given (an estimate of) `∇f_i(x)`.
pub fn al_grad_from(g: &[f64], x: &[f64], x0: &[f64], lambda: &[f64], eta: f64) -> ModelVec {
    g.iter()
        .zip(x)
        .zip(x0)
        .zip(lambda)
        .map(|(((g, x), x0), l)| g + l + (x - x0) / eta)
        .collect::<Vec<_>>()
        .into()
}

fn check_al_inputs(problem: &Problem, x0: &ModelVec, lambda: &ModelVec, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    x0.ensure_dim(problem.dim())?;
    lambda.ensure_dim(problem.dim())?;
    x0.ensure_finite("x0")?;
    lambda.ensure_finite("lambda")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleVariant {
    Gd,
    Sgd,
}

/// Settings of Oracle I.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleIConfig {
    pub variant: OracleVariant,
    /// Inner step `η₁`.
    pub inner_step: f64,
    /// Stopping tolerance `ε₁` on `‖∇L_i‖²`.
    pub eps1: f64,
    pub max_inner: usize,
    /// Minibatch size for the SGD variant; a batch covering the shard uses it in order.
    pub batch: usize,
    /// SGD checks the exact AL gradient every this many inner steps.
    pub check_every: usize,
}

impl OracleIConfig {
    /// Defaults for a given outer step: `η₁ = η/(1+ηL)` and a GD iteration budget.
    pub fn with_defaults(variant: OracleVariant, eta: f64, lipschitz: f64, eps1: f64) -> Self {
        Self {
            variant,
            inner_step: default_inner_step(eta, lipschitz),
            eps1,
            max_inner: default_max_inner(eta, lipschitz, eps1),
            batch: 1,
            check_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_step > 0.0 && self.inner_step.is_finite()) {
            return Err(invalid(format!(
                "inner_step must be positive, got {}",
                self.inner_step
            )));
        }
        if !(self.eps1 > 0.0 && self.eps1.is_finite()) {
            return Err(invalid(format!("eps1 must be positive, got {}", self.eps1)));
        }
        if self.max_inner == 0 {
            return Err(invalid("max_inner must be at least 1"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        if self.check_every == 0 {
            return Err(invalid("check_every must be at least 1"));
        }
        Ok(())
    }
}

pub fn default_inner_step(eta: f64, lipschitz: f64) -> f64 {
    eta / (1.0 + eta * lipschitz)
}

/// `10·⌈(1 + 1/(ημ)) ln(1/ε₁)⌉` with `μ = 1/η - L` (floored at 1 when not positive).
pub fn default_max_inner(eta: f64, lipschitz: f64, eps1: f64) -> usize {
    let mu = 1.0 / eta - lipschitz;
    let mu = if mu > 0.0 { mu } else { 1.0 };
    let iters = ((1.0 + 1.0 / (eta * mu)) * (1.0 / eps1).ln().max(1.0)).ceil();
    (10.0 * iters).min(1e9) as usize
}

/// Settings of Oracle II.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleIIConfig {
    pub gamma: f64,
    /// Closed-form steps per round.
    pub q: usize,
    /// Full-gradient refresh period `I` in rounds.
    pub refresh_period: usize,
    pub batch: usize,
}

impl OracleIIConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.q == 0 || self.refresh_period == 0 || self.batch == 0 {
            return Err(invalid("q, refresh_period and batch must be at least 1"));
        }
        Ok(())
    }
}

/// Result of one local solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub x: ModelVec,
    /// Local update steps taken (LC contribution).
    pub inner_iters: usize,
    /// Per-sample gradient evaluations (AS contribution).
    pub samples: usize,
    /// False when Oracle I hit `max_inner` without meeting the tolerance.
    pub converged: bool,
}

/// Uniform draw with replacement; a batch at least as large as the shard is the shard itself.
pub fn draw_batch(rng: &mut impl Rng, shard_len: usize, batch: usize) -> Vec<usize> {
    if batch >= shard_len {
        (0..shard_len).collect()
    } else {
        (0..batch).map(|_| rng.random_range(0..shard_len)).collect()
    }
}

fn guard(agent: usize, x: &ModelVec) -> Result<()> {
    let norm = x.norm();
    if norm > SOLVER_DIVERGENCE_NORM || !norm.is_finite() {
        return Err(Error::SolverDiverged { agent, norm });
    }
    Ok(())
}

/// Oracle I warm-started at `x_start`.
///
/// Returns the first iterate with `‖∇L_i‖² ≤ ε₁`, or the `max_inner`-th iterate
/// with `converged = false`. With a full-shard batch the SGD variant uses exact
/// gradients and reproduces the GD variant bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn oracle1_solve(
    problem: &Problem,
    agent: usize,
    x_start: &ModelVec,
    x0: &ModelVec,
    lambda: &ModelVec,
    eta: f64,
    cfg: &OracleIConfig,
    rng: &mut impl Rng,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_al_inputs(problem, x0, lambda, eta)?;
    if eta * problem.lipschitz() >= 1.0 {
        return Err(Error::NonconvexSubproblem {
            eta,
            lipschitz: problem.lipschitz(),
        });
    }
    let m = problem.shard_len(agent);
    let exact_steps = cfg.variant == OracleVariant::Gd || cfg.batch >= m;
    let mut x = x_start.clone();
    let mut iters = 0;
    let mut samples = 0;
    loop {
        let exact = if exact_steps || iters % cfg.check_every == 0 || iters == cfg.max_inner {
            samples += m;
            Some(problem.grad(agent, &x)?)
        } else {
            None
        };
        if let Some(g) = &exact {
            if al_grad_from(g, &x, x0, lambda, eta).norm_sq() <= cfg.eps1 {
                return Ok(SolveOutcome {
                    x,
                    inner_iters: iters,
                    samples,
                    converged: true,
                });
            }
        }
        if iters == cfg.max_inner {
            return Ok(SolveOutcome {
                x,
                inner_iters: iters,
                samples,
                converged: false,
            });
        }
        let g = match exact {
            Some(g) if exact_steps => g,
            _ => {
                let batch = draw_batch(rng, m, cfg.batch);
                samples += batch.len();
                problem.stoch_grad(agent, &x, &batch)?
            }
        };
        let step = al_grad_from(&g, &x, x0, lambda, eta);
        x.axpy(-cfg.inner_step, &step);
        iters += 1;
        guard(agent, &x)?;
    }
}

/// Minimizer of the linearized AL:
/// `η/(η+γ) x_q + γ/(η+γ) x₀ - ηγ/(η+γ) (g + λ)`.
pub fn oracle2_step(
    x_q: &[f64],
    x0: &[f64],
    lambda: &[f64],
    g: &[f64],
    eta: f64,
    gamma: f64,
) -> ModelVec {
    let s = eta + gamma;
    let (a, c) = (eta / s, eta * gamma / s);
    // Written around x₀ so that the fixed point x_q = x₀, g + λ = 0 is exact.
    x_q.iter()
        .zip(x0)
        .zip(lambda)
        .zip(g)
        .map(|(((xq, x0), l), g)| x0 + a * (xq - x0) - c * (g + l))
        .collect::<Vec<_>>()
        .into()
}

/// Running gradient estimate of Oracle II and the point it was last updated at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrState {
    pub g: ModelVec,
    pub last_x: ModelVec,
}

impl VrState {
    /// Fresh state holding the exact gradient at `x`.
    pub fn refreshed(problem: &Problem, agent: usize, x: &ModelVec) -> Result<Self> {
        Ok(Self {
            g: problem.grad(agent, x)?,
            last_x: x.clone(),
        })
    }
}

/// SARAH update `g + mean_B(h(x_new) - h(last_x))`, or an exact refresh.
pub fn vr_update(
    state: &VrState,
    problem: &Problem,
    agent: usize,
    x_new: &ModelVec,
    batch: &[usize],
    refresh: bool,
) -> Result<VrState> {
    if refresh {
        return VrState::refreshed(problem, agent, x_new);
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let h_new = problem.stoch_grad(agent, x_new, batch)?;
    let h_old = problem.stoch_grad(agent, &state.last_x, batch)?;
    let mut g = state.g.clone();
    for ((g, n), o) in g.iter_mut().zip(h_new.iter()).zip(h_old.iter()) {
        *g += n - o;
    }
    Ok(VrState {
        g,
        last_x: x_new.clone(),
    })
}

/// One Oracle II call for round `round`, warm-started at `x_start`.
///
/// The estimate is refreshed with the exact gradient when `round` is a multiple
/// of the refresh period or no previous state exists.
#[allow(clippy::too_many_arguments)]
pub fn oracle2_solve(
    problem: &Problem,
    agent: usize,
    x_start: &ModelVec,
    x0: &ModelVec,
    lambda: &ModelVec,
    eta: f64,
    cfg: &OracleIIConfig,
    state: Option<VrState>,
    round: usize,
    rng: &mut impl Rng,
) -> Result<(SolveOutcome, VrState)> {
    cfg.validate()?;
    check_al_inputs(problem, x0, lambda, eta)?;
    let m = problem.shard_len(agent);
    let mut samples = 0;
    let mut state = match state {
        Some(s) if !round.is_multiple_of(cfg.refresh_period) => VrState {
            g: s.g,
            last_x: x_start.clone(),
        },
        _ => {
            samples += m;
            VrState::refreshed(problem, agent, x_start)?
        }
    };
    let mut x = x_start.clone();
    for _ in 0..cfg.q {
        let next = oracle2_step(&x, x0, lambda, &state.g, eta, cfg.gamma);
        guard(agent, &next)?;
        let batch = draw_batch(rng, m, cfg.batch);
        samples += 2 * batch.len();
        state = vr_update(&state, problem, agent, &next, &batch, false)?;
        x = next;
    }
    Ok((
        SolveOutcome {
            x,
            inner_iters: cfg.q,
            samples,
            converged: true,
        },
        state,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::agent_stream;

    #[test]
    fn al_reduces_to_loss_at_anchor() {
        let p = Problem::quadratic_pair(1).unwrap();
        let x0 = ModelVec::from(vec![2.0]);
        let zero = ModelVec::zeros(1);
        assert_eq!(al_value(&p, 0, &x0, &x0, &zero, 0.2).unwrap(), 2.0);
        assert_eq!(al_grad_x(&p, 0, &x0, &x0, &zero, 0.2).unwrap()[0], 2.0);
    }

    #[test]
    fn oracle1_converges_to_closed_form_minimizer() {
        let p = Problem::quadratic_pair(1).unwrap();
        let cfg = OracleIConfig {
            inner_step: 0.1,
            ..OracleIConfig::with_defaults(OracleVariant::Gd, 0.2, 1.0, 1e-12)
        };
        let x0 = ModelVec::from(vec![1.0]);
        let lambda = ModelVec::zeros(1);
        let mut rng = agent_stream(0, 0);
        let out = oracle1_solve(&p, 0, &x0, &x0, &lambda, 0.2, &cfg, &mut rng).unwrap();
        assert!(out.converged);
        // (x0/η - λ) / (1 + 1/η)
        let expected = (1.0 / 0.2) / (1.0 + 1.0 / 0.2);
        assert!((out.x[0] - expected).abs() < 1e-6);
    }

    #[test]
    fn oracle1_stationary_start_takes_no_steps() {
        let p = Problem::quadratic_pair(2).unwrap();
        let zero = ModelVec::zeros(2);
        let cfg = OracleIConfig::with_defaults(OracleVariant::Gd, 0.2, 1.0, 1e-10);
        let out = oracle1_solve(
            &p,
            1,
            &zero,
            &zero,
            &zero,
            0.2,
            &cfg,
            &mut agent_stream(0, 1),
        )
        .unwrap();
        assert_eq!(out.inner_iters, 0);
        assert_eq!(out.x, zero);
    }

    #[test]
    fn oracle1_rejects_large_eta() {
        let p = Problem::quadratic_pair(1).unwrap();
        let zero = ModelVec::zeros(1);
        let cfg = OracleIConfig::with_defaults(OracleVariant::Gd, 1.0, 1.0, 1e-10);
        let err = oracle1_solve(
            &p,
            0,
            &zero,
            &zero,
            &zero,
            1.0,
            &cfg,
            &mut agent_stream(0, 0),
        );
        assert!(matches!(err, Err(Error::NonconvexSubproblem { .. })));
    }

    #[test]
    fn oracle2_step_special_cases() {
        let x = oracle2_step(&[3.0], &[3.0], &[1.0], &[-1.0], 0.7, 0.3);
        assert_eq!(x[0], 3.0);
        let x = oracle2_step(&[2.0], &[4.0], &[0.5], &[1.5], 1.0, 1.0);
        assert!((x[0] - (0.5 * 2.0 + 0.5 * 4.0 - 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn default_budget_is_positive() {
        assert!(default_max_inner(0.2, 1.0, 1e-10) > 0);
        assert!(default_max_inner(2.0, 1.0, 1e-10) > 0);
    }
}
