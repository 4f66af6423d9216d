//! Loss families behind one gradient interface.
//!
//! Every family exposes `f_i`, `∇f_i`, and minibatch gradients for each agent.
//! Sample-based families use uniform shard weights `1/|D_i|`; the global
//! objective is the unweighted mean over agents.

mod chain;

pub use chain::{
    phi, phi_prime, phi_second, psi, psi_prime, psi_second, ChainSpec, CHAIN_SMOOTHNESS,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::vector::{dot, ModelVec};

/// One data point `(a, b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Self { features, label }
    }
}

/// Per-sample loss `F(x; ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossFamily {
    /// `log(1 + exp(-b aᵀx)) + Σ_k βα x_k² / (1 + α x_k²)`.
    PenalizedLogistic { alpha: f64, beta: f64 },
    /// Sigmoid loss `1 / (1 + exp(b - aᵀx))`.
    Logistic,
    /// Two agents with `f₁ = ½‖x‖²` and `f₂ = -½‖x‖²`; no data.
    QuadraticPair,
    /// `½ (aᵀx - b)²`.
    LinearRegression,
    /// Adversarial chain; no data.
    Chain(ChainSpec),
}

impl LossFamily {
    pub fn is_sample_based(&self) -> bool {
        !matches!(self, LossFamily::QuadraticPair | LossFamily::Chain(_))
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self,
            LossFamily::PenalizedLogistic { .. } | LossFamily::Logistic
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossFamily::PenalizedLogistic { alpha, beta } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(invalid(format!("alpha must be positive, got {alpha}")));
                }
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(invalid(format!("beta must be nonnegative, got {beta}")));
                }
                Ok(())
            }
            LossFamily::Chain(spec) => spec.validate(),
            _ => Ok(()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LossFamily::PenalizedLogistic { .. } => "penalized_logistic",
            LossFamily::Logistic => "logistic",
            LossFamily::QuadraticPair => "quadratic_pair",
            LossFamily::LinearRegression => "linear_regression",
            LossFamily::Chain(_) => "chain",
        }
    }
}

/// Upper bound on `max σ'' = σ(1-σ)(1-2σ)`, i.e. `1/(6√3)`.
pub const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_6;

/// Weights of the two virtual samples of the chain family (mean exactly 1).
const CHAIN_SAMPLE_WEIGHTS: [f64; 2] = [0.5, 1.5];

/// N per-agent losses with gradient access and a smoothness estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    family: LossFamily,
    shards: Vec<Vec<Sample>>,
    dim: usize,
    n_agents: usize,
    lipschitz: f64,
}

impl Problem {
    /// Builds a data-driven problem; the smoothness estimate is computed from the shards.
    pub fn from_shards(family: LossFamily, shards: Vec<Vec<Sample>>) -> Result<Self> {
        family.validate()?;
        if !family.is_sample_based() {
            return Err(invalid(format!("family {} carries no data", family.name())));
        }
        if shards.is_empty() {
            return Err(invalid("at least one agent is required"));
        }
        let dim = shards
            .iter()
            .find_map(|s| s.first())
            .map(|s| s.features.len())
            .ok_or(Error::EmptyDataset)?;
        if dim == 0 {
            return Err(invalid("features must have dimension at least 1"));
        }
        for shard in &shards {
            if shard.is_empty() {
                return Err(Error::EmptyDataset);
            }
            for s in shard {
                if s.features.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: s.features.len(),
                    });
                }
                if !s.label.is_finite() || s.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("sample"));
                }
                if family.is_classification() && s.label != 1.0 && s.label != -1.0 {
                    return Err(invalid(format!(
                        "classification label must be ±1, got {}",
                        s.label
                    )));
                }
            }
        }
        let mut problem = Self {
            n_agents: shards.len(),
            family,
            shards,
            dim,
            lipschitz: 1.0,
        };
        problem.lipschitz = problem.estimate_lipschitz();
        Ok(problem)
    }

    /// `f₁ = ½‖x‖²`, `f₂ = -½‖x‖²` in dimension `dim`.
    pub fn quadratic_pair(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        Ok(Self {
            family: LossFamily::QuadraticPair,
            shards: vec![],
            dim,
            n_agents: 2,
            lipschitz: 1.0,
        })
    }

    pub fn chain(spec: ChainSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            family: LossFamily::Chain(spec),
            shards: vec![],
            dim: spec.dim(),
            n_agents: spec.n_agents,
            lipschitz: spec.smoothness(),
        })
    }

    /// Replaces the smoothness estimate with a user-supplied value.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(invalid(format!(
                "lipschitz must be positive, got {lipschitz}"
            )));
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    /// Reinterprets the same shards under another sample-based family.
    pub fn with_family(self, family: LossFamily) -> Result<Self> {
        Self::from_shards(family, self.shards)
    }

    pub fn family(&self) -> &LossFamily {
        &self.family
    }

    pub fn shards(&self) -> &[Vec<Sample>] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Vec<Sample>> {
        self.shards
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn chain_spec(&self) -> Option<&ChainSpec> {
        match &self.family {
            LossFamily::Chain(spec) => Some(spec),
            _ => None,
        }
    }

    /// Number of samples (virtual ones for analytic families) held by `agent`.
    pub fn shard_len(&self, agent: usize) -> usize {
        match &self.family {
            LossFamily::QuadraticPair => 1,
            LossFamily::Chain(_) => CHAIN_SAMPLE_WEIGHTS.len(),
            _ => self.shards[agent].len(),
        }
    }

    /// `M = Σ |D_i|`.
    pub fn total_samples(&self) -> usize {
        (0..self.n_agents).map(|a| self.shard_len(a)).sum()
    }

    fn check(&self, agent: usize, x: &[f64]) -> Result<()> {
        if agent >= self.n_agents {
            return Err(Error::AgentOutOfRange {
                agent,
                n_agents: self.n_agents,
            });
        }
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model"));
        }
        Ok(())
    }

    /// `f_i(x)`.
    pub fn loss(&self, agent: usize, x: &ModelVec) -> Result<f64> {
        self.check(agent, x)?;
        let v = match &self.family {
            LossFamily::QuadraticPair => quadratic_sign(agent) * 0.5 * x.norm_sq(),
            LossFamily::Chain(spec) => spec.value(agent, x),
            family => {
                let shard = &self.shards[agent];
                let data: f64 = shard
                    .iter()
                    .map(|s| sample_value(family, s, x))
                    .sum::<f64>();
                data / shard.len() as f64 + penalty_value(family, x)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss"))
        }
    }

    /// Exact `∇f_i(x)`.
    pub fn grad(&self, agent: usize, x: &ModelVec) -> Result<ModelVec> {
        self.check(agent, x)?;
        let n = self.shard_len(agent);
        self.batch_grad(agent, x, 0..n, n)
    }

    /// Mean of per-sample gradients over `batch` (indices may repeat).
    ///
    /// Uses the same accumulation as [`Problem::grad`], so the full shard in
    /// order reproduces it bit for bit.
    pub fn stoch_grad(&self, agent: usize, x: &ModelVec, batch: &[usize]) -> Result<ModelVec> {
        self.check(agent, x)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let len = self.shard_len(agent);
        if let Some(&index) = batch.iter().find(|&&i| i >= len) {
            return Err(Error::SampleOutOfRange { index, len });
        }
        self.batch_grad(agent, x, batch.iter().copied(), batch.len())
    }

    fn batch_grad(
        &self,
        agent: usize,
        x: &ModelVec,
        batch: impl Iterator<Item = usize>,
        count: usize,
    ) -> Result<ModelVec> {
        let out = match &self.family {
            LossFamily::QuadraticPair => {
                let s = quadratic_sign(agent);
                ModelVec::from(x.iter().map(|v| s * v).collect::<Vec<_>>())
            }
            LossFamily::Chain(spec) => {
                let weight = batch.map(|i| CHAIN_SAMPLE_WEIGHTS[i]).sum::<f64>() / count as f64;
                let mut g = ModelVec::from(spec.grad(agent, x));
                if weight != 1.0 {
                    g.scale(weight);
                }
                g
            }
            family => {
                let shard = &self.shards[agent];
                let mut g = ModelVec::zeros(self.dim);
                for i in batch {
                    sample_grad_into(family, &shard[i], x, &mut g);
                }
                g.scale(1.0 / count as f64);
                penalty_grad_into(family, x, &mut g);
                g
            }
        };
        out.ensure_finite("gradient")?;
        Ok(out)
    }

    /// `f(x) = (1/N) Σ f_i(x)`.
    pub fn global_loss(&self, x: &ModelVec) -> Result<f64> {
        let mut total = 0.0;
        for a in 0..self.n_agents {
            total += self.loss(a, x)?;
        }
        Ok(total / self.n_agents as f64)
    }

    /// `∇f(x) = (1/N) Σ ∇f_i(x)`, summed in agent order.
    pub fn global_grad(&self, x: &ModelVec) -> Result<ModelVec> {
        let mut total = ModelVec::zeros(self.dim);
        for a in 0..self.n_agents {
            total.axpy(1.0, &self.grad(a, x)?);
        }
        total.scale(1.0 / self.n_agents as f64);
        Ok(total)
    }

    /// Per-agent smoothness bounds; the problem's estimate is their maximum.
    fn estimate_lipschitz(&self) -> f64 {
        let curvature = match &self.family {
            LossFamily::PenalizedLogistic { .. } => 0.25,
            LossFamily::Logistic => SIGMOID_CURVATURE,
            LossFamily::LinearRegression => 1.0,
            LossFamily::QuadraticPair => return 1.0,
            LossFamily::Chain(spec) => return spec.smoothness(),
        };
        let penalty = match &self.family {
            LossFamily::PenalizedLogistic { alpha, beta } => 2.0 * alpha * beta,
            _ => 0.0,
        };
        let data = self
            .shards
            .iter()
            .map(|s| {
                let norm = spectral_norm(s);
                curvature * norm * norm / s.len() as f64
            })
            .fold(0.0, f64::max);
        // Guard against all-zero features.
        (data + penalty).max(f64::MIN_POSITIVE)
    }
}

fn quadratic_sign(agent: usize) -> f64 {
    if agent == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sample_value(family: &LossFamily, s: &Sample, x: &[f64]) -> f64 {
    let u = dot(&s.features, x);
    match family {
        LossFamily::PenalizedLogistic { .. } => softplus(-s.label * u),
        LossFamily::Logistic => sigmoid(u - s.label),
        LossFamily::LinearRegression => {
            let r = u - s.label;
            0.5 * r * r
        }
        _ => unreachable!("analytic families have no samples"),
    }
}

fn sample_grad_into(family: &LossFamily, s: &Sample, x: &[f64], out: &mut [f64]) {
    let u = dot(&s.features, x);
    let coef = match family {
        LossFamily::PenalizedLogistic { .. } => -s.label * sigmoid(-s.label * u),
        LossFamily::Logistic => {
            let sg = sigmoid(u - s.label);
            sg * (1.0 - sg)
        }
        LossFamily::LinearRegression => u - s.label,
        _ => unreachable!("analytic families have no samples"),
    };
    for (o, a) in out.iter_mut().zip(&s.features) {
        *o += coef * a;
    }
}

fn penalty_value(family: &LossFamily, x: &[f64]) -> f64 {
    match family {
        LossFamily::PenalizedLogistic { alpha, beta } => x
            .iter()
            .map(|v| {
                let q = alpha * v * v;
                beta * q / (1.0 + q)
            })
            .sum(),
        _ => 0.0,
    }
}

fn penalty_grad_into(family: &LossFamily, x: &[f64], out: &mut [f64]) {
    if let LossFamily::PenalizedLogistic { alpha, beta } = family {
        if *beta == 0.0 {
            return;
        }
        for (o, v) in out.iter_mut().zip(x) {
            let s = 1.0 + alpha * v * v;
            *o += 2.0 * alpha * beta * v / (s * s);
        }
    }
}

/// Largest singular value of the matrix whose rows are the sample features.
///
/// Largest eigenvalue of the `d × d` Gram matrix `AᵀA`, square-rooted.
pub fn spectral_norm(samples: &[Sample]) -> f64 {
    let Some(first) = samples.first() else {
        return 0.0;
    };
    let d = first.features.len();
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let a = DVector::from_column_slice(&s.features);
        gram.syger(1.0, &a, &a, 1.0);
    }
    gram.fill_upper_triangle_with_lower_triangle();
    let top = gram.symmetric_eigenvalues().max();
    top.max(0.0).sqrt()
}
