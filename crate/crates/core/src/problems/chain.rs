//! Adversarial chain construction for the communication lower bound.
//!
//! Coordinates are stored 0-based: the construction's coordinate `j`
//! (1-based, `j = 1..=T+1`) lives at index `j - 1`. Each coupling term joins two
//! neighbouring coordinates and belongs to exactly one agent, so a coordinate
//! can only become nonzero once its left neighbour is nonzero on the same agent.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `Ψ(w) = 1 - exp(-w²)` for `w > 0`, zero otherwise.
pub fn psi(w: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        -(-w * w).exp_m1()
    }
}

/// First derivative of [`psi`]; zero at the kink `w = 0`.
pub fn psi_prime(w: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        2.0 * w * (-w * w).exp()
    }
}

/// Second derivative of [`psi`] (right limit 2 at the origin is not attained).
pub fn psi_second(w: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        (2.0 - 4.0 * w * w) * (-w * w).exp()
    }
}

/// `Φ(w) = 4 arctan(w) + 2π`.
pub fn phi(w: f64) -> f64 {
    4.0 * w.atan() + 2.0 * PI
}

pub fn phi_prime(w: f64) -> f64 {
    4.0 / (1.0 + w * w)
}

pub fn phi_second(w: f64) -> f64 {
    let s = 1.0 + w * w;
    -8.0 * w / (s * s)
}

/// Parameters of the chain instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    /// Chain length `T`; the problem dimension is `T + 1`.
    pub chain_len: usize,
    pub n_agents: usize,
    /// Target accuracy.
    pub eps: f64,
    /// Scaling constant `L` of the construction.
    pub lipschitz: f64,
}

/// Smoothness constant of the unscaled chain `g` and every `g_i`.
pub const CHAIN_SMOOTHNESS: f64 = 27.0 * PI;

impl ChainSpec {
    pub fn new(chain_len: usize, n_agents: usize, eps: f64, lipschitz: f64) -> Result<Self> {
        let spec = Self {
            chain_len,
            n_agents,
            eps,
            lipschitz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(invalid("chain needs at least one agent"));
        }
        if self.chain_len < self.n_agents || !self.chain_len.is_multiple_of(self.n_agents) {
            return Err(invalid(format!(
                "chain length {} must be a positive multiple of the agent count {}",
                self.chain_len, self.n_agents
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid("chain eps must be positive"));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(invalid("chain lipschitz must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.chain_len + 1
    }

    /// Map from model coordinates to chain coordinates, `L / (π √(2ε))`.
    pub fn input_scale(&self) -> f64 {
        self.lipschitz / (PI * (2.0 * self.eps).sqrt())
    }

    /// Value prefactor `2πε / L`.
    pub fn value_scale(&self) -> f64 {
        2.0 * PI * self.eps / self.lipschitz
    }

    /// Gradient prefactor `√(2ε)`.
    pub fn grad_scale(&self) -> f64 {
        (2.0 * self.eps).sqrt()
    }

    /// Gradient Lipschitz constant of the scaled `f_i`: `(L/π) · 27π`.
    pub fn smoothness(&self) -> f64 {
        self.lipschitz / PI * CHAIN_SMOOTHNESS
    }

    /// `(left, right)` index pairs coupled by `agent`'s terms.
    pub fn coupled_pairs(&self, agent: usize) -> impl Iterator<Item = (usize, usize)> {
        let n = self.n_agents;
        (0..self.chain_len / n).map(move |j| (j * n + agent, j * n + agent + 1))
    }

    /// Unscaled `g_i(y)`.
    pub fn g_agent(&self, agent: usize, y: &[f64]) -> f64 {
        let mut v = -psi(1.0) * phi(y[0]);
        for (l, r) in self.coupled_pairs(agent) {
            v += psi(-y[l]) * phi(-y[r]) - psi(y[l]) * phi(y[r]);
        }
        v
    }

    /// Accumulates `∇g_i(y)` into `out` (which must be zeroed by the caller).
    ///
    /// Partials vanish exactly whenever the left coordinate of a pair is zero.
    pub fn g_agent_grad_into(&self, agent: usize, y: &[f64], out: &mut [f64]) {
        out[0] += -psi(1.0) * phi_prime(y[0]);
        for (l, r) in self.coupled_pairs(agent) {
            let (a, b) = (y[l], y[r]);
            out[l] += -psi_prime(-a) * phi(-b) - psi_prime(a) * phi(b);
            out[r] += -psi(-a) * phi_prime(-b) - psi(a) * phi_prime(b);
        }
    }

    pub fn g_agent_grad(&self, agent: usize, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.g_agent_grad_into(agent, y, &mut out);
        out
    }

    /// Unscaled average `g = (1/N) Σ g_i`.
    pub fn g_mean(&self, y: &[f64]) -> f64 {
        (0..self.n_agents).map(|a| self.g_agent(a, y)).sum::<f64>() / self.n_agents as f64
    }

    pub fn g_mean_grad(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for a in 0..self.n_agents {
            self.g_agent_grad_into(a, y, &mut out);
        }
        let n = self.n_agents as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Scaled `f_i(x) = (2πε/L) g_i(x L / (π√(2ε)))`.
    pub fn value(&self, agent: usize, x: &[f64]) -> f64 {
        let s = self.input_scale();
        let y: Vec<f64> = x.iter().map(|v| v * s).collect();
        self.value_scale() * self.g_agent(agent, &y)
    }

    /// Exact gradient of the scaled `f_i`.
    pub fn grad(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        let s = self.input_scale();
        let y: Vec<f64> = x.iter().map(|v| v * s).collect();
        let mut g = self.g_agent_grad(agent, &y);
        let c = self.grad_scale();
        g.iter_mut().for_each(|v| *v *= c);
        g
    }
}
