//! Executable checks of the lower-bound chain and the FedAvg divergence examples.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::algorithms::{local_steps_round, AgentState, Algorithm, RunConfig};
use crate::error::{invalid, Result};
use crate::metrics::stationarity_gap;
use crate::problems::{phi, phi_prime, psi, ChainSpec, Problem};
use crate::rng::stream;
use crate::vector::ModelVec;

/// Largest index `j` with `|x[j]| > tol`, or 0 when there is none.
pub fn support_frontier(x: &[f64], tol: f64) -> usize {
    x.iter().rposition(|v| v.abs() > tol).unwrap_or(0)
}

/// Local solver used on the chain instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainSolver {
    Gd,
    Sgd,
}

/// State of the averaged model after one aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub frontier: usize,
    pub tail_zero: bool,
    pub gap: f64,
}

/// Support of the averaged model after `comm_rounds` aggregations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub comm_rounds: usize,
    /// Frontier of the averaged model (exact zeros, `tol = 0`).
    pub frontier: usize,
    /// Last chain coordinate of the averaged model is exactly zero.
    pub tail_zero: bool,
    /// Largest frontier over local iterates after a further local-only phase.
    pub local_frontier: usize,
    pub gap: f64,
}

fn chain_setup(
    spec: ChainSpec,
    solver: ChainSolver,
    local_steps: usize,
    eta: f64,
    seed: u64,
) -> Result<(Problem, RunConfig, Vec<AgentState>)> {
    let problem = Problem::chain(spec)?;
    let algorithm = match solver {
        ChainSolver::Gd => Algorithm::FedAvgGd,
        ChainSolver::Sgd => Algorithm::FedAvgSgd,
    };
    let cfg = RunConfig {
        local_steps,
        seed,
        divergence_threshold: f64::MAX,
        ..RunConfig::new(algorithm, eta)
    }
    .resolved(&problem)?;
    let states = (0..spec.n_agents)
        .map(|i| AgentState::new(i, ModelVec::zeros(spec.dim()), seed))
        .collect();
    Ok((problem, cfg, states))
}

fn stage_record(problem: &Problem, stage: usize, x: &ModelVec) -> Result<StageRecord> {
    Ok(StageRecord {
        stage,
        frontier: support_frontier(x, 0.0),
        tail_zero: x[x.dim() - 1] == 0.0,
        gap: stationarity_gap(problem, x)?,
    })
}

/// FedAvg from zero on the chain, recording the averaged model after every
/// aggregation; entry 0 is the initial point.
pub fn lower_bound_trace(
    spec: ChainSpec,
    solver: ChainSolver,
    local_steps: usize,
    eta: f64,
    comm_rounds: usize,
    seed: u64,
) -> Result<Vec<StageRecord>> {
    let (problem, cfg, mut states) = chain_setup(spec, solver, local_steps, eta, seed)?;
    let mut x = ModelVec::zeros(spec.dim());
    let mut out = vec![stage_record(&problem, 0, &x)?];
    for stage in 0..comm_rounds {
        x = local_steps_round(&problem, &mut states, &x, stage, &cfg)?.x0;
        out.push(stage_record(&problem, stage + 1, &x)?);
    }
    Ok(out)
}

/// Runs `comm_rounds` FedAvg stages from zero and reports the support of the
/// averaged model, plus the support reached by one more local-only phase.
pub fn lower_bound_run(
    spec: ChainSpec,
    solver: ChainSolver,
    local_steps: usize,
    eta: f64,
    comm_rounds: usize,
    seed: u64,
) -> Result<FrontierReport> {
    let (problem, cfg, mut states) = chain_setup(spec, solver, local_steps, eta, seed)?;
    let mut x = ModelVec::zeros(spec.dim());
    for stage in 0..comm_rounds {
        x = local_steps_round(&problem, &mut states, &x, stage, &cfg)?.x0;
    }
    local_steps_round(&problem, &mut states, &x, comm_rounds, &cfg)?;
    let local_frontier = states
        .iter()
        .map(|s| support_frontier(&s.x, 0.0))
        .max()
        .unwrap_or(0);
    let rec = stage_record(&problem, comm_rounds, &x)?;
    Ok(FrontierReport {
        comm_rounds,
        frontier: rec.frontier,
        tail_zero: rec.tail_zero,
        local_frontier,
        gap: rec.gap,
    })
}

/// Nonzero eigenvalue of the FedAvg stage map on the quadratic pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFactor {
    /// `((1+η)^Q + (1-η)^Q) / 2`.
    pub factor: f64,
    /// Eigenvalues of `½ D^{Q-1} 11ᵀ D`, `D = diag(1-η, 1+η)`, in ascending order.
    pub spectrum: [f64; 2],
}

/// Eigenvalues of a real 2×2 matrix with real spectrum, ascending.
fn eig2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    [tr / 2.0 - disc, tr / 2.0 + disc]
}

pub fn divergence_factor(eta: f64, local_steps: usize) -> Result<DivergenceFactor> {
    if local_steps < 2 {
        return Err(invalid(format!(
            "divergence needs Q >= 2, got {local_steps}"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    let q = local_steps as i32;
    let d = [1.0 - eta, 1.0 + eta];
    let factor = (d[1].powi(q) + d[0].powi(q)) / 2.0;
    let m = [
        [0.5 * d[0].powi(q - 1) * d[0], 0.5 * d[0].powi(q - 1) * d[1]],
        [0.5 * d[1].powi(q - 1) * d[0], 0.5 * d[1].powi(q - 1) * d[1]],
    ];
    Ok(DivergenceFactor {
        factor,
        spectrum: eig2(m),
    })
}

/// `λ₂` of the cycle map under `η^r = 1/√r` with `η^{kQ+1} = 1/2`:
/// `¼∏_{r=kQ+2}^{(k+1)Q-1}(1-1/√r)(1-1/√(kQ)) + ¾∏(1+1/√r)(1+1/√(kQ))`.
pub fn diminishing_divergence_factor(k: usize, local_steps: usize) -> Result<f64> {
    if k == 0 || local_steps < 2 {
        return Err(invalid("diminishing factor needs k >= 1 and Q >= 2"));
    }
    let kq = (k * local_steps) as f64;
    let (mut lo, mut hi) = (1.0 - 1.0 / kq.sqrt(), 1.0 + 1.0 / kq.sqrt());
    for r in k * local_steps + 2..(k + 1) * local_steps {
        let s = 1.0 / (r as f64).sqrt();
        lo *= 1.0 - s;
        hi *= 1.0 + s;
    }
    Ok(0.25 * lo + 0.75 * hi)
}

/// Growth of the averaged model over round `round` (0-based) of FedAvg on the
/// quadratic pair with the half-restart schedule:
/// `¼∏_{s=rQ+2}^{(r+1)Q}(1-1/√s) + ¾∏(1+1/√s)`.
pub fn diminishing_stage_amplification(round: usize, local_steps: usize) -> f64 {
    let (mut lo, mut hi) = (1.0, 1.0);
    for s in round * local_steps + 2..=(round + 1) * local_steps {
        let e = 1.0 / (s as f64).sqrt();
        lo *= 1.0 - e;
        hi *= 1.0 + e;
    }
    0.25 * lo + 0.75 * hi
}

fn probe_point(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    let u = Uniform::new_inclusive(-radius, radius).expect("valid range");
    (0..dim)
        .map(|_| loop {
            let v: f64 = u.sample(rng);
            if v.abs() >= 1e-9 {
                break v;
            }
        })
        .collect()
}

fn unit_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Directional curvature `vᵀ(∇g_i(y+hv) - ∇g_i(y-hv)) / (2h)` of the unscaled `g_i`.
pub fn directional_curvature(spec: &ChainSpec, agent: usize, y: &[f64], v: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = y.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = y.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let gp = spec.g_agent_grad(agent, &plus);
    let gm = spec.g_agent_grad(agent, &minus);
    v.iter()
        .zip(gp.iter().zip(&gm))
        .map(|(d, (p, m))| d * (p - m))
        .sum::<f64>()
        / (2.0 * h)
}

/// Largest `|ℓ″|` over random points in `[-3, 3]^d`, unit directions and agents.
pub fn chain_lipschitz_probe(spec: &ChainSpec, n_probes: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    if n_probes == 0 {
        return Err(invalid("at least one probe is required"));
    }
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    for k in 0..n_probes {
        let y = probe_point(&mut rng, spec.dim(), 3.0);
        let v = unit_direction(&mut rng, spec.dim());
        let agent = k % spec.n_agents;
        worst = worst.max(directional_curvature(spec, agent, &y, &v, 1e-5).abs());
    }
    Ok(worst)
}

/// Violations of the scalar bounds on `Ψ`, `Φ`, `Φ'` and `ΨΦ'`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainBoundsReport {
    pub samples: usize,
    pub psi_range: usize,
    pub phi_range: usize,
    pub phi_prime_range: usize,
    pub key_product: usize,
}

impl ChainBoundsReport {
    pub fn violations(&self) -> usize {
        self.psi_range + self.phi_range + self.phi_prime_range + self.key_product
    }
}

/// Samples `w, v` and checks `0 ≤ Ψ(w) < 1`, `0 < Φ(w) < 4π`, `0 < Φ'(w) ≤ 4`,
/// and `Ψ(w)Φ'(v) > 1` for `w ≥ 1`, `|v| < 1`.
pub fn chain_bounds_probe(n_samples: usize, seed: u64) -> ChainBoundsReport {
    let mut rng = stream(seed, 1);
    let psi_w = Uniform::new_inclusive(-5.0, 5.0).expect("valid range");
    let phi_w = Uniform::new_inclusive(-10.0, 10.0).expect("valid range");
    let key_w = Uniform::new_inclusive(1.0, 5.0).expect("valid range");
    let key_v = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut rep = ChainBoundsReport {
        samples: n_samples,
        ..Default::default()
    };
    for _ in 0..n_samples {
        let w = psi_w.sample(&mut rng);
        let s = psi(w);
        rep.psi_range += !(0.0..1.0).contains(&s) as usize;
        let w = phi_w.sample(&mut rng);
        let f = phi(w);
        rep.phi_range += !(f > 0.0 && f < 4.0 * PI) as usize;
        let d = phi_prime(w);
        rep.phi_prime_range += !(d > 0.0 && d <= 4.0) as usize;
        let (w, v) = (key_w.sample(&mut rng), key_v.sample(&mut rng));
        rep.key_product += (psi(w) * phi_prime(v) <= 1.0) as usize;
    }
    rep
}

/// Largest observed `f(0) - f(x)` for the scaled chain average over random points.
///
/// Points are drawn in chain coordinates uniformly from `[-radius, radius]^d`.
pub fn chain_value_drop(spec: &ChainSpec, n_probes: usize, radius: f64, seed: u64) -> Result<f64> {
    spec.validate()?;
    let problem = Problem::chain(*spec)?;
    let scale = spec.input_scale();
    let f0 = problem.global_loss(&ModelVec::zeros(spec.dim()))?;
    let mut rng = stream(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let y = probe_point(&mut rng, spec.dim(), radius);
        let x = ModelVec::from(y.into_iter().map(|v| v / scale).collect::<Vec<_>>());
        worst = worst.max(f0 - problem.global_loss(&x)?);
    }
    Ok(worst)
}

/// `(10π²ε / (LN)) T`, the bound on `f(0) - inf f`.
pub fn chain_value_bound(spec: &ChainSpec) -> f64 {
    10.0 * PI * PI * spec.eps / (spec.lipschitz * spec.n_agents as f64) * spec.chain_len as f64
}
