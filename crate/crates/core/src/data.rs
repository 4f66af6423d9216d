//! Synthetic datasets, CSV ingestion, sharding, and heterogeneity measurement.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problems::{spectral_norm, LossFamily, Problem, Sample};
use crate::rng::{stream, DATA_STREAM_BASE, PROBE_STREAM};
use crate::vector::ModelVec;

/// Regularization used for the synthetic classification experiments.
pub const DEFAULT_FAMILY: LossFamily = LossFamily::PenalizedLogistic {
    alpha: 1.0,
    beta: 0.1,
};

/// Default halfwidth of the label noise in the strongly heterogeneous regime.
pub const DEFAULT_NOISE_HALFWIDTH: f64 = 1.0;

/// Number of random probe points added to the origin by [`default_probes`].
pub const DEFAULT_PROBE_COUNT: usize = 50;

fn check_counts(n_agents: usize, samples_per_agent: usize, dim: usize) -> Result<()> {
    if n_agents == 0 || samples_per_agent == 0 || dim == 0 {
        return Err(invalid(format!(
            "agents ({n_agents}), samples per agent ({samples_per_agent}) and dimension ({dim}) must be positive"
        )));
    }
    Ok(())
}

fn normal_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Shards with standard-normal features and uniform ±1 labels, independent of the agent.
pub fn weak_noniid_shards(
    n_agents: usize,
    samples_per_agent: usize,
    dim: usize,
    seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    check_counts(n_agents, samples_per_agent, dim)?;
    Ok((0..n_agents)
        .map(|agent| {
            let mut rng = stream(seed, DATA_STREAM_BASE + agent as u64);
            (0..samples_per_agent)
                .map(|_| {
                    let a = normal_vec(&mut rng, dim);
                    let b = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    Sample::new(a, b)
                })
                .collect()
        })
        .collect())
}

/// Shards labelled by a private model `x_i ~ U[-10, 10]^d` per agent.
///
/// Labels are `sign(x_iᵀa + u)` with `u ~ U[-h, h]`; a zero argument maps to `+1`.
pub fn strong_noniid_shards(
    n_agents: usize,
    samples_per_agent: usize,
    dim: usize,
    noise_halfwidth: f64,
    seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    check_counts(n_agents, samples_per_agent, dim)?;
    if !(noise_halfwidth >= 0.0 && noise_halfwidth.is_finite()) {
        return Err(invalid(format!(
            "noise halfwidth must be nonnegative, got {noise_halfwidth}"
        )));
    }
    let model_dist = Uniform::new_inclusive(-10.0, 10.0).expect("valid range");
    let noise = Uniform::new_inclusive(-noise_halfwidth, noise_halfwidth).expect("valid range");
    Ok((0..n_agents)
        .map(|agent| {
            let mut rng = stream(seed, DATA_STREAM_BASE + agent as u64);
            let model: Vec<f64> = (0..dim).map(|_| model_dist.sample(&mut rng)).collect();
            (0..samples_per_agent)
                .map(|_| {
                    let a = normal_vec(&mut rng, dim);
                    let u = if noise_halfwidth > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    let z = crate::vector::dot(&model, &a) + u;
                    Sample::new(a, if z >= 0.0 { 1.0 } else { -1.0 })
                })
                .collect()
        })
        .collect())
}

/// Weakly heterogeneous penalized-logistic problem.
pub fn gen_weak_noniid(
    n_agents: usize,
    samples_per_agent: usize,
    dim: usize,
    seed: u64,
) -> Result<Problem> {
    Problem::from_shards(
        DEFAULT_FAMILY,
        weak_noniid_shards(n_agents, samples_per_agent, dim, seed)?,
    )
}

/// Strongly heterogeneous penalized-logistic problem.
pub fn gen_strong_noniid(
    n_agents: usize,
    samples_per_agent: usize,
    dim: usize,
    noise_halfwidth: f64,
    seed: u64,
) -> Result<Problem> {
    let shards = strong_noniid_shards(n_agents, samples_per_agent, dim, noise_halfwidth, seed)?;
    Problem::from_shards(DEFAULT_FAMILY, shards)
}

/// Every agent holds a copy of the same weakly generated shard (δ = 0).
pub fn identical_shards(
    n_agents: usize,
    samples_per_agent: usize,
    dim: usize,
    seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    check_counts(n_agents, samples_per_agent, dim)?;
    let shard = weak_noniid_shards(1, samples_per_agent, dim, seed)?.remove(0);
    Ok(vec![shard; n_agents])
}

/// Reads header-free `label,f1,...,fd` rows.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut samples = Vec::new();
    let mut dim = None;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let values = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column {}: {field:?}: {e}", col + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "expected a label and at least one feature".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        let d = values.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {expected} features, found {d}"),
                })
            }
            _ => {}
        }
        samples.push(Sample::new(values[1..].to_vec(), values[0]));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Deals samples to agents in turn: sample `k` goes to agent `k mod n`.
pub fn shard_round_robin(samples: Vec<Sample>, n_agents: usize) -> Result<Vec<Vec<Sample>>> {
    if n_agents == 0 {
        return Err(invalid("at least one agent is required"));
    }
    if samples.len() < n_agents {
        return Err(invalid(format!(
            "{} samples cannot fill {n_agents} agents",
            samples.len()
        )));
    }
    let mut shards = vec![Vec::new(); n_agents];
    for (k, s) in samples.into_iter().enumerate() {
        shards[k % n_agents].push(s);
    }
    Ok(shards)
}

/// Inverse of [`shard_round_robin`] for equally sized shards.
pub fn interleave(shards: &[Vec<Sample>]) -> Vec<&Sample> {
    let longest = shards.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|k| shards.iter().filter_map(move |s| s.get(k)))
        .collect()
}

/// Writes shards in round-robin order with 17 significant digits per value.
pub fn write_csv(path: impl AsRef<Path>, shards: &[Vec<Sample>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in interleave(shards) {
        write!(out, "{:.16e}", s.label)?;
        for v in &s.features {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Measured and analytic heterogeneity of a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub measured_delta: f64,
    pub analytic_bound: Option<f64>,
    pub probes_used: usize,
}

/// The origin followed by [`DEFAULT_PROBE_COUNT`] standard-normal points.
pub fn default_probes(dim: usize, seed: u64) -> Vec<ModelVec> {
    let mut rng = stream(seed, PROBE_STREAM);
    std::iter::once(ModelVec::zeros(dim))
        .chain((0..DEFAULT_PROBE_COUNT).map(|_| ModelVec::from(normal_vec(&mut rng, dim))))
        .collect()
}

/// Largest `‖∇f_i(x) - ∇f_j(x)‖` over probes and agent pairs.
pub fn estimate_delta(problem: &Problem, probes: &[ModelVec]) -> Result<HeterogeneityReport> {
    if probes.is_empty() {
        return Err(invalid("at least one probe point is required"));
    }
    let per_probe = probes
        .par_iter()
        .map(|x| {
            let grads = (0..problem.n_agents())
                .map(|a| problem.grad(a, x))
                .collect::<Result<Vec<_>>>()?;
            let mut worst = 0.0f64;
            for (i, gi) in grads.iter().enumerate() {
                for gj in &grads[i + 1..] {
                    worst = worst.max(gi.distance(gj));
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let analytic_bound = match problem.family() {
        LossFamily::PenalizedLogistic { .. } | LossFamily::Logistic => {
            Some(delta_bound_logistic(problem)?)
        }
        LossFamily::LinearRegression => delta_bound_linear(problem)?,
        _ => None,
    };
    Ok(HeterogeneityReport {
        measured_delta: per_probe.into_iter().fold(0.0, f64::max),
        analytic_bound,
        probes_used: probes.len(),
    })
}

/// `max_{i,j} ‖A_i‖/√|D_i| + ‖A_j‖/√|D_j|` for the logistic families.
///
/// Each per-sample gradient is `c·a` with `|c| ≤ 1`; the penalty is shared by
/// all agents and cancels in the difference.
pub fn delta_bound_logistic(problem: &Problem) -> Result<f64> {
    if !matches!(
        problem.family(),
        LossFamily::PenalizedLogistic { .. } | LossFamily::Logistic
    ) {
        return Err(Error::WrongFamily {
            expected: "logistic",
        });
    }
    let worst = problem
        .shards()
        .iter()
        .map(|s| spectral_norm(s) / (s.len() as f64).sqrt())
        .fold(0.0, f64::max);
    Ok(2.0 * worst)
}

/// Bound for the tanh-based loss, four times the logistic bound.
pub fn delta_bound_tanh(problem: &Problem) -> Result<f64> {
    Ok(4.0 * delta_bound_logistic(problem)?)
}

/// Exact δ for linear regression when all agents share `A_iᵀA_i / |D_i|`.
///
/// Then `∇f_i - ∇f_j = (A_jᵀb_j/|D_j| - A_iᵀb_i/|D_i|)` for every `x`. Returns
/// `None` when the normalized Gram matrices differ (δ is unbounded).
pub fn delta_bound_linear(problem: &Problem) -> Result<Option<f64>> {
    if !matches!(problem.family(), LossFamily::LinearRegression) {
        return Err(Error::WrongFamily {
            expected: "linear_regression",
        });
    }
    let d = problem.dim();
    let moments: Vec<(Vec<f64>, Vec<f64>)> = problem
        .shards()
        .iter()
        .map(|shard| {
            let m = shard.len() as f64;
            let mut gram = vec![0.0; d * d];
            let mut rhs = vec![0.0; d];
            for s in shard {
                for (r, ar) in s.features.iter().enumerate() {
                    rhs[r] += ar * s.label / m;
                    for (c, ac) in s.features.iter().enumerate() {
                        gram[r * d + c] += ar * ac / m;
                    }
                }
            }
            (gram, rhs)
        })
        .collect();
    let gram0 = &moments[0].0;
    let tol = 1e-12 * gram0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if moments
        .iter()
        .any(|(g, _)| g.iter().zip(gram0).any(|(a, b)| (a - b).abs() > tol))
    {
        return Ok(None);
    }
    let mut worst = 0.0f64;
    for (i, (_, ri)) in moments.iter().enumerate() {
        for (_, rj) in &moments[i + 1..] {
            let dist = ri
                .iter()
                .zip(rj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(dist);
        }
    }
    Ok(Some(worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            weak_noniid_shards(3, 5, 4, 9).unwrap(),
            weak_noniid_shards(3, 5, 4, 9).unwrap()
        );
        assert_ne!(
            weak_noniid_shards(3, 5, 4, 9).unwrap(),
            weak_noniid_shards(3, 5, 4, 10).unwrap()
        );
        assert_eq!(
            strong_noniid_shards(3, 5, 4, 1.0, 9).unwrap(),
            strong_noniid_shards(3, 5, 4, 1.0, 9).unwrap()
        );
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(gen_weak_noniid(0, 5, 2, 1).is_err());
        assert!(gen_strong_noniid(2, 0, 2, 1.0, 1).is_err());
        assert!(gen_strong_noniid(2, 3, 2, -1.0, 1).is_err());
    }

    #[test]
    fn round_robin_four_rows_two_agents() {
        let rows: Vec<Sample> = (1..=4).map(|k| Sample::new(vec![k as f64], 1.0)).collect();
        let shards = shard_round_robin(rows, 2).unwrap();
        let ids = |s: &Vec<Sample>| s.iter().map(|x| x.features[0]).collect::<Vec<_>>();
        assert_eq!(ids(&shards[0]), vec![1.0, 3.0]);
        assert_eq!(ids(&shards[1]), vec![2.0, 4.0]);
    }

    #[test]
    fn identical_shards_have_zero_delta() {
        let p =
            Problem::from_shards(DEFAULT_FAMILY, identical_shards(4, 10, 3, 2).unwrap()).unwrap();
        let r = estimate_delta(&p, &default_probes(3, 0)).unwrap();
        assert_eq!(r.measured_delta, 0.0);
        assert_eq!(r.probes_used, DEFAULT_PROBE_COUNT + 1);
    }

    #[test]
    fn quadratic_pair_delta_is_linear_in_radius() {
        let p = Problem::quadratic_pair(1).unwrap();
        for r in [1.0, 3.0, 10.0] {
            let rep = estimate_delta(&p, &[ModelVec::from(vec![r])]).unwrap();
            assert_eq!(rep.measured_delta, 2.0 * r);
            assert_eq!(rep.analytic_bound, None);
        }
    }
}
