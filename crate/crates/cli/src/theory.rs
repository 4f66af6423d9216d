use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use clap::Args;
use fedpd_core::algorithms::{Algorithm, InitPoint, RunConfig, Simulator};
use fedpd_core::problems::CHAIN_SMOOTHNESS;
use fedpd_core::theory_checks::{
    chain_bounds_probe, chain_lipschitz_probe, diminishing_divergence_factor, divergence_factor,
    lower_bound_trace, ChainSolver,
};
use fedpd_core::{ChainSpec, Problem};

use crate::{emit, CliError};

pub const CHECKS: [&str; 5] = [
    "lower-bound",
    "divergence",
    "diminishing",
    "lipschitz",
    "chain-bounds",
];

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    /// One of lower-bound, divergence, diminishing, lipschitz, chain-bounds.
    pub check: String,

    /// Parameters as key=value, e.g. `eta=0.5 Q=2`.
    pub params: Vec<String>,
}

/// `key=value` parameters; every key must be consumed by the check.
struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    fn parse(raw: &[String]) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for item in raw {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("expected key=value, got `{item}`")))?;
            let key = match k.trim() {
                "η" => "eta",
                "ε" => "eps",
                other => other,
            };
            values.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Config(format!("invalid value `{v}` for {key}: {e}"))),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(CliError::Config(format!("unknown parameter `{k}`"))),
        }
    }
}

struct Verdict {
    pass: bool,
    details: Vec<String>,
}

fn chain_spec(params: &mut Params) -> Result<ChainSpec, CliError> {
    let spec = ChainSpec::new(
        params.get("T", 16)?,
        params.get("N", 4)?,
        params.get("eps", 0.01)?,
        params.get("L", CHAIN_SMOOTHNESS)?,
    )?;
    Ok(spec)
}

fn lower_bound(params: &mut Params) -> Result<Verdict, CliError> {
    let spec = chain_spec(params)?;
    let stages = params.get("t", spec.chain_len - 1)?;
    let q = params.get("Q", 3usize)?;
    let eta = params.get("eta", 1.0 / spec.smoothness())?;
    let seed = params.get("seed", 0u64)?;
    let solver = match params.get("solver", "gd".to_string())?.as_str() {
        "gd" => ChainSolver::Gd,
        "sgd" => ChainSolver::Sgd,
        other => {
            return Err(CliError::Config(format!(
                "solver must be gd or sgd, got `{other}`"
            )))
        }
    };
    let trace = lower_bound_trace(spec, solver, q, eta, stages, seed)?;
    let floor = 2.0 * spec.eps / (spec.n_agents * spec.n_agents) as f64;
    let mut pass = true;
    let mut details = Vec::new();
    for pair in trace.windows(2) {
        if pair[1].frontier > pair[0].frontier + 1 {
            pass = false;
            details.push(format!(
                "frontier jumped {} -> {} at stage {}",
                pair[0].frontier, pair[1].frontier, pair[1].stage
            ));
        }
    }
    for rec in &trace {
        if rec.tail_zero && rec.gap <= floor {
            pass = false;
            details.push(format!(
                "gap {:.6e} <= {floor:.6e} at stage {} with zero tail",
                rec.gap, rec.stage
            ));
        }
    }
    let last = trace.last().expect("trace holds the initial stage");
    if stages < spec.chain_len && !last.tail_zero {
        pass = false;
    }
    let min_gap = trace
        .iter()
        .filter(|r| r.tail_zero)
        .map(|r| r.gap)
        .fold(f64::INFINITY, f64::min);
    details.insert(
        0,
        format!(
            "t={stages} Q={q} frontier={} tail_zero={} min_gap_zero_tail={min_gap:.6e} floor={floor:.6e}",
            last.frontier, last.tail_zero
        ),
    );
    Ok(Verdict { pass, details })
}

fn divergence(params: &mut Params) -> Result<Verdict, CliError> {
    let eta = params.get("eta", 0.5)?;
    let q = params.get("Q", 2usize)?;
    let stages = params.get("stages", 10usize)?;
    let d = divergence_factor(eta, q)?;
    let problem = Problem::quadratic_pair(1)?;
    let cfg = RunConfig {
        rounds: stages.max(1),
        local_steps: q,
        init: InitPoint::Fill(1.0),
        divergence_threshold: f64::MAX,
        ..RunConfig::new(Algorithm::FedAvgGd, eta)
    };
    let mut sim = Simulator::new(&problem, &cfg)?;
    let mut prev = 1.0f64;
    let mut measured = f64::NAN;
    for _ in 0..cfg.rounds {
        sim.step()?;
        let cur = sim.server_model().norm();
        measured = cur / prev;
        prev = cur;
    }
    let pass = d.factor > 1.0 && (measured - d.factor).abs() <= 1e-6 * d.factor;
    Ok(Verdict {
        pass,
        details: vec![format!(
            "eta={eta} Q={q} factor={:.12} spectrum=[{:.3e}, {:.12}] measured_after_{}_stages={measured:.12}",
            d.factor, d.spectrum[0], d.spectrum[1], cfg.rounds
        )],
    })
}

fn diminishing(params: &mut Params) -> Result<Verdict, CliError> {
    let k_max = params.get("K", 100usize)?;
    let q = params.get("Q", 2usize)?;
    let mut worst = f64::INFINITY;
    let mut worst_k = 0;
    for k in 1..=k_max {
        let f = diminishing_divergence_factor(k, q)?;
        if f < worst {
            worst = f;
            worst_k = k;
        }
    }
    Ok(Verdict {
        pass: k_max > 0 && worst > 1.0,
        details: vec![format!(
            "K={k_max} Q={q} min_lambda2={worst:.12} at k={worst_k}"
        )],
    })
}

fn lipschitz(params: &mut Params) -> Result<Verdict, CliError> {
    let spec = chain_spec(params)?;
    let probes = params.get("probes", 10_000usize)?;
    let seed = params.get("seed", 0u64)?;
    let worst = chain_lipschitz_probe(&spec, probes, seed)?;
    Ok(Verdict {
        pass: worst <= CHAIN_SMOOTHNESS,
        details: vec![format!(
            "probes={probes} max_directional_curvature={worst:.9} bound=27pi={:.9} ratio={:.6}",
            CHAIN_SMOOTHNESS,
            worst / CHAIN_SMOOTHNESS
        )],
    })
}

fn chain_bounds(params: &mut Params) -> Result<Verdict, CliError> {
    let samples = params.get("samples", 10_000usize)?;
    let seed = params.get("seed", 0u64)?;
    let rep = chain_bounds_probe(samples, seed);
    Ok(Verdict {
        pass: rep.violations() == 0,
        details: vec![format!(
            "samples={} psi_range={} phi_range={} phi_prime_range={} key_product={} violations={}",
            rep.samples,
            rep.psi_range,
            rep.phi_range,
            rep.phi_prime_range,
            rep.key_product,
            rep.violations()
        )],
    })
}

/// `theory`: prints `PASS`/`FAIL` with the measured values.
pub fn theory(args: &TheoryArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut params = Params::parse(&args.params)?;
    let verdict = match args.check.as_str() {
        "lower-bound" => lower_bound(&mut params)?,
        "divergence" => divergence(&mut params)?,
        "diminishing" => diminishing(&mut params)?,
        "lipschitz" => lipschitz(&mut params)?,
        "chain-bounds" => chain_bounds(&mut params)?,
        other => {
            return Err(CliError::Config(format!(
                "unknown check `{other}` (expected one of {})",
                CHECKS.join(", ")
            )))
        }
    };
    params.finish()?;
    let status = if verdict.pass { "PASS" } else { "FAIL" };
    emit(out, format!("{status} {}", args.check))?;
    for line in &verdict.details {
        emit(out, format!("  {line}"))?;
    }
    if verdict.pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(args.check.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(items: &[&str]) -> Params {
        Params::parse(&items.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn params_aliases_and_leftovers() {
        let mut p = params(&["η=0.25", "Q=3"]);
        assert_eq!(p.get("eta", 1.0).unwrap(), 0.25);
        assert_eq!(p.get("Q", 2usize).unwrap(), 3);
        assert_eq!(p.get("K", 7usize).unwrap(), 7);
        p.finish().unwrap();
        let p = params(&["bogus=1"]);
        assert!(matches!(p.finish(), Err(CliError::Config(_))));
        assert!(Params::parse(&["novalue".to_string()]).is_err());
        let mut p = params(&["Q=two"]);
        assert!(p.get("Q", 2usize).is_err());
    }
}
