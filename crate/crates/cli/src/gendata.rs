use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use fedpd_core::config::ProblemSpec;
use fedpd_core::data::{
    strong_noniid_shards, weak_noniid_shards, write_csv, DEFAULT_FAMILY, DEFAULT_NOISE_HALFWIDTH,
};
use serde_json::json;

use crate::{emit, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Args)]
pub struct GendataArgs {
    #[arg(value_enum)]
    pub kind: DataKind,

    #[arg(long)]
    pub agents: usize,

    /// Samples per agent.
    #[arg(long)]
    pub samples: usize,

    #[arg(long)]
    pub dim: usize,

    /// Label-noise halfwidth (strong only).
    #[arg(long, default_value_t = DEFAULT_NOISE_HALFWIDTH)]
    pub noise: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Destination CSV; generator parameters go to the same path with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

/// `gendata`: writes a dataset CSV and a sidecar JSON describing how it was made.
pub fn gendata(args: &GendataArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let (shards, generator) = match args.kind {
        DataKind::Weak => (
            weak_noniid_shards(args.agents, args.samples, args.dim, args.seed)?,
            ProblemSpec::Weak {
                agents: args.agents,
                samples_per_agent: args.samples,
                dim: args.dim,
                seed: args.seed,
                family: DEFAULT_FAMILY,
                lipschitz: None,
            },
        ),
        DataKind::Strong => (
            strong_noniid_shards(args.agents, args.samples, args.dim, args.noise, args.seed)?,
            ProblemSpec::Strong {
                agents: args.agents,
                samples_per_agent: args.samples,
                dim: args.dim,
                noise_halfwidth: args.noise,
                seed: args.seed,
                family: DEFAULT_FAMILY,
                lipschitz: None,
            },
        ),
    };
    write_csv(&args.out, &shards).map_err(|e| CliError::io(args.out.display(), e))?;

    let sidecar = args.out.with_extension("json");
    let loader = ProblemSpec::Csv {
        path: args
            .out
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_else(|| args.out.clone()),
        agents: args.agents,
        family: DEFAULT_FAMILY,
        lipschitz: None,
    };
    let doc = json!({ "generator": generator, "problem": loader });
    let text =
        serde_json::to_string_pretty(&doc).map_err(|e| CliError::io(sidecar.display(), e))? + "\n";
    std::fs::write(&sidecar, text).map_err(|e| CliError::io(sidecar.display(), e))?;
    emit(
        out,
        format!(
            "wrote {} ({} rows) and {}",
            args.out.display(),
            args.agents * args.samples,
            sidecar.display()
        ),
    )
}
