//! `extract`: pessimistic planning on the empirical MDP of a logged dataset.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use bdt_core::extractor::{extract, ExtractionConfig};

use crate::commands::{load_config, require};
use crate::errors::{CliError, CliResult};
use crate::formats::{read_dataset, read_mdp, write_extraction};

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Environment file (supplies the discount factor and dimensions).
    #[arg(long, value_name = "PATH")]
    env: Option<PathBuf>,
    /// Dataset file produced by gen-data.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Reward penalty at under-visited pairs [default: max observed reward].
    #[arg(long)]
    penalty: Option<f64>,
    /// Visit count below which a pair is penalized [default: 1].
    #[arg(long)]
    count_threshold: Option<usize>,
    /// Softmax temperature of the extracted policy [default: 0.05].
    #[arg(long)]
    tau: Option<f64>,
    /// Value-iteration convergence tolerance [default: 1e-10].
    #[arg(long)]
    vi_tol: Option<f64>,
    /// Value-iteration step limit [default: 1000000].
    #[arg(long)]
    vi_max_iter: Option<usize>,
    /// Output extraction file (JSON).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON config file supplying any of the above (flags win).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExtractFile {
    env: Option<PathBuf>,
    data: Option<PathBuf>,
    penalty: Option<f64>,
    count_threshold: Option<usize>,
    tau: Option<f64>,
    vi_tol: Option<f64>,
    vi_max_iter: Option<usize>,
    out: Option<PathBuf>,
}

pub fn run(args: ExtractArgs) -> CliResult<()> {
    let file: ExtractFile = load_config(args.config.as_deref())?;
    let env = require(args.env.or(file.env), "--env")?;
    let data = require(args.data.or(file.data), "--data")?;
    let out = require(args.out.or(file.out), "--out")?;

    let mdp = read_mdp(&env)?;
    let dataset = read_dataset(&data)?;
    dataset
        .validate_against(&mdp)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let mut config = ExtractionConfig::new(mdp.gamma());
    config.pessimism_penalty = args.penalty.or(file.penalty);
    if let Some(v) = args.count_threshold.or(file.count_threshold) {
        config.count_threshold = v;
    }
    if let Some(v) = args.tau.or(file.tau) {
        config.softmax_tau = v;
    }
    if let Some(v) = args.vi_tol.or(file.vi_tol) {
        config.vi_tol = v;
    }
    if let Some(v) = args.vi_max_iter.or(file.vi_max_iter) {
        config.vi_max_iter = v;
    }

    let result = extract(&dataset, &config)?;
    let meta = json!({
        "command": "extract",
        "env": env.display().to_string(),
        "data": data.display().to_string(),
    });
    write_extraction(&out, &result, Some(meta))?;
    let max_q = result
        .q_star
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "wrote extraction for {} states (max q {:.4}) to {}",
        result.pi_star.n_states(),
        max_q,
        out.display()
    );
    Ok(())
}
