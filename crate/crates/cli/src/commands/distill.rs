//! `distill`: bi-level synthesis of a small cloning set from logged data.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use bdt_core::distill::{distill, DistillConfig};

use crate::commands::{check_dims_match, load_config, parse_mode, parse_objective, require};
use crate::errors::{CliError, CliResult};
use crate::formats::{read_dataset, read_extraction, read_mdp, write_report_csv, write_synthetic};

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Environment file.
    #[arg(long, value_name = "PATH")]
    env: Option<PathBuf>,
    /// Dataset file produced by gen-data.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Outer objective: dbc, pbc, or av-pbc [default: av-pbc].
    #[arg(long, value_name = "NAME")]
    objective: Option<String>,
    /// Extraction file; required for pbc and av-pbc.
    #[arg(long, value_name = "PATH")]
    extraction: Option<PathBuf>,
    /// Av-PBC weighting mode: full-sum or sampled [default: full-sum].
    #[arg(long, value_name = "NAME")]
    mode: Option<String>,
    /// Synthetic states to learn [default: 16].
    #[arg(long)]
    n_syn: Option<usize>,
    /// Inner cloning steps unrolled per outer step [default: 30].
    #[arg(long)]
    inner_steps: Option<usize>,
    /// Outer optimization steps [default: 2000].
    #[arg(long)]
    outer_steps: Option<usize>,
    /// Inner learning rate [default: 0.1].
    #[arg(long)]
    inner_lr: Option<f64>,
    /// Inner momentum [default: 0.0].
    #[arg(long)]
    inner_momentum: Option<f64>,
    /// Outer learning rate [default: 0.1].
    #[arg(long)]
    outer_lr: Option<f64>,
    /// Outer momentum [default: 0.9].
    #[arg(long)]
    outer_momentum: Option<f64>,
    /// Logged transitions sampled per outer step [default: 64].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Outer steps between evaluation records [default: 100].
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Base RNG seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output synthetic dataset file (JSON).
    #[arg(long, value_name = "PATH")]
    out_syn: Option<PathBuf>,
    /// Output learning-curve file (CSV).
    #[arg(long, value_name = "PATH")]
    out_report: Option<PathBuf>,
    /// JSON config file supplying any of the above (flags win).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DistillFile {
    env: Option<PathBuf>,
    data: Option<PathBuf>,
    objective: Option<String>,
    extraction: Option<PathBuf>,
    mode: Option<String>,
    n_syn: Option<usize>,
    inner_steps: Option<usize>,
    outer_steps: Option<usize>,
    inner_lr: Option<f64>,
    inner_momentum: Option<f64>,
    outer_lr: Option<f64>,
    outer_momentum: Option<f64>,
    batch_size: Option<usize>,
    eval_interval: Option<usize>,
    seed: Option<u64>,
    out_syn: Option<PathBuf>,
    out_report: Option<PathBuf>,
}

pub fn run(args: DistillArgs) -> CliResult<()> {
    let file: DistillFile = load_config(args.config.as_deref())?;
    let env = require(args.env.or(file.env), "--env")?;
    let data = require(args.data.or(file.data), "--data")?;
    let objective_name = args
        .objective
        .or(file.objective)
        .unwrap_or_else(|| "av-pbc".to_string());
    let objective = parse_objective(&objective_name)?;
    let mode_name = args
        .mode
        .or(file.mode)
        .unwrap_or_else(|| "full-sum".to_string());
    let mode = parse_mode(&mode_name)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out_syn = require(args.out_syn.or(file.out_syn), "--out-syn")?;
    let out_report = require(args.out_report.or(file.out_report), "--out-report")?;

    let mdp = read_mdp(&env)?;
    let dataset = read_dataset(&data)?;
    dataset
        .validate_against(&mdp)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let extraction_path = args.extraction.or(file.extraction);
    let extraction = if objective.needs_extraction() {
        let path = extraction_path.as_deref().ok_or_else(|| {
            CliError::Validation(format!(
                "objective {objective_name} needs an extracted policy; pass --extraction"
            ))
        })?;
        let ex = read_extraction(path)?;
        check_dims_match(
            "extraction",
            ex.pi_star.n_states(),
            ex.pi_star.n_actions(),
            &mdp,
        )?;
        if ex.config.gamma != mdp.gamma() {
            return Err(CliError::Validation(format!(
                "extraction was built with gamma {} but the environment has gamma {}",
                ex.config.gamma,
                mdp.gamma()
            )));
        }
        Some(ex)
    } else {
        None
    };

    let mut config = DistillConfig::new(objective, seed);
    config.av_pbc_mode = mode;
    if let Some(v) = args.n_syn.or(file.n_syn) {
        config.n_syn = v;
    }
    if let Some(v) = args.inner_steps.or(file.inner_steps) {
        config.inner_steps = v;
    }
    if let Some(v) = args.outer_steps.or(file.outer_steps) {
        config.outer_steps = v;
    }
    if let Some(v) = args.inner_lr.or(file.inner_lr) {
        config.inner_lr = v;
    }
    if let Some(v) = args.inner_momentum.or(file.inner_momentum) {
        config.inner_momentum = v;
    }
    if let Some(v) = args.outer_lr.or(file.outer_lr) {
        config.outer_lr = v;
    }
    if let Some(v) = args.outer_momentum.or(file.outer_momentum) {
        config.outer_momentum = v;
    }
    if let Some(v) = args.batch_size.or(file.batch_size) {
        config.batch_size = v;
    }
    if let Some(v) = args.eval_interval.or(file.eval_interval) {
        config.eval_interval = v;
    }

    let resolved = json!({
        "command": "distill",
        "env": env.display().to_string(),
        "data": data.display().to_string(),
        "extraction": extraction_path.as_ref().map(|p| p.display().to_string()),
        "objective": objective_name,
        "mode": mode_name,
        "n_syn": config.n_syn,
        "inner_steps": config.inner_steps,
        "outer_steps": config.outer_steps,
        "inner_lr": config.inner_lr,
        "inner_momentum": config.inner_momentum,
        "outer_lr": config.outer_lr,
        "outer_momentum": config.outer_momentum,
        "batch_size": config.batch_size,
        "eval_interval": config.eval_interval,
        "seed": seed,
    });

    let report = distill(&mdp, &dataset, extraction.as_ref(), &config)?;
    write_synthetic(&out_syn, &report.synthetic, Some(resolved.clone()))?;
    let config_line =
        serde_json::to_string(&resolved).map_err(|e| CliError::Validation(e.to_string()))?;
    write_report_csv(&out_report, &report, &config_line)?;

    let last = report.records.last();
    println!(
        "distilled {} synthetic states with {}; final normalized return {:.2} ({} records) -> {}, {}",
        report.synthetic.n_syn(),
        objective_name,
        last.map_or(f64::NAN, |r| r.return_mean),
        report.records.len(),
        out_syn.display(),
        out_report.display()
    );
    Ok(())
}
