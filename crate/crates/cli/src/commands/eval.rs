//! `eval`: clone a synthetic dataset across seeds and score it exactly.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use bdt_core::eval::{ensemble, evaluate_seed, summarize, EvalContext, EvalProtocol, SeedOutcome};
use bdt_core::policy::OptimizerSpec;

use crate::commands::{check_dims_match, load_config, require};
use crate::errors::{CliError, CliResult};
use crate::formats::{read_mdp, read_synthetic, write_eval_csv, write_json};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Environment file.
    #[arg(long, value_name = "PATH")]
    env: Option<PathBuf>,
    /// Synthetic dataset file produced by distill.
    #[arg(long, value_name = "PATH")]
    syn: Option<PathBuf>,
    /// Cloning gradient steps per seed [default: 500].
    #[arg(long)]
    steps: Option<usize>,
    /// Cloning learning rate [default: 0.1].
    #[arg(long)]
    lr: Option<f64>,
    /// Number of training seeds [default: 5].
    #[arg(long)]
    seeds: Option<usize>,
    /// First training seed [default: 0].
    #[arg(long)]
    master_seed: Option<u64>,
    /// Also score a probability-averaged ensemble of this many members.
    #[arg(long, value_name = "K")]
    ensemble: Option<usize>,
    /// Worker threads across seeds [default: 1].
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Output per-seed results file (CSV).
    #[arg(long, value_name = "PATH")]
    out_csv: Option<PathBuf>,
    /// Output summary file (JSON).
    #[arg(long, value_name = "PATH")]
    out_json: Option<PathBuf>,
    /// JSON config file supplying any of the above (flags win).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    env: Option<PathBuf>,
    syn: Option<PathBuf>,
    steps: Option<usize>,
    lr: Option<f64>,
    seeds: Option<usize>,
    master_seed: Option<u64>,
    ensemble: Option<usize>,
    jobs: Option<usize>,
    out_csv: Option<PathBuf>,
    out_json: Option<PathBuf>,
}

/// Runs the per-seed evaluations, fanning out over `jobs` threads while
/// keeping the output order fixed by seed index.
fn run_seeds(
    ctx: &EvalContext,
    syn: &bdt_core::distill::SyntheticDataset,
    protocol: &EvalProtocol,
    master_seed: u64,
    jobs: usize,
) -> CliResult<Vec<SeedOutcome>> {
    let seeds: Vec<u64> = (0..protocol.n_seeds)
        .map(|i| master_seed.wrapping_add(i as u64))
        .collect();
    if jobs <= 1 {
        return seeds
            .iter()
            .map(|&s| evaluate_seed(ctx, syn, protocol, s).map_err(CliError::from))
            .collect();
    }
    let mut results: Vec<Option<bdt_core::Result<SeedOutcome>>> = Vec::new();
    results.resize_with(seeds.len(), || None);
    std::thread::scope(|scope| {
        for (chunk_seeds, chunk_out) in seeds
            .chunks(jobs.max(1))
            .zip(results.chunks_mut(jobs.max(1)))
        {
            // Chunks of size `jobs` with one thread per element keeps at
            // most `jobs` workers alive at a time.
            let mut handles = Vec::new();
            for (&s, slot) in chunk_seeds.iter().zip(chunk_out.iter_mut()) {
                handles.push(scope.spawn(move || {
                    *slot = Some(evaluate_seed(ctx, syn, protocol, s));
                }));
            }
            for h in handles {
                let _ = h.join();
            }
        }
    });
    results
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|| {
                Err(bdt_core::Error::Invalid(
                    "evaluation thread panicked".into(),
                ))
            })
            .map_err(CliError::from)
        })
        .collect()
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    let file: EvalFile = load_config(args.config.as_deref())?;
    let env = require(args.env.or(file.env), "--env")?;
    let syn_path = require(args.syn.or(file.syn), "--syn")?;
    let steps = args.steps.or(file.steps).unwrap_or(500);
    let lr = args.lr.or(file.lr).unwrap_or(0.1);
    let n_seeds = args.seeds.or(file.seeds).unwrap_or(5);
    let master_seed = args.master_seed.or(file.master_seed).unwrap_or(0);
    let ensemble_k = args.ensemble.or(file.ensemble);
    let jobs = args.jobs.or(file.jobs).unwrap_or(1);
    let out_csv = args.out_csv.or(file.out_csv);
    let out_json = args.out_json.or(file.out_json);

    let mdp = read_mdp(&env)?;
    let syn = read_synthetic(&syn_path)?;
    check_dims_match("synthetic dataset", syn.state_dim(), syn.n_actions(), &mdp)?;

    let ctx = EvalContext::new(&mdp)?;
    let mut protocol = EvalProtocol::defaults(mdp.n_states(), mdp.n_actions());
    protocol.training_steps = steps;
    protocol.optimizer = OptimizerSpec::gd(lr);
    protocol.n_seeds = n_seeds;

    let outcomes = run_seeds(&ctx, &syn, &protocol, master_seed, jobs)?;
    let evaluation = summarize(outcomes)?;

    let ens = match ensemble_k {
        None => None,
        Some(k) => {
            let seeds: Vec<u64> = (0..k).map(|i| master_seed.wrapping_add(i as u64)).collect();
            Some(ensemble(&ctx, &syn, &protocol, &seeds)?)
        }
    };

    let resolved = json!({
        "command": "eval",
        "env": env.display().to_string(),
        "syn": syn_path.display().to_string(),
        "steps": steps,
        "lr": lr,
        "seeds": n_seeds,
        "master_seed": master_seed,
        "ensemble": ensemble_k,
        "jobs": jobs,
    });

    if let Some(path) = &out_csv {
        let line =
            serde_json::to_string(&resolved).map_err(|e| CliError::Validation(e.to_string()))?;
        write_eval_csv(path, &evaluation, &line)?;
    }
    if let Some(path) = &out_json {
        let doc = json!({
            "config": resolved,
            "j_random": ctx.j_random(),
            "j_expert": ctx.j_expert(),
            "mean_j": evaluation.mean_j,
            "mean_normalized": evaluation.mean_normalized,
            "std_normalized": evaluation.std_normalized,
            "outcomes": evaluation
                .outcomes
                .iter()
                .map(|o| json!({ "seed": o.seed, "j": o.j, "normalized": o.normalized }))
                .collect::<Vec<_>>(),
            "ensemble": ens.map(|e| json!({
                "n_members": e.n_members,
                "j": e.j,
                "normalized": e.normalized,
            })),
        });
        write_json(path, &doc)?;
    }

    match ens {
        Some(e) => println!(
            "normalized return {:.2} +- {:.2} over {} seeds; ensemble of {}: {:.2}",
            evaluation.mean_normalized,
            evaluation.std_normalized,
            n_seeds,
            e.n_members,
            e.normalized
        ),
        None => println!(
            "normalized return {:.2} +- {:.2} over {} seeds",
            evaluation.mean_normalized, evaluation.std_normalized, n_seeds
        ),
    }
    Ok(())
}
