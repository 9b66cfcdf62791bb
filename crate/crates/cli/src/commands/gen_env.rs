//! `gen-env`: write a gridworld or random MDP environment file.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use bdt_core::dataset::{make_gridworld, make_random_mdp};

use crate::commands::{load_config, parse_dims, require};
use crate::errors::{CliError, CliResult};
use crate::formats::write_mdp;

#[derive(Args, Debug)]
pub struct GenEnvArgs {
    /// Gridworld dimensions as WIDTHxHEIGHT (e.g. 5x5).
    #[arg(long, value_name = "WxH")]
    gridworld: Option<String>,
    /// Random MDP dimensions as STATESxACTIONS (e.g. 12x4).
    #[arg(long, value_name = "SxA", conflicts_with = "gridworld")]
    random: Option<String>,
    /// Gridworld reward for reaching the goal [default: 1.0].
    #[arg(long)]
    goal_reward: Option<f64>,
    /// Gridworld per-step reward [default: 0.0].
    #[arg(long)]
    step_reward: Option<f64>,
    /// Gridworld probability of slipping to a random direction [default: 0.1].
    #[arg(long)]
    slip: Option<f64>,
    /// Random MDP successors per (state, action) [default: 3].
    #[arg(long)]
    branching: Option<usize>,
    /// Random MDP fraction of zero rewards [default: 0.5].
    #[arg(long)]
    reward_sparsity: Option<f64>,
    /// Discount factor in [0, 1) [default: 0.95].
    #[arg(long)]
    gamma: Option<f64>,
    /// RNG seed for random MDP generation [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output environment file (JSON).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON config file supplying any of the above (flags win).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenEnvFile {
    gridworld: Option<String>,
    random: Option<String>,
    goal_reward: Option<f64>,
    step_reward: Option<f64>,
    slip: Option<f64>,
    branching: Option<usize>,
    reward_sparsity: Option<f64>,
    gamma: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

pub fn run(args: GenEnvArgs) -> CliResult<()> {
    let file: GenEnvFile = load_config(args.config.as_deref())?;
    let gridworld = args.gridworld.or(file.gridworld);
    let random = args.random.or(file.random);
    let gamma = args.gamma.or(file.gamma).unwrap_or(0.95);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = require(args.out.or(file.out), "--out")?;

    let (mdp, resolved) = match (gridworld, random) {
        (Some(dims), None) => {
            let (width, height) = parse_dims(&dims, "--gridworld")?;
            let goal_reward = args.goal_reward.or(file.goal_reward).unwrap_or(1.0);
            let step_reward = args.step_reward.or(file.step_reward).unwrap_or(0.0);
            let slip = args.slip.or(file.slip).unwrap_or(0.1);
            let mdp = make_gridworld(width, height, goal_reward, step_reward, slip, gamma)?;
            let resolved = json!({
                "kind": "gridworld",
                "width": width,
                "height": height,
                "goal_reward": goal_reward,
                "step_reward": step_reward,
                "slip": slip,
                "gamma": gamma,
            });
            (mdp, resolved)
        }
        (None, Some(dims)) => {
            let (n_states, n_actions) = parse_dims(&dims, "--random")?;
            let branching = args.branching.or(file.branching).unwrap_or(3);
            let sparsity = args.reward_sparsity.or(file.reward_sparsity).unwrap_or(0.5);
            let mdp = make_random_mdp(n_states, n_actions, branching, sparsity, gamma, seed)?;
            let resolved = json!({
                "kind": "random",
                "n_states": n_states,
                "n_actions": n_actions,
                "branching": branching,
                "reward_sparsity": sparsity,
                "gamma": gamma,
                "seed": seed,
            });
            (mdp, resolved)
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --gridworld or --random is required".to_string(),
            ))
        }
    };

    write_mdp(
        &out,
        &mdp,
        Some(json!({ "command": "gen-env", "config": resolved })),
    )?;
    println!(
        "wrote environment {}x{} (gamma {}) to {}",
        mdp.n_states(),
        mdp.n_actions(),
        mdp.gamma(),
        out.display()
    );
    Ok(())
}
