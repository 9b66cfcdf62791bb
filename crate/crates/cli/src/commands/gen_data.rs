//! `gen-data`: roll out a behavior-tier policy mixture and log transitions.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use bdt_core::dataset::{build_behavior_policy, collect_dataset, BehaviorTierConfig};

use crate::commands::{load_config, parse_tier, require};
use crate::errors::CliResult;
use crate::formats::{read_mdp, write_dataset};

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Environment file produced by gen-env.
    #[arg(long, value_name = "PATH")]
    env: Option<PathBuf>,
    /// Behavior quality tier: medium, medium-replay, or medium-expert.
    #[arg(long, value_name = "TIER")]
    tier: Option<String>,
    /// Number of transitions to log [default: 100000].
    #[arg(long)]
    n: Option<usize>,
    /// RNG seed for rollouts [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset file (JSON Lines).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON config file supplying any of the above (flags win).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenDataFile {
    env: Option<PathBuf>,
    tier: Option<String>,
    n: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

pub fn run(args: GenDataArgs) -> CliResult<()> {
    let file: GenDataFile = load_config(args.config.as_deref())?;
    let env = require(args.env.or(file.env), "--env")?;
    let tier_name = require(args.tier.or(file.tier), "--tier")?;
    let tier = parse_tier(&tier_name)?;
    let n = args.n.or(file.n).unwrap_or(100_000);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = require(args.out.or(file.out), "--out")?;

    let mdp = read_mdp(&env)?;
    let tier_config = BehaviorTierConfig::tier(tier, seed);
    let behavior = build_behavior_policy(&mdp, &tier_config)?;
    let dataset = collect_dataset(&mdp, &behavior, n, seed, tier_config.label())?;

    let resolved = json!({
        "command": "gen-data",
        "env": env.display().to_string(),
        "tier": tier_name,
        "n": n,
        "seed": seed,
    });
    write_dataset(&out, &dataset, Some(resolved))?;
    println!(
        "wrote {} transitions ({}) to {}",
        dataset.len(),
        dataset.tier(),
        out.display()
    );
    Ok(())
}
