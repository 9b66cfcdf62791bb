//! Subcommand implementations and the flag/config-file merge helpers they
//! share.
//!
//! Every command follows the same resolution order: command-line flag, then
//! the optional JSON config file (`--config`), then the built-in default.
//! Required settings missing after that merge are usage errors.

pub mod distill;
pub mod eval;
pub mod extract;
pub mod gen_data;
pub mod gen_env;
pub mod verify_theory;

use std::path::Path;

use serde::de::DeserializeOwned;

use bdt_core::dataset::BehaviorTier;
use bdt_core::distill::{AvPbcMode, Objective};
use bdt_core::mdp::TabularMdp;

use crate::errors::{file_error, CliError, CliResult};

/// Loads a command's JSON config file, or the default when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| file_error(p, e))?;
            serde_json::from_str(&text).map_err(|e| file_error(p, e))
        }
    }
}

/// Unwraps a setting that is required after the flag/file merge.
pub fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required flag {flag}")))
}

/// Parses `"5x5"`-style dimension pairs.
pub fn parse_dims(text: &str, flag: &str) -> CliResult<(usize, usize)> {
    let parse = |part: &str| part.trim().parse::<usize>().ok();
    let mut halves = text.splitn(2, ['x', 'X']);
    let pair = match (halves.next().and_then(parse), halves.next().and_then(parse)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(CliError::Usage(format!(
                "{flag} expects WIDTHxHEIGHT (e.g. 5x5), got {text:?}"
            )))
        }
    };
    Ok(pair)
}

/// Maps the hyphenated tier names used on the command line.
pub fn parse_tier(text: &str) -> CliResult<BehaviorTier> {
    match text {
        "medium" => Ok(BehaviorTier::Medium),
        "medium-replay" => Ok(BehaviorTier::MediumReplay),
        "medium-expert" => Ok(BehaviorTier::MediumExpert),
        other => Err(CliError::Usage(format!(
            "unknown tier {other:?}; expected medium, medium-replay, or medium-expert"
        ))),
    }
}

pub fn parse_objective(text: &str) -> CliResult<Objective> {
    match text {
        "dbc" => Ok(Objective::Dbc),
        "pbc" => Ok(Objective::Pbc),
        "av-pbc" => Ok(Objective::AvPbc),
        other => Err(CliError::Usage(format!(
            "unknown objective {other:?}; expected dbc, pbc, or av-pbc"
        ))),
    }
}

pub fn parse_mode(text: &str) -> CliResult<AvPbcMode> {
    match text {
        "full-sum" => Ok(AvPbcMode::FullSum),
        "sampled" => Ok(AvPbcMode::Sampled),
        other => Err(CliError::Usage(format!(
            "unknown mode {other:?}; expected full-sum or sampled"
        ))),
    }
}

/// Checks that a synthetic or extracted artifact matches the environment's
/// dimensions, naming both sides on mismatch.
pub fn check_dims_match(
    what: &str,
    n_states: usize,
    n_actions: usize,
    mdp: &TabularMdp,
) -> CliResult<()> {
    if n_states != mdp.n_states() || n_actions != mdp.n_actions() {
        return Err(CliError::Validation(format!(
            "{what} is {n_states}x{n_actions} but the environment is {}x{}",
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse_and_reject() {
        assert_eq!(parse_dims("5x5", "--gridworld").unwrap(), (5, 5));
        assert_eq!(parse_dims("12X4", "--random").unwrap(), (12, 4));
        assert!(parse_dims("5y5", "--gridworld").is_err());
        assert!(parse_dims("x5", "--gridworld").is_err());
        assert!(parse_dims("5", "--gridworld").is_err());
    }

    #[test]
    fn tier_names_are_hyphenated() {
        assert_eq!(
            parse_tier("medium-replay").unwrap(),
            BehaviorTier::MediumReplay
        );
        assert!(parse_tier("medium_replay").is_err());
        assert_eq!(
            parse_tier("medium-replay").unwrap().label(),
            "medium_replay"
        );
    }

    #[test]
    fn missing_required_flag_is_a_usage_error() {
        let err = require::<u64>(None, "--out").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("--out"));
    }
}
