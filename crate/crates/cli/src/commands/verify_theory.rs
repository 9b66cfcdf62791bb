//! `verify-theory`: sweep random policy triples through the exact gap
//! identity and every bound, plus the equality-achieving construction.
//!
//! Exits with status 3 if any identity residual, bound, or tightness check
//! fails; the optional JSON report records worst-case margins.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use bdt_core::theory::{
    bound_report, check_qweighted_bound, construct_tight_case, random_triple, BoundReport,
};

use crate::commands::load_config;
use crate::errors::{CliError, CliResult};
use crate::formats::write_json;

/// Largest accepted `|lhs - rhs|` for the exact gap identity.
const IDENTITY_TOL: f64 = 1e-8;
/// Largest accepted `|gap - bound|` for the equality construction.
const TIGHTNESS_TOL: f64 = 1e-8;
/// Smallest required slack for the perturbed (strictly loose) variant.
const MIN_PERTURBED_SLACK: f64 = 1e-6;

#[derive(Args, Debug)]
pub struct VerifyTheoryArgs {
    /// Number of random (MDP, policy, policy) triples [default: 1000].
    #[arg(long)]
    triples: Option<usize>,
    /// Number of seeded equality constructions [default: 20].
    #[arg(long)]
    tight: Option<usize>,
    /// Base RNG seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Discount factor for random triples [default: 0.9].
    #[arg(long)]
    gamma: Option<f64>,
    /// Maximum states per random MDP [default: 20].
    #[arg(long)]
    max_states: Option<usize>,
    /// Maximum actions per random MDP [default: 5].
    #[arg(long)]
    max_actions: Option<usize>,
    /// Fraction of zero rewards in random MDPs [default: 0.5].
    #[arg(long)]
    sparsity: Option<f64>,
    /// Output report file (JSON).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON config file supplying any of the above (flags win).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct VerifyTheoryFile {
    triples: Option<usize>,
    tight: Option<usize>,
    seed: Option<u64>,
    gamma: Option<f64>,
    max_states: Option<usize>,
    max_actions: Option<usize>,
    sparsity: Option<f64>,
    out: Option<PathBuf>,
}

/// Worst-case margins accumulated over a sweep.
struct SweepStats {
    max_identity_residual: f64,
    min_bound_slack: f64,
    violations: usize,
}

impl SweepStats {
    fn absorb(&mut self, report: &BoundReport) {
        self.max_identity_residual = self.max_identity_residual.max(report.identity.residual());
        for check in [
            &report.qweighted,
            &report.tv_reference_occupancy,
            &report.tv_policy_occupancy,
        ] {
            self.min_bound_slack = self.min_bound_slack.min(check.slack());
        }
        if !report.all_hold() || report.identity.residual() > IDENTITY_TOL {
            self.violations += 1;
        }
    }
}

pub fn run(args: VerifyTheoryArgs) -> CliResult<()> {
    let file: VerifyTheoryFile = load_config(args.config.as_deref())?;
    let triples = args.triples.or(file.triples).unwrap_or(1000);
    let tight = args.tight.or(file.tight).unwrap_or(20);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let gamma = args.gamma.or(file.gamma).unwrap_or(0.9);
    let max_states = args.max_states.or(file.max_states).unwrap_or(20);
    let max_actions = args.max_actions.or(file.max_actions).unwrap_or(5);
    let sparsity = args.sparsity.or(file.sparsity).unwrap_or(0.5);
    let out = args.out.or(file.out);

    let mut stats = SweepStats {
        max_identity_residual: 0.0,
        min_bound_slack: f64::INFINITY,
        violations: 0,
    };
    for i in 0..triples {
        let (mdp, pi, pi_ref) = random_triple(
            seed.wrapping_add(i as u64),
            max_states,
            max_actions,
            gamma,
            sparsity,
        )?;
        let report = bound_report(&mdp, &pi, &pi_ref)?;
        stats.absorb(&report);
    }

    let mut max_equality_gap = 0.0_f64;
    let mut min_perturbed_slack = f64::INFINITY;
    let mut tight_violations = 0usize;
    for i in 0..tight {
        let case = construct_tight_case(seed.wrapping_add(i as u64))?;
        let equality = check_qweighted_bound(&case.mdp, &case.pi, &case.pi_ref)?;
        let equality_gap = (equality.gap - equality.bound).abs();
        let perturbed = case.perturbed()?;
        let loose = check_qweighted_bound(&case.mdp, &perturbed, &case.pi_ref)?;
        max_equality_gap = max_equality_gap.max(equality_gap);
        min_perturbed_slack = min_perturbed_slack.min(loose.slack());
        if equality_gap > TIGHTNESS_TOL || loose.slack() < MIN_PERTURBED_SLACK {
            tight_violations += 1;
        }
    }

    let resolved = json!({
        "command": "verify-theory",
        "triples": triples,
        "tight": tight,
        "seed": seed,
        "gamma": gamma,
        "max_states": max_states,
        "max_actions": max_actions,
        "sparsity": sparsity,
    });
    let doc = json!({
        "config": resolved,
        "max_identity_residual": stats.max_identity_residual,
        "min_bound_slack": if triples == 0 { None } else { Some(stats.min_bound_slack) },
        "triple_violations": stats.violations,
        "max_equality_gap": if tight == 0 { None } else { Some(max_equality_gap) },
        "min_perturbed_slack": if tight == 0 { None } else { Some(min_perturbed_slack) },
        "tight_violations": tight_violations,
    });
    if let Some(path) = &out {
        write_json(path, &doc)?;
    }

    println!(
        "checked {triples} triples (max identity residual {:.3e}, min slack {:.3e}) \
         and {tight} equality constructions (max equality gap {:.3e})",
        stats.max_identity_residual,
        if triples == 0 {
            0.0
        } else {
            stats.min_bound_slack
        },
        if tight == 0 { 0.0 } else { max_equality_gap },
    );
    if stats.violations > 0 || tight_violations > 0 {
        return Err(CliError::Assertion(format!(
            "{} of {triples} triples and {tight_violations} of {tight} constructions \
             violated a bound or tolerance",
            stats.violations
        )));
    }
    Ok(())
}
