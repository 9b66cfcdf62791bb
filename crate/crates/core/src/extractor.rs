//! Pessimistic policy and value extraction from logged data.
//!
//! Stands in for a full offline RL learner: build the empirical MDP from
//! transition counts, penalize under-visited pairs, solve it by value
//! iteration, and read off a softmax (or greedy) policy with its action
//! values. On tabular domains with good coverage this recovers
//! near-optimal targets while staying conservative where data is thin.

use crate::dataset::OfflineDataset;
use crate::error::{invalid, Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};
use alloc::vec;
use alloc::vec::Vec;

/// Configuration for extraction. `gamma` is the discount of the MDP the
/// data came from (dataset files do not carry it).
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionConfig {
    pub gamma: f64,
    /// Reward penalty applied to pairs visited fewer than
    /// `count_threshold` times; `None` resolves to the dataset's maximum
    /// observed reward.
    pub pessimism_penalty: Option<f64>,
    pub count_threshold: usize,
    pub vi_tol: f64,
    pub vi_max_iter: usize,
    /// Temperature of the extracted softmax policy; 0 gives the greedy
    /// policy.
    pub softmax_tau: f64,
}

impl ExtractionConfig {
    pub fn new(gamma: f64) -> Self {
        ExtractionConfig {
            gamma,
            pessimism_penalty: None,
            count_threshold: 1,
            vi_tol: 1e-10,
            vi_max_iter: 1_000_000,
            softmax_tau: 0.05,
        }
    }
}

/// The configuration actually used, with the penalty resolved to a number.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedExtractionConfig {
    pub gamma: f64,
    pub pessimism_penalty: f64,
    pub count_threshold: usize,
    pub vi_tol: f64,
    pub vi_max_iter: usize,
    pub softmax_tau: f64,
}

/// Extraction output: the target policy, its action values on the
/// empirical MDP, and the resolved configuration for provenance.
#[derive(Clone, Debug)]
pub struct ExtractionResult {
    pub pi_star: TabularPolicy,
    /// Optimal action values of the empirical MDP, flat `[s][a]`. All
    /// entries nonnegative.
    pub q_star: Vec<f64>,
    pub config: ResolvedExtractionConfig,
}

/// Maximum-likelihood MDP from counts with pessimistic adjustments.
///
/// Pairs visited fewer than `count_threshold` times keep a self-loop
/// transition and get their mean reward penalized by `pessimism_penalty`
/// (clamped at zero). The initial distribution is the empirical start-state
/// frequency (first states of collection runs are unknown, so this uses
/// all logged states), uniform if the dataset is empty.
pub fn estimate_empirical_mdp(
    dataset: &OfflineDataset,
    config: &ExtractionConfig,
) -> Result<TabularMdp> {
    if dataset.is_empty() {
        return Err(invalid!("cannot estimate an MDP from an empty dataset"));
    }
    let n = dataset.n_states();
    let na = dataset.n_actions();
    let penalty = resolve_penalty(dataset, config)?;
    if penalty < 0.0 {
        return Err(invalid!("pessimism penalty must be >= 0, got {penalty}"));
    }

    let mut counts = vec![0usize; n * na];
    let mut next_counts = vec![0usize; n * na * n];
    let mut reward_sums = vec![0.0; n * na];
    let mut state_visits = vec![0usize; n];
    for t in dataset.transitions() {
        let sa = t.state * na + t.action;
        counts[sa] += 1;
        next_counts[sa * n + t.next_state] += 1;
        reward_sums[sa] += t.reward;
        state_visits[t.state] += 1;
    }

    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let sa = s * na + a;
            let row = &mut transition[sa * n..][..n];
            let visited_enough = counts[sa] >= config.count_threshold && counts[sa] > 0;
            if visited_enough {
                for sp in 0..n {
                    row[sp] = next_counts[sa * n + sp] as f64 / counts[sa] as f64;
                }
            } else {
                row[s] = 1.0;
            }
            let mean = if counts[sa] > 0 {
                reward_sums[sa] / counts[sa] as f64
            } else {
                0.0
            };
            let adjusted = if counts[sa] < config.count_threshold {
                mean - penalty
            } else {
                mean
            };
            reward[sa] = adjusted.max(0.0);
        }
    }

    let total_visits: usize = state_visits.iter().sum();
    let initial: Vec<f64> = if total_visits > 0 {
        state_visits
            .iter()
            .map(|&c| c as f64 / total_visits as f64)
            .collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    TabularMdp::new(n, na, config.gamma, transition, reward, initial)
}

/// Synchronous value iteration on action values to sup-norm tolerance
/// `tol`. Returns the fixed point `q` (flat `[s][a]`) and the greedy policy
/// (lowest action index on ties).
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, TabularPolicy)> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(invalid!(
            "value-iteration tolerance must be positive, got {tol}"
        ));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut q = vec![0.0; n * na];
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        residual = 0.0f64;
        for s in 0..n {
            for a in 0..na {
                let row = mdp.transition_row(s, a);
                let mut future = 0.0;
                for (sp, &t) in row.iter().enumerate() {
                    if t > 0.0 {
                        future += t * v[sp];
                    }
                }
                let new = mdp.reward(s, a) + gamma * future;
                residual = residual.max((new - q[s * na + a]).abs());
                q[s * na + a] = new;
            }
            let row = &q[s * na..][..na];
            v[s] = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        if residual <= tol {
            let policy = TabularPolicy::greedy_from_q(n, na, &q)?;
            return Ok((q, policy));
        }
    }
    Err(Error::NonConvergence {
        what: "value iteration",
        iterations: max_iter,
        residual,
    })
}

/// Full extraction pipeline: empirical MDP, value iteration, softmax (or
/// greedy) policy over the resulting action values.
pub fn extract(dataset: &OfflineDataset, config: &ExtractionConfig) -> Result<ExtractionResult> {
    let penalty = resolve_penalty(dataset, config)?;
    let empirical = estimate_empirical_mdp(dataset, config)?;
    let (q_star, _) = value_iteration(&empirical, config.vi_tol, config.vi_max_iter)?;
    debug_assert!(q_star.iter().all(|&x| x >= 0.0));
    let pi_star = TabularPolicy::softmax_from_q(
        dataset.n_states(),
        dataset.n_actions(),
        &q_star,
        config.softmax_tau,
    )?;
    Ok(ExtractionResult {
        pi_star,
        q_star,
        config: ResolvedExtractionConfig {
            gamma: config.gamma,
            pessimism_penalty: penalty,
            count_threshold: config.count_threshold,
            vi_tol: config.vi_tol,
            vi_max_iter: config.vi_max_iter,
            softmax_tau: config.softmax_tau,
        },
    })
}

fn resolve_penalty(dataset: &OfflineDataset, config: &ExtractionConfig) -> Result<f64> {
    match config.pessimism_penalty {
        Some(p) if p.is_finite() && p >= 0.0 => Ok(p),
        Some(p) => Err(invalid!(
            "pessimism penalty must be finite and >= 0, got {p}"
        )),
        None => Ok(dataset
            .transitions()
            .iter()
            .map(|t| t.reward)
            .fold(0.0, f64::max)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        build_behavior_policy, collect_dataset, make_gridworld, make_random_mdp, BehaviorTier,
        BehaviorTierConfig, Transition,
    };
    use crate::mdp::policy_evaluation;

    fn uniform_dataset(mdp: &TabularMdp, n: usize, seed: u64) -> OfflineDataset {
        let behavior = vec![(TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()), 1.0)];
        collect_dataset(mdp, &behavior, n, seed, "custom").unwrap()
    }

    #[test]
    fn empirical_transitions_concentrate() {
        // ~1e3 samples per pair keeps every estimated entry within 0.05.
        let mdp = make_random_mdp(2, 2, 2, 0.5, 0.9, 21).unwrap();
        let ds = uniform_dataset(&mdp, 16_000, 3);
        let est = estimate_empirical_mdp(&ds, &ExtractionConfig::new(0.9)).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                for sp in 0..2 {
                    let diff = (est.transition(s, a, sp) - mdp.transition(s, a, sp)).abs();
                    assert!(diff < 0.05, "({s},{a},{sp}): diff {diff}");
                }
            }
        }
    }

    #[test]
    fn unvisited_pairs_self_loop_with_zero_reward() {
        let mdp = make_random_mdp(4, 3, 2, 0.0, 0.9, 2).unwrap();
        // Only action 0 ever logged.
        let transitions: Vec<Transition> = (0..4)
            .map(|s| Transition {
                state: s,
                action: 0,
                reward: mdp.reward(s, 0),
                next_state: 0,
            })
            .collect();
        let ds = OfflineDataset::new(transitions, "custom", 0, 4, 3).unwrap();
        let est = estimate_empirical_mdp(&ds, &ExtractionConfig::new(0.9)).unwrap();
        for s in 0..4 {
            for a in 1..3 {
                assert_eq!(est.transition(s, a, s), 1.0);
                assert_eq!(est.reward(s, a), 0.0);
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = OfflineDataset::new(vec![], "custom", 0, 3, 2).unwrap();
        assert!(estimate_empirical_mdp(&ds, &ExtractionConfig::new(0.9)).is_err());
    }

    #[test]
    fn value_iteration_matches_brute_force_on_small_grid() {
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.1, 0.9).unwrap();
        let (_, greedy) = value_iteration(&mdp, 1e-12, 1_000_000).unwrap();
        let j_vi = policy_evaluation(&mdp, &greedy).unwrap().j();

        // Brute force over all deterministic policies of the 8 non-goal
        // states (goal action is irrelevant).
        let n = 9;
        let na = 4;
        let mut best = f64::NEG_INFINITY;
        let free = n - 1;
        let total = na_pow(na, free);
        for code in 0..total {
            let mut c = code;
            let mut probs = vec![0.0; n * na];
            for s in 0..free {
                probs[s * na + c % na] = 1.0;
                c /= na;
            }
            probs[(n - 1) * na] = 1.0;
            let pi = TabularPolicy::new(n, na, probs).unwrap();
            let j = policy_evaluation(&mdp, &pi).unwrap().j();
            best = best.max(j);
        }
        assert!((j_vi - best).abs() < 1e-10, "vi {j_vi} vs brute {best}");
    }

    fn na_pow(base: usize, exp: usize) -> usize {
        (0..exp).fold(1, |acc, _| acc * base)
    }

    #[test]
    fn value_iteration_reports_non_convergence() {
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.1, 0.99).unwrap();
        let err = value_iteration(&mdp, 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn more_pessimism_never_raises_values() {
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.1, 0.95).unwrap();
        let ds = uniform_dataset(&mdp, 300, 9);
        let mut lo = ExtractionConfig::new(0.95);
        lo.pessimism_penalty = Some(0.1);
        lo.count_threshold = 5;
        let mut hi = lo.clone();
        hi.pessimism_penalty = Some(1.0);
        let q_lo = extract(&ds, &lo).unwrap().q_star;
        let q_hi = extract(&ds, &hi).unwrap().q_star;
        for (l, h) in q_lo.iter().zip(&q_hi) {
            assert!(h <= l, "penalized value {h} above {l}");
        }
    }

    #[test]
    fn extracted_q_is_nonnegative() {
        let mdp = make_gridworld(4, 4, 1.0, 0.0, 0.1, 0.95).unwrap();
        let ds = uniform_dataset(&mdp, 2_000, 4);
        let result = extract(&ds, &ExtractionConfig::new(0.95)).unwrap();
        assert!(result.q_star.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn extraction_beats_medium_behavior_on_average() {
        let mdp = make_gridworld(5, 5, 1.0, 0.0, 0.1, 0.95).unwrap();
        let mut j_extracted = 0.0;
        let mut j_behavior = 0.0;
        let n_seeds = 10;
        for seed in 0..n_seeds {
            let config = BehaviorTierConfig::tier(BehaviorTier::Medium, seed);
            let behavior = build_behavior_policy(&mdp, &config).unwrap();
            let ds = collect_dataset(&mdp, &behavior, 100_000, seed, config.label()).unwrap();
            let result = extract(&ds, &ExtractionConfig::new(0.95)).unwrap();
            j_extracted += policy_evaluation(&mdp, &result.pi_star).unwrap().j() / n_seeds as f64;
            j_behavior += behavior
                .iter()
                .map(|(p, w)| w * policy_evaluation(&mdp, p).unwrap().j())
                .sum::<f64>()
                / n_seeds as f64;
        }
        assert!(
            j_extracted >= j_behavior,
            "extracted {j_extracted} below behavior {j_behavior}"
        );
    }

    #[test]
    fn zero_tau_gives_deterministic_target() {
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.1, 0.9).unwrap();
        let ds = uniform_dataset(&mdp, 5_000, 1);
        let mut config = ExtractionConfig::new(0.9);
        config.softmax_tau = 0.0;
        let result = extract(&ds, &config).unwrap();
        for s in 0..9 {
            let row = result.pi_star.row(s);
            assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.1, 0.9).unwrap();
        let ds = uniform_dataset(&mdp, 2_000, 8);
        let a = extract(&ds, &ExtractionConfig::new(0.9)).unwrap();
        let b = extract(&ds, &ExtractionConfig::new(0.9)).unwrap();
        assert_eq!(a.q_star, b.q_star);
        assert_eq!(a.pi_star, b.pi_star);
    }
}
