//! Numerical checks relating policy mismatch to return gaps.
//!
//! The anchor is an exact identity: for any two policies, the gap in
//! start-weighted return equals an occupancy-weighted advantage sum,
//!
//! ```text
//! J(pi_ref) - J(pi) =
//!     1/(1-gamma) * sum_s d_pi(s) sum_a q_ref(s,a) (pi_ref(a|s) - pi(a|s))
//! ```
//!
//! where `d_pi` is the normalized discounted state occupancy of `pi` and
//! `q_ref` the action values of the reference policy. Taking absolute
//! values inside gives a q-weighted upper bound on the gap; relaxing the q
//! factor with `r_max/(1-gamma)` gives a total-variation bound. This module
//! evaluates all of them with exact linear-solve machinery so the identity
//! can be checked to solver precision and the bounds audited for slack.
//!
//! [`construct_tight_case`] builds mismatched policy pairs whose gap meets
//! the q-weighted bound exactly: the disagreement is confined to an action
//! whose value is zero, so the absolute and signed weighted sums coincide.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::mdp::{
    occupancy_measures, policy_evaluation, total_variation, TabularMdp, TabularPolicy,
};
use crate::rng::Rng;

/// Numerical tolerance added when declaring that a bound holds; absorbs
/// linear-solver rounding in the exact quantities being compared.
pub const BOUND_TOL: f64 = 1e-10;

/// Both sides of the exact gap identity.
#[derive(Clone, Copy, Debug)]
pub struct GapIdentity {
    /// `J(pi_ref) - J(pi)`, from two independent policy evaluations.
    pub lhs: f64,
    /// The occupancy-weighted advantage sum.
    pub rhs: f64,
}

impl GapIdentity {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// One evaluated upper bound on the absolute return gap.
#[derive(Clone, Copy, Debug)]
pub struct BoundCheck {
    /// Exact return gap `J(pi_ref) - J(pi)`.
    pub gap: f64,
    /// The mismatch measure the bound is built from.
    pub epsilon: f64,
    /// The bound value itself.
    pub bound: f64,
}

impl BoundCheck {
    /// `bound - |gap|`; nonnegative when the bound holds exactly.
    pub fn slack(&self) -> f64 {
        self.bound - self.gap.abs()
    }

    /// Whether the bound holds up to [`BOUND_TOL`].
    pub fn holds(&self) -> bool {
        self.slack() >= -BOUND_TOL
    }
}

/// Which state distribution weights the per-state policy mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TvReference {
    /// Occupancy of the reference (better) policy.
    OptimalOccupancy,
    /// Occupancy of the evaluated policy.
    PolicyOccupancy,
}

/// Comparison of the q-weighted mismatch against its reward-scaled
/// relaxation.
#[derive(Clone, Copy, Debug)]
pub struct RelaxationCheck {
    /// `E_{d_pi} [ sum_a q_ref |pi_ref - pi| ]`.
    pub epsilon_weighted: f64,
    /// `r_max/(1-gamma) * E_{d_pi} [ sum_a |pi_ref - pi| ]`.
    pub relaxed: f64,
}

impl RelaxationCheck {
    pub fn holds(&self) -> bool {
        self.epsilon_weighted <= self.relaxed + BOUND_TOL
    }
}

fn check_pair(mdp: &TabularMdp, pi: &TabularPolicy, pi_ref: &TabularPolicy) -> Result<()> {
    for (name, p) in [("evaluated", pi), ("reference", pi_ref)] {
        if p.n_states() != mdp.n_states() || p.n_actions() != mdp.n_actions() {
            return Err(invalid!(
                "{name} policy shape {}x{} does not match MDP {}x{}",
                p.n_states(),
                p.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            ));
        }
    }
    Ok(())
}

/// Evaluates both sides of the exact gap identity for an arbitrary policy
/// pair (`pi_ref` need not be optimal).
pub fn performance_gap_identity(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_ref: &TabularPolicy,
) -> Result<GapIdentity> {
    check_pair(mdp, pi, pi_ref)?;
    let ref_values = policy_evaluation(mdp, pi_ref)?;
    let pi_values = policy_evaluation(mdp, pi)?;
    let occ = occupancy_measures(mdp, pi)?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut weighted = 0.0;
    for s in 0..n_states {
        let mut inner = 0.0;
        for a in 0..n_actions {
            inner += ref_values.q_at(s, a, n_actions) * (pi_ref.prob(s, a) - pi.prob(s, a));
        }
        weighted += occ.d()[s] * inner;
    }
    Ok(GapIdentity {
        lhs: ref_values.j() - pi_values.j(),
        rhs: weighted / (1.0 - mdp.gamma()),
    })
}

/// Gap bound from the q-weighted absolute policy mismatch under the
/// evaluated policy's occupancy: `|gap| <= epsilon_w / (1-gamma)`.
pub fn check_qweighted_bound(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_ref: &TabularPolicy,
) -> Result<BoundCheck> {
    check_pair(mdp, pi, pi_ref)?;
    let ref_values = policy_evaluation(mdp, pi_ref)?;
    let pi_values = policy_evaluation(mdp, pi)?;
    let occ = occupancy_measures(mdp, pi)?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut epsilon = 0.0;
    for s in 0..n_states {
        let mut inner = 0.0;
        for a in 0..n_actions {
            inner += ref_values.q_at(s, a, n_actions) * (pi_ref.prob(s, a) - pi.prob(s, a)).abs();
        }
        epsilon += occ.d()[s] * inner;
    }
    Ok(BoundCheck {
        gap: ref_values.j() - pi_values.j(),
        epsilon,
        bound: epsilon / (1.0 - mdp.gamma()),
    })
}

/// Gap bound from occupancy-weighted total variation:
/// `|gap| <= 2 r_max epsilon_tv / (1-gamma)^2`. Either policy's occupancy
/// is a valid weighting; both directions are exposed.
pub fn check_tv_bound(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_ref: &TabularPolicy,
    reference: TvReference,
) -> Result<BoundCheck> {
    check_pair(mdp, pi, pi_ref)?;
    let ref_values = policy_evaluation(mdp, pi_ref)?;
    let pi_values = policy_evaluation(mdp, pi)?;
    let weights = match reference {
        TvReference::OptimalOccupancy => occupancy_measures(mdp, pi_ref)?,
        TvReference::PolicyOccupancy => occupancy_measures(mdp, pi)?,
    };
    let mut epsilon = 0.0;
    for s in 0..mdp.n_states() {
        epsilon += weights.d()[s] * total_variation(pi_ref.row(s), pi.row(s))?;
    }
    let one_minus = 1.0 - mdp.gamma();
    Ok(BoundCheck {
        gap: ref_values.j() - pi_values.j(),
        epsilon,
        bound: 2.0 * mdp.r_max() * epsilon / (one_minus * one_minus),
    })
}

/// Confirms the q-weighted mismatch never exceeds its reward-scaled
/// relaxation (`q <= r_max/(1-gamma)` entrywise does the work).
pub fn check_reward_scaled_bound(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_ref: &TabularPolicy,
) -> Result<RelaxationCheck> {
    check_pair(mdp, pi, pi_ref)?;
    let ref_values = policy_evaluation(mdp, pi_ref)?;
    let occ = occupancy_measures(mdp, pi)?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut weighted = 0.0;
    let mut unweighted = 0.0;
    for s in 0..n_states {
        let mut w = 0.0;
        let mut u = 0.0;
        for a in 0..n_actions {
            let diff = (pi_ref.prob(s, a) - pi.prob(s, a)).abs();
            w += ref_values.q_at(s, a, n_actions) * diff;
            u += diff;
        }
        weighted += occ.d()[s] * w;
        unweighted += occ.d()[s] * u;
    }
    Ok(RelaxationCheck {
        epsilon_weighted: weighted,
        relaxed: mdp.r_max() / (1.0 - mdp.gamma()) * unweighted,
    })
}

/// Everything at once: the identity plus all bound variants for one pair.
#[derive(Clone, Copy, Debug)]
pub struct BoundReport {
    pub identity: GapIdentity,
    pub qweighted: BoundCheck,
    pub tv_reference_occupancy: BoundCheck,
    pub tv_policy_occupancy: BoundCheck,
    pub reward_scaled: RelaxationCheck,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.qweighted.holds()
            && self.tv_reference_occupancy.holds()
            && self.tv_policy_occupancy.holds()
            && self.reward_scaled.holds()
    }
}

pub fn bound_report(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_ref: &TabularPolicy,
) -> Result<BoundReport> {
    Ok(BoundReport {
        identity: performance_gap_identity(mdp, pi, pi_ref)?,
        qweighted: check_qweighted_bound(mdp, pi, pi_ref)?,
        tv_reference_occupancy: check_tv_bound(mdp, pi, pi_ref, TvReference::OptimalOccupancy)?,
        tv_policy_occupancy: check_tv_bound(mdp, pi, pi_ref, TvReference::PolicyOccupancy)?,
        reward_scaled: check_reward_scaled_bound(mdp, pi, pi_ref)?,
    })
}

/// A policy pair built so the q-weighted bound is met with equality.
#[derive(Clone, Debug)]
pub struct TightCase {
    pub mdp: TabularMdp,
    /// Evaluated policy: leaks probability `0.2` onto the zero-value action.
    pub pi: TabularPolicy,
    /// Reference policy: supported on rewarding actions only.
    pub pi_ref: TabularPolicy,
    /// Rewarding action with the highest reference value at state 0; used
    /// by [`TightCase::perturbed`].
    pub preferred_action: usize,
}

impl TightCase {
    /// A copy of `pi` whose state-0 row concentrates most mass on the
    /// preferred high-value action. The reference policy now assigns LESS
    /// probability to that action than `pi` does, so the per-action signs
    /// disagree and the q-weighted bound becomes strictly loose.
    pub fn perturbed(&self) -> Result<TabularPolicy> {
        let (n_states, n_actions) = (self.pi.n_states(), self.pi.n_actions());
        let mut rows = self.pi.probs().to_vec();
        for (a, row) in rows[..n_actions].iter_mut().enumerate() {
            let base = 0.3 * self.pi.prob(0, a);
            *row = if a == self.preferred_action {
                base + 0.7
            } else {
                base
            };
        }
        TabularPolicy::new(n_states, n_actions, rows)
    }
}

/// Deterministically builds a [`TightCase`].
///
/// Layout: `n` rewarding states with `m` rewarding actions (rewards in
/// `[0.5, 1]`) plus one extra escape action leading to an absorbing
/// zero-reward state. The reference policy never takes the escape action;
/// the evaluated policy moves a fixed `0.2` of each row's mass onto it.
/// Every action value is positive except the escape action's, which is
/// exactly zero, so the signed and absolute weighted mismatch sums agree
/// state by state and the q-weighted bound is an equality.
pub fn construct_tight_case(seed: u64) -> Result<TightCase> {
    let mut rng = Rng::seed(seed);
    let n_regular = 3 + rng.index(4); // 3..=6 rewarding states
    let m_regular = 2 + rng.index(2); // 2..=3 rewarding actions
    let n_states = n_regular + 1;
    let n_actions = m_regular + 1;
    let sink = n_regular;
    let escape = m_regular;
    let gamma = 0.9;

    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    for s in 0..n_regular {
        for a in 0..m_regular {
            let successors = rng.distinct_indices(n_regular, 2);
            let weights = rng.simplex(2);
            for (i, &next) in successors.iter().enumerate() {
                transition[(s * n_actions + a) * n_states + next] = weights[i];
            }
            reward[s * n_actions + a] = rng.range(0.5, 1.0);
        }
        // Escape action: straight to the absorbing zero-reward state.
        transition[(s * n_actions + escape) * n_states + sink] = 1.0;
    }
    for a in 0..n_actions {
        transition[(sink * n_actions + a) * n_states + sink] = 1.0;
    }
    let mut initial = vec![1.0 / n_regular as f64; n_states];
    initial[sink] = 0.0;
    let mdp = TabularMdp::new(n_states, n_actions, gamma, transition, reward, initial)?;

    // Reference policy: a Dirichlet draw blended with uniform over the
    // rewarding actions, zero on the escape action.
    let mut ref_rows = vec![0.0; n_states * n_actions];
    for s in 0..n_regular {
        let draw = rng.simplex(m_regular);
        for a in 0..m_regular {
            ref_rows[s * n_actions + a] = 0.7 * draw[a] + 0.3 / m_regular as f64;
        }
    }
    for a in 0..n_actions {
        ref_rows[sink * n_actions + a] = 1.0 / n_actions as f64;
    }
    let pi_ref = TabularPolicy::new(n_states, n_actions, ref_rows.clone())?;

    // Evaluated policy: same shape with 0.2 of each row leaked to escape.
    let leak = 0.2;
    let mut pi_rows = ref_rows;
    for s in 0..n_regular {
        for a in 0..m_regular {
            pi_rows[s * n_actions + a] *= 1.0 - leak;
        }
        pi_rows[s * n_actions + escape] = leak;
    }
    let pi = TabularPolicy::new(n_states, n_actions, pi_rows)?;

    let ref_values = policy_evaluation(&mdp, &pi_ref)?;
    let mut preferred_action = 0;
    for a in 1..m_regular {
        if ref_values.q_at(0, a, n_actions) > ref_values.q_at(0, preferred_action, n_actions) {
            preferred_action = a;
        }
    }
    Ok(TightCase {
        mdp,
        pi,
        pi_ref,
        preferred_action,
    })
}

/// A random MDP (via [`crate::dataset::make_random_mdp`]) with two
/// independent fully-stochastic policies, for bound sweeps.
pub fn random_triple(
    seed: u64,
    max_states: usize,
    max_actions: usize,
    gamma: f64,
    reward_sparsity: f64,
) -> Result<(TabularMdp, TabularPolicy, TabularPolicy)> {
    if max_states < 2 || max_actions < 2 {
        return Err(invalid!(
            "random triples need at least 2 states and 2 actions available"
        ));
    }
    let mut rng = Rng::seed(seed);
    let n_states = 2 + rng.index(max_states - 1);
    let n_actions = 2 + rng.index(max_actions - 1);
    let branching = 1 + rng.index(n_states);
    let mdp = crate::dataset::make_random_mdp(
        n_states,
        n_actions,
        branching,
        reward_sparsity,
        gamma,
        rng.next_u64(),
    )?;
    let mut rows_a = Vec::with_capacity(n_states * n_actions);
    let mut rows_b = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        rows_a.extend(rng.simplex(n_actions));
        rows_b.extend(rng.simplex(n_actions));
    }
    let pi = TabularPolicy::new(n_states, n_actions, rows_a)?;
    let pi_ref = TabularPolicy::new(n_states, n_actions, rows_b)?;
    Ok((mdp, pi, pi_ref))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::compute_t_step_distributions;

    /// Two-state chain: action 0 stays, action 1 switches; reward 1 for
    /// every action taken in state 1, else 0; start in state 0.
    fn two_state_chain(gamma: f64) -> TabularMdp {
        let transition = vec![
            // s0: stay -> s0, switch -> s1
            1.0, 0.0, 0.0, 1.0, // s1: stay -> s1, switch -> s0
            0.0, 1.0, 1.0, 0.0,
        ];
        let reward = vec![0.0, 0.0, 1.0, 1.0];
        TabularMdp::new(2, 2, gamma, transition, reward, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn identity_matches_hand_computed_chain() {
        // pi_ref: switch in s0, stay in s1 (optimal). pi: always stay.
        // J_ref = 0 + gamma/(1-gamma) * ... worked by hand for gamma=0.5:
        // v_ref(s1) = 1/(1-0.5) = 2, v_ref(s0) = 0.5 * 2 = 1, J_ref = 1.
        // pi never leaves s0: J = 0. d_pi = (1, 0).
        // q_ref(s0,stay) = 0.5 * 1 = 0.5, q_ref(s0,switch) = 0.5 * 2 = 1.
        // rhs = 1/(1-0.5) * 1.0 * (1*(1-0) + 0.5*(0-1)) = 2 * 0.5 = 1.
        let mdp = two_state_chain(0.5);
        let pi_ref = TabularPolicy::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let pi = TabularPolicy::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let id = performance_gap_identity(&mdp, &pi, &pi_ref).unwrap();
        assert!((id.lhs - 1.0).abs() < 1e-12, "lhs {}", id.lhs);
        assert!((id.rhs - 1.0).abs() < 1e-12, "rhs {}", id.rhs);
    }

    #[test]
    fn identity_holds_on_random_triples() {
        for seed in 0..40 {
            let (mdp, pi, pi_ref) = random_triple(seed, 12, 4, 0.9, 0.4).unwrap();
            let id = performance_gap_identity(&mdp, &pi, &pi_ref).unwrap();
            assert!(
                id.residual() < 1e-9,
                "seed {seed}: lhs {} rhs {}",
                id.lhs,
                id.rhs
            );
        }
    }

    #[test]
    fn identity_is_antisymmetric_in_sign() {
        let (mdp, pi, pi_ref) = random_triple(7, 8, 3, 0.8, 0.2).unwrap();
        let fwd = performance_gap_identity(&mdp, &pi, &pi_ref).unwrap();
        let rev = performance_gap_identity(&mdp, &pi_ref, &pi).unwrap();
        assert!((fwd.lhs + rev.lhs).abs() < 1e-12);
    }

    #[test]
    fn identity_agrees_with_truncated_series() {
        // Independent oracle: accumulate sum_t gamma^t E_{d_t,pi}[adv]
        // directly from t-step distributions instead of the linear solve.
        let (mdp, pi, pi_ref) = random_triple(11, 6, 3, 0.85, 0.3).unwrap();
        let ref_values = policy_evaluation(&mdp, &pi_ref).unwrap();
        let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
        let horizon = 400;
        let dists = compute_t_step_distributions(&mdp, &pi, horizon).unwrap();
        let mut series = 0.0;
        let mut discount = 1.0;
        for (d_t, _) in dists.iter().take(horizon) {
            for (s, &d) in d_t.iter().enumerate().take(n_states) {
                let mut inner = 0.0;
                for a in 0..n_actions {
                    inner += ref_values.q_at(s, a, n_actions) * (pi_ref.prob(s, a) - pi.prob(s, a));
                }
                series += discount * d * inner;
            }
            discount *= mdp.gamma();
        }
        let id = performance_gap_identity(&mdp, &pi, &pi_ref).unwrap();
        assert!(
            (series - id.lhs).abs() < 1e-9,
            "series {series} lhs {}",
            id.lhs
        );
    }

    #[test]
    fn qweighted_bound_holds_on_random_triples() {
        for seed in 100..160 {
            let (mdp, pi, pi_ref) = random_triple(seed, 10, 4, 0.9, 0.5).unwrap();
            let check = check_qweighted_bound(&mdp, &pi, &pi_ref).unwrap();
            assert!(
                check.holds(),
                "seed {seed}: gap {} bound {}",
                check.gap,
                check.bound
            );
        }
    }

    #[test]
    fn tv_bounds_hold_with_both_references() {
        for seed in 200..240 {
            let (mdp, pi, pi_ref) = random_triple(seed, 10, 4, 0.95, 0.5).unwrap();
            for reference in [TvReference::OptimalOccupancy, TvReference::PolicyOccupancy] {
                let check = check_tv_bound(&mdp, &pi, &pi_ref, reference).unwrap();
                assert!(
                    check.holds(),
                    "seed {seed} {reference:?}: gap {} bound {}",
                    check.gap,
                    check.bound
                );
            }
        }
    }

    #[test]
    fn tv_bound_is_looser_than_qweighted_relaxation_chain() {
        // epsilon_w <= relaxed holds by construction; the report must agree.
        for seed in 300..320 {
            let (mdp, pi, pi_ref) = random_triple(seed, 8, 4, 0.9, 0.5).unwrap();
            let report = bound_report(&mdp, &pi, &pi_ref).unwrap();
            assert!(report.all_hold(), "seed {seed}");
            assert!(report.identity.residual() < 1e-9);
            // TV with the same occupancy, scaled by 2 r_max/(1-gamma),
            // upper-bounds the reward-scaled mismatch term in turn.
            assert!(
                report.reward_scaled.relaxed <= report.tv_policy_occupancy.bound + BOUND_TOL,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn identical_policies_give_zero_gap_and_zero_bounds() {
        let (mdp, pi, _) = random_triple(400, 6, 3, 0.9, 0.3).unwrap();
        let report = bound_report(&mdp, &pi, &pi).unwrap();
        assert!(report.identity.lhs.abs() < 1e-12);
        assert!(report.qweighted.bound.abs() < 1e-12);
        assert!(report.tv_policy_occupancy.bound.abs() < 1e-12);
    }

    #[test]
    fn tight_case_meets_qweighted_bound_exactly() {
        for seed in 0..10 {
            let case = construct_tight_case(seed).unwrap();
            let check = check_qweighted_bound(&case.mdp, &case.pi, &case.pi_ref).unwrap();
            assert!(
                (check.gap.abs() - check.bound).abs() < 1e-9,
                "seed {seed}: gap {} bound {}",
                check.gap,
                check.bound
            );
            assert!(check.gap > 0.1, "seed {seed}: leak should cost return");
        }
    }

    #[test]
    fn perturbed_tight_case_is_strictly_loose() {
        for seed in 0..10 {
            let case = construct_tight_case(seed).unwrap();
            let pi = case.perturbed().unwrap();
            let check = check_qweighted_bound(&case.mdp, &pi, &case.pi_ref).unwrap();
            assert!(check.holds(), "seed {seed}");
            assert!(
                check.slack() > 1e-4,
                "seed {seed}: slack {} should be strictly positive",
                check.slack()
            );
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mdp, pi, _) = random_triple(500, 6, 3, 0.9, 0.3).unwrap();
        let other = TabularPolicy::uniform(mdp.n_states() + 1, mdp.n_actions());
        assert!(performance_gap_identity(&mdp, &pi, &other).is_err());
    }
}
