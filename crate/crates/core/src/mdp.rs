//! Finite MDPs with exact, solver-based policy analysis.
//!
//! All quantities use the infinite-horizon discounted criterion. Policy
//! values come from direct linear solves rather than simulation, so
//! downstream identity and bound checks hold to near machine precision.
//!
//! Layout conventions: transitions are a flat `[s][a][s']` tensor, rewards
//! and policies flat `[s][a]` matrices, all row-major.

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::Rng;
use alloc::vec;
use alloc::vec::Vec;

/// Tolerance for "rows sum to one" validation on inputs.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Tolerance for internal consistency checks on solver outputs.
pub const CONSISTENCY_TOL: f64 = 1e-10;
/// Most negative q value attributable to float error; anything lower is a bug.
pub const Q_NEGATIVE_TOL: f64 = -1e-12;

/// A finite discounted MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
    r_max: f64,
}

impl TabularMdp {
    /// Validates and builds an MDP.
    ///
    /// Requires: every `transition[s][a]` row on the probability simplex
    /// (within [`SIMPLEX_TOL`]), rewards finite and nonnegative,
    /// `initial_dist` on the simplex, and `gamma` in `[0, 1)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid!(
                "MDP needs at least one state and one action (got {n_states} x {n_actions})"
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid!("gamma must lie in [0, 1), got {gamma}"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(invalid!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            ));
        }
        if reward.len() != n_states * n_actions {
            return Err(invalid!(
                "reward matrix has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            ));
        }
        if initial_dist.len() != n_states {
            return Err(invalid!(
                "initial distribution has {} entries, expected {n_states}",
                initial_dist.len()
            ));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                check_simplex(row, "transition")
                    .map_err(|e| invalid!("transition row (s={s}, a={a}): {e}"))?;
                let r = reward[s * n_actions + a];
                if !r.is_finite() || r < 0.0 {
                    return Err(invalid!(
                        "reward at (s={s}, a={a}) must be finite and >= 0, got {r}"
                    ));
                }
            }
        }
        check_simplex(&initial_dist, "initial distribution")
            .map_err(|e| invalid!("initial distribution: {e}"))?;
        let r_max = reward.iter().cloned().fold(0.0, f64::max);
        Ok(TabularMdp {
            n_states,
            n_actions,
            gamma,
            transition,
            reward,
            initial_dist,
            r_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Largest reward in the table (0 for an all-zero reward MDP).
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Successor distribution of `(s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Same dynamics and rewards with a different start distribution.
    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> Result<Self> {
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            self.transition.clone(),
            self.reward.clone(),
            initial_dist,
        )
    }
}

/// A stationary stochastic policy: one action distribution per state.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Validates rows on the simplex (within [`SIMPLEX_TOL`]).
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(invalid!(
                "policy matrix has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            ));
        }
        for s in 0..n_states {
            check_simplex(&probs[s * n_actions..][..n_actions], "policy")
                .map_err(|e| invalid!("policy row (s={s}): {e}"))?;
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy choosing `argmax_a q[s][a]`, lowest index on ties.
    pub fn greedy_from_q(n_states: usize, n_actions: usize, q: &[f64]) -> Result<Self> {
        if q.len() != n_states * n_actions {
            return Err(invalid!(
                "q matrix has {} entries, expected {}",
                q.len(),
                n_states * n_actions
            ));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let row = &q[s * n_actions..][..n_actions];
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            probs[s * n_actions + best] = 1.0;
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Row-wise `softmax(q / tau)`; `tau == 0` degenerates to the greedy
    /// policy (lowest index on ties).
    pub fn softmax_from_q(n_states: usize, n_actions: usize, q: &[f64], tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(invalid!(
                "softmax temperature must be finite and >= 0, got {tau}"
            ));
        }
        if tau == 0.0 {
            return Self::greedy_from_q(n_states, n_actions, q);
        }
        if q.len() != n_states * n_actions {
            return Err(invalid!(
                "q matrix has {} entries, expected {}",
                q.len(),
                n_states * n_actions
            ));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let row = &q[s * n_actions..][..n_actions];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut probs[s * n_actions..][..n_actions];
            let mut total = 0.0;
            for (a, &v) in row.iter().enumerate() {
                let e = libm::exp((v - m) / tau);
                out[a] = e;
                total += e;
            }
            for x in out.iter_mut() {
                *x /= total;
            }
        }
        TabularPolicy::new(n_states, n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..][..self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn check_dims(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(invalid!(
                "policy is {}x{} but MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states,
                mdp.n_actions
            ));
        }
        Ok(())
    }
}

/// Exact value functions of a policy: state values `v`, action values `q`,
/// and the scalar start-weighted return `j`.
#[derive(Clone, Debug)]
pub struct ValueProfile {
    v: Vec<f64>,
    q: Vec<f64>,
    j: f64,
}

impl ValueProfile {
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn q_at(&self, s: usize, a: usize, n_actions: usize) -> f64 {
        self.q[s * n_actions + a]
    }

    pub fn j(&self) -> f64 {
        self.j
    }
}

/// Solves `(I - gamma P_pi) v = r_pi` directly, then forms q and j.
///
/// Rewards are nonnegative, so q must be too; values below
/// [`Q_NEGATIVE_TOL`] indicate a solver bug and error out. The two ways of
/// writing j (`d0 . v` and `sum_s d0 sum_a pi q`) must agree within
/// [`CONSISTENCY_TOL`].
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<ValueProfile> {
    policy.check_dims(mdp)?;
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let gamma = mdp.gamma;

    // A = I - gamma P_pi, rhs = r_pi.
    let mut a_mat = vec![0.0; n * n];
    let mut r_pi = vec![0.0; n];
    for s in 0..n {
        for a in 0..na {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            r_pi[s] += p * mdp.reward(s, a);
            let row = mdp.transition_row(s, a);
            for (next, &t) in row.iter().enumerate() {
                a_mat[s * n + next] -= gamma * p * t;
            }
        }
        a_mat[s * n + s] += 1.0;
    }
    let v = linalg::solve(&a_mat, &r_pi, n, "policy evaluation")?;

    let mut q = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let row = mdp.transition_row(s, a);
            let mut future = 0.0;
            for (next, &t) in row.iter().enumerate() {
                future += t * v[next];
            }
            let val = mdp.reward(s, a) + gamma * future;
            if val < Q_NEGATIVE_TOL {
                return Err(Error::Inconsistent(alloc::format!(
                    "q({s}, {a}) = {val} below {Q_NEGATIVE_TOL} despite nonnegative rewards"
                )));
            }
            q[s * na + a] = val;
        }
    }

    let j: f64 = (0..n).map(|s| mdp.initial_dist[s] * v[s]).sum();
    let j_alt: f64 = (0..n)
        .map(|s| {
            mdp.initial_dist[s]
                * (0..na)
                    .map(|a| policy.prob(s, a) * q[s * na + a])
                    .sum::<f64>()
        })
        .sum();
    if (j - j_alt).abs() > CONSISTENCY_TOL {
        return Err(Error::Inconsistent(alloc::format!(
            "j from v ({j}) and from q ({j_alt}) disagree beyond {CONSISTENCY_TOL}"
        )));
    }
    Ok(ValueProfile { v, q, j })
}

/// Discounted state and state-action occupancy of a policy.
///
/// `d` solves the flow equation `d = (1-gamma) d0 + gamma P_pi^T d` and
/// sums to one; `rho[s][a] = pi(a|s) d(s)`.
#[derive(Clone, Debug)]
pub struct OccupancyMeasures {
    d: Vec<f64>,
    rho: Vec<f64>,
}

impl OccupancyMeasures {
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

/// Solves the linear flow equation for the discounted occupancy exactly and
/// verifies the residual and normalization within [`CONSISTENCY_TOL`].
pub fn occupancy_measures(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasures> {
    policy.check_dims(mdp)?;
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let gamma = mdp.gamma;

    // A = I - gamma P_pi^T, rhs = (1-gamma) d0.
    let mut a_mat = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..na {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            let row = mdp.transition_row(s, a);
            for (next, &t) in row.iter().enumerate() {
                a_mat[next * n + s] -= gamma * p * t;
            }
        }
    }
    for s in 0..n {
        a_mat[s * n + s] += 1.0;
    }
    let rhs: Vec<f64> = mdp
        .initial_dist
        .iter()
        .map(|&d0| (1.0 - gamma) * d0)
        .collect();
    let d = linalg::solve(&a_mat, &rhs, n, "occupancy measure")?;

    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > CONSISTENCY_TOL {
        return Err(Error::Inconsistent(alloc::format!(
            "occupancy sums to {total}, expected 1"
        )));
    }
    // Flow residual in the original (untransposed) form.
    let mut max_residual = 0.0f64;
    for next in 0..n {
        let mut inflow = (1.0 - gamma) * mdp.initial_dist[next];
        for (s, &d_s) in d.iter().enumerate() {
            for a in 0..na {
                let p = policy.prob(s, a);
                if p > 0.0 {
                    inflow += gamma * p * mdp.transition(s, a, next) * d_s;
                }
            }
        }
        max_residual = max_residual.max((inflow - d[next]).abs());
    }
    if max_residual > CONSISTENCY_TOL {
        return Err(Error::Inconsistent(alloc::format!(
            "occupancy flow residual {max_residual} exceeds {CONSISTENCY_TOL}"
        )));
    }

    let mut rho = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            rho[s * na + a] = policy.prob(s, a) * d[s];
        }
    }
    Ok(OccupancyMeasures { d, rho })
}

/// State and state-action distributions after exactly `t` steps, for
/// `t = 0..=horizon`.
pub fn compute_t_step_distributions(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    horizon: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    policy.check_dims(mdp)?;
    let n = mdp.n_states;
    let na = mdp.n_actions;
    let mut out = Vec::with_capacity(horizon + 1);
    let mut current = mdp.initial_dist.clone();
    for _ in 0..=horizon {
        let mut pair = vec![0.0; n * na];
        for s in 0..n {
            for a in 0..na {
                pair[s * na + a] = policy.prob(s, a) * current[s];
            }
        }
        out.push((current.clone(), pair));
        let mut next = vec![0.0; n];
        for (s, &cur_s) in current.iter().enumerate() {
            if cur_s == 0.0 {
                continue;
            }
            for a in 0..na {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                let w = cur_s * p;
                let row = mdp.transition_row(s, a);
                for (sp, &t) in row.iter().enumerate() {
                    next[sp] += w * t;
                }
            }
        }
        current = next;
    }
    Ok(out)
}

/// One logged interaction step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Rolls one episode of `horizon` steps from the start distribution and
/// returns the trajectory with its discounted return.
pub fn sample_episode(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    horizon: usize,
    seed: u64,
) -> Result<(Vec<Step>, f64)> {
    policy.check_dims(mdp)?;
    let mut rng = Rng::seed(seed);
    let mut steps = Vec::with_capacity(horizon);
    let mut s = rng.categorical(&mdp.initial_dist);
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let a = rng.categorical(policy.row(s));
        let next = rng.categorical(mdp.transition_row(s, a));
        let reward = mdp.reward(s, a);
        steps.push(Step {
            state: s,
            action: a,
            reward,
            next_state: next,
        });
        ret += discount * reward;
        discount *= mdp.gamma;
        s = next;
    }
    Ok((steps, ret))
}

/// Total variation distance between two distributions of equal length:
/// half the l1 difference.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid!(
            "total variation needs equal lengths, got {} and {}",
            p.len(),
            q.len()
        ));
    }
    Ok(0.5 * p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum::<f64>())
}

fn check_simplex(row: &[f64], what: &str) -> Result<()> {
    let mut total = 0.0;
    for &x in row {
        if !x.is_finite() || x < 0.0 {
            return Err(invalid!("{what} entry {x} must be finite and >= 0"));
        }
        total += x;
    }
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid!("{what} row sums to {total}, expected 1"));
    }
    Ok(())
}
