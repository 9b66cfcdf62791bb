//! Return evaluation for cloned policies, with normalized scores.
//!
//! A network is scored by cloning it into a tabular policy (feed every
//! one-hot state through the softmax head), evaluating that policy exactly
//! with the linear solver, and normalizing the start-weighted return so 0
//! is the uniform-random policy and 100 the optimal one. Multi-seed
//! averages, probability-averaged ensembles, and a no-distillation
//! random-selection baseline all build on the same primitive.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::OfflineDataset;
use crate::distill::{init_synthetic, SyntheticDataset};
use crate::error::{invalid, Error, Result};
use crate::extractor::value_iteration;
use crate::mdp::{policy_evaluation, TabularMdp, TabularPolicy};
use crate::policy::{forward, train_bc, MlpArchitecture, OptimizerSpec, PolicyParams};

/// Relative tolerance below which the random/optimal return spread counts
/// as degenerate and normalization is refused.
pub const DEGENERATE_SPREAD_TOL: f64 = 1e-12;

/// How to clone and score a synthetic dataset.
#[derive(Clone, Debug)]
pub struct EvalProtocol {
    /// Cloning steps per seed.
    pub training_steps: usize,
    pub optimizer: OptimizerSpec,
    /// Number of cloning seeds averaged per evaluation.
    pub n_seeds: usize,
    pub arch: MlpArchitecture,
}

impl EvalProtocol {
    /// 500 plain-gradient steps at rate 0.1, 5 seeds, default MLP widths.
    pub fn defaults(n_states: usize, n_actions: usize) -> Self {
        EvalProtocol {
            training_steps: 500,
            optimizer: OptimizerSpec::gd(0.1),
            n_seeds: 5,
            arch: MlpArchitecture::default_for(n_states, n_actions),
        }
    }

    fn check_dims(&self, state_dim: usize, n_actions: usize) -> Result<()> {
        if self.arch.n_inputs() != state_dim || self.arch.n_outputs() != n_actions {
            return Err(invalid!(
                "evaluation architecture {}->{} does not match data {}->{}",
                self.arch.n_inputs(),
                self.arch.n_outputs(),
                state_dim,
                n_actions
            ));
        }
        if self.n_seeds == 0 {
            return Err(invalid!("evaluation needs at least one seed"));
        }
        Ok(())
    }
}

/// An MDP plus the return endpoints used for score normalization.
pub struct EvalContext<'a> {
    mdp: &'a TabularMdp,
    j_random: f64,
    j_expert: f64,
}

impl<'a> EvalContext<'a> {
    /// Evaluates the uniform policy and the value-iteration greedy policy
    /// to fix the normalization endpoints. Errors if they coincide (a
    /// reward structure with nothing to learn).
    pub fn new(mdp: &'a TabularMdp) -> Result<Self> {
        let uniform = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let j_random = policy_evaluation(mdp, &uniform)?.j();
        let (_, greedy) = value_iteration(mdp, 1e-10, 1_000_000)?;
        let j_expert = policy_evaluation(mdp, &greedy)?.j();
        let spread = (j_expert - j_random).abs();
        if spread <= DEGENERATE_SPREAD_TOL * j_expert.abs().max(1.0) {
            return Err(Error::DegenerateNormalization { j_random, j_expert });
        }
        Ok(EvalContext {
            mdp,
            j_random,
            j_expert,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn j_random(&self) -> f64 {
        self.j_random
    }

    pub fn j_expert(&self) -> f64 {
        self.j_expert
    }

    /// `100 (j - j_random) / (j_expert - j_random)`.
    pub fn normalized_return(&self, j: f64) -> f64 {
        100.0 * (j - self.j_random) / (self.j_expert - self.j_random)
    }
}

/// Reads a network out into a tabular policy by evaluating it on every
/// one-hot state vector. The network input width must equal the state
/// count.
pub fn policy_from_network(
    n_states: usize,
    n_actions: usize,
    params: &PolicyParams,
) -> Result<TabularPolicy> {
    if params.arch().n_inputs() != n_states || params.arch().n_outputs() != n_actions {
        return Err(invalid!(
            "network {}->{} does not match a {}-state {}-action policy",
            params.arch().n_inputs(),
            params.arch().n_outputs(),
            n_states,
            n_actions
        ));
    }
    let tape = crate::autodiff::Tape::new();
    let mounted = params.mount(&tape);
    let mut identity = vec![0.0; n_states * n_states];
    for s in 0..n_states {
        identity[s * n_states + s] = 1.0;
    }
    let input = tape.constant(n_states, n_states, &identity);
    let probs = tape.value(forward(&tape, &mounted, input));
    TabularPolicy::new(n_states, n_actions, probs)
}

/// Clone the synthetic dataset into a fresh network (initialization fully
/// determined by `seed`).
pub fn clone_from_synthetic(
    syn: &SyntheticDataset,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<PolicyParams> {
    protocol.check_dims(syn.state_dim(), syn.n_actions())?;
    let init = PolicyParams::init(&protocol.arch, seed);
    let targets = syn.target_distributions();
    let result = train_bc(
        &init,
        syn.state_vectors(),
        &targets,
        syn.n_syn(),
        &protocol.optimizer,
        protocol.training_steps,
    )?;
    Ok(result.params)
}

/// Outcome of cloning and scoring under one seed.
#[derive(Clone, Copy, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub j: f64,
    pub normalized: f64,
}

/// Train with one seed and score the resulting policy exactly.
pub fn evaluate_seed(
    ctx: &EvalContext,
    syn: &SyntheticDataset,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<SeedOutcome> {
    let params = clone_from_synthetic(syn, protocol, seed)?;
    let policy = policy_from_network(ctx.mdp.n_states(), ctx.mdp.n_actions(), &params)?;
    let j = policy_evaluation(ctx.mdp, &policy)?.j();
    Ok(SeedOutcome {
        seed,
        j,
        normalized: ctx.normalized_return(j),
    })
}

/// Multi-seed evaluation summary.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub outcomes: Vec<SeedOutcome>,
    pub mean_j: f64,
    pub mean_normalized: f64,
    /// Sample standard deviation of the normalized scores (0 for a single
    /// seed).
    pub std_normalized: f64,
}

/// Pool per-seed outcomes into mean and sample standard deviation.
pub fn summarize(outcomes: Vec<SeedOutcome>) -> Result<Evaluation> {
    if outcomes.is_empty() {
        return Err(invalid!("cannot summarize zero outcomes"));
    }
    let n = outcomes.len() as f64;
    let mean_j = outcomes.iter().map(|o| o.j).sum::<f64>() / n;
    let mean_normalized = outcomes.iter().map(|o| o.normalized).sum::<f64>() / n;
    let std_normalized = if outcomes.len() < 2 {
        0.0
    } else {
        let var = outcomes
            .iter()
            .map(|o| {
                let d = o.normalized - mean_normalized;
                d * d
            })
            .sum::<f64>()
            / (n - 1.0);
        libm::sqrt(var)
    };
    Ok(Evaluation {
        outcomes,
        mean_j,
        mean_normalized,
        std_normalized,
    })
}

/// Evaluate under `protocol.n_seeds` consecutive seeds starting at
/// `master_seed`.
pub fn evaluate(
    ctx: &EvalContext,
    syn: &SyntheticDataset,
    protocol: &EvalProtocol,
    master_seed: u64,
) -> Result<Evaluation> {
    protocol.check_dims(syn.state_dim(), syn.n_actions())?;
    let outcomes = (0..protocol.n_seeds)
        .map(|i| evaluate_seed(ctx, syn, protocol, master_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    summarize(outcomes)
}

/// Score of a probability-averaged ensemble.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleOutcome {
    pub j: f64,
    pub normalized: f64,
    pub n_members: usize,
}

/// Train one network per seed, average their per-state action
/// distributions, and score the averaged policy.
pub fn ensemble(
    ctx: &EvalContext,
    syn: &SyntheticDataset,
    protocol: &EvalProtocol,
    seeds: &[u64],
) -> Result<EnsembleOutcome> {
    if seeds.is_empty() {
        return Err(invalid!("ensemble needs at least one seed"));
    }
    let (n_states, n_actions) = (ctx.mdp.n_states(), ctx.mdp.n_actions());
    let mut avg = vec![0.0; n_states * n_actions];
    for &seed in seeds {
        let params = clone_from_synthetic(syn, protocol, seed)?;
        let policy = policy_from_network(n_states, n_actions, &params)?;
        for (acc, &p) in avg.iter_mut().zip(policy.probs()) {
            *acc += p;
        }
    }
    let k = seeds.len() as f64;
    for v in avg.iter_mut() {
        *v /= k;
    }
    let policy = TabularPolicy::new(n_states, n_actions, avg)?;
    let j = policy_evaluation(ctx.mdp, &policy)?.j();
    Ok(EnsembleOutcome {
        j,
        normalized: ctx.normalized_return(j),
        n_members: seeds.len(),
    })
}

/// No-distillation baseline: sample `n_syn` logged transitions as the
/// synthetic set (states one-hot, targets peaked on the logged action) and
/// clone them, repeated over fresh draws; outcomes are pooled across every
/// draw and seed.
pub fn random_selection_baseline(
    ctx: &EvalContext,
    dataset: &OfflineDataset,
    n_syn: usize,
    protocol: &EvalProtocol,
    master_seed: u64,
    repeats: usize,
) -> Result<Evaluation> {
    if repeats == 0 {
        return Err(invalid!("baseline needs at least one repeat"));
    }
    let mut outcomes = Vec::with_capacity(repeats * protocol.n_seeds);
    for rep in 0..repeats {
        let draw_seed = master_seed.wrapping_add(rep as u64);
        let syn = init_synthetic(dataset, n_syn, draw_seed)?;
        let seed_base = master_seed.wrapping_add((rep * protocol.n_seeds) as u64);
        let eval = evaluate(ctx, &syn, protocol, seed_base)?;
        outcomes.extend(eval.outcomes);
    }
    summarize(outcomes)
}
