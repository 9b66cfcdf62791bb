//! Behavior distillation: compress an offline dataset into a few synthetic
//! training rows whose cloned policy performs well.
//!
//! The synthetic dataset (one-hot state vectors plus learnable target
//! logits) is optimized in a two-level loop. The inner level clones the
//! synthetic rows into a fresh network for a fixed number of recorded
//! gradient steps; the outer level measures that network against the real
//! data with one of three objectives and backpropagates through the entire
//! unrolled training run to update the synthetic rows themselves.
//!
//! Outer objectives, each a mean over a sampled batch of logged states:
//!
//! * [`Objective::Dbc`]: squared distance to one-hot encodings of the
//!   logged actions (direct cloning of the raw behavior).
//! * [`Objective::Pbc`]: squared distance to an extracted target policy's
//!   action distribution.
//! * [`Objective::AvPbc`]: the same distance weighted per action by the
//!   target policy's action values, so mistakes on high-value actions cost
//!   more; [`AvPbcMode`] picks between the full weighted sum and a
//!   sampled-action estimate.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{k_softmax_rows, Tape, Tensor};
use crate::dataset::OfflineDataset;
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate, EvalContext, EvalProtocol};
use crate::extractor::ExtractionResult;
use crate::mdp::TabularMdp;
use crate::policy::{
    forward, train_bc_recorded, MlpArchitecture, OptimizerSpec, PolicyParams, TapeParams,
};
use crate::rng::Rng;

/// Logit advantage given to the logged action when seeding synthetic rows.
pub const INIT_LOGIT_MARGIN: f64 = 4.0;

/// Outer objective family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Match one-hot logged actions.
    Dbc,
    /// Match the extracted target policy.
    Pbc,
    /// Match the extracted target policy, weighted by its action values.
    AvPbc,
}

impl Objective {
    pub fn label(&self) -> &'static str {
        match self {
            Objective::Dbc => "dbc",
            Objective::Pbc => "pbc",
            Objective::AvPbc => "av_pbc",
        }
    }

    pub fn needs_extraction(&self) -> bool {
        matches!(self, Objective::Pbc | Objective::AvPbc)
    }
}

/// How the value-weighted objective treats the action dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AvPbcMode {
    /// Weight every action's squared difference by its value.
    FullSum,
    /// Sample one action per batch state from the target policy and weight
    /// that action's squared probability difference by its value.
    Sampled,
}

/// The learnable synthetic dataset: fixed state vectors with trainable
/// target logits (targets are always the row softmax of the logits, so
/// they stay on the simplex by construction).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    n_syn: usize,
    state_dim: usize,
    n_actions: usize,
    state_vectors: Vec<f64>,
    target_logits: Vec<f64>,
}

impl SyntheticDataset {
    pub fn new(
        n_syn: usize,
        state_dim: usize,
        n_actions: usize,
        state_vectors: Vec<f64>,
        target_logits: Vec<f64>,
    ) -> Result<Self> {
        if n_syn == 0 || state_dim == 0 || n_actions == 0 {
            return Err(invalid!("synthetic dataset dimensions must be positive"));
        }
        if state_vectors.len() != n_syn * state_dim {
            return Err(invalid!(
                "state vectors have {} entries, expected {}",
                state_vectors.len(),
                n_syn * state_dim
            ));
        }
        if target_logits.len() != n_syn * n_actions {
            return Err(invalid!(
                "target logits have {} entries, expected {}",
                target_logits.len(),
                n_syn * n_actions
            ));
        }
        if state_vectors
            .iter()
            .chain(&target_logits)
            .any(|v| !v.is_finite())
        {
            return Err(invalid!("synthetic dataset entries must be finite"));
        }
        Ok(SyntheticDataset {
            n_syn,
            state_dim,
            n_actions,
            state_vectors,
            target_logits,
        })
    }

    pub fn n_syn(&self) -> usize {
        self.n_syn
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn state_vectors(&self) -> &[f64] {
        &self.state_vectors
    }

    pub fn target_logits(&self) -> &[f64] {
        &self.target_logits
    }

    /// Row-softmax of the logits: the distributions a cloning run trains
    /// toward.
    pub fn target_distributions(&self) -> Vec<f64> {
        k_softmax_rows(&self.target_logits, self.n_syn, self.n_actions)
    }
}

/// Seed a synthetic dataset from logged transitions: one-hot state
/// vectors and logits giving the logged action a [`INIT_LOGIT_MARGIN`]
/// advantage. Draws without replacement (indices sorted) when the dataset
/// is large enough, with replacement otherwise.
pub fn init_synthetic(
    dataset: &OfflineDataset,
    n_syn: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_syn == 0 {
        return Err(invalid!("need at least one synthetic row"));
    }
    if dataset.is_empty() {
        return Err(invalid!("cannot initialize from an empty dataset"));
    }
    let mut rng = Rng::seed(seed);
    let indices: Vec<usize> = if n_syn <= dataset.len() {
        let mut picked = rng.distinct_indices(dataset.len(), n_syn);
        picked.sort_unstable();
        picked
    } else {
        (0..n_syn).map(|_| rng.index(dataset.len())).collect()
    };
    let (state_dim, n_actions) = (dataset.n_states(), dataset.n_actions());
    let mut state_vectors = vec![0.0; n_syn * state_dim];
    let mut target_logits = vec![0.0; n_syn * n_actions];
    for (row, &i) in indices.iter().enumerate() {
        let tr = dataset.transitions()[i];
        state_vectors[row * state_dim + tr.state] = 1.0;
        target_logits[row * n_actions + tr.action] = INIT_LOGIT_MARGIN;
    }
    SyntheticDataset::new(n_syn, state_dim, n_actions, state_vectors, target_logits)
}

/// Inner cloning run description for the meta-gradient.
#[derive(Clone, Copy, Debug)]
pub struct InnerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Seed for the fresh network the run starts from.
    pub init_seed: u64,
}

impl InnerConfig {
    fn optimizer(&self) -> OptimizerSpec {
        if self.momentum > 0.0 {
            OptimizerSpec::gd_momentum(self.learning_rate, self.momentum)
        } else {
            OptimizerSpec::gd(self.learning_rate)
        }
    }
}

/// Gradients of an outer loss with respect to the synthetic dataset.
#[derive(Clone, Debug)]
pub struct MetaGrad {
    pub states: Vec<f64>,
    pub logits: Vec<f64>,
    pub outer_loss: f64,
}

/// Differentiate `outer_loss(trained network)` through a full inner
/// cloning run with respect to the synthetic states and logits.
///
/// The closure receives the tape and the trained parameters and must
/// return a scalar loss tensor on the same tape.
pub fn meta_gradient(
    syn: &SyntheticDataset,
    arch: &MlpArchitecture,
    inner: &InnerConfig,
    outer_loss: impl FnOnce(&Tape, &TapeParams) -> Result<Tensor>,
) -> Result<MetaGrad> {
    if arch.n_inputs() != syn.state_dim() || arch.n_outputs() != syn.n_actions() {
        return Err(invalid!(
            "architecture {}->{} does not match synthetic data {}->{}",
            arch.n_inputs(),
            arch.n_outputs(),
            syn.state_dim(),
            syn.n_actions()
        ));
    }
    let tape = Tape::new();
    let states = tape.leaf(syn.n_syn(), syn.state_dim(), syn.state_vectors());
    let logits = tape.leaf(syn.n_syn(), syn.n_actions(), syn.target_logits());
    let targets = tape.softmax_rows(logits);
    let theta0 = PolicyParams::init(arch, inner.init_seed).mount(&tape);
    let trained = train_bc_recorded(
        &tape,
        &theta0,
        states,
        targets,
        &inner.optimizer(),
        inner.steps,
    )?;
    let loss = outer_loss(&tape, &trained)?;
    let loss_value = tape.scalar_value(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite {
            what: "outer objective",
            step: inner.steps,
        });
    }
    let grads = tape.grad(loss, &[states, logits]);
    let g_states = tape.value(grads[0]);
    let g_logits = tape.value(grads[1]);
    if g_states.iter().chain(&g_logits).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "meta-gradient",
            step: inner.steps,
        });
    }
    Ok(MetaGrad {
        states: g_states,
        logits: g_logits,
        outer_loss: loss_value,
    })
}

/// Full distillation configuration with conventional defaults.
#[derive(Clone, Debug)]
pub struct DistillConfig {
    pub objective: Objective,
    pub n_syn: usize,
    /// Inner cloning steps unrolled per outer step.
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub inner_lr: f64,
    pub inner_momentum: f64,
    pub outer_lr: f64,
    pub outer_momentum: f64,
    /// Logged transitions sampled (with replacement) per outer step.
    pub batch_size: usize,
    pub av_pbc_mode: AvPbcMode,
    /// Outer steps between evaluation records.
    pub eval_interval: usize,
    pub base_seed: u64,
    /// Network shape; defaults to the standard MLP for the environment.
    pub arch: Option<MlpArchitecture>,
    /// Scoring protocol; defaults to [`EvalProtocol::defaults`].
    pub protocol: Option<EvalProtocol>,
}

impl DistillConfig {
    pub fn new(objective: Objective, base_seed: u64) -> Self {
        DistillConfig {
            objective,
            n_syn: 16,
            inner_steps: 30,
            outer_steps: 2000,
            inner_lr: 0.1,
            inner_momentum: 0.0,
            outer_lr: 0.1,
            outer_momentum: 0.9,
            batch_size: 64,
            av_pbc_mode: AvPbcMode::FullSum,
            eval_interval: 100,
            base_seed,
            arch: None,
            protocol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_syn == 0 {
            return Err(invalid!("n_syn must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        if self.eval_interval == 0 {
            return Err(invalid!("eval interval must be positive"));
        }
        for (name, v) in [
            ("inner learning rate", self.inner_lr),
            ("outer learning rate", self.outer_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("inner momentum", self.inner_momentum),
            ("outer momentum", self.outer_momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid!("{name} must lie in [0, 1), got {v}"));
            }
        }
        Ok(())
    }
}

/// One evaluation snapshot during distillation.
#[derive(Clone, Copy, Debug)]
pub struct EvalRecord {
    pub step: usize,
    /// Outer objective value at this step (before the update).
    pub outer_loss: f64,
    /// Mean normalized return over the protocol's cloning seeds.
    pub return_mean: f64,
    pub return_std: f64,
}

/// Distillation outcome: the learning curve and the final synthetic set.
#[derive(Clone, Debug)]
pub struct DistillReport {
    pub objective: Objective,
    pub records: Vec<EvalRecord>,
    pub synthetic: SyntheticDataset,
}

impl DistillReport {
    /// Mean normalized return over the last up-to-5 records; a smoothed
    /// final score.
    pub fn final_score(&self) -> f64 {
        let tail = self.records.len().min(5);
        let slice = &self.records[self.records.len() - tail..];
        slice.iter().map(|r| r.return_mean).sum::<f64>() / tail as f64
    }

    /// First recorded step whose mean return reaches `fraction` of the
    /// final score; `None` if no record does.
    pub fn steps_to_fraction(&self, fraction: f64) -> Option<usize> {
        let target = fraction * self.final_score();
        self.records
            .iter()
            .find(|r| r.return_mean >= target)
            .map(|r| r.step)
    }
}

/// A drawn outer batch in tensor-ready flat form.
struct Batch {
    states: Vec<f64>,
    /// One-hot logged actions (used by DBC and the sampled mode mask).
    action_onehots: Vec<f64>,
    /// Target-policy rows for the batch states (PBC family).
    target_rows: Vec<f64>,
    /// Target action values for the batch states (value weighting).
    q_rows: Vec<f64>,
    size: usize,
}

fn draw_batch(
    dataset: &OfflineDataset,
    extraction: Option<&ExtractionResult>,
    config: &DistillConfig,
    rng: &mut Rng,
    n_states: usize,
    n_actions: usize,
) -> Batch {
    let b = config.batch_size;
    let mut states = vec![0.0; b * n_states];
    let mut action_onehots = vec![0.0; b * n_actions];
    let mut target_rows = vec![0.0; b * n_actions];
    let mut q_rows = vec![0.0; b * n_actions];
    for i in 0..b {
        let tr = dataset.transitions()[rng.index(dataset.len())];
        states[i * n_states + tr.state] = 1.0;
        if let Some(ex) = extraction {
            let row = ex.pi_star.row(tr.state);
            target_rows[i * n_actions..][..n_actions].copy_from_slice(row);
            q_rows[i * n_actions..][..n_actions]
                .copy_from_slice(&ex.q_star[tr.state * n_actions..][..n_actions]);
            // Sampled mode draws its action from the target policy rather
            // than reusing the logged one.
            let a = if config.objective == Objective::AvPbc
                && config.av_pbc_mode == AvPbcMode::Sampled
            {
                rng.categorical(row)
            } else {
                tr.action
            };
            action_onehots[i * n_actions + a] = 1.0;
        } else {
            action_onehots[i * n_actions + tr.action] = 1.0;
        }
    }
    Batch {
        states,
        action_onehots,
        target_rows,
        q_rows,
        size: b,
    }
}

/// Squared-difference loss of network probabilities against `target`
/// rows, averaged over the batch.
fn mean_row_sq_loss(tape: &Tape, probs: Tensor, targets: Tensor, batch: usize) -> Tensor {
    let diff = tape.sub(probs, targets);
    tape.scale(tape.sum(tape.square(diff)), 1.0 / batch as f64)
}

fn outer_loss_on_batch(
    tape: &Tape,
    params: &TapeParams,
    batch: &Batch,
    objective: Objective,
    mode: AvPbcMode,
    n_states: usize,
    n_actions: usize,
) -> Tensor {
    let s = tape.constant(batch.size, n_states, &batch.states);
    let probs = forward(tape, params, s);
    match objective {
        Objective::Dbc => {
            let onehots = tape.constant(batch.size, n_actions, &batch.action_onehots);
            mean_row_sq_loss(tape, probs, onehots, batch.size)
        }
        Objective::Pbc => {
            let targets = tape.constant(batch.size, n_actions, &batch.target_rows);
            mean_row_sq_loss(tape, probs, targets, batch.size)
        }
        Objective::AvPbc => match mode {
            AvPbcMode::FullSum => {
                let targets = tape.constant(batch.size, n_actions, &batch.target_rows);
                let weights = tape.constant(batch.size, n_actions, &batch.q_rows);
                let diff = tape.sub(probs, targets);
                let weighted = tape.mul(weights, tape.square(diff));
                tape.scale(tape.sum(weighted), 1.0 / batch.size as f64)
            }
            AvPbcMode::Sampled => {
                // Mask out everything except the sampled action, then
                // compare scalar probabilities per row.
                let mask = tape.constant(batch.size, n_actions, &batch.action_onehots);
                let picked = tape.sum_rows(tape.mul(probs, mask));
                let mut tgt = vec![0.0; batch.size];
                let mut qw = vec![0.0; batch.size];
                for i in 0..batch.size {
                    for a in 0..n_actions {
                        if batch.action_onehots[i * n_actions + a] == 1.0 {
                            tgt[i] = batch.target_rows[i * n_actions + a];
                            qw[i] = batch.q_rows[i * n_actions + a];
                        }
                    }
                }
                let target = tape.constant(batch.size, 1, &tgt);
                let weights = tape.constant(batch.size, 1, &qw);
                let diff = tape.sub(picked, target);
                let weighted = tape.mul(weights, tape.square(diff));
                tape.scale(tape.sum(weighted), 1.0 / batch.size as f64)
            }
        },
    }
}

/// Run the full two-level distillation loop.
///
/// `extraction` is required for the PBC-family objectives. Evaluation
/// records are taken at step 0, every `eval_interval` outer steps, and at
/// the final step, each scored before that step's update.
pub fn distill(
    mdp: &TabularMdp,
    dataset: &OfflineDataset,
    extraction: Option<&ExtractionResult>,
    config: &DistillConfig,
) -> Result<DistillReport> {
    config.validate()?;
    if dataset.n_states() != mdp.n_states() || dataset.n_actions() != mdp.n_actions() {
        return Err(invalid!(
            "dataset dimensions {}x{} do not match MDP {}x{}",
            dataset.n_states(),
            dataset.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        ));
    }
    if config.objective.needs_extraction() {
        let ex = extraction.ok_or_else(|| {
            invalid!(
                "objective {} needs an extracted target policy",
                config.objective.label()
            )
        })?;
        if ex.pi_star.n_states() != mdp.n_states() || ex.pi_star.n_actions() != mdp.n_actions() {
            return Err(invalid!("extraction dimensions do not match the MDP"));
        }
        if ex.q_star.iter().any(|&q| !q.is_finite() || q < 0.0) {
            return Err(invalid!(
                "extracted action values must be finite and nonnegative"
            ));
        }
    }
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let arch = config
        .arch
        .clone()
        .unwrap_or_else(|| MlpArchitecture::default_for(n_states, n_actions));
    if arch.n_inputs() != n_states || arch.n_outputs() != n_actions {
        return Err(invalid!(
            "architecture {}->{} does not match the {}-state {}-action environment",
            arch.n_inputs(),
            arch.n_outputs(),
            n_states,
            n_actions
        ));
    }
    let protocol = config
        .protocol
        .clone()
        .unwrap_or_else(|| EvalProtocol::defaults(n_states, n_actions));
    let ctx = EvalContext::new(mdp)?;
    let used_extraction = if config.objective.needs_extraction() {
        extraction
    } else {
        None
    };

    let mut syn = init_synthetic(dataset, config.n_syn, config.base_seed)?;
    let mut batch_rng = Rng::seed(config.base_seed);
    let mut m_states = vec![0.0; syn.state_vectors.len()];
    let mut m_logits = vec![0.0; syn.target_logits.len()];
    let mut records = Vec::new();

    for t in 0..=config.outer_steps {
        let is_final = t == config.outer_steps;
        let eval_now = t == 0 || is_final || t % config.eval_interval == 0;
        let batch = draw_batch(
            dataset,
            used_extraction,
            config,
            &mut batch_rng,
            n_states,
            n_actions,
        );
        let inner = InnerConfig {
            steps: config.inner_steps,
            learning_rate: config.inner_lr,
            momentum: config.inner_momentum,
            init_seed: config.base_seed.wrapping_add(t as u64),
        };
        let mg = meta_gradient(&syn, &arch, &inner, |tape, params| {
            Ok(outer_loss_on_batch(
                tape,
                params,
                &batch,
                config.objective,
                config.av_pbc_mode,
                n_states,
                n_actions,
            ))
        })?;
        if eval_now {
            let eval = evaluate(&ctx, &syn, &protocol, config.base_seed)?;
            records.push(EvalRecord {
                step: t,
                outer_loss: mg.outer_loss,
                return_mean: eval.mean_normalized,
                return_std: eval.std_normalized,
            });
        }
        if is_final {
            break;
        }
        for (m, (x, g)) in m_states
            .iter_mut()
            .zip(syn.state_vectors.iter_mut().zip(&mg.states))
        {
            *m = config.outer_momentum * *m + g;
            *x -= config.outer_lr * *m;
        }
        for (m, (x, g)) in m_logits
            .iter_mut()
            .zip(syn.target_logits.iter_mut().zip(&mg.logits))
        {
            *m = config.outer_momentum * *m + g;
            *x -= config.outer_lr * *m;
        }
        if syn
            .state_vectors
            .iter()
            .chain(&syn.target_logits)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                what: "synthetic dataset",
                step: t,
            });
        }
    }

    Ok(DistillReport {
        objective: config.objective,
        records,
        synthetic: syn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        build_behavior_policy, collect_dataset, make_gridworld, BehaviorTier, BehaviorTierConfig,
    };
    use crate::extractor::{extract, ExtractionConfig, ResolvedExtractionConfig};
    use crate::mdp::TabularPolicy;

    fn tiny_setup() -> (TabularMdp, OfflineDataset) {
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.0, 0.9).unwrap();
        let config = BehaviorTierConfig::tier(BehaviorTier::Medium, 3);
        let behavior = build_behavior_policy(&mdp, &config).unwrap();
        let ds = collect_dataset(&mdp, &behavior, 400, 3, config.label()).unwrap();
        (mdp, ds)
    }

    #[test]
    fn init_synthetic_uses_distinct_sorted_rows_when_possible() {
        let (_, ds) = tiny_setup();
        let syn = init_synthetic(&ds, 10, 7).unwrap();
        assert_eq!(syn.n_syn(), 10);
        // Every state vector is one-hot.
        for row in syn.state_vectors().chunks(syn.state_dim()) {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(
                row.iter().filter(|&&v| v == 0.0).count(),
                syn.state_dim() - 1
            );
        }
        // Logit rows carry the margin on exactly one action.
        for row in syn.target_logits().chunks(syn.n_actions()) {
            assert_eq!(row.iter().filter(|&&v| v == INIT_LOGIT_MARGIN).count(), 1);
        }
        let again = init_synthetic(&ds, 10, 7).unwrap();
        assert_eq!(syn, again);
        let different = init_synthetic(&ds, 10, 8).unwrap();
        assert_ne!(syn, different);
    }

    #[test]
    fn init_synthetic_with_replacement_when_oversized() {
        let (_, ds) = tiny_setup();
        let small = OfflineDataset::new(
            ds.transitions()[..4].to_vec(),
            "medium",
            1,
            ds.n_states(),
            ds.n_actions(),
        )
        .unwrap();
        let syn = init_synthetic(&small, 9, 1).unwrap();
        assert_eq!(syn.n_syn(), 9);
        assert!(init_synthetic(&small, 0, 1).is_err());
    }

    #[test]
    fn target_distributions_favor_the_margin_action() {
        let (_, ds) = tiny_setup();
        let syn = init_synthetic(&ds, 6, 2).unwrap();
        let dists = syn.target_distributions();
        for (probs, logits) in dists
            .chunks(syn.n_actions())
            .zip(syn.target_logits().chunks(syn.n_actions()))
        {
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let hot = logits.iter().position(|&v| v == INIT_LOGIT_MARGIN).unwrap();
            for (a, &p) in probs.iter().enumerate() {
                if a != hot {
                    assert!(probs[hot] > p);
                }
            }
        }
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        // Small linear network, two inner steps, quadratic outer target.
        let arch = MlpArchitecture::new(vec![3, 2]).unwrap();
        let syn = SyntheticDataset::new(
            2,
            3,
            2,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.4, -0.2, 0.1, 0.7],
        )
        .unwrap();
        let inner = InnerConfig {
            steps: 2,
            learning_rate: 0.3,
            momentum: 0.0,
            init_seed: 19,
        };
        let probe_states = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let probe_targets = [0.9, 0.1, 0.2, 0.8];
        let outer = |tape: &Tape, params: &TapeParams| {
            let s = tape.constant(2, 3, &probe_states);
            let t = tape.constant(2, 2, &probe_targets);
            let p = forward(tape, params, s);
            Ok(tape.scale(tape.sum(tape.square(tape.sub(p, t))), 0.5))
        };
        let mg = meta_gradient(&syn, &arch, &inner, outer).unwrap();

        // Value-only oracle: retrain from scratch at perturbed inputs.
        let loss_at = |sv: &[f64], tl: &[f64]| -> f64 {
            let syn = SyntheticDataset::new(2, 3, 2, sv.to_vec(), tl.to_vec()).unwrap();
            let init = PolicyParams::init(&arch, 19);
            let targets = syn.target_distributions();
            let trained = crate::policy::train_bc(
                &init,
                syn.state_vectors(),
                &targets,
                2,
                &OptimizerSpec::gd(0.3),
                2,
            )
            .unwrap();
            let tape = Tape::new();
            let mounted = trained.params.mount(&tape);
            let s = tape.constant(2, 3, &probe_states);
            let t = tape.constant(2, 2, &probe_targets);
            let p = forward(&tape, &mounted, s);
            tape.scalar_value(tape.scale(tape.sum(tape.square(tape.sub(p, t))), 0.5))
        };
        let h = 1e-6;
        for i in 0..syn.state_vectors().len() {
            let mut hi = syn.state_vectors().to_vec();
            let mut lo = hi.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd =
                (loss_at(&hi, syn.target_logits()) - loss_at(&lo, syn.target_logits())) / (2.0 * h);
            let err = (mg.states[i] - fd).abs() / mg.states[i].abs().max(fd.abs()).max(1e-8);
            assert!(err < 1e-5, "state coord {i}: ad {} fd {fd}", mg.states[i]);
        }
        for i in 0..syn.target_logits().len() {
            let mut hi = syn.target_logits().to_vec();
            let mut lo = hi.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd =
                (loss_at(syn.state_vectors(), &hi) - loss_at(syn.state_vectors(), &lo)) / (2.0 * h);
            let err = (mg.logits[i] - fd).abs() / mg.logits[i].abs().max(fd.abs()).max(1e-8);
            assert!(err < 1e-5, "logit coord {i}: ad {} fd {fd}", mg.logits[i]);
        }
    }

    #[test]
    fn meta_gradient_with_zero_inner_steps_ignores_synthetic_data() {
        let arch = MlpArchitecture::new(vec![3, 2]).unwrap();
        let syn = SyntheticDataset::new(1, 3, 2, vec![1.0, 0.0, 0.0], vec![0.3, -0.3]).unwrap();
        let inner = InnerConfig {
            steps: 0,
            learning_rate: 0.1,
            momentum: 0.0,
            init_seed: 4,
        };
        let mg = meta_gradient(&syn, &arch, &inner, |tape, params| {
            let s = tape.constant(1, 3, &[0.0, 1.0, 0.0]);
            let p = forward(tape, params, s);
            Ok(tape.sum(tape.square(p)))
        })
        .unwrap();
        assert!(mg.states.iter().all(|&g| g == 0.0));
        assert!(mg.logits.iter().all(|&g| g == 0.0));
        assert!(mg.outer_loss.is_finite());
    }

    fn fake_constant_extraction(mdp: &TabularMdp, q_value: f64) -> ExtractionResult {
        ExtractionResult {
            pi_star: TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()),
            q_star: vec![q_value; mdp.n_states() * mdp.n_actions()],
            config: ResolvedExtractionConfig {
                gamma: mdp.gamma(),
                pessimism_penalty: 0.0,
                count_threshold: 0,
                vi_tol: 1e-10,
                vi_max_iter: 1,
                softmax_tau: 0.05,
            },
        }
    }

    #[test]
    fn constant_value_weights_reduce_av_pbc_to_scaled_pbc() {
        // With q identically 2, the weighted objective is exactly twice
        // the unweighted one, term by term (doubling commutes with every
        // addition), so the loss values match bitwise.
        let (mdp, ds) = tiny_setup();
        let ex = fake_constant_extraction(&mdp, 2.0);
        let arch = MlpArchitecture::new(vec![9, 4]).unwrap();
        let params = PolicyParams::init(&arch, 5);
        let mut rng = Rng::seed(6);
        let mut cfg = DistillConfig::new(Objective::AvPbc, 0);
        cfg.batch_size = 16;
        let batch = draw_batch(&ds, Some(&ex), &cfg, &mut rng, 9, 4);
        let tape = Tape::new();
        let mounted = params.mount(&tape);
        let av = outer_loss_on_batch(
            &tape,
            &mounted,
            &batch,
            Objective::AvPbc,
            AvPbcMode::FullSum,
            9,
            4,
        );
        let pbc = outer_loss_on_batch(
            &tape,
            &mounted,
            &batch,
            Objective::Pbc,
            AvPbcMode::FullSum,
            9,
            4,
        );
        let av_v = tape.scalar_value(av);
        let pbc_v = tape.scalar_value(pbc);
        assert_eq!(av_v.to_bits(), (2.0 * pbc_v).to_bits());
    }

    #[test]
    fn constant_value_weights_link_av_pbc_and_pbc_updates() {
        // One outer step of the weighted objective at half the rate equals
        // one unweighted step at the full rate.
        let (mdp, ds) = tiny_setup();
        let ex = fake_constant_extraction(&mdp, 2.0);
        let mut base = DistillConfig::new(Objective::AvPbc, 42);
        base.n_syn = 4;
        base.inner_steps = 3;
        base.outer_steps = 1;
        base.outer_momentum = 0.0;
        base.batch_size = 8;
        base.eval_interval = 1;
        let mut protocol = EvalProtocol::defaults(9, 4);
        protocol.training_steps = 5;
        protocol.n_seeds = 1;
        base.protocol = Some(protocol);

        let mut av_cfg = base.clone();
        av_cfg.outer_lr = 0.05;
        let av = distill(&mdp, &ds, Some(&ex), &av_cfg).unwrap();

        let mut pbc_cfg = base.clone();
        pbc_cfg.objective = Objective::Pbc;
        pbc_cfg.outer_lr = 0.1;
        let pbc = distill(&mdp, &ds, Some(&ex), &pbc_cfg).unwrap();

        for (a, b) in av
            .synthetic
            .target_logits()
            .iter()
            .zip(pbc.synthetic.target_logits())
        {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn distill_is_deterministic_and_records_on_schedule() {
        let (mdp, ds) = tiny_setup();
        let mut cfg = DistillConfig::new(Objective::Dbc, 17);
        cfg.n_syn = 4;
        cfg.inner_steps = 2;
        cfg.outer_steps = 3;
        cfg.batch_size = 8;
        cfg.eval_interval = 2;
        let mut protocol = EvalProtocol::defaults(9, 4);
        protocol.training_steps = 10;
        protocol.n_seeds = 2;
        cfg.protocol = Some(protocol);
        let a = distill(&mdp, &ds, None, &cfg).unwrap();
        let b = distill(&mdp, &ds, None, &cfg).unwrap();
        let steps: Vec<usize> = a.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 2, 3]);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.outer_loss.to_bits(), y.outer_loss.to_bits());
            assert_eq!(x.return_mean.to_bits(), y.return_mean.to_bits());
        }
        assert_eq!(a.synthetic, b.synthetic);
    }

    #[test]
    fn zero_outer_steps_yields_single_record() {
        let (mdp, ds) = tiny_setup();
        let mut cfg = DistillConfig::new(Objective::Dbc, 1);
        cfg.n_syn = 4;
        cfg.inner_steps = 2;
        cfg.outer_steps = 0;
        cfg.batch_size = 4;
        let mut protocol = EvalProtocol::defaults(9, 4);
        protocol.training_steps = 5;
        protocol.n_seeds = 1;
        cfg.protocol = Some(protocol);
        let report = distill(&mdp, &ds, None, &cfg).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].step, 0);
        let syn = init_synthetic(&ds, 4, 1).unwrap();
        assert_eq!(report.synthetic, syn);
    }

    #[test]
    fn pbc_objective_requires_extraction() {
        let (mdp, ds) = tiny_setup();
        let cfg = DistillConfig::new(Objective::Pbc, 1);
        assert!(matches!(
            distill(&mdp, &ds, None, &cfg),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn outer_loss_improves_on_a_short_run() {
        // Collect with a near-uniform behavior so the initial synthetic
        // rows mostly encode non-greedy actions: the starting objective is
        // large and optimization has a clear direction.
        let mdp = make_gridworld(3, 3, 1.0, 0.0, 0.0, 0.9).unwrap();
        let config = BehaviorTierConfig::custom(
            "hot",
            vec![crate::dataset::TierComponent {
                temperature: 3.0,
                weight: 1.0,
            }],
            13,
        )
        .unwrap();
        let behavior = build_behavior_policy(&mdp, &config).unwrap();
        let ds = collect_dataset(&mdp, &behavior, 400, 13, config.label()).unwrap();
        let ex = extract(&ds, &ExtractionConfig::new(mdp.gamma())).unwrap();
        let mut cfg = DistillConfig::new(Objective::Pbc, 33);
        cfg.n_syn = 6;
        cfg.inner_steps = 10;
        cfg.outer_steps = 100;
        cfg.batch_size = 128;
        cfg.eval_interval = 50;
        let mut protocol = EvalProtocol::defaults(9, 4);
        protocol.training_steps = 20;
        protocol.n_seeds = 1;
        cfg.protocol = Some(protocol);
        let report = distill(&mdp, &ds, Some(&ex), &cfg).unwrap();
        let first = report.records.first().unwrap().outer_loss;
        let last = report.records.last().unwrap().outer_loss;
        assert!(
            last < 0.9 * first,
            "outer loss {first} -> {last} did not improve"
        );
    }

    #[test]
    fn sampled_mode_runs_and_stays_finite() {
        let (mdp, ds) = tiny_setup();
        let ex = extract(&ds, &ExtractionConfig::new(mdp.gamma())).unwrap();
        let mut cfg = DistillConfig::new(Objective::AvPbc, 8);
        cfg.av_pbc_mode = AvPbcMode::Sampled;
        cfg.n_syn = 4;
        cfg.inner_steps = 3;
        cfg.outer_steps = 5;
        cfg.batch_size = 16;
        cfg.eval_interval = 5;
        let mut protocol = EvalProtocol::defaults(9, 4);
        protocol.training_steps = 5;
        protocol.n_seeds = 1;
        cfg.protocol = Some(protocol);
        let report = distill(&mdp, &ds, Some(&ex), &cfg).unwrap();
        assert!(report.records.iter().all(|r| r.outer_loss.is_finite()));
    }

    #[test]
    fn report_helpers_summarize_records() {
        let records = vec![
            EvalRecord {
                step: 0,
                outer_loss: 1.0,
                return_mean: 10.0,
                return_std: 1.0,
            },
            EvalRecord {
                step: 100,
                outer_loss: 0.5,
                return_mean: 60.0,
                return_std: 1.0,
            },
            EvalRecord {
                step: 200,
                outer_loss: 0.2,
                return_mean: 80.0,
                return_std: 1.0,
            },
        ];
        let syn = SyntheticDataset::new(1, 1, 2, vec![1.0], vec![0.0, 0.0]).unwrap();
        let report = DistillReport {
            objective: Objective::Pbc,
            records,
            synthetic: syn,
        };
        assert!((report.final_score() - 50.0).abs() < 1e-12);
        assert_eq!(report.steps_to_fraction(0.9), Some(100));
        assert_eq!(report.steps_to_fraction(1.5), Some(200));
    }
}
