//! Softmax-output MLP policies and behavioral-cloning training.
//!
//! Training runs in two interchangeable modes built on the same single-step
//! code path:
//!
//! * value mode ([`train_bc`]) applies each update on a throwaway tape and
//!   keeps only parameter values; this is the cheap mode used for
//!   evaluation-time cloning.
//! * recorded mode ([`train_bc_recorded`]) unrolls every update on one
//!   persistent tape so the entire optimization is differentiable; the
//!   distillation loop backpropagates through it.
//!
//! Because both modes execute identical tape operations step by step, they
//! produce bitwise-identical parameters; a test pins this down. Adaptive
//! optimizers (the Adam family) are value-mode only: their rescaling is not
//! expressed in tape primitives.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Default hidden width used by [`MlpArchitecture::default_for`].
pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

/// Layer widths of an MLP head ending in a row-wise softmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpArchitecture {
    widths: Vec<usize>,
    residual: bool,
}

impl MlpArchitecture {
    /// `widths[0]` is the input dimension, `widths[last]` the number of
    /// actions; at least one affine layer is required.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid!(
                "architecture needs at least [input, output] widths, got {}",
                widths.len()
            ));
        }
        if widths.contains(&0) {
            return Err(invalid!("architecture widths must be positive"));
        }
        Ok(MlpArchitecture {
            widths,
            residual: false,
        })
    }

    /// Two hidden layers of [`DEFAULT_HIDDEN_WIDTH`].
    pub fn default_for(n_inputs: usize, n_outputs: usize) -> Self {
        MlpArchitecture {
            widths: vec![
                n_inputs,
                DEFAULT_HIDDEN_WIDTH,
                DEFAULT_HIDDEN_WIDTH,
                n_outputs,
            ],
            residual: false,
        }
    }

    /// Enable skip connections across hidden layers whose input and output
    /// widths match; other layers are unaffected.
    pub fn with_residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.widths.last().expect("validated: at least two widths")
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Total scalar parameter count (weights plus biases).
    pub fn n_params(&self) -> usize {
        self.layer_dims().map(|(i, o)| i * o + o).sum()
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.widths.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Optimizer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    /// Plain gradient descent.
    Gd,
    /// Classic (heavy-ball) momentum: `v = mu v + g`, `theta -= lr v`.
    GdMomentum,
    /// Adam-style adaptive moments with bias correction.
    AdamStyle,
    /// Adam with decoupled weight decay.
    AdamWStyle,
}

/// Fully-specified optimizer configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimKind,
    pub learning_rate: f64,
    /// Heavy-ball coefficient; only read by [`OptimKind::GdMomentum`].
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay; only read by [`OptimKind::AdamWStyle`].
    pub weight_decay: f64,
}

impl OptimizerSpec {
    pub fn gd(learning_rate: f64) -> Self {
        OptimizerSpec {
            kind: OptimKind::Gd,
            learning_rate,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn gd_momentum(learning_rate: f64, momentum: f64) -> Self {
        OptimizerSpec {
            kind: OptimKind::GdMomentum,
            momentum,
            ..Self::gd(learning_rate)
        }
    }

    pub fn adam_style(learning_rate: f64) -> Self {
        OptimizerSpec {
            kind: OptimKind::AdamStyle,
            ..Self::gd(learning_rate)
        }
    }

    pub fn adamw_style(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerSpec {
            kind: OptimKind::AdamWStyle,
            weight_decay,
            ..Self::gd(learning_rate)
        }
    }

    /// Whether the update rule is expressible as differentiable tape
    /// operations (required by [`train_bc_recorded`]).
    pub fn supports_recorded(&self) -> bool {
        matches!(self.kind, OptimKind::Gd | OptimKind::GdMomentum)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
}

/// Concrete MLP parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    arch: MlpArchitecture,
    layers: Vec<Layer>,
}

impl PolicyParams {
    /// Xavier-uniform weights (`|w| <= sqrt(6 / (fan_in + fan_out))`),
    /// zero biases; fully determined by the seed.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Self {
        let mut rng = Rng::seed(seed);
        let layers = arch
            .layer_dims()
            .map(|(fan_in, fan_out)| {
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.range(-limit, limit))
                    .collect();
                Layer {
                    w,
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        PolicyParams {
            arch: arch.clone(),
            layers,
        }
    }

    /// Rebuild from explicit per-layer weight and bias vectors (row-major
    /// `fan_in x fan_out` weights).
    pub fn from_layers(arch: &MlpArchitecture, layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if layers.len() != arch.n_layers() {
            return Err(invalid!(
                "expected {} layers, got {}",
                arch.n_layers(),
                layers.len()
            ));
        }
        let mut built = Vec::with_capacity(layers.len());
        for ((fan_in, fan_out), (w, b)) in arch.layer_dims().zip(layers) {
            if w.len() != fan_in * fan_out {
                return Err(invalid!(
                    "layer weight length {} does not match {}x{}",
                    w.len(),
                    fan_in,
                    fan_out
                ));
            }
            if b.len() != fan_out {
                return Err(invalid!(
                    "layer bias length {} does not match width {}",
                    b.len(),
                    fan_out
                ));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(invalid!("layer parameters must be finite"));
            }
            built.push(Layer { w, b });
        }
        Ok(PolicyParams {
            arch: arch.clone(),
            layers: built,
        })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.layers[layer].w
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.layers[layer].b
    }

    /// All parameters in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.n_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    /// Inverse of [`PolicyParams::flatten`].
    pub fn from_flat(arch: &MlpArchitecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.n_params() {
            return Err(invalid!(
                "expected {} parameters, got {}",
                arch.n_params(),
                flat.len()
            ));
        }
        let mut cursor = 0;
        let mut layers = Vec::with_capacity(arch.n_layers());
        for (fan_in, fan_out) in arch.layer_dims() {
            let w = flat[cursor..cursor + fan_in * fan_out].to_vec();
            cursor += fan_in * fan_out;
            let b = flat[cursor..cursor + fan_out].to_vec();
            cursor += fan_out;
            layers.push((w, b));
        }
        Self::from_layers(arch, layers)
    }

    /// Mount as differentiable leaves on a tape.
    pub fn mount(&self, tape: &Tape) -> TapeParams {
        let layers = self
            .layers
            .iter()
            .zip(self.arch.layer_dims())
            .map(|(layer, (fan_in, fan_out))| {
                (
                    tape.leaf(fan_in, fan_out, &layer.w),
                    tape.leaf(1, fan_out, &layer.b),
                )
            })
            .collect();
        TapeParams {
            arch: self.arch.clone(),
            layers,
        }
    }
}

/// MLP parameters living as tensors on a tape.
#[derive(Clone, Debug)]
pub struct TapeParams {
    arch: MlpArchitecture,
    layers: Vec<(Tensor, Tensor)>,
}

impl TapeParams {
    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    /// Flat tensor list in [`PolicyParams::flatten`] order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Read the current values back into a [`PolicyParams`].
    pub fn snapshot(&self, tape: &Tape) -> PolicyParams {
        let layers = self
            .layers
            .iter()
            .map(|&(w, b)| Layer {
                w: tape.value(w),
                b: tape.value(b),
            })
            .collect();
        PolicyParams {
            arch: self.arch.clone(),
            layers,
        }
    }

    fn from_tensor_list(arch: &MlpArchitecture, tensors: &[Tensor]) -> Self {
        debug_assert_eq!(tensors.len(), 2 * arch.n_layers());
        TapeParams {
            arch: arch.clone(),
            layers: tensors.chunks(2).map(|p| (p[0], p[1])).collect(),
        }
    }
}

/// Forward pass: relu hidden layers (with optional matching-width skip
/// connections) and a row-softmax head. `states` is `n x n_inputs`; the
/// result rows are action distributions.
pub fn forward(tape: &Tape, params: &TapeParams, states: Tensor) -> Tensor {
    let n_layers = params.layers.len();
    let mut h = states;
    for (i, &(w, b)) in params.layers.iter().enumerate() {
        let z = tape.add_row(tape.matmul(h, w), b);
        if i + 1 == n_layers {
            return tape.softmax_rows(z);
        }
        let a = tape.relu(z);
        h = if params.arch.residual && h.cols() == a.cols() {
            tape.add(a, h)
        } else {
            a
        };
    }
    unreachable!("validated: at least one layer")
}

/// Cloning loss: mean over rows of the squared distance between the
/// predicted action distribution and the target row.
pub fn bc_loss(tape: &Tape, params: &TapeParams, states: Tensor, targets: Tensor) -> Tensor {
    let probs = forward(tape, params, states);
    let diff = tape.sub(probs, targets);
    tape.scale(tape.sum(tape.square(diff)), 1.0 / states.rows() as f64)
}

/// One descent update expressed in tape operations. Shared by both training
/// modes so their arithmetic is identical operation for operation.
fn descent_step(
    tape: &Tape,
    params: &TapeParams,
    velocity: Option<&Vec<Tensor>>,
    grads: &[Tensor],
    spec: &OptimizerSpec,
) -> (TapeParams, Option<Vec<Tensor>>) {
    let tensors = params.tensors();
    let use_momentum = spec.kind == OptimKind::GdMomentum && spec.momentum > 0.0;
    let mut new_tensors = Vec::with_capacity(tensors.len());
    let mut new_velocity = if use_momentum {
        Some(Vec::with_capacity(tensors.len()))
    } else {
        None
    };
    for (i, (&theta, &g)) in tensors.iter().zip(grads).enumerate() {
        let direction = if use_momentum {
            let v = match velocity {
                Some(vs) => tape.add(tape.scale(vs[i], spec.momentum), g),
                None => g, // first step: v0 = 0 so v1 = g exactly
            };
            new_velocity.as_mut().expect("momentum enabled").push(v);
            v
        } else {
            g
        };
        new_tensors.push(tape.sub(theta, tape.scale(direction, spec.learning_rate)));
    }
    (
        TapeParams::from_tensor_list(&params.arch, &new_tensors),
        new_velocity,
    )
}

/// Outcome of a value-mode cloning run.
#[derive(Clone, Debug)]
pub struct BcTrainResult {
    pub params: PolicyParams,
    /// Loss before each update, one entry per step.
    pub losses: Vec<f64>,
}

fn check_training_data(
    arch: &MlpArchitecture,
    states: &[f64],
    targets: &[f64],
    n_rows: usize,
) -> Result<()> {
    if n_rows == 0 {
        return Err(invalid!("training data must contain at least one row"));
    }
    if states.len() != n_rows * arch.n_inputs() {
        return Err(invalid!(
            "state data length {} does not match {} rows of dimension {}",
            states.len(),
            n_rows,
            arch.n_inputs()
        ));
    }
    if targets.len() != n_rows * arch.n_outputs() {
        return Err(invalid!(
            "target data length {} does not match {} rows of dimension {}",
            targets.len(),
            n_rows,
            arch.n_outputs()
        ));
    }
    if states.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(invalid!("training data must be finite"));
    }
    Ok(())
}

/// Clone `targets` from `states` starting at `init`, returning final
/// parameters and the per-step loss trace. Supports every [`OptimKind`].
pub fn train_bc(
    init: &PolicyParams,
    states: &[f64],
    targets: &[f64],
    n_rows: usize,
    spec: &OptimizerSpec,
    steps: usize,
) -> Result<BcTrainResult> {
    spec.validate()?;
    check_training_data(&init.arch, states, targets, n_rows)?;
    match spec.kind {
        OptimKind::Gd | OptimKind::GdMomentum => {
            train_bc_tape_steps(init, states, targets, n_rows, spec, steps)
        }
        OptimKind::AdamStyle | OptimKind::AdamWStyle => {
            train_bc_adaptive(init, states, targets, n_rows, spec, steps)
        }
    }
}

fn train_bc_tape_steps(
    init: &PolicyParams,
    states: &[f64],
    targets: &[f64],
    n_rows: usize,
    spec: &OptimizerSpec,
    steps: usize,
) -> Result<BcTrainResult> {
    let mut params = init.clone();
    let mut velocity: Option<Vec<Vec<f64>>> = None;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let tape = Tape::new();
        let mounted = params.mount(&tape);
        let s = tape.constant(n_rows, init.arch.n_inputs(), states);
        let t = tape.constant(n_rows, init.arch.n_outputs(), targets);
        let loss = bc_loss(&tape, &mounted, s, t);
        let loss_value = tape.scalar_value(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: "cloning loss",
                step,
            });
        }
        losses.push(loss_value);
        let grads = tape.grad_stopped(loss, &mounted.tensors());
        let vel_tensors = velocity.as_ref().map(|vs| {
            mounted
                .tensors()
                .iter()
                .zip(vs)
                .map(|(t, v)| tape.constant(t.rows(), t.cols(), v))
                .collect::<Vec<_>>()
        });
        let (next, next_vel) = descent_step(&tape, &mounted, vel_tensors.as_ref(), &grads, spec);
        params = next.snapshot(&tape);
        velocity = next_vel.map(|vs| vs.iter().map(|&v| tape.value(v)).collect());
    }
    Ok(BcTrainResult { params, losses })
}

fn train_bc_adaptive(
    init: &PolicyParams,
    states: &[f64],
    targets: &[f64],
    n_rows: usize,
    spec: &OptimizerSpec,
    steps: usize,
) -> Result<BcTrainResult> {
    let mut flat = init.flatten();
    let mut m = vec![0.0; flat.len()];
    let mut v = vec![0.0; flat.len()];
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let params = PolicyParams::from_flat(&init.arch, &flat)?;
        let tape = Tape::new();
        let mounted = params.mount(&tape);
        let s = tape.constant(n_rows, init.arch.n_inputs(), states);
        let t = tape.constant(n_rows, init.arch.n_outputs(), targets);
        let loss = bc_loss(&tape, &mounted, s, t);
        let loss_value = tape.scalar_value(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: "cloning loss",
                step,
            });
        }
        losses.push(loss_value);
        let grads = tape.grad_stopped(loss, &mounted.tensors());
        let mut flat_grad = Vec::with_capacity(flat.len());
        for g in grads {
            flat_grad.extend(tape.value(g));
        }
        let t_step = (step + 1) as i32;
        let bc1 = 1.0 - libm::pow(spec.beta1, f64::from(t_step));
        let bc2 = 1.0 - libm::pow(spec.beta2, f64::from(t_step));
        for i in 0..flat.len() {
            let g = flat_grad[i];
            m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g;
            v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let mut update = m_hat / (libm::sqrt(v_hat) + spec.epsilon);
            if spec.kind == OptimKind::AdamWStyle {
                update += spec.weight_decay * flat[i];
            }
            flat[i] -= spec.learning_rate * update;
        }
    }
    Ok(BcTrainResult {
        params: PolicyParams::from_flat(&init.arch, &flat)?,
        losses,
    })
}

/// Unroll a cloning run on a persistent tape so the final parameters are a
/// differentiable function of `states`, `targets`, and the initial
/// parameters. Only non-adaptive optimizers are supported here.
pub fn train_bc_recorded(
    tape: &Tape,
    init: &TapeParams,
    states: Tensor,
    targets: Tensor,
    spec: &OptimizerSpec,
    steps: usize,
) -> Result<TapeParams> {
    spec.validate()?;
    if !spec.supports_recorded() {
        return Err(invalid!(
            "recorded training supports gradient descent with or without momentum only"
        ));
    }
    let mut params = init.clone();
    let mut velocity: Option<Vec<Tensor>> = None;
    for step in 0..steps {
        let loss = bc_loss(tape, &params, states, targets);
        if !tape.scalar_value(loss).is_finite() {
            return Err(Error::NonFinite {
                what: "recorded cloning loss",
                step,
            });
        }
        let grads = tape.grad_stopped(loss, &params.tensors());
        let (next, next_vel) = descent_step(tape, &params, velocity.as_ref(), &grads, spec);
        params = next;
        velocity = next_vel;
    }
    Ok(params)
}
