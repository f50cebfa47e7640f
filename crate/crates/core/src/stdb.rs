//! Spike-timing-dependent backpropagation.
//!
//! The output layer is trained on a hybrid cross-entropy over two
//! softmaxes: one over the final accumulated membrane potentials and one
//! over negated spike times. Weights receive only the membrane path;
//! the spike-time path trains the output threshold through a boxcar
//! approximation of the crossing-time derivative. Hidden layers are
//! unrolled over all timesteps with a triangular surrogate for the spike
//! derivative, and learn their weights, threshold and leak.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Split;
use crate::encoding::{Encoder, EncodingError, SpikeInputSequence};
use crate::network::{
    backprop_between, forward, predict, ForwardOptions, NetworkError, SpikeRule, TemporalTrace, Topology,
};
use crate::neuron::{surrogate, LayerParams, OutputState};
use crate::numerics::{derive_seed, rng_from_seed, Real, Tensor};
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// Loss value, both softmaxes and the gradients w.r.t. the final membrane
/// potentials and the spike times.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridLossResult {
    pub loss: f64,
    pub u_softmax: Vec<f64>,
    pub t_softmax: Vec<f64>,
    pub grad_u: Vec<f64>,
    pub grad_t: Vec<f64>,
}

fn softmax(logits: impl Iterator<Item = f64> + Clone) -> (Vec<f64>, Vec<f64>) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln() + max;
    let probs = exps.iter().map(|e| e / sum).collect();
    let log_probs = exps.iter().map(|e| e.ln() + max - log_sum).collect();
    (probs, log_probs)
}

/// `L = -log(Ũ_c · t̃_c)` with `Ũ = softmax(U^T)` and `t̃ = softmax(-t)`.
pub fn hybrid_loss<R: Real>(output: &OutputState<R>, label: usize) -> HybridLossResult {
    let (u_softmax, u_log) = softmax(output.membrane.iter().map(|u| u.as_f64()));
    let (t_softmax, t_log) = softmax(output.spike_time.iter().map(|&t| -(t as f64)));
    let loss = -(u_log[label] + t_log[label]);
    let onehot = |i: usize| if i == label { 1.0 } else { 0.0 };
    let grad_u = u_softmax.iter().enumerate().map(|(i, p)| p - onehot(i)).collect();
    let grad_t = t_softmax.iter().enumerate().map(|(i, p)| p - onehot(i)).collect();
    HybridLossResult { loss, u_softmax, t_softmax, grad_u, grad_t }
}

/// Boxcar approximation of `∂T/∂V` for one output neuron given its
/// membrane history `U^1..U^T` (with `U^0 = 0`):
/// `Σ_{t<T} t·[H(a)(|b|<β) − H(b)(|a|<β)] + T·(|c|<β)` where
/// `a = U^t − V`, `b = V − U^{t−1}`, `c = V − U^T`.
pub fn spike_time_threshold_grad(membrane: &[f64], threshold: f64, beta: f64) -> f64 {
    let total = membrane.len();
    let mut grad = 0.0;
    for t in 1..total {
        let a = membrane[t - 1] - threshold;
        let prev = if t >= 2 { membrane[t - 2] } else { 0.0 };
        let b = threshold - prev;
        let h_a = if a >= 0.0 { 1.0 } else { 0.0 };
        let h_b = if b > 0.0 { 1.0 } else { 0.0 };
        let box_a = if a.abs() < beta { 1.0 } else { 0.0 };
        let box_b = if b.abs() < beta { 1.0 } else { 0.0 };
        grad += t as f64 * (h_a * box_b - h_b * box_a);
    }
    let c = threshold - membrane[total - 1];
    if c.abs() < beta {
        grad += total as f64;
    }
    grad
}

/// Output-layer weight gradient `(Ũ − y) ⊗ Σ_t O_{L−1}^t` and threshold
/// gradient `(t̃ − y) · ∂T/∂V`.
pub fn output_layer_grads<R: Real>(
    topology: &Topology,
    trace: &TemporalTrace<R>,
    loss: &HybridLossResult,
    params: &LayerParams<R>,
    beta: f64,
) -> (Tensor<R>, R) {
    let out = topology.synapse_count() - 1;
    let synapse = topology.synapses[out].synapse;
    let layer = &trace.layers[out];
    let grad_u: Vec<R> = loss.grad_u.iter().map(|&g| R::from_f64_lossy(g)).collect();
    let mut dw = Tensor::zeros(&synapse.weight_shape());
    for x in &layer.inputs {
        synapse.weight_grad_acc(&grad_u, x, dw.data_mut());
    }
    let v = params.threshold.as_f64();
    let dv: f64 = (0..topology.num_classes())
        .map(|i| {
            let history: Vec<f64> = layer.membrane.iter().map(|u| u[i].as_f64()).collect();
            loss.grad_t[i] * spike_time_threshold_grad(&history, v, beta)
        })
        .sum();
    (dw, R::from_f64_lossy(dv))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<R = f32> {
    pub weights: Tensor<R>,
    pub threshold: R,
    pub leak: R,
}

/// Gradients for every synaptic layer; the output layer's leak entry is
/// always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<R = f32> {
    pub layers: Vec<LayerGrad<R>>,
}

impl<R: Real> GradientSet<R> {
    pub fn zeros(topology: &Topology) -> Self {
        Self {
            layers: topology
                .synapses
                .iter()
                .map(|s| LayerGrad {
                    weights: Tensor::zeros(&s.synapse.weight_shape()),
                    threshold: R::zero(),
                    leak: R::zero(),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += *y;
            }
            a.threshold += b.threshold;
            a.leak += b.leak;
        }
    }

    pub fn scale(&mut self, k: R) {
        for g in &mut self.layers {
            g.weights.data_mut().iter_mut().for_each(|v| *v *= k);
            g.threshold *= k;
            g.leak *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.threshold.is_finite() && g.leak.is_finite() && g.weights.data().iter().all(|v| v.is_finite()))
    }
}

/// Surrogate-gradient BPTT through the hidden layers. Returns gradients for
/// hidden layers only (the output layer entry is left zero).
pub fn bptt_hidden_grads<R: Real>(
    topology: &Topology,
    trace: &TemporalTrace<R>,
    params: &[LayerParams<R>],
    loss: &HybridLossResult,
    gamma: f64,
) -> GradientSet<R> {
    let mut grads = GradientSet::zeros(topology);
    let out = topology.synapse_count() - 1;
    if out == 0 {
        return grads;
    }
    let total = topology.timesteps();
    let gamma = R::from_f64_lossy(gamma);
    let grad_u: Vec<R> = loss.grad_u.iter().map(|&g| R::from_f64_lossy(g)).collect();
    let out_info = &topology.synapses[out];
    // Held-constant spike-history gate: a neuron that already fired emits
    // nothing, so its output adjoint does not reach the membrane.
    let single = trace.rule == SpikeRule::SingleSpike;

    // The output layer integrates its input without leak, so every
    // timestep's input receives the same adjoint.
    let mut into_output = vec![R::zero(); out_info.synapse.input_len()];
    out_info.synapse.backward_input_acc(params[out].weights.data(), &grad_u, &mut into_output);
    let prev_stage = topology.synapses[out - 1].stage;
    let spike_grad = backprop_between(topology, prev_stage, out_info.stage, into_output, &trace.dropout_masks);
    let mut upstream: Vec<Vec<R>> = vec![spike_grad; total];

    for l in (0..out).rev() {
        let info = &topology.synapses[l];
        let p = &params[l];
        let layer = &trace.layers[l];
        let (v, leak) = (p.threshold, p.leak);
        let inv_v = R::one() / v;
        let inv_v2 = inv_v * inv_v;
        let n = info.synapse.output_len();
        let g = &mut grads.layers[l];
        let mut carry = vec![R::zero(); n];
        let mut delta_u = vec![R::zero(); n];
        let mut next_upstream = if l > 0 { vec![vec![R::zero(); info.synapse.input_len()]; total] } else { Vec::new() };
        let (mut dv, mut dleak) = (R::zero(), R::zero());
        for t in (0..total).rev() {
            let z = &layer.z[t];
            let u = &layer.membrane[t];
            let gate = &layer.reset_gate[t];
            for i in 0..n {
                let dz = if single && layer.spiked_before[t][i] {
                    R::zero()
                } else {
                    upstream[t][i] * surrogate(z[i], gamma)
                };
                let du = dz * inv_v + leak * carry[i];
                delta_u[i] = du;
                dv += -dz * u[i] * inv_v2;
                if gate[i] {
                    dv -= du;
                }
                if t > 0 {
                    dleak += du * layer.membrane[t - 1][i];
                }
            }
            info.synapse.weight_grad_acc(&delta_u, &layer.inputs[t], g.weights.data_mut());
            if l > 0 {
                info.synapse.backward_input_acc(p.weights.data(), &delta_u, &mut next_upstream[t]);
            }
            std::mem::swap(&mut carry, &mut delta_u);
        }
        g.threshold = dv;
        g.leak = dleak;
        if l > 0 {
            let prev_stage = topology.synapses[l - 1].stage;
            upstream = next_upstream
                .into_iter()
                .map(|gr| backprop_between(topology, prev_stage, info.stage, gr, &trace.dropout_masks))
                .collect();
        }
    }
    grads
}

/// Full per-sample gradient: output layer plus hidden BPTT.
pub fn sample_gradients<R: Real>(
    topology: &Topology,
    trace: &TemporalTrace<R>,
    params: &[LayerParams<R>],
    loss: &HybridLossResult,
    gamma: f64,
    beta: f64,
) -> GradientSet<R> {
    let mut grads = bptt_hidden_grads(topology, trace, params, loss, gamma);
    let out = topology.synapse_count() - 1;
    let (dw, dv) = output_layer_grads(topology, trace, loss, &params[out], beta);
    grads.layers[out].weights = dw;
    grads.layers[out].threshold = dv;
    grads
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Bare gradient step.
    #[default]
    Sgd,
    Momentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub gamma: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub leak_min: f64,
    pub leak_max: f64,
    pub threshold_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lr_decay: 0.1,
            lr_decay_every: 10,
            gamma: 0.3,
            beta: 0.2,
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            leak_min: 0.0,
            leak_max: 1.0,
            threshold_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return bad("batch_size and lr_decay_every must be positive");
        }
        if !(self.leak_min <= self.leak_max) {
            return bad("leak clamp is empty");
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    fn clamp<R: Real>(&self, p: &mut LayerParams<R>) {
        p.leak = R::from_f64_lossy(p.leak.as_f64().clamp(self.leak_min, self.leak_max));
        p.threshold = R::from_f64_lossy(p.threshold.as_f64().max(self.threshold_floor));
    }
}

fn check_grads<R: Real>(grads: &GradientSet<R>, epoch: usize, batch: usize) -> Result<(), TrainingError> {
    if grads.is_finite() {
        Ok(())
    } else {
        Err(TrainingError::NonFinite { what: "gradient", epoch, batch })
    }
}

/// Plain gradient step with the scheduled learning rate, followed by the
/// leak and threshold clamps. The output layer keeps its leak.
pub fn optimizer_step<R: Real>(
    params: &mut [LayerParams<R>],
    grads: &GradientSet<R>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(), TrainingError> {
    check_grads(grads, epoch, 0)?;
    let lr = R::from_f64_lossy(config.lr_at(epoch));
    let last = params.len() - 1;
    for (l, (p, g)) in params.iter_mut().zip(&grads.layers).enumerate() {
        for (w, d) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *w -= lr * *d;
        }
        p.threshold -= lr * g.threshold;
        if l != last {
            p.leak -= lr * g.leak;
        }
        config.clamp(p);
    }
    Ok(())
}

/// Stateful optimiser covering the momentum and Adam variants.
#[derive(Clone, Debug)]
pub struct Optimizer<R = f32> {
    config: TrainConfig,
    first: Option<GradientSet<R>>,
    second: Option<GradientSet<R>>,
    steps: u64,
}

impl<R: Real> Optimizer<R> {
    pub fn new(config: TrainConfig) -> Self {
        Self { config, first: None, second: None, steps: 0 }
    }

    pub fn step(
        &mut self,
        params: &mut [LayerParams<R>],
        grads: &GradientSet<R>,
        epoch: usize,
        batch: usize,
    ) -> Result<(), TrainingError> {
        check_grads(grads, epoch, batch)?;
        match self.config.optimizer {
            OptimizerKind::Sgd => optimizer_step(params, grads, &self.config, epoch),
            OptimizerKind::Momentum { momentum } => {
                let mu = R::from_f64_lossy(momentum);
                let vel = self.first.get_or_insert_with(|| zeros_like(grads));
                vel.scale(mu);
                vel.add_assign(grads);
                optimizer_step(params, vel, &self.config, epoch)
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                self.steps += 1;
                let m = self.first.get_or_insert_with(|| zeros_like(grads));
                let v = self.second.get_or_insert_with(|| zeros_like(grads));
                let lr = self.config.lr_at(epoch);
                let bc1 = 1.0 - beta1.powi(self.steps as i32);
                let bc2 = 1.0 - beta2.powi(self.steps as i32);
                let update = |m: &mut R, v: &mut R, g: R| -> R {
                    let gf = g.as_f64();
                    let mf = beta1 * m.as_f64() + (1.0 - beta1) * gf;
                    let vf = beta2 * v.as_f64() + (1.0 - beta2) * gf * gf;
                    *m = R::from_f64_lossy(mf);
                    *v = R::from_f64_lossy(vf);
                    R::from_f64_lossy(lr * (mf / bc1) / ((vf / bc2).sqrt() + epsilon))
                };
                let last = params.len() - 1;
                for (l, p) in params.iter_mut().enumerate() {
                    let (ml, vl, gl) = (&mut m.layers[l], &mut v.layers[l], &grads.layers[l]);
                    for (((w, mw), vw), g) in p
                        .weights
                        .data_mut()
                        .iter_mut()
                        .zip(ml.weights.data_mut())
                        .zip(vl.weights.data_mut())
                        .zip(gl.weights.data())
                    {
                        *w -= update(mw, vw, *g);
                    }
                    p.threshold -= update(&mut ml.threshold, &mut vl.threshold, gl.threshold);
                    if l != last {
                        p.leak -= update(&mut ml.leak, &mut vl.leak, gl.leak);
                    }
                    self.config.clamp(p);
                }
                Ok(())
            }
        }
    }
}

fn zeros_like<R: Real>(g: &GradientSet<R>) -> GradientSet<R> {
    GradientSet {
        layers: g
            .layers
            .iter()
            .map(|l| LayerGrad { weights: Tensor::zeros(l.weights.shape()), threshold: R::zero(), leak: R::zero() })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamComponent {
    Weight,
    Threshold,
    Leak,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdProbe {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The perturbation changed a spike somewhere.
    pub boundary: bool,
}

/// Mean loss, mean gradients and per-sample traces of one batch.
pub type BatchGradients = (f64, GradientSet<f64>, Vec<TemporalTrace<f64>>);

/// Mean hybrid loss and mean gradients over a batch, plus each sample's
/// trace. Sample `k` uses dropout seed `derive_seed(dropout_seed, [k])`.
pub fn batch_loss_and_gradients(
    topology: &Topology,
    params: &[LayerParams<f64>],
    samples: &[(SpikeInputSequence<f64>, usize)],
    rule: SpikeRule,
    config: &TrainConfig,
    dropout_seed: u64,
) -> Result<BatchGradients, TrainingError> {
    let mut grads = GradientSet::zeros(topology);
    let mut loss = 0.0;
    let mut traces = Vec::with_capacity(samples.len());
    for (k, (input, label)) in samples.iter().enumerate() {
        let opts = ForwardOptions::train(rule, derive_seed(dropout_seed, &[k as u64]));
        let r = forward(topology, params, input, &opts)?;
        let lr = hybrid_loss(&r.output, *label);
        let trace = r.trace.expect("train mode records a trace");
        grads.add_assign(&sample_gradients(topology, &trace, params, &lr, config.gamma, config.beta));
        loss += lr.loss;
        traces.push(trace);
    }
    let n = samples.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads, traces))
}

/// Central-difference probe of one parameter against the analytic
/// gradient of the batch-mean loss. Both perturbed runs reuse the dropout
/// masks of the unperturbed one.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    topology: &Topology,
    params: &[LayerParams<f64>],
    samples: &[(SpikeInputSequence<f64>, usize)],
    rule: SpikeRule,
    component: ParamComponent,
    layer: usize,
    index: usize,
    epsilon: f64,
    config: &TrainConfig,
    dropout_seed: u64,
) -> Result<FdProbe, TrainingError> {
    let run = |ps: &[LayerParams<f64>]| batch_loss_and_gradients(topology, ps, samples, rule, config, dropout_seed);
    let perturbed = |delta: f64| {
        let mut ps = params.to_vec();
        let p = &mut ps[layer];
        match component {
            ParamComponent::Weight => p.weights.data_mut()[index] += delta,
            ParamComponent::Threshold => p.threshold += delta,
            ParamComponent::Leak => p.leak += delta,
        }
        ps
    };
    let (_, grads, base) = run(params)?;
    let analytic = match component {
        ParamComponent::Weight => grads.layers[layer].weights.data()[index],
        ParamComponent::Threshold => grads.layers[layer].threshold,
        ParamComponent::Leak => grads.layers[layer].leak,
    };
    let (plus, _, tp) = run(&perturbed(epsilon))?;
    let (minus, _, tm) = run(&perturbed(-epsilon))?;
    let boundary =
        base.iter().zip(&tp).zip(&tm).any(|((b, p), m)| !b.same_spike_pattern(p) || !b.same_spike_pattern(m));
    let numeric = (plus - minus) / (2.0 * epsilon);
    let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
    Ok(FdProbe { analytic, numeric, rel_error, boundary })
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

struct SampleOutcome<R> {
    grads: GradientSet<R>,
    loss: f64,
    correct: bool,
}

/// Mini-batch STDB training. Per-sample work is independent and may run
/// in parallel; batch gradients are averaged in sample order.
#[allow(clippy::too_many_arguments)]
pub fn train_snn<R: Real>(
    topology: &Topology,
    params: &mut [LayerParams<R>],
    data: &Split,
    encoder: &Encoder,
    rule: SpikeRule,
    config: &TrainConfig,
    seed: u64,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochStats, &[LayerParams<R>]),
) -> Result<Vec<EpochStats>, TrainingError> {
    config.validate()?;
    topology.check_params(params)?;
    if data.is_empty() {
        return Err(TrainingError::EmptyData);
    }
    let mut optimizer = Optimizer::new(config.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(seed, &[0x5eed, epoch as u64])));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let snapshot: &[LayerParams<R>] = params;
            let outcomes = map_indexed(exec, chunk.len(), |k| -> Result<SampleOutcome<R>, TrainingError> {
                let idx = chunk[k];
                let sample_seed = derive_seed(seed, &[epoch as u64, idx as u64]);
                let image = data.images[idx].convert::<R>();
                let input = encoder.encode(&image, &mut rng_from_seed(sample_seed))?;
                let r = forward(topology, snapshot, &input, &ForwardOptions::train(rule, sample_seed))?;
                let label = data.labels[idx];
                let lr = hybrid_loss(&r.output, label);
                let trace = r.trace.expect("train mode records a trace");
                Ok(SampleOutcome {
                    grads: sample_gradients(topology, &trace, snapshot, &lr, config.gamma, config.beta),
                    loss: lr.loss,
                    correct: predict(&r.output) == label,
                })
            });
            let mut grads = GradientSet::zeros(topology);
            for o in outcomes {
                let o = o?;
                if !o.loss.is_finite() {
                    return Err(TrainingError::NonFinite { what: "loss", epoch, batch });
                }
                grads.add_assign(&o.grads);
                loss_sum += o.loss;
                correct += o.correct as usize;
            }
            grads.scale(R::one() / R::from_usize(chunk.len()).unwrap());
            optimizer.step(params, &grads, epoch, batch)?;
        }
        let stats = EpochStats {
            epoch,
            lr: config.lr_at(epoch),
            loss: loss_sum / data.len() as f64,
            train_accuracy: 100.0 * correct as f64 / data.len() as f64,
        };
        on_epoch(&stats, params);
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode_hybrid, IntensityRange};
    use crate::network::{LayerSpec, NetworkSpec};
    use crate::numerics::rng_from_seed;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hybrid_loss_example() {
        let out = OutputState { membrane: vec![0.0f64, 0.0], spike_time: vec![2, 2] };
        let r = hybrid_loss(&out, 0);
        assert_eq!(r.u_softmax, vec![0.5, 0.5]);
        assert_eq!(r.t_softmax, vec![0.5, 0.5]);
        assert!(close(r.loss, -(0.25f64).ln(), 1e-12));
        assert!(close(r.loss, 1.3863, 1e-4));
        assert_eq!(r.grad_u, vec![-0.5, 0.5]);
    }

    #[test]
    fn hybrid_loss_vanishes_for_confident_output() {
        let out = OutputState { membrane: vec![60.0f64, 0.0, 0.0], spike_time: vec![1, 60, 60] };
        assert!(hybrid_loss(&out, 0).loss < 1e-20);
    }

    #[test]
    fn hybrid_loss_invariants() {
        let out = OutputState { membrane: vec![3.2f32, -1.0, 0.4, 7.5], spike_time: vec![5, 2, 4, 1] };
        for label in 0..4 {
            let r = hybrid_loss(&out, label);
            assert!(close(r.u_softmax.iter().sum(), 1.0, 1e-9));
            assert!(close(r.t_softmax.iter().sum(), 1.0, 1e-9));
            assert!(close(r.grad_u.iter().sum(), 0.0, 1e-7));
            assert!(close(r.grad_t.iter().sum(), 0.0, 1e-7));
            assert!(r.loss > 0.0);
        }
    }

    #[test]
    fn spike_time_grad_worked_example() {
        assert_eq!(spike_time_threshold_grad(&[0.9, 1.05], 1.0, 0.2), 1.0);
    }

    #[test]
    fn spike_time_grad_zero_far_from_threshold() {
        assert_eq!(spike_time_threshold_grad(&[0.1, 0.3, 2.5, 3.0], 1.0, 0.2), 0.0);
    }

    fn fc_topology(timesteps: usize) -> Topology {
        Topology::new(&NetworkSpec {
            input_shape: [1, 2, 2],
            layers: vec![LayerSpec::FullyConnected { out_features: 3 }, LayerSpec::FullyConnected { out_features: 2 }],
            num_classes: 2,
            timesteps,
        })
        .unwrap()
    }

    #[test]
    fn output_grads_zero_without_presynaptic_spikes() {
        let topo = fc_topology(4);
        let mut ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(0));
        ps[0].threshold = 100.0;
        let img = Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let input = crate::encoding::encode_direct(&img, 4);
        let r = forward(&topo, &ps, &input, &ForwardOptions::train(SpikeRule::SingleSpike, 0)).unwrap();
        let loss = hybrid_loss(&r.output, 1);
        let (dw, dv) = output_layer_grads(&topo, r.trace.as_ref().unwrap(), &loss, &ps[1], 0.2);
        assert!(dw.data().iter().all(|&v| v == 0.0));
        // All membranes stay at 0, far below V = 1.
        assert_eq!(dv, 0.0);
    }

    #[test]
    fn hidden_grads_vanish_outside_surrogate_support() {
        let topo = fc_topology(3);
        let mut ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(1));
        // Zero input keeps z = -1 everywhere.
        ps[0].threshold = 0.5;
        let input = crate::encoding::encode_direct(&Tensor::zeros(&[1, 2, 2]), 3);
        let r = forward(&topo, &ps, &input, &ForwardOptions::train(SpikeRule::SingleSpike, 0)).unwrap();
        let loss = hybrid_loss(&r.output, 0);
        let g = bptt_hidden_grads(&topo, r.trace.as_ref().unwrap(), &ps, &loss, 0.3);
        assert!(g.layers[0].weights.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.layers[0].threshold, 0.0);
        assert_eq!(g.layers[0].leak, 0.0);
    }

    #[test]
    fn leak_grad_zero_when_previous_membrane_zero() {
        // One timestep: U^{t-1} is always the zero initial state.
        let topo = fc_topology(1);
        let ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(5));
        let img = Tensor::new(vec![1, 2, 2], vec![0.9, 0.5, 0.7, 1.0]).unwrap();
        let input = crate::encoding::encode_direct(&img, 1);
        let r = forward(&topo, &ps, &input, &ForwardOptions::train(SpikeRule::SingleSpike, 0)).unwrap();
        let loss = hybrid_loss(&r.output, 0);
        let g = bptt_hidden_grads(&topo, r.trace.as_ref().unwrap(), &ps, &loss, 0.3);
        assert_eq!(g.layers[0].leak, 0.0);
    }

    #[test]
    fn output_weight_grad_matches_finite_difference() {
        let topo = fc_topology(4);
        let mut ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(9));
        ps[0].threshold = 0.3;
        let img = Tensor::new(vec![1, 2, 2], vec![0.9, -0.2, 0.6, 0.3]).unwrap();
        let range = IntensityRange::new(-0.5, 1.0).unwrap();
        let samples = vec![(encode_hybrid(&img, &range, 4).unwrap(), 1)];
        let cfg = TrainConfig::default();
        for index in 0..6 {
            let probe = finite_difference_check(
                &topo,
                &ps,
                &samples,
                SpikeRule::SingleSpike,
                ParamComponent::Weight,
                1,
                index,
                1e-4,
                &cfg,
                0,
            )
            .unwrap();
            if probe.boundary || probe.analytic.abs() < 1e-12 {
                continue;
            }
            assert!(probe.rel_error < 1e-4, "{probe:?}");
        }
    }

    #[test]
    fn spike_flipping_probe_is_flagged() {
        let topo = fc_topology(4);
        let mut ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(9));
        ps[0].threshold = 0.3;
        let img = Tensor::new(vec![1, 2, 2], vec![0.9, -0.2, 0.6, 0.3]).unwrap();
        let range = IntensityRange::new(-0.5, 1.0).unwrap();
        let samples = vec![(encode_hybrid(&img, &range, 4).unwrap(), 1)];
        let cfg = TrainConfig::default();
        let probe = finite_difference_check(
            &topo,
            &ps,
            &samples,
            SpikeRule::SingleSpike,
            ParamComponent::Threshold,
            0,
            0,
            0.29,
            &cfg,
            0,
        )
        .unwrap();
        assert!(probe.boundary, "{probe:?}");
    }

    #[test]
    fn sgd_examples() {
        let topo = fc_topology(2);
        let ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(2));
        let cfg = TrainConfig { lr: 0.1, ..TrainConfig::default() };

        let mut unchanged = ps.clone();
        optimizer_step(&mut unchanged, &GradientSet::zeros(&topo), &cfg, 0).unwrap();
        assert_eq!(unchanged, ps);

        let mut p = ps.clone();
        p[0].weights.data_mut()[0] = 1.0;
        p[0].leak = 0.05;
        let mut g = GradientSet::zeros(&topo);
        g.layers[0].weights.data_mut()[0] = 0.5;
        g.layers[0].leak = 1.0;
        optimizer_step(&mut p, &g, &cfg, 0).unwrap();
        assert!(close(p[0].weights.data()[0], 0.95, 1e-12));
        assert_eq!(p[0].leak, 0.0);

        let mut nan = GradientSet::zeros(&topo);
        nan.layers[1].threshold = f64::NAN;
        assert!(matches!(optimizer_step(&mut p, &nan, &cfg, 0), Err(TrainingError::NonFinite { .. })));
    }

    #[test]
    fn threshold_floor_and_schedule() {
        let topo = fc_topology(2);
        let mut ps: Vec<LayerParams<f64>> = topo.init_params(&mut rng_from_seed(2));
        let cfg = TrainConfig { lr: 1.0, ..TrainConfig::default() };
        let mut g = GradientSet::zeros(&topo);
        g.layers[0].threshold = 10.0;
        optimizer_step(&mut ps, &g, &cfg, 0).unwrap();
        assert_eq!(ps[0].threshold, 1e-3);
        let cfg = TrainConfig::default();
        assert!(close(cfg.lr_at(9), 1e-4, 1e-18));
        assert!(close(cfg.lr_at(10), 1e-5, 1e-18));
        assert!(close(cfg.lr_at(25), 1e-6, 1e-18));
    }
}
