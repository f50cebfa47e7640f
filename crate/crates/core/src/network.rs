//! Feedforward spiking networks: layer descriptions, shape resolution, the
//! T-step forward simulation and the per-timestep trace kept for BPTT.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{InputEvents, SpikeInputSequence};
use crate::neuron::{lif_step, output_step, single_spike_step, LayerParams, Mode, NeuronState, OutputState};
use crate::numerics::{
    avgpool2d_backward_acc, avgpool2d_into, conv2d_backward_input_acc, conv2d_backward_kernel_acc, conv2d_into, matvec,
    matvec_transposed_acc, outer_acc, pool_sum_into, rng_from_seed, variance_scaling_uniform, ConvGeometry,
    NumericsError, PoolGeometry, Real, SimRng, Tensor,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("parameter mismatch: {0}")]
    Params(String),
}

fn one() -> usize {
    1
}

/// One entry of the layer stack. Every convolution and fully-connected
/// layer is bias-free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    AvgPool {
        window: usize,
    },
    FullyConnected {
        out_features: usize,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub timesteps: usize,
}

impl NetworkSpec {
    /// 2-conv + 2-fc network sized for 8×8 single-channel digits. The
    /// non-overlapping convolutions give every input the same fan-out.
    pub fn digits_small() -> Self {
        Self {
            input_shape: [1, 8, 8],
            layers: vec![
                LayerSpec::Conv { out_channels: 16, kernel: 2, stride: 2, padding: 0 },
                LayerSpec::Conv { out_channels: 32, kernel: 2, stride: 2, padding: 0 },
                LayerSpec::Dropout { p: 0.2 },
                LayerSpec::FullyConnected { out_features: 64 },
                LayerSpec::Dropout { p: 0.2 },
                LayerSpec::FullyConnected { out_features: 10 },
            ],
            num_classes: 10,
            timesteps: 5,
        }
    }
}

/// Weighted connection between two activations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Synapse {
    Conv(ConvGeometry),
    Linear { inputs: usize, outputs: usize },
}

impl Synapse {
    pub fn input_len(&self) -> usize {
        match self {
            Synapse::Conv(g) => g.input_len(),
            Synapse::Linear { inputs, .. } => *inputs,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Synapse::Conv(g) => g.output_len(),
            Synapse::Linear { outputs, .. } => *outputs,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            Synapse::Conv(g) => g.kernel_shape().to_vec(),
            Synapse::Linear { inputs, outputs } => vec![*outputs, *inputs],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            Synapse::Conv(g) => g.in_channels * g.kernel * g.kernel,
            Synapse::Linear { inputs, .. } => *inputs,
        }
    }

    /// Dense operation count: `k²·H_o·W_o·C_o·C_i` or `f_i·f_o`.
    pub fn dense_flops(&self) -> u64 {
        match self {
            Synapse::Conv(g) => (g.kernel * g.kernel * g.out_h * g.out_w * g.out_channels * g.in_channels) as u64,
            Synapse::Linear { inputs, outputs } => (*inputs * *outputs) as u64,
        }
    }

    pub fn forward<R: Real>(&self, weights: &[R], input: &[R], out: &mut [R]) {
        match self {
            Synapse::Conv(g) => conv2d_into(g, input, weights, out),
            Synapse::Linear { .. } => matvec(weights, input, out),
        }
    }

    pub fn backward_input_acc<R: Real>(&self, weights: &[R], grad_out: &[R], grad_in: &mut [R]) {
        match self {
            Synapse::Conv(g) => conv2d_backward_input_acc(g, grad_out, weights, grad_in),
            Synapse::Linear { .. } => matvec_transposed_acc(weights, grad_out, grad_in),
        }
    }

    pub fn weight_grad_acc<R: Real>(&self, grad_out: &[R], input: &[R], grad_w: &mut [R]) {
        match self {
            Synapse::Conv(g) => conv2d_backward_kernel_acc(g, grad_out, input, grad_w),
            Synapse::Linear { .. } => outer_acc(grad_out, input, grad_w),
        }
    }

    /// Brute-force accumulate count: visits every (output, weight) pair
    /// and adds the number of input events arriving on that synapse.
    pub fn count_accumulates<R: Real>(&self, events: &[R]) -> f64 {
        let mut total = 0.0;
        match self {
            Synapse::Conv(g) => g.for_each_tap(|_, _, i| total += events[i].as_f64()),
            Synapse::Linear { outputs, .. } => {
                for _ in 0..*outputs {
                    for e in events {
                        total += e.as_f64();
                    }
                }
            }
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Synapse { index: usize, synapse: Synapse },
    Pool(PoolGeometry),
    Dropout { index: usize, p: f64, len: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynapseInfo {
    pub name: String,
    pub stage: usize,
    pub synapse: Synapse,
}

/// A [`NetworkSpec`] with every shape resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub spec: NetworkSpec,
    pub stages: Vec<Stage>,
    pub synapses: Vec<SynapseInfo>,
    pub dropout_count: usize,
}

impl Topology {
    pub fn new(spec: &NetworkSpec) -> Result<Self, NetworkError> {
        if spec.num_classes < 2 {
            return Err(NetworkError::Spec("need at least two classes".into()));
        }
        if spec.timesteps == 0 {
            return Err(NetworkError::Spec("timesteps must be positive".into()));
        }
        match spec.layers.last() {
            Some(LayerSpec::FullyConnected { out_features }) if *out_features == spec.num_classes => {}
            _ => {
                return Err(NetworkError::Spec(format!(
                    "last layer must be fully_connected with {} outputs",
                    spec.num_classes
                )))
            }
        }
        let mut shape = spec.input_shape;
        if shape.contains(&0) {
            return Err(NetworkError::Spec("input extents must be positive".into()));
        }
        let mut stages = Vec::new();
        let mut synapses = Vec::new();
        let (mut convs, mut fcs, mut dropouts) = (0, 0, 0);
        for layer in &spec.layers {
            let stage = match *layer {
                LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                    let g = ConvGeometry::new(shape, out_channels, kernel, stride, padding)?;
                    shape = [out_channels, g.out_h, g.out_w];
                    convs += 1;
                    synapses.push(SynapseInfo {
                        name: format!("conv{convs}"),
                        stage: stages.len(),
                        synapse: Synapse::Conv(g),
                    });
                    Stage::Synapse { index: synapses.len() - 1, synapse: Synapse::Conv(g) }
                }
                LayerSpec::AvgPool { window } => {
                    let g = PoolGeometry::new(shape, window)?;
                    shape = [shape[0], g.out_h(), g.out_w()];
                    Stage::Pool(g)
                }
                LayerSpec::FullyConnected { out_features } => {
                    if out_features == 0 {
                        return Err(NetworkError::Spec("fully_connected needs outputs".into()));
                    }
                    let syn = Synapse::Linear { inputs: shape.iter().product(), outputs: out_features };
                    shape = [out_features, 1, 1];
                    fcs += 1;
                    synapses.push(SynapseInfo { name: format!("fc{fcs}"), stage: stages.len(), synapse: syn });
                    Stage::Synapse { index: synapses.len() - 1, synapse: syn }
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(NetworkError::Spec(format!("dropout rate {p} outside [0, 1)")));
                    }
                    dropouts += 1;
                    Stage::Dropout { index: dropouts - 1, p, len: shape.iter().product() }
                }
            };
            stages.push(stage);
        }
        Ok(Self { spec: spec.clone(), stages, synapses, dropout_count: dropouts })
    }

    pub fn timesteps(&self) -> usize {
        self.spec.timesteps
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape.iter().product()
    }

    pub fn synapse_count(&self) -> usize {
        self.synapses.len()
    }

    /// Number of spiking (non-output) layers.
    pub fn hidden_count(&self) -> usize {
        self.synapses.len() - 1
    }

    pub fn is_output(&self, synapse: usize) -> bool {
        synapse + 1 == self.synapses.len()
    }

    pub fn check_params<R: Real>(&self, params: &[LayerParams<R>]) -> Result<(), NetworkError> {
        if params.len() != self.synapses.len() {
            return Err(NetworkError::Params(format!("expected {} layers, got {}", self.synapses.len(), params.len())));
        }
        for (info, p) in self.synapses.iter().zip(params) {
            let want = info.synapse.weight_shape();
            if p.weights.shape() != want.as_slice() {
                return Err(NetworkError::Params(format!(
                    "{}: weight shape {:?}, expected {:?}",
                    info.name,
                    p.weights.shape(),
                    want
                )));
            }
            p.validate().map_err(|e| NetworkError::Params(format!("{}: {e}", info.name)))?;
        }
        Ok(())
    }

    /// Fan-in scaled random weights with unit thresholds and leaks.
    pub fn init_params<R: Real>(&self, rng: &mut SimRng) -> Vec<LayerParams<R>> {
        self.synapses
            .iter()
            .map(|info| LayerParams {
                weights: variance_scaling_uniform(&info.synapse.weight_shape(), info.synapse.fan_in(), rng),
                threshold: R::one(),
                leak: R::one(),
            })
            .collect()
    }

    /// Dropout masks (already scaled by `1/(1-p)`), one per dropout stage.
    pub fn sample_dropout_masks<R: Real>(&self, seed: u64) -> Vec<Vec<R>> {
        let mut rng = rng_from_seed(seed);
        self.stages
            .iter()
            .filter_map(|s| match *s {
                Stage::Dropout { p, len, .. } => {
                    let keep = R::from_f64_lossy(1.0 / (1.0 - p));
                    Some((0..len).map(|_| if rng.random::<f64>() < p { R::zero() } else { keep }).collect())
                }
                _ => None,
            })
            .collect()
    }
}

/// How hidden neurons spike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeRule {
    /// At most one spike per neuron per sample.
    #[default]
    SingleSpike,
    /// Standard LIF with soft reset.
    MultiSpike,
}

/// Per-sample mutable state for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<R = f32> {
    pub hidden: Vec<NeuronState<R>>,
    pub prev_spikes: Vec<Vec<R>>,
    pub output: OutputState<R>,
}

impl<R: Real> NetworkState<R> {
    pub fn new(topology: &Topology) -> Self {
        let hidden: Vec<NeuronState<R>> = topology.synapses[..topology.hidden_count()]
            .iter()
            .map(|s| NeuronState::new(s.synapse.output_len()))
            .collect();
        let prev_spikes = hidden.iter().map(|h| vec![R::zero(); h.len()]).collect();
        Self { hidden, prev_spikes, output: OutputState::new(topology.num_classes()) }
    }

    pub fn reset(&mut self) {
        self.hidden.iter_mut().for_each(NeuronState::reset);
        self.prev_spikes.iter_mut().for_each(|p| p.iter_mut().for_each(|v| *v = R::zero()));
        self.output.membrane.iter_mut().for_each(|v| *v = R::zero());
        self.output.spike_time.iter_mut().for_each(|t| *t = 0);
    }
}

/// Everything one synaptic layer saw and did, per timestep (index `t - 1`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTrace<R = f32> {
    /// Input to the synapse (`O_{l-1}^t` after pooling and dropout).
    pub inputs: Vec<Vec<R>>,
    /// Membrane after the step.
    pub membrane: Vec<Vec<R>>,
    /// `z^t`; empty for the output layer.
    pub z: Vec<Vec<R>>,
    /// Soft-reset gate applied during the step, i.e. `z^{t-1} > 0`.
    pub reset_gate: Vec<Vec<bool>>,
    /// Whether the neuron had already spiked before the step.
    pub spiked_before: Vec<Vec<bool>>,
    pub spikes: Vec<Vec<R>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalTrace<R = f32> {
    pub rule: SpikeRule,
    pub layers: Vec<LayerTrace<R>>,
    pub dropout_masks: Vec<Vec<R>>,
    pub output: OutputState<R>,
}

impl<R: Real> TemporalTrace<R> {
    /// Hidden spike rasters plus output spike times; two traces with the
    /// same pattern made identical discrete decisions.
    pub fn same_spike_pattern(&self, other: &Self) -> bool {
        self.output.spike_time == other.output.spike_time
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.spikes == b.spikes)
    }
}

/// Spike and operation counters for one sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleActivity {
    /// Total spikes per hidden layer.
    pub hidden_spikes: Vec<u64>,
    /// Largest per-neuron spike count per hidden layer.
    pub max_spikes_per_neuron: Vec<u32>,
    /// Input events (spikes, counted through pooling) reaching each synapse.
    pub input_events: Vec<f64>,
    /// Analog multiply-accumulate passes per synapse.
    pub analog_passes: Vec<u32>,
    /// Brute-force accumulate count per synapse (when requested).
    pub accumulates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub rule: SpikeRule,
    pub dropout_seed: u64,
    /// Keep the full per-timestep trace (needed for backprop).
    pub record_trace: bool,
    /// Run the brute-force accumulate counter.
    pub count_accumulates: bool,
    /// Record this synapse's input current at every timestep and skip all
    /// later stages.
    pub capture_currents: Option<usize>,
}

impl ForwardOptions {
    pub fn train(rule: SpikeRule, dropout_seed: u64) -> Self {
        Self {
            mode: Mode::Train,
            rule,
            dropout_seed,
            record_trace: true,
            count_accumulates: false,
            capture_currents: None,
        }
    }

    pub fn infer(rule: SpikeRule) -> Self {
        Self {
            mode: Mode::Infer,
            rule,
            dropout_seed: 0,
            record_trace: false,
            count_accumulates: false,
            capture_currents: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult<R = f32> {
    pub output: OutputState<R>,
    pub trace: Option<TemporalTrace<R>>,
    pub activity: SampleActivity,
    /// Currents captured per [`ForwardOptions::capture_currents`], all
    /// timesteps concatenated.
    pub captured: Vec<R>,
}

enum Signal<R> {
    Analog,
    Repeat,
    Events(Vec<R>),
}

/// Run one sample for `T` timesteps from a fresh state.
pub fn forward<R: Real>(
    topology: &Topology,
    params: &[LayerParams<R>],
    input: &SpikeInputSequence<R>,
    opts: &ForwardOptions,
) -> Result<ForwardResult<R>, NetworkError> {
    let mut state = NetworkState::new(topology);
    forward_with_state(topology, params, input, opts, &mut state)
}

/// [`forward`] with caller-owned state, which is reset first.
pub fn forward_with_state<R: Real>(
    topology: &Topology,
    params: &[LayerParams<R>],
    input: &SpikeInputSequence<R>,
    opts: &ForwardOptions,
    state: &mut NetworkState<R>,
) -> Result<ForwardResult<R>, NetworkError> {
    topology.check_params(params)?;
    if input.total_timesteps != topology.timesteps() {
        return Err(NetworkError::Spec(format!(
            "input has {} timesteps, network expects {}",
            input.total_timesteps,
            topology.timesteps()
        )));
    }
    if input.pixel_count() != topology.input_len() {
        return Err(NetworkError::Spec(format!(
            "input has {} pixels, network expects {}",
            input.pixel_count(),
            topology.input_len()
        )));
    }
    state.reset();
    let total = topology.timesteps();
    let n_syn = topology.synapse_count();
    let hidden = topology.hidden_count();
    let train = opts.mode == Mode::Train;
    let masks: Vec<Vec<R>> = if train { topology.sample_dropout_masks(opts.dropout_seed) } else { Vec::new() };

    let mut activity = SampleActivity {
        hidden_spikes: vec![0; hidden],
        max_spikes_per_neuron: vec![0; hidden],
        input_events: vec![0.0; n_syn],
        analog_passes: vec![0; n_syn],
        accumulates: vec![0.0; n_syn],
    };
    let mut per_neuron: Vec<Vec<u32>> = state.hidden.iter().map(|h| vec![0; h.len()]).collect();
    let mut trace = opts.record_trace.then(|| TemporalTrace {
        rule: opts.rule,
        layers: vec![LayerTrace::default(); n_syn],
        dropout_masks: masks.clone(),
        output: OutputState::new(topology.num_classes()),
    });
    let mut currents: Vec<Vec<R>> = topology.synapses.iter().map(|s| vec![R::zero(); s.synapse.output_len()]).collect();

    let mut captured = Vec::new();
    'time: for t in 1..=total {
        let mut signal: Vec<R> = input.current_at(t).to_vec();
        let mut events = match input.events_at(t) {
            InputEvents::Analog => Signal::Analog,
            InputEvents::Repeat => Signal::Repeat,
            InputEvents::Spikes(s) => Signal::Events(s.to_vec()),
        };
        for stage in &topology.stages {
            match stage {
                Stage::Synapse { index, synapse } => {
                    let i = *index;
                    match &events {
                        Signal::Analog => activity.analog_passes[i] += 1,
                        Signal::Repeat => {}
                        Signal::Events(ev) => {
                            activity.input_events[i] += ev.iter().map(|v| v.as_f64()).sum::<f64>();
                            if opts.count_accumulates {
                                activity.accumulates[i] += synapse.count_accumulates(ev);
                            }
                        }
                    }
                    let p = &params[i];
                    synapse.forward(p.weights.data(), &signal, &mut currents[i]);
                    if opts.capture_currents == Some(i) {
                        captured.extend_from_slice(&currents[i]);
                        continue 'time;
                    }
                    if let Some(tr) = trace.as_mut() {
                        tr.layers[i].inputs.push(signal.clone());
                    }
                    if i == hidden {
                        output_step(&mut state.output, p.threshold, &currents[i], t, total);
                        if let Some(tr) = trace.as_mut() {
                            tr.layers[i].membrane.push(state.output.membrane.clone());
                        }
                        break;
                    }
                    let neurons = &mut state.hidden[i];
                    let gate_before = trace.as_ref().map(|_| (neurons.reset_gate.clone(), neurons.has_spiked.clone()));
                    let mut spikes = vec![R::zero(); neurons.len()];
                    let fired = match opts.rule {
                        SpikeRule::SingleSpike => {
                            single_spike_step(neurons, p.threshold, p.leak, &currents[i], opts.mode, &mut spikes)
                        }
                        SpikeRule::MultiSpike => {
                            lif_step(neurons, p.threshold, p.leak, &currents[i], &state.prev_spikes[i], &mut spikes)
                        }
                    };
                    activity.hidden_spikes[i] += fired as u64;
                    if fired > 0 {
                        for (c, s) in per_neuron[i].iter_mut().zip(&spikes) {
                            if *s != R::zero() {
                                *c += 1;
                            }
                        }
                    }
                    if let (Some(tr), Some((gate, spiked))) = (trace.as_mut(), gate_before) {
                        let lt = &mut tr.layers[i];
                        lt.membrane.push(neurons.membrane.clone());
                        lt.z.push(neurons.z.clone());
                        lt.reset_gate.push(gate);
                        lt.spiked_before.push(spiked);
                        lt.spikes.push(spikes.clone());
                    }
                    state.prev_spikes[i].copy_from_slice(&spikes);
                    events = Signal::Events(spikes.clone());
                    signal = spikes;
                }
                Stage::Pool(g) => {
                    let mut pooled = vec![R::zero(); g.output_len()];
                    avgpool2d_into(g, &signal, &mut pooled);
                    signal = pooled;
                    if let Signal::Events(ev) = &events {
                        let mut summed = vec![R::zero(); g.output_len()];
                        pool_sum_into(g, ev, R::one(), &mut summed);
                        events = Signal::Events(summed);
                    }
                }
                Stage::Dropout { index, .. } => {
                    if train {
                        for (v, m) in signal.iter_mut().zip(&masks[*index]) {
                            *v *= *m;
                        }
                    }
                }
            }
        }
    }
    for (i, counts) in per_neuron.iter().enumerate() {
        activity.max_spikes_per_neuron[i] = counts.iter().copied().max().unwrap_or(0);
    }
    if let Some(tr) = trace.as_mut() {
        tr.output = state.output.clone();
    }
    Ok(ForwardResult { output: state.output.clone(), trace, activity, captured })
}

/// Decision score per class, `log(Ũ_i·t̃_i)` up to a shared constant.
pub fn class_scores<R: Real>(output: &OutputState<R>) -> Vec<f64> {
    output.membrane.iter().zip(&output.spike_time).map(|(u, &t)| u.as_f64() - t as f64).collect()
}

/// Argmax of the hybrid score; ties go to the lowest class index.
pub fn predict<R: Real>(output: &OutputState<R>) -> usize {
    argmax(&class_scores(output))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Propagate a gradient w.r.t. the input of stage `to_stage` (a synapse)
/// back to the spikes emitted by the preceding synapse, through any
/// pooling and dropout in between.
pub(crate) fn backprop_between<R: Real>(
    topology: &Topology,
    from_stage: usize,
    to_stage: usize,
    grad: Vec<R>,
    masks: &[Vec<R>],
) -> Vec<R> {
    let mut grad = grad;
    for stage in topology.stages[from_stage + 1..to_stage].iter().rev() {
        match stage {
            Stage::Pool(g) => {
                let mut back = vec![R::zero(); g.input_len()];
                avgpool2d_backward_acc(g, &grad, &mut back);
                grad = back;
            }
            Stage::Dropout { index, .. } => {
                for (v, m) in grad.iter_mut().zip(&masks[*index]) {
                    *v *= *m;
                }
            }
            Stage::Synapse { .. } => unreachable!("no synapse between adjacent synapses"),
        }
    }
    grad
}

/// Convert a parameter set between scalar types.
pub fn convert_params<R: Real, S: Real>(params: &[LayerParams<R>]) -> Vec<LayerParams<S>> {
    params.iter().map(LayerParams::convert).collect()
}

/// Convenience: wrap a flat image into a tensor of the network's input shape.
pub fn image_tensor<R: Real>(topology: &Topology, pixels: &[R]) -> Result<Tensor<R>, NetworkError> {
    Ok(Tensor::new(topology.spec.input_shape.to_vec(), pixels.to_vec())?)
}
