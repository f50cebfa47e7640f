//! Bias-free ReLU network training and conversion to a spiking network.
//!
//! The ANN shares its [`Topology`] with the SNN: the same synapses, pooling
//! and dropout stages, with ReLU on every synapse except the last.
//! Conversion copies the weights, calibrates each layer's threshold as a
//! percentile of the input currents that layer sees while the
//! already-calibrated front of the network spikes, and scales the result.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Split;
use crate::encoding::encode_direct;
use crate::network::{argmax, forward, ForwardOptions, NetworkError, SpikeRule, Stage, Topology};
use crate::neuron::LayerParams;
use crate::numerics::{
    avgpool2d_backward_acc, avgpool2d_into, derive_seed, rng_from_seed, variance_scaling_uniform, Real, SimRng, Tensor,
};
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Error)]
pub enum AnnError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("ANN training diverged: non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid ANN configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("calibration of {layer} produced non-positive threshold {value}")]
    Degenerate { layer: String, value: f64 },
    #[error("calibration of {layer} saw no input values")]
    Empty { layer: String },
    #[error("invalid calibration configuration: {0}")]
    Config(String),
}

/// One weight tensor per synapse; there are no biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnParams<R = f32> {
    pub weights: Vec<Tensor<R>>,
}

impl<R: Real> AnnParams<R> {
    /// Fan-in variance-scaling uniform initialisation.
    pub fn init(topology: &Topology, rng: &mut SimRng) -> Self {
        Self {
            weights: topology
                .synapses
                .iter()
                .map(|s| variance_scaling_uniform(&s.synapse.weight_shape(), s.synapse.fan_in(), rng))
                .collect(),
        }
    }

    pub fn check(&self, topology: &Topology) -> Result<(), NetworkError> {
        if self.weights.len() != topology.synapse_count() {
            return Err(NetworkError::Params(format!(
                "expected {} weight tensors, got {}",
                topology.synapse_count(),
                self.weights.len()
            )));
        }
        for (w, s) in self.weights.iter().zip(&topology.synapses) {
            if w.shape() != s.synapse.weight_shape().as_slice() {
                return Err(NetworkError::Params(format!("{}: weight shape {:?}", s.name, w.shape())));
            }
        }
        Ok(())
    }

    pub fn convert<S: Real>(&self) -> AnnParams<S> {
        AnnParams { weights: self.weights.iter().map(Tensor::convert).collect() }
    }
}

/// Activations entering every stage, with the logits last.
fn ann_forward<R: Real>(
    topology: &Topology,
    params: &AnnParams<R>,
    image: &[R],
    masks: Option<&[Vec<R>]>,
) -> Vec<Vec<R>> {
    let mut acts = Vec::with_capacity(topology.stages.len() + 1);
    acts.push(image.to_vec());
    for stage in &topology.stages {
        let x = acts.last().expect("non-empty");
        let y = match stage {
            Stage::Synapse { index, synapse } => {
                let mut y = vec![R::zero(); synapse.output_len()];
                synapse.forward(params.weights[*index].data(), x, &mut y);
                if !topology.is_output(*index) {
                    y.iter_mut().for_each(|v| *v = v.max(R::zero()));
                }
                y
            }
            Stage::Pool(g) => {
                let mut y = vec![R::zero(); g.output_len()];
                avgpool2d_into(g, x, &mut y);
                y
            }
            Stage::Dropout { index, .. } => match masks {
                Some(m) => x.iter().zip(&m[*index]).map(|(a, b)| *a * *b).collect(),
                None => x.clone(),
            },
        };
        acts.push(y);
    }
    acts
}

/// Softmax cross-entropy in double precision: `(loss, ∂loss/∂logits)`.
fn cross_entropy<R: Real>(logits: &[R], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label].as_f64();
    let grad = exps.iter().enumerate().map(|(i, e)| e / sum - if i == label { 1.0 } else { 0.0 }).collect();
    (loss, grad)
}

pub fn ann_logits<R: Real>(topology: &Topology, params: &AnnParams<R>, image: &[R]) -> Vec<R> {
    ann_forward(topology, params, image, None).pop().expect("logits")
}

pub fn ann_predict<R: Real>(topology: &Topology, params: &AnnParams<R>, image: &[R]) -> usize {
    let logits: Vec<f64> = ann_logits(topology, params, image).iter().map(|v| v.as_f64()).collect();
    argmax(&logits)
}

/// Loss and weight gradients for one sample.
pub fn ann_loss_and_grad<R: Real>(
    topology: &Topology,
    params: &AnnParams<R>,
    image: &[R],
    label: usize,
    masks: Option<&[Vec<R>]>,
) -> (f64, Vec<Tensor<R>>) {
    let acts = ann_forward(topology, params, image, masks);
    let (loss, g) = cross_entropy(acts.last().expect("logits"), label);
    let mut grad: Vec<R> = g.into_iter().map(R::from_f64_lossy).collect();
    let mut dw: Vec<Tensor<R>> = params.weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
    for (s, stage) in topology.stages.iter().enumerate().rev() {
        let input = &acts[s];
        match stage {
            Stage::Synapse { index, synapse } => {
                if !topology.is_output(*index) {
                    for (d, y) in grad.iter_mut().zip(&acts[s + 1]) {
                        if *y <= R::zero() {
                            *d = R::zero();
                        }
                    }
                }
                synapse.weight_grad_acc(&grad, input, dw[*index].data_mut());
                if s > 0 {
                    let mut back = vec![R::zero(); synapse.input_len()];
                    synapse.backward_input_acc(params.weights[*index].data(), &grad, &mut back);
                    grad = back;
                }
            }
            Stage::Pool(g) => {
                let mut back = vec![R::zero(); g.input_len()];
                avgpool2d_backward_acc(g, &grad, &mut back);
                grad = back;
            }
            Stage::Dropout { index, .. } => {
                if let Some(m) = masks {
                    grad.iter_mut().zip(&m[*index]).for_each(|(d, k)| *d *= *k);
                }
            }
        }
    }
    (loss, dw)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Fractions of the run after which the learning rate drops ×0.1.
    pub milestones: Vec<f64>,
}

impl Default for AnnTrainConfig {
    fn default() -> Self {
        Self { epochs: 40, lr: 0.01, momentum: 0.9, batch_size: 32, milestones: vec![0.6, 0.8, 0.9] }
    }
}

impl AnnTrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= (m * self.epochs as f64).round() as usize).count();
        self.lr * 0.1f64.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<(), AnnError> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(AnnError::Config("lr > 0, batch_size > 0 and momentum in [0, 1) required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnEpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Mini-batch SGD with momentum on the cross-entropy loss.
pub fn ann_train<R: Real>(
    topology: &Topology,
    params: &mut AnnParams<R>,
    data: &Split,
    config: &AnnTrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<AnnEpochStats>, AnnError> {
    config.validate()?;
    params.check(topology)?;
    if data.is_empty() {
        return Err(AnnError::EmptyData);
    }
    let images: Vec<Vec<R>> = data.images.iter().map(|t| t.convert::<R>().into_data()).collect();
    let mut velocity: Vec<Tensor<R>> = params.weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
    let mu = R::from_f64_lossy(config.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(seed, &[0xa22, epoch as u64])));
        let lr = R::from_f64_lossy(config.lr_at(epoch));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let snapshot = &*params;
            let results = map_indexed(exec, chunk.len(), |k| {
                let idx = chunk[k];
                let masks: Vec<Vec<R>> = topology.sample_dropout_masks(derive_seed(seed, &[epoch as u64, idx as u64]));
                let (loss, dw) = ann_loss_and_grad(topology, snapshot, &images[idx], data.labels[idx], Some(&masks));
                let hit = ann_predict(topology, snapshot, &images[idx]) == data.labels[idx];
                (loss, dw, hit)
            });
            let scale = R::one() / R::from_usize(chunk.len()).unwrap();
            let mut mean: Vec<Tensor<R>> = params.weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
            for (loss, dw, hit) in results {
                if !loss.is_finite() {
                    return Err(AnnError::NonFinite { what: "loss", epoch, batch });
                }
                loss_sum += loss;
                correct += hit as usize;
                for (m, d) in mean.iter_mut().zip(&dw) {
                    m.data_mut().iter_mut().zip(d.data()).for_each(|(a, b)| *a += *b * scale);
                }
            }
            for ((w, v), g) in params.weights.iter_mut().zip(&mut velocity).zip(&mean) {
                for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vi = mu * *vi + *gi;
                    *wi -= lr * *vi;
                    if !wi.is_finite() {
                        return Err(AnnError::NonFinite { what: "weight", epoch, batch });
                    }
                }
            }
        }
        history.push(AnnEpochStats {
            epoch,
            lr: config.lr_at(epoch),
            loss: loss_sum / data.len() as f64,
            train_accuracy: 100.0 * correct as f64 / data.len() as f64,
        });
    }
    Ok(history)
}

/// Test accuracy in percent.
pub fn ann_accuracy<R: Real>(topology: &Topology, params: &AnnParams<R>, data: &Split, exec: Execution) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = map_indexed(exec, data.len(), |i| {
        let img = data.images[i].convert::<R>();
        ann_predict(topology, params, img.data()) == data.labels[i]
    });
    100.0 * hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64
}

/// 1-based nearest rank of percentile `p` among `n` sorted values.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    ((p / 100.0 * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Nearest-rank percentile by sorting a copy.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[nearest_rank(p, sorted.len()) - 1])
}

/// Nearest-rank percentile over a stream of known total length, keeping
/// only the values at or above the target rank.
#[derive(Clone, Debug)]
pub struct StreamingPercentile {
    keep: usize,
    seen: usize,
    total: usize,
    heap: BinaryHeap<Reverse<OrderedFloat<f64>>>,
}

impl StreamingPercentile {
    pub fn new(p: f64, total: usize) -> Self {
        let keep = if total == 0 { 0 } else { total - nearest_rank(p, total) + 1 };
        Self { keep, seen: 0, total, heap: BinaryHeap::with_capacity(keep + 1) }
    }

    pub fn push(&mut self, v: f64) {
        self.seen += 1;
        if self.heap.len() < self.keep {
            self.heap.push(Reverse(OrderedFloat(v)));
        } else if let Some(Reverse(min)) = self.heap.peek() {
            if v > min.0 {
                self.heap.pop();
                self.heap.push(Reverse(OrderedFloat(v)));
            }
        }
    }

    /// The percentile, once exactly `total` values were pushed.
    pub fn finish(&self) -> Option<f64> {
        if self.seen != self.total || self.total == 0 {
            return None;
        }
        self.heap.peek().map(|Reverse(v)| v.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub percentile: f64,
    pub num_images: usize,
    pub scaling: f64,
    pub calib_timesteps: usize,
    pub calib_leak: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { percentile: 99.7, num_images: 512, scaling: 0.4, calib_timesteps: 100, calib_leak: 1.0 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(CalibrationError::Config(format!("percentile {} outside (0, 100]", self.percentile)));
        }
        if !(self.scaling > 0.0) {
            return Err(CalibrationError::Config("scaling must be positive".into()));
        }
        if self.num_images == 0 || self.calib_timesteps == 0 {
            return Err(CalibrationError::Config("num_images and calib_timesteps must be positive".into()));
        }
        Ok(())
    }
}

/// The topology with its timestep count replaced.
pub fn with_timesteps(topology: &Topology, timesteps: usize) -> Result<Topology, NetworkError> {
    let mut spec = topology.spec.clone();
    spec.timesteps = timesteps;
    Topology::new(&spec)
}

/// Per-layer thresholds (unscaled), front to back. Each layer's threshold
/// is the percentile of all input currents it receives over all images and
/// timesteps while the earlier layers spike with their calibrated
/// thresholds (multi-spike LIF, direct encoding).
pub fn calibrate_thresholds(
    topology: &Topology,
    ann: &AnnParams<f32>,
    images: &[Tensor<f32>],
    config: &CalibrationConfig,
    exec: Execution,
) -> Result<Vec<f64>, CalibrationError> {
    config.validate()?;
    ann.check(topology)?;
    let topo = with_timesteps(topology, config.calib_timesteps)?;
    let leak = config.calib_leak as f32;
    let mut params: Vec<LayerParams<f32>> =
        ann.weights.iter().map(|w| LayerParams { weights: w.clone(), threshold: 1.0, leak }).collect();
    let inputs: Vec<_> = images.iter().map(|img| encode_direct(img, config.calib_timesteps)).collect();
    let mut thresholds = Vec::with_capacity(topo.synapse_count());
    for l in 0..topo.synapse_count() {
        let opts = ForwardOptions { capture_currents: Some(l), ..ForwardOptions::infer(SpikeRule::MultiSpike) };
        let snapshot = &params;
        let captured =
            map_indexed(exec, inputs.len(), |k| forward(&topo, snapshot, &inputs[k], &opts).map(|r| r.captured));
        let total = inputs.len() * config.calib_timesteps * topo.synapses[l].synapse.output_len();
        let mut stream = StreamingPercentile::new(config.percentile, total);
        for c in captured {
            c?.iter().for_each(|&v| stream.push(v as f64));
        }
        let name = topo.synapses[l].name.clone();
        let v = stream.finish().ok_or(CalibrationError::Empty { layer: name.clone() })?;
        if !(v > 0.0) {
            return Err(CalibrationError::Degenerate { layer: name, value: v });
        }
        params[l].threshold = v as f32;
        thresholds.push(v);
    }
    Ok(thresholds)
}

/// SNN parameters: copied weights, `V_l = scaling · threshold_l`, unit leak.
pub fn convert(ann: &AnnParams<f32>, thresholds: &[f64], scaling: f64) -> Vec<LayerParams<f32>> {
    ann.weights
        .iter()
        .zip(thresholds)
        .map(|(w, &v)| LayerParams { weights: w.clone(), threshold: (scaling * v) as f32, leak: 1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, NetworkSpec};
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let grid: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let p = percentile(&grid, 99.7).unwrap();
        assert!((p - 0.997).abs() <= 1e-3);
        assert_eq!(percentile(&grid, 100.0), Some(1.0));
        assert_eq!(percentile(&[3.0, -1.0, 2.0], 100.0), Some(3.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    proptest! {
        #[test]
        fn streaming_matches_sort(values in prop::collection::vec(-100.0f64..100.0, 1..400), p in 0.5f64..100.0) {
            let mut s = StreamingPercentile::new(p, values.len());
            values.iter().for_each(|&v| s.push(v));
            prop_assert_eq!(s.finish(), percentile(&values, p));
        }

        #[test]
        fn percentile_permutation_and_monotone(mut values in prop::collection::vec(-10.0f64..10.0, 1..100), p in 1.0f64..100.0, bump in 0.0f64..5.0) {
            let before = percentile(&values, p).unwrap();
            values.reverse();
            prop_assert_eq!(percentile(&values, p).unwrap(), before);
            let raised: Vec<f64> = values.iter().map(|v| v + bump).collect();
            prop_assert!(percentile(&raised, p).unwrap() >= before);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(percentile(&values, 100.0).unwrap(), max);
        }
    }

    fn toy_topology() -> Topology {
        Topology::new(&NetworkSpec {
            input_shape: [1, 4, 4],
            layers: vec![
                LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::AvgPool { window: 2 },
                LayerSpec::Dropout { p: 0.25 },
                LayerSpec::FullyConnected { out_features: 5 },
                LayerSpec::FullyConnected { out_features: 3 },
            ],
            num_classes: 3,
            timesteps: 4,
        })
        .unwrap()
    }

    #[test]
    fn ann_gradient_matches_finite_difference() {
        let topo = toy_topology();
        let mut rng = rng_from_seed(4);
        let params: AnnParams<f64> = AnnParams::init(&topo, &mut rng);
        let image = variance_scaling_uniform::<f64>(&[16], 1, &mut rng).into_data();
        let masks: Vec<Vec<f64>> = topo.sample_dropout_masks(11);
        let (_, grads) = ann_loss_and_grad(&topo, &params, &image, 2, Some(&masks));
        let eps = 1e-4;
        let mut checked = 0;
        for l in 0..params.weights.len() {
            for i in 0..params.weights[l].len() {
                let mut p = params.clone();
                p.weights[l].data_mut()[i] += eps;
                let (lp, _) = ann_loss_and_grad(&topo, &p, &image, 2, Some(&masks));
                p.weights[l].data_mut()[i] -= 2.0 * eps;
                let (lm, _) = ann_loss_and_grad(&topo, &p, &image, 2, Some(&masks));
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grads[l].data()[i];
                if numeric.abs().max(analytic.abs()) < 1e-7 {
                    continue;
                }
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {l} index {i}: {analytic} vs {numeric}");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let topo = Topology::new(&NetworkSpec {
            input_shape: [1, 1, 2],
            layers: vec![LayerSpec::FullyConnected { out_features: 2 }],
            num_classes: 2,
            timesteps: 2,
        })
        .unwrap();
        let mut rng = rng_from_seed(1);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..40 {
            let x = variance_scaling_uniform::<f32>(&[2], 1, &mut rng).into_data();
            let label = k % 2;
            let shift = if label == 0 { 1.0 } else { -1.0 };
            images.push(Tensor::new(vec![1, 1, 2], vec![x[0] * 0.3 + shift, x[1] * 0.3 - shift]).unwrap());
            labels.push(label);
        }
        let data = Split { images, labels, shape: [1, 1, 2] };
        let mut params: AnnParams<f32> = AnnParams::init(&topo, &mut rng);
        let cfg = AnnTrainConfig { epochs: 50, batch_size: 8, ..AnnTrainConfig::default() };
        ann_train(&topo, &mut params, &data, &cfg, 3, Execution::Sequential).unwrap();
        assert_eq!(ann_accuracy(&topo, &params, &data, Execution::Sequential), 100.0);
    }

    #[test]
    fn lr_schedule_milestones() {
        let cfg = AnnTrainConfig { epochs: 10, ..AnnTrainConfig::default() };
        let lrs: Vec<f64> = (0..10).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs[5], 0.01);
        assert!((lrs[6] - 1e-3).abs() < 1e-15);
        assert!((lrs[8] - 1e-4).abs() < 1e-15);
        assert!((lrs[9] - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn zero_first_layer_fails_calibration() {
        let topo = toy_topology();
        let mut ann: AnnParams<f32> = AnnParams::init(&topo, &mut rng_from_seed(0));
        ann.weights[0] = Tensor::zeros(ann.weights[0].shape());
        let images = vec![Tensor::filled(&[1, 4, 4], 0.5f32); 3];
        let cfg = CalibrationConfig { num_images: 3, calib_timesteps: 5, ..CalibrationConfig::default() };
        assert!(matches!(
            calibrate_thresholds(&topo, &ann, &images, &cfg, Execution::Sequential),
            Err(CalibrationError::Degenerate { .. })
        ));
    }

    #[test]
    fn calibration_is_reproducible_and_convert_scales() {
        let topo = toy_topology();
        let ann: AnnParams<f32> = AnnParams::init(&topo, &mut rng_from_seed(8));
        let mut rng = rng_from_seed(9);
        let images: Vec<Tensor<f32>> =
            (0..6).map(|_| variance_scaling_uniform::<f32>(&[1, 4, 4], 1, &mut rng).map(|v| v + 1.0)).collect();
        let cfg = CalibrationConfig { num_images: 6, calib_timesteps: 10, percentile: 100.0, ..Default::default() };
        let a = calibrate_thresholds(&topo, &ann, &images, &cfg, Execution::Parallel);
        let b = calibrate_thresholds(&topo, &ann, &images, &cfg, Execution::Sequential);
        let (a, b) = match (a, b) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => panic!("{a:?} {b:?}"),
        };
        assert_eq!(a, b);
        // First-layer percentile 100 equals the largest analog current.
        let first = images
            .iter()
            .flat_map(|img| {
                let mut out = vec![0.0f32; topo.synapses[0].synapse.output_len()];
                topo.synapses[0].synapse.forward(ann.weights[0].data(), img.data(), &mut out);
                out
            })
            .fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(a[0], first as f64);

        let converted = convert(&ann, &[2.5, 1.0, 1.0], 0.4);
        assert_eq!(converted[0].threshold, 1.0);
        assert_eq!(convert(&ann, &a, 1.0)[1].threshold, a[1] as f32);
        for (c, w) in converted.iter().zip(&ann.weights) {
            assert_eq!(&c.weights, w);
            assert_eq!(c.leak, 1.0);
        }
    }
}
