//! Spiking activity, operation counts and compute energy.
//!
//! `F_SNN` for a layer is its dense operation count scaled by the activity
//! of that layer's input: accumulations happen when presynaptic spikes
//! arrive. The first layer is charged one dense MAC pass per analog frame
//! it receives, plus one accumulate per input-spike fan-out.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Split;
use crate::encoding::{Encoder, EncodingError, EncodingKind};
use crate::network::{forward, predict, ForwardOptions, NetworkError, SampleActivity, SpikeRule, Topology};
use crate::neuron::LayerParams;
use crate::numerics::{derive_seed, rng_from_seed};
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot read energy constants {path}: {message}")]
    Constants { path: String, message: String },
    #[error("no samples were evaluated")]
    NoSamples,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

const BUNDLED_CONSTANTS: &str = include_str!("../../../data/energy_constants.json");

/// Per-operation energy in picojoules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub technology: String,
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
}

impl EnergyConstants {
    /// The bundled 45 nm table.
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_CONSTANTS).expect("bundled constants parse")
    }

    pub fn from_file(path: &Path) -> Result<Self, MetricsError> {
        let err = |message: String| MetricsError::Constants { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if !(c.e_mac_pj > 0.0 && c.e_ac_pj > 0.0) {
            return Err(err("energies must be positive".into()));
        }
        Ok(c)
    }

    pub fn mac_to_ac_ratio(&self) -> f64 {
        self.e_mac_pj / self.e_ac_pj
    }
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Activity counters summed over evaluated samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityTotals {
    pub samples: u64,
    pub hidden_spikes: Vec<u64>,
    pub max_spikes_per_neuron: Vec<u32>,
    pub input_events: Vec<f64>,
    pub analog_passes: Vec<u64>,
    pub accumulates: Vec<f64>,
}

impl ActivityTotals {
    pub fn add(&mut self, s: &SampleActivity) {
        if self.samples == 0 {
            self.hidden_spikes = vec![0; s.hidden_spikes.len()];
            self.max_spikes_per_neuron = vec![0; s.max_spikes_per_neuron.len()];
            self.input_events = vec![0.0; s.input_events.len()];
            self.analog_passes = vec![0; s.analog_passes.len()];
            self.accumulates = vec![0.0; s.accumulates.len()];
        }
        self.samples += 1;
        for (a, b) in self.hidden_spikes.iter_mut().zip(&s.hidden_spikes) {
            *a += b;
        }
        for (a, b) in self.max_spikes_per_neuron.iter_mut().zip(&s.max_spikes_per_neuron) {
            *a = (*a).max(*b);
        }
        for (a, b) in self.input_events.iter_mut().zip(&s.input_events) {
            *a += b;
        }
        for (a, b) in self.analog_passes.iter_mut().zip(&s.analog_passes) {
            *a += *b as u64;
        }
        for (a, b) in self.accumulates.iter_mut().zip(&s.accumulates) {
            *a += b;
        }
    }
}

/// `ζ^l = spikes / (neurons · samples)` for each layer.
pub fn spike_activity(spikes: &[u64], layer_sizes: &[usize], samples: u64) -> Vec<f64> {
    assert!(samples > 0, "spike activity needs at least one sample");
    spikes.iter().zip(layer_sizes).map(|(&s, &n)| s as f64 / (n as f64 * samples as f64)).collect()
}

/// Hidden-layer ζ from collected counters.
pub fn hidden_zetas(topology: &Topology, totals: &ActivityTotals) -> Vec<f64> {
    let sizes: Vec<usize> =
        topology.synapses[..topology.hidden_count()].iter().map(|s| s.synapse.output_len()).collect();
    spike_activity(&totals.hidden_spikes, &sizes, totals.samples)
}

/// Input-event activity per synapse: events per input position per sample.
pub fn input_activity(topology: &Topology, totals: &ActivityTotals) -> Vec<f64> {
    let sizes: Vec<usize> = topology.synapses.iter().map(|s| s.synapse.input_len()).collect();
    totals.input_events.iter().zip(&sizes).map(|(&e, &n)| e / (n as f64 * totals.samples as f64)).collect()
}

/// `F_ANN` per synapse and, given presynaptic activities, `F_SNN = F_ANN·ζ`.
pub fn flops(topology: &Topology, zetas: Option<&[f64]>) -> Vec<(u64, f64)> {
    topology
        .synapses
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = s.synapse.dense_flops();
            (f, zetas.map_or(f as f64, |z| f as f64 * z[i]))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    /// Own spiking activity; `None` for the non-spiking output layer.
    pub zeta: Option<f64>,
    /// Presynaptic activity driving this layer's accumulations.
    pub input_zeta: f64,
    pub f_ann: u64,
    pub f_snn: f64,
    /// Dense MAC passes per sample charged to this layer.
    pub mac_passes: f64,
    pub e_ann_pj: f64,
    pub e_snn_pj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub encoding: EncodingKind,
    pub timesteps: usize,
    pub layers: Vec<LayerEnergy>,
    pub e_ann: f64,
    pub e_snn: f64,
    pub ratio: f64,
    pub e_mac: f64,
    pub e_ac: f64,
}

/// Closed-form compute energy per sample.
///
/// `E_ANN = Σ F_ANN·E_MAC`. The SNN pays `F_ANN^1·E_MAC` for the analog
/// frame (hybrid and direct encodings), then `F_SNN^l·E_AC` for every
/// spike-driven layer, including the first layer's input raster when the
/// encoding emits one.
pub fn energy(
    topology: &Topology,
    flops: &[(u64, f64)],
    hidden_zetas: &[f64],
    input_zetas: &[f64],
    encoding: EncodingKind,
    constants: &EnergyConstants,
) -> EnergyReport {
    let (e_mac, e_ac) = (constants.e_mac_pj, constants.e_ac_pj);
    let layers: Vec<LayerEnergy> = topology
        .synapses
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (f_ann, f_snn) = flops[i];
            let mac_passes = if i == 0 && encoding != EncodingKind::Rate { 1.0 } else { 0.0 };
            LayerEnergy {
                name: s.name.clone(),
                zeta: hidden_zetas.get(i).copied(),
                input_zeta: input_zetas[i],
                f_ann,
                f_snn,
                mac_passes,
                e_ann_pj: f_ann as f64 * e_mac,
                e_snn_pj: mac_passes * f_ann as f64 * e_mac + f_snn * e_ac,
            }
        })
        .collect();
    let e_ann: f64 = layers.iter().map(|l| l.e_ann_pj).sum();
    let e_snn: f64 = layers.iter().map(|l| l.e_snn_pj).sum();
    EnergyReport { encoding, timesteps: topology.timesteps(), layers, e_ann, e_snn, ratio: e_ann / e_snn, e_mac, e_ac }
}

/// Energy per sample tallied directly from the simulator's event counters.
pub fn brute_force_energy(topology: &Topology, totals: &ActivityTotals, constants: &EnergyConstants) -> f64 {
    let n = totals.samples as f64;
    topology
        .synapses
        .iter()
        .enumerate()
        .map(|(i, s)| {
            totals.analog_passes[i] as f64 / n * s.synapse.dense_flops() as f64 * constants.e_mac_pj
                + totals.accumulates[i] / n * constants.e_ac_pj
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub activity: ActivityTotals,
}

impl Evaluation {
    pub fn hidden_zetas(&self, topology: &Topology) -> Vec<f64> {
        hidden_zetas(topology, &self.activity)
    }

    pub fn energy(&self, topology: &Topology, encoding: EncodingKind, constants: &EnergyConstants) -> EnergyReport {
        let input = input_activity(topology, &self.activity);
        energy(topology, &flops(topology, Some(&input)), &self.hidden_zetas(topology), &input, encoding, constants)
    }
}

/// Inference over a split with activity counters. Rate encoding draws each
/// sample's spikes from a seed derived from `seed` and the sample index.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    topology: &Topology,
    params: &[LayerParams<f32>],
    data: &Split,
    encoder: &Encoder,
    rule: SpikeRule,
    count_accumulates: bool,
    seed: u64,
    exec: Execution,
) -> Result<Evaluation, MetricsError> {
    if data.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let opts = ForwardOptions { count_accumulates, ..ForwardOptions::infer(rule) };
    let results = map_indexed(exec, data.len(), |i| -> Result<(bool, SampleActivity), MetricsError> {
        let input = encoder.encode(&data.images[i], &mut rng_from_seed(derive_seed(seed, &[i as u64])))?;
        let r = forward(topology, params, &input, &opts)?;
        Ok((predict(&r.output) == data.labels[i], r.activity))
    });
    let mut activity = ActivityTotals::default();
    let mut correct = 0;
    for r in results {
        let (hit, a) = r?;
        correct += hit as usize;
        activity.add(&a);
    }
    Ok(Evaluation { accuracy: 100.0 * correct as f64 / data.len() as f64, correct, total: data.len(), activity })
}
