//! Neuron dynamics: multi-spike LIF with soft reset, the single-spike LIF
//! used in hidden layers, the leak-free output accumulator that records
//! first-crossing times, and the triangular surrogate derivative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuronError {
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("leak must lie in [0, 1], got {0}")]
    Leak(f64),
}

/// Weights plus the layer-wide firing threshold and leak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<R = f32> {
    pub weights: Tensor<R>,
    pub threshold: R,
    pub leak: R,
}

impl<R: Real> LayerParams<R> {
    pub fn new(weights: Tensor<R>, threshold: R, leak: R) -> Result<Self, NeuronError> {
        let p = Self { weights, threshold, leak };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NeuronError> {
        if !(self.threshold > R::zero()) || !self.threshold.is_finite() {
            return Err(NeuronError::Threshold(self.threshold.as_f64()));
        }
        if !(self.leak >= R::zero() && self.leak <= R::one()) {
            return Err(NeuronError::Leak(self.leak.as_f64()));
        }
        Ok(())
    }

    pub fn convert<S: Real>(&self) -> LayerParams<S> {
        LayerParams {
            weights: self.weights.convert(),
            threshold: S::from_f64_lossy(self.threshold.as_f64()),
            leak: S::from_f64_lossy(self.leak.as_f64()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

/// Hidden-layer state.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState<R = f32> {
    pub membrane: Vec<R>,
    /// `membrane / threshold - 1` after the latest step.
    pub z: Vec<R>,
    /// `z > 0` after the latest step; drives the soft reset of the next one.
    pub reset_gate: Vec<bool>,
    pub has_spiked: Vec<bool>,
}

impl<R: Real> NeuronState<R> {
    pub fn new(len: usize) -> Self {
        Self {
            membrane: vec![R::zero(); len],
            z: vec![-R::one(); len],
            reset_gate: vec![false; len],
            has_spiked: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.membrane.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membrane.is_empty()
    }

    pub fn reset(&mut self) {
        self.membrane.iter_mut().for_each(|v| *v = R::zero());
        self.z.iter_mut().for_each(|v| *v = -R::one());
        self.reset_gate.iter_mut().for_each(|g| *g = false);
        self.has_spiked.iter_mut().for_each(|g| *g = false);
    }
}

/// Standard LIF step: `U = λU + I - V·O_prev`, spike where `U > V`.
/// Returns the number of spikes written to `out`.
pub fn lif_step<R: Real>(
    state: &mut NeuronState<R>,
    threshold: R,
    leak: R,
    input: &[R],
    prev_spikes: &[R],
    out: &mut [R],
) -> usize {
    let mut fired = 0;
    for i in 0..state.len() {
        let u = leak * state.membrane[i] + input[i] - threshold * prev_spikes[i];
        state.membrane[i] = u;
        let z = u / threshold - R::one();
        state.z[i] = z;
        let spike = u > threshold;
        state.reset_gate[i] = spike;
        state.has_spiked[i] |= spike;
        out[i] = if spike { R::one() } else { R::zero() };
        fired += spike as usize;
    }
    fired
}

/// Single-spike LIF step. The soft reset uses the previous `z > 0` gate;
/// a spike is emitted only on the first step with `z > 0`. In training the
/// membrane keeps evolving after the spike; at inference a neuron that has
/// spiked is frozen.
pub fn single_spike_step<R: Real>(
    state: &mut NeuronState<R>,
    threshold: R,
    leak: R,
    input: &[R],
    mode: Mode,
    out: &mut [R],
) -> usize {
    let mut fired = 0;
    for i in 0..state.len() {
        if mode == Mode::Infer && state.has_spiked[i] {
            out[i] = R::zero();
            continue;
        }
        let gate = if state.reset_gate[i] { threshold } else { R::zero() };
        let u = leak * state.membrane[i] + input[i] - gate;
        state.membrane[i] = u;
        let z = u / threshold - R::one();
        state.z[i] = z;
        let above = z > R::zero();
        state.reset_gate[i] = above;
        let spike = above && !state.has_spiked[i];
        state.has_spiked[i] |= spike;
        out[i] = if spike { R::one() } else { R::zero() };
        fired += spike as usize;
    }
    fired
}

/// Output-layer state: leak-free accumulation plus first-crossing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputState<R = f32> {
    pub membrane: Vec<R>,
    /// 1-based spike time per neuron; 0 until it fires.
    pub spike_time: Vec<usize>,
}

impl<R: Real> OutputState<R> {
    pub fn new(len: usize) -> Self {
        Self { membrane: vec![R::zero(); len], spike_time: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.membrane.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membrane.is_empty()
    }
}

/// `U^t = U^{t-1} + I`; records the first `t` with `U^t >= V > U^{t-1}`
/// and forces a spike at `T` for neurons that never crossed.
pub fn output_step<R: Real>(state: &mut OutputState<R>, threshold: R, input: &[R], t: usize, total_timesteps: usize) {
    debug_assert!((1..=total_timesteps).contains(&t));
    for i in 0..state.len() {
        let prev = state.membrane[i];
        let u = prev + input[i];
        state.membrane[i] = u;
        if state.spike_time[i] == 0 && u >= threshold && prev < threshold {
            state.spike_time[i] = t;
        }
    }
    if t == total_timesteps {
        for st in state.spike_time.iter_mut().filter(|st| **st == 0) {
            *st = total_timesteps;
        }
    }
}

/// Triangular surrogate `γ·max(0, 1 - |z|)`.
#[inline]
pub fn surrogate<R: Real>(z: R, gamma: R) -> R {
    gamma * (R::one() - z.abs()).max(R::zero())
}

pub fn surrogate_grad<R: Real>(z: &Tensor<R>, gamma: R) -> Tensor<R> {
    z.map(|v| surrogate(v, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    fn state_with(u: f64) -> NeuronState<f64> {
        let mut s = NeuronState::new(1);
        s.membrane[0] = u;
        s
    }

    #[test]
    fn lif_examples() {
        let mut out = [0.0];
        let mut s = state_with(0.5);
        lif_step(&mut s, 1.0, 1.0, &[0.6], &[0.0], &mut out);
        assert!(approx(s.membrane[0], 1.1));
        assert_eq!(out[0], 1.0);

        let mut s = state_with(0.8);
        lif_step(&mut s, 1.0, 0.5, &[0.0], &[0.0], &mut out);
        assert!(approx(s.membrane[0], 0.4));
        assert_eq!(out[0], 0.0);

        let mut s = state_with(1.1);
        lif_step(&mut s, 1.0, 1.0, &[0.0], &[1.0], &mut out);
        assert!(approx(s.membrane[0], 0.1));
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn threshold_and_leak_validated() {
        let w = Tensor::<f32>::zeros(&[1, 1]);
        assert!(LayerParams::new(w.clone(), 0.0, 0.5).is_err());
        assert!(LayerParams::new(w.clone(), 1.0, 1.5).is_err());
        assert!(LayerParams::new(w, 1.0, 1.0).is_ok());
    }

    fn run_single(currents: &[f64], mode: Mode) -> Vec<f64> {
        let mut s = NeuronState::new(1);
        let mut out = [0.0];
        currents
            .iter()
            .map(|&c| {
                single_spike_step(&mut s, 1.0, 1.0, &[c], mode, &mut out);
                out[0]
            })
            .collect()
    }

    #[test]
    fn single_spike_fires_once() {
        // z first exceeds 0 at t = 3.
        for mode in [Mode::Train, Mode::Infer] {
            assert_eq!(run_single(&[0.4, 0.4, 0.4, 0.0], mode), vec![0.0, 0.0, 1.0, 0.0]);
        }
        // z > 0 at t = 2, drops, then > 0 again at t = 4: still only one spike.
        for mode in [Mode::Train, Mode::Infer] {
            assert_eq!(run_single(&[0.5, 0.7, -0.9, 2.0, 3.0], mode), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn train_keeps_integrating_infer_freezes() {
        let mut train = NeuronState::<f64>::new(1);
        let mut infer = NeuronState::<f64>::new(1);
        let mut out = [0.0];
        for c in [1.5, 0.3, 0.3] {
            single_spike_step(&mut train, 1.0, 1.0, &[c], Mode::Train, &mut out);
            single_spike_step(&mut infer, 1.0, 1.0, &[c], Mode::Infer, &mut out);
        }
        // Train: 1.5 -> 1.5 + 0.3 - 1 = 0.8 -> 0.8 + 0.3 = 1.1.
        assert!(approx(train.membrane[0], 1.1));
        assert!(approx(infer.membrane[0], 1.5));
    }

    #[test]
    fn z_is_normalised_potential() {
        let mut s = NeuronState::<f64>::new(1);
        let mut out = [0.0];
        single_spike_step(&mut s, 1.0, 1.0, &[1.2], Mode::Train, &mut out);
        assert!(approx(s.z[0], 0.2));
    }

    #[test]
    fn output_examples() {
        let mut s = OutputState::<f64>::new(1);
        for t in 1..=4 {
            output_step(&mut s, 1.0, &[0.1], t, 4);
        }
        assert_eq!(s.spike_time, vec![4]);

        let mut s = OutputState::<f64>::new(1);
        output_step(&mut s, 1.0, &[0.6], 1, 3);
        output_step(&mut s, 1.0, &[0.6], 2, 3);
        assert_eq!(s.spike_time, vec![2]);

        let mut s = OutputState::<f64>::new(1);
        output_step(&mut s, 1.0, &[2.0], 1, 3);
        assert_eq!(s.spike_time, vec![1]);
    }

    #[test]
    fn surrogate_examples() {
        assert!(approx(surrogate(0.0, 0.3), 0.3));
        assert_eq!(surrogate(1.0, 0.3), 0.0);
        assert_eq!(surrogate(-2.5, 0.3), 0.0);
        assert!(approx(surrogate(0.5, 0.3), 0.15));
        let z = Tensor::new(vec![3], vec![-0.5, 0.0, 0.5]).unwrap();
        let g = surrogate_grad(&z, 0.3);
        assert!(approx(g.data()[0], g.data()[2]));
    }

    proptest! {
        #[test]
        fn soft_reset_conserves_charge(c in 0.0f64..3.0, v in 0.2f64..2.0, steps in 1usize..60) {
            let mut s = NeuronState::new(1);
            let mut prev = [0.0];
            let mut out = [0.0];
            let mut spikes = 0.0;
            for _ in 0..steps {
                lif_step(&mut s, v, 1.0, &[c], &prev, &mut out);
                prev = out;
                spikes += out[0];
            }
            // The last spike's reset has not been applied yet.
            let applied = spikes - out[0];
            prop_assert!((s.membrane[0] + v * applied - c * steps as f64).abs() < 1e-5);
        }

        #[test]
        fn single_spike_invariants(
            currents in proptest::collection::vec(-1.0f64..2.0, 1..20),
            v in 0.2f64..2.0, leak in 0.0f64..=1.0,
        ) {
            for mode in [Mode::Train, Mode::Infer] {
                let mut s = NeuronState::new(1);
                let mut out = [0.0];
                let mut total = 0.0;
                for &c in &currents {
                    single_spike_step(&mut s, v, leak, &[c], mode, &mut out);
                    total += out[0];
                    prop_assert!((s.z[0] * v + v - s.membrane[0]).abs() < 1e-9);
                }
                prop_assert!(total <= 1.0);
            }
        }

        #[test]
        fn output_membrane_is_running_sum(currents in proptest::collection::vec(-1.0f64..1.0, 1..12)) {
            let total = currents.len();
            let mut s = OutputState::new(1);
            let mut running = 0.0;
            for (k, &c) in currents.iter().enumerate() {
                output_step(&mut s, 0.5, &[c], k + 1, total);
                running += c;
                prop_assert_eq!(s.membrane[0], running);
            }
            prop_assert!((1..=total).contains(&s.spike_time[0]));
        }

        #[test]
        fn surrogate_even_and_peaked(z in -3.0f64..3.0, gamma in 0.01f64..2.0) {
            prop_assert_eq!(surrogate(z, gamma), surrogate(-z, gamma));
            prop_assert!(surrogate(z, gamma) <= gamma);
        }
    }
}
