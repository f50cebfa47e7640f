//! Input encoders: the hybrid analog-frame-plus-single-spike scheme, and
//! direct and Poisson-rate encoders used as baselines.
//!
//! Timesteps are 1-based throughout, matching how the schedule is usually
//! described: the hybrid analog frame is presented at `t = 1` and the spike
//! raster occupies `t = 2..=T`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Real, SimRng, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("degenerate intensity range [{i_min}, {i_max}]")]
    DegenerateRange { i_min: f64, i_max: f64 },
    #[error("hybrid encoding needs at least 2 timesteps, got {0}")]
    TooFewTimesteps(usize),
    #[error("rate encoding needs intensities in [0, 1], pixel {index} is {value}")]
    IntensityOutOfRange { index: usize, value: f64 },
    #[error("unknown encoder {0:?} (expected hybrid, direct or rate)")]
    UnknownEncoder(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    #[default]
    Hybrid,
    Direct,
    Rate,
}

impl EncodingKind {
    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Hybrid => "hybrid",
            EncodingKind::Direct => "direct",
            EncodingKind::Rate => "rate",
        }
    }
}

impl std::str::FromStr for EncodingKind {
    type Err = EncodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(EncodingKind::Hybrid),
            "direct" => Ok(EncodingKind::Direct),
            "rate" => Ok(EncodingKind::Rate),
            other => Err(EncodingError::UnknownEncoder(other.to_string())),
        }
    }
}

impl std::fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Intensity span used to map pixels onto firing times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub i_min: f64,
    pub i_max: f64,
}

impl IntensityRange {
    pub fn new(i_min: f64, i_max: f64) -> Result<Self, EncodingError> {
        let range = Self { i_min, i_max };
        range.validate()?;
        Ok(range)
    }

    /// Range over every value of a dataset.
    pub fn of_values<R: Real>(values: &[R]) -> Result<Self, EncodingError> {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
        Self::new(lo, hi)
    }

    fn validate(&self) -> Result<(), EncodingError> {
        if !(self.i_max > self.i_min) || !self.i_min.is_finite() || !self.i_max.is_finite() {
            return Err(EncodingError::DegenerateRange { i_min: self.i_min, i_max: self.i_max });
        }
        Ok(())
    }

    /// Affine map of `[i_min, i_max]` onto `[0, 1]`, clamped.
    pub fn unit(&self, intensity: f64) -> f64 {
        ((intensity - self.i_min) / (self.i_max - self.i_min)).clamp(0.0, 1.0)
    }
}

/// Firing time in `2..=T` for one pixel: brightest pixels fire at `t = 2`,
/// darkest at `t = T`. Rounds half away from zero, then clamps.
pub fn compute_firing_time(
    intensity: f64,
    range: &IntensityRange,
    total_timesteps: usize,
) -> Result<usize, EncodingError> {
    if total_timesteps < 2 {
        return Err(EncodingError::TooFewTimesteps(total_timesteps));
    }
    range.validate()?;
    let t = total_timesteps as f64;
    let slope = (2.0 - t) / (range.i_max - range.i_min);
    let raw = (t + slope * (intensity - range.i_min)).round();
    Ok(raw.clamp(2.0, t) as usize)
}

/// Per-sample SNN input over `T` timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeInputSequence<R = f32> {
    pub kind: EncodingKind,
    /// Analog pixel intensities (hybrid and direct only).
    pub analog_frame: Option<Tensor<R>>,
    /// Binary raster of shape `[T, ...pixel shape]`; slice `t - 1` holds
    /// timestep `t`. Absent for direct encoding.
    pub spikes: Option<Tensor<R>>,
    pub total_timesteps: usize,
}

/// What the first synaptic layer consumes at a given timestep, from the
/// point of view of operation counting.
#[derive(Clone, Copy, Debug)]
pub enum InputEvents<'a, R> {
    /// Real-valued frame: one multiply-accumulate pass.
    Analog,
    /// Binary spikes: one accumulate per spike and synapse.
    Spikes(&'a [R]),
    /// Same current as the previous step; nothing new to compute.
    Repeat,
}

impl<R: Real> SpikeInputSequence<R> {
    pub fn pixel_count(&self) -> usize {
        match (&self.analog_frame, &self.spikes) {
            (Some(frame), _) => frame.len(),
            (None, Some(spikes)) => spikes.len() / self.total_timesteps,
            (None, None) => 0,
        }
    }

    fn spike_slice(&self, t: usize) -> &[R] {
        let spikes = self.spikes.as_ref().expect("encoder produced a raster");
        let n = spikes.len() / self.total_timesteps;
        &spikes.data()[(t - 1) * n..t * n]
    }

    /// Input current delivered to the first layer at timestep `t` (1-based).
    pub fn current_at(&self, t: usize) -> &[R] {
        debug_assert!((1..=self.total_timesteps).contains(&t));
        match self.kind {
            EncodingKind::Hybrid if t == 1 => self.analog_frame.as_ref().unwrap().data(),
            EncodingKind::Direct => self.analog_frame.as_ref().unwrap().data(),
            EncodingKind::Hybrid | EncodingKind::Rate => self.spike_slice(t),
        }
    }

    pub fn events_at(&self, t: usize) -> InputEvents<'_, R> {
        match (self.kind, t) {
            (EncodingKind::Hybrid, 1) | (EncodingKind::Direct, 1) => InputEvents::Analog,
            (EncodingKind::Direct, _) => InputEvents::Repeat,
            _ => InputEvents::Spikes(self.spike_slice(t)),
        }
    }

    /// Timestep at which each pixel spikes in a hybrid raster.
    pub fn spike_times(&self) -> Option<Vec<usize>> {
        let spikes = self.spikes.as_ref()?;
        let n = spikes.len() / self.total_timesteps;
        Some(
            (0..n)
                .map(|i| (1..=self.total_timesteps).find(|&t| spikes.data()[(t - 1) * n + i] != R::zero()).unwrap_or(0))
                .collect(),
        )
    }
}

fn raster_shape<R: Real>(image: &Tensor<R>, total_timesteps: usize) -> Vec<usize> {
    let mut shape = vec![total_timesteps];
    shape.extend_from_slice(image.shape());
    shape
}

/// Analog frame at `t = 1`, then one spike per pixel at its firing time.
pub fn encode_hybrid<R: Real>(
    image: &Tensor<R>,
    range: &IntensityRange,
    total_timesteps: usize,
) -> Result<SpikeInputSequence<R>, EncodingError> {
    let n = image.len();
    let mut spikes = Tensor::zeros(&raster_shape(image, total_timesteps));
    for (i, &v) in image.data().iter().enumerate() {
        let t = compute_firing_time(v.as_f64(), range, total_timesteps)?;
        spikes.data_mut()[(t - 1) * n + i] = R::one();
    }
    Ok(SpikeInputSequence {
        kind: EncodingKind::Hybrid,
        analog_frame: Some(image.clone()),
        spikes: Some(spikes),
        total_timesteps,
    })
}

/// The analog frame is the input current at every timestep.
pub fn encode_direct<R: Real>(image: &Tensor<R>, total_timesteps: usize) -> SpikeInputSequence<R> {
    SpikeInputSequence { kind: EncodingKind::Direct, analog_frame: Some(image.clone()), spikes: None, total_timesteps }
}

/// Independent Bernoulli spikes with per-step probability equal to the
/// pixel intensity, which must lie in `[0, 1]`.
pub fn encode_poisson_rate<R: Real>(
    image: &Tensor<R>,
    total_timesteps: usize,
    rng: &mut SimRng,
) -> Result<SpikeInputSequence<R>, EncodingError> {
    for (index, v) in image.data().iter().enumerate() {
        let value = v.as_f64();
        if !(0.0..=1.0).contains(&value) {
            return Err(EncodingError::IntensityOutOfRange { index, value });
        }
    }
    let n = image.len();
    let mut spikes = Tensor::zeros(&raster_shape(image, total_timesteps));
    for t in 0..total_timesteps {
        for (i, v) in image.data().iter().enumerate() {
            if rng.random::<f64>() < v.as_f64() {
                spikes.data_mut()[t * n + i] = R::one();
            }
        }
    }
    Ok(SpikeInputSequence { kind: EncodingKind::Rate, analog_frame: None, spikes: Some(spikes), total_timesteps })
}

/// Encoder selection plus the dataset-wide state it needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub kind: EncodingKind,
    pub range: IntensityRange,
    pub timesteps: usize,
}

impl Encoder {
    pub fn new(kind: EncodingKind, range: IntensityRange, timesteps: usize) -> Result<Self, EncodingError> {
        if kind == EncodingKind::Hybrid && timesteps < 2 {
            return Err(EncodingError::TooFewTimesteps(timesteps));
        }
        if timesteps == 0 {
            return Err(EncodingError::TooFewTimesteps(0));
        }
        Ok(Self { kind, range, timesteps })
    }

    /// Encode a normalised image. Rate coding first maps the image onto
    /// `[0, 1]` through the intensity range.
    pub fn encode<R: Real>(&self, image: &Tensor<R>, rng: &mut SimRng) -> Result<SpikeInputSequence<R>, EncodingError> {
        match self.kind {
            EncodingKind::Hybrid => encode_hybrid(image, &self.range, self.timesteps),
            EncodingKind::Direct => Ok(encode_direct(image, self.timesteps)),
            EncodingKind::Rate => {
                let unit = image.map(|v| R::from_f64_lossy(self.range.unit(v.as_f64())));
                encode_poisson_rate(&unit, self.timesteps, rng)
            }
        }
    }
}
