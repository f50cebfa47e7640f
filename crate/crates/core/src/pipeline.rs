//! End-to-end orchestration: ANN training, calibration, conversion,
//! fine-tuning, evaluation and profiling.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use thiserror::Error;

use crate::ann::{
    ann_accuracy, ann_train, calibrate_thresholds, convert, with_timesteps, AnnEpochStats, AnnError, AnnParams,
    CalibrationError,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{load_dataset, Dataset, DatasetError, Split};
use crate::encoding::{Encoder, EncodingError, EncodingKind, IntensityRange};
use crate::metrics::{brute_force_energy, evaluate, EnergyConstants, Evaluation, MetricsError};
use crate::model_io::{load_model, save_model, ModelFile, ModelIoError};
use crate::network::{NetworkError, SpikeRule, Topology};
use crate::neuron::LayerParams;
use crate::numerics::{derive_seed, rng_from_seed};
use crate::report::{emit_report, EmitError, EnergyCheck, LayerActivity, PhaseTiming, RunReport, SnnSummary};
use crate::stdb::{train_snn, EpochStats, TrainingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("{0}")]
    Model(String),
    #[error("phase {phase} failed: {source}")]
    Phase { phase: &'static str, source: Box<PipelineError> },
}

impl PipelineError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Encoding(_) => 2,
            PipelineError::Dataset(_) => 3,
            PipelineError::Ann(_)
            | PipelineError::Training(_)
            | PipelineError::Metrics(_)
            | PipelineError::Network(_) => 4,
            PipelineError::Emit(_) => 5,
            PipelineError::Calibration(_) => 6,
            PipelineError::ModelIo(_) | PipelineError::Model(_) => 7,
            PipelineError::Phase { source, .. } => source.exit_code(),
        }
    }

    fn in_phase(self, phase: &'static str) -> Self {
        match self {
            PipelineError::Phase { .. } => self,
            other => PipelineError::Phase { phase, source: Box::new(other) },
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

type Progress = Box<dyn Fn(&str) + Send + Sync>;

/// Loaded data plus everything derived from the configuration.
pub struct Context {
    pub config: ExperimentConfig,
    pub topology: Topology,
    pub data: Dataset,
    pub range: IntensityRange,
    pub constants: EnergyConstants,
    progress: Option<Progress>,
}

impl Context {
    /// Validate the configuration and load its dataset.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate_files()?;
        let data = load_dataset(&config.dataset.path, config.dataset.format, config.network.num_classes)?;
        Self::with_data(config, data)
    }

    /// Use an already-normalised dataset.
    pub fn with_data(config: &ExperimentConfig, mut data: Dataset) -> Result<Self> {
        config.validate()?;
        if let Some(n) = config.dataset.train_limit {
            data.train = data.train.head(n);
        }
        if let Some(n) = config.dataset.test_limit {
            data.test = data.test.head(n);
        }
        if data.train.shape != config.network.input_shape {
            return Err(ConfigError::Invalid(format!(
                "dataset images are {:?}, network expects {:?}",
                data.train.shape, config.network.input_shape
            ))
            .into());
        }
        let pixels: Vec<f32> = data.train.images.iter().flat_map(|t| t.data().iter().copied()).collect();
        let range = IntensityRange::of_values(&pixels)?;
        let constants = match &config.energy_constants {
            Some(p) => EnergyConstants::from_file(p)?,
            None => EnergyConstants::bundled(),
        };
        Ok(Self { config: config.clone(), topology: config.topology()?, data, range, constants, progress: None })
    }

    pub fn set_progress(&mut self, f: impl Fn(&str) + Send + Sync + 'static) {
        self.progress = Some(Box::new(f));
    }

    fn note(&self, msg: &str) {
        if let Some(f) = &self.progress {
            f(msg);
        }
    }

    fn seed(&self, tag: u64) -> u64 {
        derive_seed(self.config.seed, &[tag])
    }

    pub fn encoder(&self, kind: EncodingKind) -> Result<Encoder> {
        Ok(Encoder::new(kind, self.range, self.topology.timesteps())?)
    }

    /// The evaluated part of the test split.
    pub fn eval_split(&self) -> Split {
        self.data.test.head(self.config.eval_samples.unwrap_or(usize::MAX))
    }

    pub fn train_ann(&self) -> Result<(AnnParams<f32>, Vec<AnnEpochStats>, f64)> {
        let mut params = AnnParams::init(&self.topology, &mut rng_from_seed(self.seed(1)));
        let curve = ann_train(
            &self.topology,
            &mut params,
            &self.data.train,
            &self.config.ann,
            self.seed(2),
            self.config.execution,
        )?;
        for e in &curve {
            self.note(&format!("ann epoch {} loss {:.4} train {:.2}%", e.epoch, e.loss, e.train_accuracy));
        }
        let acc = ann_accuracy(&self.topology, &params, &self.eval_split(), self.config.execution);
        Ok((params, curve, acc))
    }

    /// Thresholds from a seeded sample of training images.
    pub fn calibrate(&self, ann: &AnnParams<f32>) -> Result<Vec<f64>> {
        let n = self.config.calibration.num_images.min(self.data.train.len());
        let mut idx = sample(&mut rng_from_seed(self.seed(3)), self.data.train.len(), n).into_vec();
        idx.sort_unstable();
        let images: Vec<_> = idx.iter().map(|&i| self.data.train.images[i].clone()).collect();
        Ok(calibrate_thresholds(&self.topology, ann, &images, &self.config.calibration, self.config.execution)?)
    }

    /// Accuracy of the unscaled conversion (multi-spike LIF, direct
    /// encoding, calibration horizon).
    pub fn converted_accuracy(&self, ann: &AnnParams<f32>, thresholds: &[f64]) -> Result<f64> {
        let cal = &self.config.calibration;
        let topo = with_timesteps(&self.topology, cal.calib_timesteps)?;
        let encoder = Encoder::new(EncodingKind::Direct, self.range, cal.calib_timesteps)?;
        let params = convert(ann, thresholds, 1.0);
        let ev = evaluate(
            &topo,
            &params,
            &self.eval_split(),
            &encoder,
            SpikeRule::MultiSpike,
            false,
            self.seed(6),
            self.config.execution,
        )?;
        Ok(ev.accuracy)
    }

    /// Fine-tuning initialisation: thresholds scaled by the configured factor.
    pub fn initial_params(&self, ann: &AnnParams<f32>, thresholds: &[f64]) -> Vec<LayerParams<f32>> {
        convert(ann, thresholds, self.config.calibration.scaling)
    }

    pub fn fine_tune(
        &self,
        params: &mut [LayerParams<f32>],
        kind: EncodingKind,
        rule: SpikeRule,
    ) -> Result<Vec<EpochStats>> {
        let encoder = self.encoder(kind)?;
        Ok(train_snn(
            &self.topology,
            params,
            &self.data.train,
            &encoder,
            rule,
            &self.config.snn,
            self.seed(4),
            self.config.execution,
            |e, _| {
                self.note(&format!("snn[{kind}] epoch {} loss {:.4} train {:.2}%", e.epoch, e.loss, e.train_accuracy))
            },
        )?)
    }

    pub fn evaluate(
        &self,
        params: &[LayerParams<f32>],
        kind: EncodingKind,
        rule: SpikeRule,
        count: bool,
    ) -> Result<Evaluation> {
        let encoder = self.encoder(kind)?;
        Ok(evaluate(
            &self.topology,
            params,
            &self.eval_split(),
            &encoder,
            rule,
            count,
            self.seed(6),
            self.config.execution,
        )?)
    }

    /// Evaluation with activity, energy and the event-count cross-check.
    pub fn summarize(
        &self,
        params: &[LayerParams<f32>],
        kind: EncodingKind,
        rule: SpikeRule,
        curve: Vec<EpochStats>,
    ) -> Result<SnnSummary> {
        let ev = self.evaluate(params, kind, rule, true)?;
        Ok(summary_from(&self.topology, &ev, kind, rule, &self.constants, curve))
    }
}

/// Assemble an [`SnnSummary`] from a counted evaluation.
pub fn summary_from(
    topology: &Topology,
    ev: &Evaluation,
    kind: EncodingKind,
    rule: SpikeRule,
    constants: &EnergyConstants,
    curve: Vec<EpochStats>,
) -> SnnSummary {
    let zetas = ev.hidden_zetas(topology);
    let activity: Vec<LayerActivity> = zetas
        .iter()
        .enumerate()
        .map(|(i, &zeta)| LayerActivity {
            name: topology.synapses[i].name.clone(),
            zeta,
            max_spikes_per_neuron: ev.activity.max_spikes_per_neuron[i],
        })
        .collect();
    let energy = ev.energy(topology, kind, constants);
    let n = ev.activity.samples as f64;
    let counted_f_snn: Vec<f64> = ev.activity.accumulates.iter().map(|a| a / n).collect();
    let counted_e_snn = brute_force_energy(topology, &ev.activity, constants);
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let max_rel_diff = energy
        .layers
        .iter()
        .zip(&counted_f_snn)
        .map(|(l, &c)| rel(l.f_snn, c))
        .chain(std::iter::once(rel(energy.e_snn, counted_e_snn)))
        .fold(0.0, f64::max);
    let mean_hidden_zeta = if zetas.is_empty() { 0.0 } else { zetas.iter().sum::<f64>() / zetas.len() as f64 };
    SnnSummary {
        encoder: kind,
        rule,
        timesteps: topology.timesteps(),
        samples: ev.activity.samples,
        accuracy: ev.accuracy,
        activity,
        mean_hidden_zeta,
        energy,
        energy_check: EnergyCheck { counted_f_snn, counted_e_snn, max_rel_diff },
        curve,
    }
}

fn timed<T>(timings: &mut Vec<PhaseTiming>, phase: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_phase(phase));
    timings.push(PhaseTiming { phase: phase.to_string(), seconds: start.elapsed().as_secs_f64() });
    out
}

pub fn save_thresholds(path: &Path, thresholds: &[f64]) -> Result<()> {
    let text = serde_json::to_string_pretty(thresholds).expect("thresholds serialise");
    fs::write(path, text)
        .map_err(|e| EmitError::Write { path: path.display().to_string(), message: e.to_string() }.into())
}

pub fn load_thresholds(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Model(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Model(format!("{}: {e}", path.display())))
}

pub fn load_ann(path: &Path) -> Result<AnnParams<f32>> {
    match load_model(path)? {
        ModelFile::Ann(a) => Ok(a),
        ModelFile::Snn(_) => Err(PipelineError::Model(format!("{} holds an SNN, expected an ANN", path.display()))),
    }
}

pub fn load_snn(path: &Path) -> Result<Vec<LayerParams<f32>>> {
    match load_model(path)? {
        ModelFile::Snn(p) => Ok(p),
        ModelFile::Ann(_) => Err(PipelineError::Model(format!("{} holds an ANN, expected an SNN", path.display()))),
    }
}

/// Every phase in order, persisting artifacts into `output_dir` as they
/// are produced. A failing phase still leaves earlier artifacts and a
/// partial report behind.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Context::load(config)?;
    run_with_context(&ctx)
}

pub fn run_with_context(ctx: &Context) -> Result<RunReport> {
    let out = ctx.config.output_dir.clone();
    fs::create_dir_all(&out)
        .map_err(|e| EmitError::Write { path: out.display().to_string(), message: e.to_string() })?;
    let mut report = RunReport::new(&ctx.config);
    let result = run_phases(ctx, &out, &mut report);
    let emitted = emit_report(&report, &out);
    result?;
    emitted?;
    Ok(report)
}

fn run_phases(ctx: &Context, out: &Path, report: &mut RunReport) -> Result<()> {
    let mut timings = Vec::new();
    let res = (|| {
        let ann = timed(&mut timings, "train-ann", || {
            let (ann, curve, acc) = ctx.train_ann()?;
            save_model(&out.join("ann.model"), &ModelFile::Ann(ann.clone()))?;
            report.ann_curve = curve;
            report.accuracies.ann = Some(acc);
            Ok(ann)
        })?;
        let thresholds = timed(&mut timings, "calibrate", || {
            let t = ctx.calibrate(&ann)?;
            save_thresholds(&out.join("thresholds.json"), &t)?;
            report.thresholds = t.clone();
            Ok(t)
        })?;
        let init = timed(&mut timings, "convert", || {
            report.accuracies.converted = Some(ctx.converted_accuracy(&ann, &thresholds)?);
            let init = ctx.initial_params(&ann, &thresholds);
            save_model(&out.join("snn_init.model"), &ModelFile::Snn(init.clone()))?;
            report.accuracies.snn_init =
                Some(ctx.evaluate(&init, ctx.config.encoder, ctx.config.rule, false)?.accuracy);
            Ok(init)
        })?;
        let (tuned, curve) = timed(&mut timings, "train-snn", || {
            let mut p = init.clone();
            let curve = ctx.fine_tune(&mut p, ctx.config.encoder, ctx.config.rule)?;
            save_model(&out.join("snn.model"), &ModelFile::Snn(p.clone()))?;
            Ok((p, curve))
        })?;
        timed(&mut timings, "profile", || {
            let s = ctx.summarize(&tuned, ctx.config.encoder, ctx.config.rule, curve)?;
            report.accuracies.fine_tuned = Some(s.accuracy);
            report.primary = Some(s);
            Ok(())
        })?;
        if let Some(b) = ctx.config.baseline.clone() {
            timed(&mut timings, "baseline", || {
                let mut p = init.clone();
                let curve = ctx.fine_tune(&mut p, b.encoder, b.rule)?;
                save_model(&out.join("baseline.model"), &ModelFile::Snn(p.clone()))?;
                report.baseline = Some(ctx.summarize(&p, b.encoder, b.rule, curve)?);
                Ok(())
            })?;
        }
        Ok(())
    })();
    report.timings = timings;
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_per_category() {
        let codes = [
            PipelineError::Config(ConfigError::Invalid(String::new())).exit_code(),
            PipelineError::Dataset(DatasetError::Mismatch(String::new())).exit_code(),
            PipelineError::Training(TrainingError::EmptyData).exit_code(),
            PipelineError::Emit(EmitError::Write { path: String::new(), message: String::new() }).exit_code(),
            PipelineError::Calibration(CalibrationError::Config(String::new())).exit_code(),
            PipelineError::Model(String::new()).exit_code(),
        ];
        let mut sorted = codes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(codes.iter().all(|&c| c != 0));
        let wrapped = PipelineError::Training(TrainingError::EmptyData).in_phase("train-snn");
        assert_eq!(wrapped.exit_code(), 4);
        assert!(wrapped.to_string().contains("train-snn"));
    }
}
