//! Run reports and their on-disk form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::AnnEpochStats;
use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::encoding::EncodingKind;
use crate::metrics::EnergyReport;
use crate::network::SpikeRule;
use crate::stdb::EpochStats;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("cannot parse report {path}: {message}")]
    Parse { path: String, message: String },
}

/// Accuracies in percent for each pipeline phase that ran.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseAccuracies {
    pub ann: Option<f64>,
    /// Converted network at unit threshold scaling, direct encoding,
    /// multi-spike LIF over the calibration horizon.
    pub converted: Option<f64>,
    /// Converted network with scaled thresholds at the training horizon,
    /// before fine-tuning.
    pub snn_init: Option<f64>,
    pub fine_tuned: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerActivity {
    pub name: String,
    pub zeta: f64,
    pub max_spikes_per_neuron: u32,
}

/// Closed-form versus simulator-counted operation totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub counted_f_snn: Vec<f64>,
    pub counted_e_snn: f64,
    /// Largest relative difference over layers and the energy total.
    pub max_rel_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnnSummary {
    pub encoder: EncodingKind,
    pub rule: SpikeRule,
    pub timesteps: usize,
    pub samples: u64,
    pub accuracy: f64,
    pub activity: Vec<LayerActivity>,
    pub mean_hidden_zeta: f64,
    pub energy: EnergyReport,
    pub energy_check: EnergyCheck,
    pub curve: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub accuracies: PhaseAccuracies,
    pub thresholds: Vec<f64>,
    pub ann_curve: Vec<AnnEpochStats>,
    pub primary: Option<SnnSummary>,
    pub baseline: Option<SnnSummary>,
    /// Wall-clock only; excluded from [`RunReport::deterministic_json`].
    pub timings: Vec<PhaseTiming>,
}

impl RunReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: config.seed,
            config: config.clone(),
            accuracies: PhaseAccuracies::default(),
            thresholds: Vec::new(),
            ann_curve: Vec::new(),
            primary: None,
            baseline: None,
            timings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Serialised report with wall-clock fields cleared.
    pub fn deterministic_json(&self) -> String {
        Self { timings: Vec::new(), ..self.clone() }.to_json()
    }

    fn runs(&self) -> impl Iterator<Item = (&'static str, &SnnSummary)> {
        [("primary", self.primary.as_ref()), ("baseline", self.baseline.as_ref())]
            .into_iter()
            .filter_map(|(n, s)| s.map(|s| (n, s)))
    }
}

#[derive(Serialize)]
struct SpikeRow<'a> {
    run: &'a str,
    layer: &'a str,
    zeta: f64,
    max_spikes_per_neuron: u32,
}

#[derive(Serialize)]
struct EnergyRow<'a> {
    run: &'a str,
    layer: &'a str,
    zeta: Option<f64>,
    input_zeta: f64,
    f_ann: u64,
    f_snn: f64,
    mac_passes: f64,
    e_ann_pj: f64,
    e_snn_pj: f64,
    total_e_ann_pj: f64,
    total_e_snn_pj: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct LossRow<'a> {
    phase: &'a str,
    epoch: usize,
    lr: f64,
    loss: f64,
    train_accuracy: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<(), EmitError> {
    let err = |e: &dyn std::fmt::Display| EmitError::Write { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| err(&e))?;
    w.write_record(header).map_err(|e| err(&e))?;
    for row in rows {
        w.serialize(row).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

/// Write `report.json`, `spike_activity.csv`, `energy.csv` and
/// `loss_curve.csv` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(), EmitError> {
    let err = |p: &Path, e: &dyn std::fmt::Display| EmitError::Write {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
    let json = dir.join("report.json");
    fs::write(&json, report.to_json()).map_err(|e| err(&json, &e))?;

    let spikes = report.runs().flat_map(|(run, s)| {
        s.activity.iter().map(move |a| SpikeRow {
            run,
            layer: &a.name,
            zeta: a.zeta,
            max_spikes_per_neuron: a.max_spikes_per_neuron,
        })
    });
    write_csv(&dir.join("spike_activity.csv"), spikes, &["run", "layer", "zeta", "max_spikes_per_neuron"])?;

    let energy = report.runs().flat_map(|(run, s)| {
        let e = &s.energy;
        e.layers.iter().map(move |l| EnergyRow {
            run,
            layer: &l.name,
            zeta: l.zeta,
            input_zeta: l.input_zeta,
            f_ann: l.f_ann,
            f_snn: l.f_snn,
            mac_passes: l.mac_passes,
            e_ann_pj: l.e_ann_pj,
            e_snn_pj: l.e_snn_pj,
            total_e_ann_pj: e.e_ann,
            total_e_snn_pj: e.e_snn,
            ratio: e.ratio,
        })
    });
    write_csv(
        &dir.join("energy.csv"),
        energy,
        &[
            "run",
            "layer",
            "zeta",
            "input_zeta",
            "f_ann",
            "f_snn",
            "mac_passes",
            "e_ann_pj",
            "e_snn_pj",
            "total_e_ann_pj",
            "total_e_snn_pj",
            "ratio",
        ],
    )?;

    let ann = report.ann_curve.iter().map(|e| LossRow {
        phase: "ann",
        epoch: e.epoch,
        lr: e.lr,
        loss: e.loss,
        train_accuracy: e.train_accuracy,
    });
    let snn = report.runs().flat_map(|(run, s)| {
        s.curve.iter().map(move |e| LossRow {
            phase: if run == "primary" { "snn" } else { "baseline" },
            epoch: e.epoch,
            lr: e.lr,
            loss: e.loss,
            train_accuracy: e.train_accuracy,
        })
    });
    write_csv(&dir.join("loss_curve.csv"), ann.chain(snn), &["phase", "epoch", "lr", "loss", "train_accuracy"])
}

pub fn read_report(path: &Path) -> Result<RunReport, EmitError> {
    let err = |m: String| EmitError::Parse { path: path.display().to_string(), message: m };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}
