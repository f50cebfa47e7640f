//! Command-line driver for the hybrid-encoded SNN pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsnn_core::config::{ConfigError, ExperimentConfig};
use hsnn_core::encoding::EncodingKind;
use hsnn_core::model_io::{save_model, ModelFile};
use hsnn_core::parallel::Execution;
use hsnn_core::pipeline::{
    load_ann, load_snn, load_thresholds, run_with_context, save_thresholds, Context, PipelineError,
};
use hsnn_core::report::{emit_report, RunReport};

#[derive(Parser, Debug)]
#[command(name = "hsnn", version, about = "Train, convert and profile single-spike hybrid-encoded SNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Input encoder: hybrid, direct or rate.
    #[arg(long, global = true)]
    encoder: Option<EncodingKind>,
    #[arg(long, global = true)]
    timesteps: Option<usize>,
    /// Output directory for models and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    ann_epochs: Option<usize>,
    #[arg(long, global = true)]
    snn_epochs: Option<usize>,
    #[arg(long, global = true)]
    train_limit: Option<usize>,
    #[arg(long, global = true)]
    eval_samples: Option<usize>,
    /// Disable data parallelism.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the ANN and save `ann.model`.
    TrainAnn,
    /// Calibrate thresholds for a trained ANN into `thresholds.json`.
    Calibrate {
        #[arg(long)]
        ann: Option<PathBuf>,
    },
    /// Convert an ANN into `snn_init.model` with scaled thresholds.
    Convert {
        #[arg(long)]
        ann: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Fine-tune an SNN with spike-timing backprop into `snn.model`.
    TrainSnn {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Test accuracy of an SNN model.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Spiking activity, operation counts and energy of an SNN model.
    Profile {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Every phase end to end.
    RunAll,
    /// Print the effective configuration.
    ShowConfig,
}

fn effective_config(c: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.encoder {
        cfg.encoder = v;
    }
    if let Some(v) = c.timesteps {
        cfg.timesteps = v;
    }
    if let Some(v) = &c.out {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = &c.dataset {
        cfg.dataset.path = v.clone();
    }
    if let Some(v) = c.ann_epochs {
        cfg.ann.epochs = v;
    }
    if let Some(v) = c.snn_epochs {
        cfg.snn.epochs = v;
    }
    if c.train_limit.is_some() {
        cfg.dataset.train_limit = c.train_limit;
    }
    if c.eval_samples.is_some() {
        cfg.eval_samples = c.eval_samples;
    }
    if c.sequential {
        cfg.execution = Execution::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn artifact(explicit: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(name))
}

fn mkdir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        hsnn_core::report::EmitError::Write { path: dir.display().to_string(), message: e.to_string() }.into()
    })
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = effective_config(&cli.common)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let mut ctx = Context::load(&cfg)?;
    ctx.set_progress(|m| eprintln!("{m}"));
    let out = cfg.output_dir.clone();
    mkdir(&out)?;
    let mut report = RunReport::new(&cfg);
    match &cli.command {
        Command::TrainAnn => {
            let (ann, curve, acc) = ctx.train_ann()?;
            save_model(&out.join("ann.model"), &ModelFile::Ann(ann))?;
            report.ann_curve = curve;
            report.accuracies.ann = Some(acc);
        }
        Command::Calibrate { ann } => {
            let ann = load_ann(&artifact(ann, &out, "ann.model"))?;
            let t = ctx.calibrate(&ann)?;
            save_thresholds(&out.join("thresholds.json"), &t)?;
            report.thresholds = t;
        }
        Command::Convert { ann, thresholds } => {
            let ann = load_ann(&artifact(ann, &out, "ann.model"))?;
            let t = load_thresholds(&artifact(thresholds, &out, "thresholds.json"))?;
            report.accuracies.converted = Some(ctx.converted_accuracy(&ann, &t)?);
            let init = ctx.initial_params(&ann, &t);
            save_model(&out.join("snn_init.model"), &ModelFile::Snn(init.clone()))?;
            report.accuracies.snn_init = Some(ctx.evaluate(&init, cfg.encoder, cfg.rule, false)?.accuracy);
            report.thresholds = t;
        }
        Command::TrainSnn { model } => {
            let mut p = load_snn(&artifact(model, &out, "snn_init.model"))?;
            let curve = ctx.fine_tune(&mut p, cfg.encoder, cfg.rule)?;
            save_model(&out.join("snn.model"), &ModelFile::Snn(p.clone()))?;
            let s = ctx.summarize(&p, cfg.encoder, cfg.rule, curve)?;
            report.accuracies.fine_tuned = Some(s.accuracy);
            report.primary = Some(s);
        }
        Command::Eval { model } => {
            let p = load_snn(&artifact(model, &out, "snn.model"))?;
            report.accuracies.fine_tuned = Some(ctx.evaluate(&p, cfg.encoder, cfg.rule, false)?.accuracy);
        }
        Command::Profile { model } => {
            let p = load_snn(&artifact(model, &out, "snn.model"))?;
            let s = ctx.summarize(&p, cfg.encoder, cfg.rule, Vec::new())?;
            report.accuracies.fine_tuned = Some(s.accuracy);
            report.primary = Some(s);
        }
        Command::RunAll => report = run_with_context(&ctx)?,
        Command::ShowConfig => unreachable!("handled above"),
    }
    if !matches!(cli.command, Command::RunAll) {
        emit_report(&report, &out)?;
    }
    println!("{}", serde_json::to_string(&report.accuracies).expect("accuracies serialise"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
