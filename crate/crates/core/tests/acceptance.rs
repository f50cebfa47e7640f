//! Acceptance criteria. Each test writes one `criterion N ... PASS|FAIL`
//! line straight to stdout so the verdicts show without `--nocapture`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use hsnn_core::config::{BaselineConfig, ExperimentConfig};
use hsnn_core::encoding::{compute_firing_time, encode_hybrid, EncodingKind, IntensityRange, SpikeInputSequence};
use hsnn_core::network::{convert_params, forward, ForwardOptions, SpikeRule};
use hsnn_core::neuron::LayerParams;
use hsnn_core::numerics::{rng_from_seed, Tensor};
use hsnn_core::pipeline::{load_snn, run_with_context, Context};
use hsnn_core::report::RunReport;
use hsnn_core::stdb::{
    batch_loss_and_gradients, finite_difference_check, hybrid_loss, spike_time_threshold_grad, OptimizerKind,
    ParamComponent, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;

const ENCODING_SAMPLES: usize = 100_000;
const ENCODING_BUDGET_SECS: f64 = 5.0;
const OUTPUT_FD_MIN_PROBES: usize = 100;
const OUTPUT_FD_REL_TOL: f64 = 1e-4;
const OUTPUT_FD_EPSILON: f64 = 1e-6;
const OUTPUT_FD_BUDGET_SECS: f64 = 30.0;
const HIDDEN_PROBES_PER_LAYER: usize = 40;
const HIDDEN_FD_EPSILON: f64 = 0.1;
const HIDDEN_FD_BATCH: usize = 64;
const HIDDEN_FD_MIN_NUMERIC: f64 = 1e-3;
const HIDDEN_SIGN_AGREEMENT: f64 = 0.70;
const HIDDEN_FD_BUDGET_SECS: f64 = 60.0;
const ANN_MIN_ACCURACY: f64 = 97.0;
const CONVERSION_MAX_DROP: f64 = 2.0;
const FINE_TUNE_MAX_DROP: f64 = 2.0;
const ZETA_MAX_RATIO: f64 = 0.75;
const BASELINE_MAX_GAP: f64 = 2.0;
const ENERGY_MAX_REL_DIFF: f64 = 0.01;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn dataset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits")
}

fn acceptance_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.path = dataset_dir();
    cfg.output_dir = out.to_path_buf();
    cfg.snn.lr = 1e-3;
    cfg.snn.optimizer = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
    cfg.baseline = Some(BaselineConfig { encoder: EncodingKind::Direct, rule: SpikeRule::MultiSpike });
    cfg
}

struct Runs {
    ctx: Context,
    first: RunReport,
    second: RunReport,
    dirs: [tempfile::TempDir; 2],
}

/// Two identical end-to-end runs, shared by every criterion that needs a
/// trained pipeline.
fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let ctx = Context::load(&acceptance_config(dirs[0].path())).unwrap();
        let first = run_with_context(&ctx).unwrap();
        let ctx2 = Context::load(&acceptance_config(dirs[1].path())).unwrap();
        let mut second = run_with_context(&ctx2).unwrap();
        second.config.output_dir = first.config.output_dir.clone();
        Runs { ctx, first, second, dirs }
    })
}

fn initial_params_f64(r: &Runs) -> Vec<LayerParams<f64>> {
    convert_params(&load_snn(&r.dirs[0].path().join("snn_init.model")).unwrap())
}

fn hybrid_samples(r: &Runs, count: usize, seed: u64) -> Vec<(SpikeInputSequence<f64>, usize)> {
    let train = &r.ctx.data.train;
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let enc = r.ctx.encoder(EncodingKind::Hybrid).unwrap();
    let mut rng = rng_from_seed(seed);
    idx[..count]
        .iter()
        .map(|&i| {
            let img: Tensor<f64> = train.images[i].convert();
            (enc.encode(&img, &mut rng).unwrap(), train.labels[i])
        })
        .collect()
}

#[test]
fn criterion_01_hybrid_encoding_single_spike() {
    let start = Instant::now();
    let range = IntensityRange::new(-1.3, 2.7).unwrap();
    let mut rng = rng_from_seed(11);
    let mut failures = Vec::new();
    for t in [2usize, 3, 5, 8] {
        let mut values: Vec<f64> = (0..ENCODING_SAMPLES).map(|_| rng.random_range(range.i_min..=range.i_max)).collect();
        let image = Tensor::new(vec![1, 1, ENCODING_SAMPLES], values.clone()).unwrap();
        let seq = encode_hybrid(&image, &range, t).unwrap();
        let raster = seq.spikes.as_ref().unwrap().data();
        let n = ENCODING_SAMPLES;
        for p in 0..n {
            let fires: Vec<usize> = (1..=t).filter(|&s| raster[(s - 1) * n + p] == 1.0).collect();
            let want = compute_firing_time(values[p], &range, t).unwrap();
            if fires != [want] || !(2..=t).contains(&want) {
                failures.push(format!("T={t} I={} fires {fires:?}", values[p]));
                break;
            }
        }
        values.sort_by(f64::total_cmp);
        let times: Vec<usize> = values.iter().map(|&v| compute_firing_time(v, &range, t).unwrap()).collect();
        if times.windows(2).any(|w| w[1] > w[0]) {
            failures.push(format!("T={t} firing time not non-increasing in intensity"));
        }
        if compute_firing_time(range.i_max, &range, t).unwrap() != 2
            || compute_firing_time(range.i_min, &range, t).unwrap() != t
        {
            failures.push(format!("T={t} boundary times"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < ENCODING_BUDGET_SECS;
    verdict(1, "hybrid encoding", pass, format!("4x{ENCODING_SAMPLES} intensities in {secs:.2}s; {failures:?}"));
}

#[test]
fn criterion_02_output_layer_gradients() {
    let r = runs();
    let start = Instant::now();
    let topo = &r.ctx.topology;
    let params = initial_params_f64(r);
    let out = topo.synapse_count() - 1;
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    let mut clean = 0;

    // dL/dU^T with spike times held fixed.
    for (k, (input, label)) in hybrid_samples(r, 10, 21).iter().enumerate() {
        let res = forward(topo, &params, input, &ForwardOptions::train(SpikeRule::SingleSpike, k as u64)).unwrap();
        let analytic = hybrid_loss(&res.output, *label).grad_u;
        for (i, &want) in analytic.iter().enumerate() {
            let mut plus = res.output.clone();
            plus.membrane[i] += OUTPUT_FD_EPSILON;
            let mut minus = res.output.clone();
            minus.membrane[i] -= OUTPUT_FD_EPSILON;
            let numeric =
                (hybrid_loss(&plus, *label).loss - hybrid_loss(&minus, *label).loss) / (2.0 * OUTPUT_FD_EPSILON);
            let rel = (want - numeric).abs() / want.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            clean += 1;
        }
    }

    // Output weights through the full network.
    let samples = hybrid_samples(r, 8, 22);
    let n = params[out].weights.len();
    let mut rng = rng_from_seed(23);
    let mut boundary = 0;
    for _ in 0..120 {
        let idx = rng.random_range(0..n);
        let p = finite_difference_check(
            topo,
            &params,
            &samples,
            SpikeRule::SingleSpike,
            ParamComponent::Weight,
            out,
            idx,
            OUTPUT_FD_EPSILON,
            &cfg,
            24,
        )
        .unwrap();
        if p.boundary {
            boundary += 1;
            continue;
        }
        worst = worst.max(p.rel_error);
        clean += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = clean >= OUTPUT_FD_MIN_PROBES && worst < OUTPUT_FD_REL_TOL && secs < OUTPUT_FD_BUDGET_SECS;
    verdict(
        2,
        "output-layer gradients",
        pass,
        format!("{clean} non-boundary probes, {boundary} boundary skipped, max rel error {worst:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_03_hidden_surrogate_sign_agreement() {
    let r = runs();
    let start = Instant::now();
    let topo = &r.ctx.topology;
    let params = initial_params_f64(r);
    let samples = hybrid_samples(r, HIDDEN_FD_BATCH, 31);
    let cfg = TrainConfig::default();
    let (_, grads, _) = batch_loss_and_gradients(topo, &params, &samples, SpikeRule::SingleSpike, &cfg, 32).unwrap();
    let (mut agree, mut total) = (0, 0);
    let mut per_layer = Vec::new();
    for layer in 0..topo.hidden_count() {
        let g = grads.layers[layer].weights.data();
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let (mut a, mut t) = (0, 0);
        for &idx in &order[..HIDDEN_PROBES_PER_LAYER] {
            let p = finite_difference_check(
                topo,
                &params,
                &samples,
                SpikeRule::SingleSpike,
                ParamComponent::Weight,
                layer,
                idx,
                HIDDEN_FD_EPSILON,
                &cfg,
                32,
            )
            .unwrap();
            if p.numeric.abs() > HIDDEN_FD_MIN_NUMERIC {
                t += 1;
                if p.numeric.signum() == p.analytic.signum() {
                    a += 1;
                }
            }
        }
        per_layer.push(format!("{} {a}/{t}", topo.synapses[layer].name));
        agree += a;
        total += t;
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = agree as f64 / total.max(1) as f64;
    let pass = total > 0 && rate >= HIDDEN_SIGN_AGREEMENT && secs < HIDDEN_FD_BUDGET_SECS;
    verdict(
        3,
        "hidden-layer surrogate sign agreement",
        pass,
        format!("{agree}/{total} = {:.1}% [{}], {secs:.1}s", 100.0 * rate, per_layer.join(", ")),
    );
}

#[test]
fn criterion_04_single_spike_activity() {
    let s = runs().first.primary.as_ref().unwrap();
    let max = s.activity.iter().map(|a| a.max_spikes_per_neuron).max().unwrap();
    let zmax = s.activity.iter().map(|a| a.zeta).fold(0.0, f64::max);
    let zetas: Vec<String> = s.activity.iter().map(|a| format!("{} {:.3}", a.name, a.zeta)).collect();
    verdict(
        4,
        "single-spike activity",
        max == 1 && zmax <= 1.0,
        format!("{} test samples, max spikes per neuron {max}, zeta [{}]", s.samples, zetas.join(", ")),
    );
}

#[test]
fn criterion_05_conversion() {
    let acc = &runs().first.accuracies;
    let (ann, conv) = (acc.ann.unwrap(), acc.converted.unwrap());
    verdict(
        5,
        "ANN accuracy and conversion",
        ann >= ANN_MIN_ACCURACY && (ann - conv).abs() <= CONVERSION_MAX_DROP,
        format!("ANN {ann:.2}%, converted {conv:.2}%"),
    );
}

#[test]
fn criterion_06_fine_tuned_accuracy() {
    let acc = &runs().first.accuracies;
    let (ann, ft) = (acc.ann.unwrap(), acc.fine_tuned.unwrap());
    verdict(
        6,
        "fine-tuned hybrid single-spike accuracy",
        ft >= ann - FINE_TUNE_MAX_DROP,
        format!("ANN {ann:.2}%, before fine-tuning {:.2}%, fine-tuned {ft:.2}%", acc.snn_init.unwrap()),
    );
}

#[test]
fn criterion_07_activity_reduction() {
    let rep = &runs().first;
    let (p, b) = (rep.primary.as_ref().unwrap(), rep.baseline.as_ref().unwrap());
    let ratio = p.mean_hidden_zeta / b.mean_hidden_zeta;
    let gap = (p.accuracy - b.accuracy).abs();
    verdict(
        7,
        "activity reduction vs direct multi-spike",
        ratio <= ZETA_MAX_RATIO && gap <= BASELINE_MAX_GAP,
        format!(
            "mean zeta {:.3} vs {:.3} (ratio {ratio:.3}), accuracy {:.2}% vs {:.2}%",
            p.mean_hidden_zeta, b.mean_hidden_zeta, p.accuracy, b.accuracy
        ),
    );
}

#[test]
fn criterion_08_energy() {
    let rep = &runs().first;
    let p = rep.primary.as_ref().unwrap();
    let e = &p.energy;
    let worst = [rep.primary.as_ref(), rep.baseline.as_ref()]
        .into_iter()
        .flatten()
        .map(|s| s.energy_check.max_rel_diff)
        .fold(0.0, f64::max);
    let mac_ac = e.e_mac / e.e_ac;
    let later_snn: f64 = e.layers[1..].iter().map(|l| l.f_ann as f64 * l.input_zeta * e.e_ac).sum();
    let later_ann: f64 = e.layers[1..].iter().map(|l| l.f_ann as f64 * e.e_mac).sum();
    verdict(
        8,
        "energy model",
        worst <= ENERGY_MAX_REL_DIFF && mac_ac == 32.0 && e.e_snn < e.e_ann && later_snn < later_ann,
        format!(
            "closed form vs counted rel diff {worst:.2e}, MAC/AC {mac_ac}, E_ANN {:.1} pJ, E_SNN {:.1} pJ, ratio {:.2}",
            e.e_ann, e.e_snn, e.ratio
        ),
    );
}

#[test]
fn criterion_09_threshold_gradient_boxcars() {
    // (membrane U^1..U^T, V, beta, expected dT/dV)
    let cases: [(&[f64], f64, f64, f64); 5] = [
        // t=2: -H(b)(|a|<b) = -2; t=3: both boxcars cancel; c outside.
        (&[0.5, 0.95, 1.1, 1.3], 1.0, 0.2, -2.0),
        // t=1: -1; c=-0.05 inside: +2.
        (&[0.9, 1.05], 1.0, 0.2, 1.0),
        // a = 0 counts as H(a) = 1 but b = 1 is outside; -1 + 2.
        (&[1.0, 1.0], 1.0, 0.2, 1.0),
        // t=1: -1; t=2: b = 0 gives H(b) = 0, H(a)(|b|<beta) = +2; c outside.
        (&[1.0, 1.15, 2.0], 1.0, 0.2, 1.0),
        // Never near threshold.
        (&[0.0, 0.1, 0.2, 0.3, 0.4], 1.0, 0.2, 0.0),
    ];
    let mut bad = Vec::new();
    for (k, (u, v, beta, want)) in cases.iter().enumerate() {
        let got = spike_time_threshold_grad(u, *v, *beta);
        if got != *want {
            bad.push(format!("case {k}: got {got}, want {want}"));
        }
    }
    verdict(9, "threshold gradient boxcars", bad.is_empty(), format!("{} hand cases; {bad:?}", cases.len()));
}

#[test]
fn criterion_10_reproducibility() {
    let r = runs();
    let same_json = r.first.deterministic_json() == r.second.deterministic_json();
    let files =
        ["spike_activity.csv", "energy.csv", "loss_curve.csv", "snn.model", "baseline.model", "thresholds.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            std::fs::read(r.dirs[0].path().join(f)).unwrap() != std::fs::read(r.dirs[1].path().join(f)).unwrap()
        })
        .collect();
    verdict(
        10,
        "reproducibility",
        same_json && differing.is_empty(),
        format!("seed {}, report identical {same_json}, differing artifacts {differing:?}", r.first.seed),
    );
}
