//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p seqdiff --test acceptance`, or a subset
//! by number: `cargo test -p seqdiff --test acceptance -- 1 4 8`.

use std::f64::consts::PI;
use std::time::Instant;

use candle_core::{DType, Tensor};

use seqdiff::checkpoint;
use seqdiff::dataset::{self, Corpus};
use seqdiff::denoiser::{Backbone, DenoiserConfig, DenoiserModel};
use seqdiff::diffusion::{self, TrainConfig};
use seqdiff::metrics::{self, EvalPair, MetricKind, MetricModelConfig, MetricsConfig};
use seqdiff::nn::{self, Precision};
use seqdiff::rng;
use seqdiff::schedule::{cosine_schedule, NoiseSchedule};
use seqdiff::SequenceBatch;

type Outcome = Result<String, String>;

/// Sampler used wherever a trained model is sampled (data is scaled into [-1, 1]).
const CLIPPED: diffusion::ReverseStep = diffusion::ReverseStep::ClipDenoised { lo: -1.0, hi: 1.0 };

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 1

fn cosine_f(t: f64, total: f64, s: f64) -> f64 {
    (((t / total + s) / (1.0 + s)) * PI / 2.0).cos().powi(2)
}

fn schedule_oracle() -> Outcome {
    let mut worst_closed: f64 = 0.0;
    let mut worst_rec: f64 = 0.0;
    for total in [10usize, 100, 1000] {
        let s = cosine_schedule(total, 0.008).map_err(|e| e.to_string())?;
        let t_f = total as f64;
        let f0 = cosine_f(0.0, t_f, 0.008);
        let mut clipped_product = 1.0;
        let mut clipping_started = false;
        for t in 1..=total {
            let raw_beta = 1.0 - cosine_f(t as f64, t_f, 0.008) / cosine_f(t as f64 - 1.0, t_f, 0.008);
            let beta = raw_beta.min(0.999);
            clipping_started |= raw_beta > 0.999;
            clipped_product *= 1.0 - beta;
            let got_beta = s.beta(t).unwrap();
            let got_bar = s.alpha_bar(t).unwrap();
            worst_closed = worst_closed.max((got_beta - beta).abs()).max((got_bar - clipped_product).abs());
            if !clipping_started {
                let closed = cosine_f(t as f64, t_f, 0.008) / f0;
                worst_closed = worst_closed.max((got_bar - closed).abs());
            }
            let prev = if t == 1 { 1.0 } else { s.alpha_bar(t - 1).unwrap() };
            worst_rec = worst_rec
                .max((got_bar - prev * s.alpha(t).unwrap()).abs())
                .max((s.alpha(t).unwrap() - (1.0 - got_beta)).abs());
        }
    }
    check(
        worst_closed <= 1e-6 && worst_rec <= 1e-12,
        format!("T in {{10, 100, 1000}}: max closed-form error {worst_closed:.2e} (tol 1e-6), max recurrence error {worst_rec:.2e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn forward_moments() -> Outcome {
    let total = 100;
    let s = cosine_schedule(total, 0.008).map_err(|e| e.to_string())?;
    let draws = 10_000;
    let x0_single = [0.9, -0.4, 0.0, 0.3, -1.0, 0.55];
    let (n, d) = (3, 2);
    let data: Vec<f64> = (0..draws).flat_map(|_| x0_single).collect();
    let x0 = SequenceBatch::from_flat(draws, n, d, data).unwrap();
    let mut rng = rng::seeded(2024);
    let mut worst_z: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for t in [1, total / 2, total] {
        let bar = s.alpha_bar(t).unwrap();
        let sample = diffusion::forward_diffuse(&x0, &vec![t; draws], &s, &mut rng).map_err(|e| e.to_string())?;
        for (k, &x) in x0_single.iter().enumerate() {
            let (i, j) = (k / d, k % d);
            let vals: Vec<f64> = (0..draws).map(|b| sample.x_t[(b, i, j)]).collect();
            let mean = vals.iter().sum::<f64>() / draws as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let expected_var = 1.0 - bar;
            let se = (expected_var / draws as f64).sqrt();
            worst_z = worst_z.max((mean - bar.sqrt() * x).abs() / se);
            worst_var = worst_var.max((var - expected_var).abs() / expected_var);
        }
    }
    check(
        worst_z <= 4.0 && worst_var <= 0.10,
        format!("t in {{1, 50, 100}}, 10k draws: worst mean deviation {worst_z:.2} SE (tol 4), worst variance error {:.2}% (tol 10%)", 100.0 * worst_var),
    )
}

// ---------------------------------------------------------------- criterion 3

fn gradient_check() -> Outcome {
    let cfg = DenoiserConfig {
        seq_len: 6,
        feature_dim: 2,
        hidden_dim: 8,
        num_layers: 1,
        num_heads: 1,
        max_diffusion_steps: 10,
        precision: Precision::F64,
        ..DenoiserConfig::default()
    };
    let model = DenoiserModel::init(&cfg, &mut rng::seeded(5)).map_err(|e| e.to_string())?;
    let schedule = cosine_schedule(10, 0.008).unwrap();
    let mut rng = rng::seeded(6);
    let x0 = dataset::generate_sine(4, 6, 2, &mut rng).unwrap();
    let sample = diffusion::forward_diffuse(&x0, &[1, 3, 7, 10], &schedule, &mut rng).unwrap();
    let loss_value = || -> f64 {
        diffusion::loss_on_sample(&model, &sample, None).unwrap().to_scalar::<f64>().unwrap()
    };
    let grads = diffusion::loss_on_sample(&model, &sample, None).unwrap().backward().unwrap();

    // Two entries from every parameter tensor, chosen by a seeded draw.
    let mut pick = rng::seeded(7);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for (name, var) in model.params().vars() {
        let base = nn::to_host(var.as_tensor()).unwrap();
        let analytic = nn::to_host(grads.get(var.as_tensor()).expect("every parameter gets a gradient")).unwrap();
        for _ in 0..2 {
            let k = rand::Rng::random_range(&mut pick, 0..base.len());
            let probe = |delta: f64| {
                let mut v = base.clone();
                v[k] += delta;
                var.set(&Tensor::from_vec(v, var.dims(), var.device()).unwrap().to_dtype(DType::F64).unwrap()).unwrap();
                loss_value()
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            probe(0.0);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
            if rel >= 1e-4 {
                eprintln!("  gradient mismatch at {name}[{k}]: analytic {a:e}, numeric {numeric:e}");
            }
            checked += 1;
        }
    }
    check(
        checked >= 20 && worst < 1e-4,
        format!("{checked} parameters over {} tensors: worst relative error {worst:.2e} (tol 1e-4)", model.params().vars().count()),
    )
}

// ---------------------------------------------------------------- criterion 4

fn brute_force_coverage(real: &[[f64; 2]], syn: &[[f64; 2]], k: usize) -> f64 {
    let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut covered = 0;
    for (i, p) in real.iter().enumerate() {
        let mut others: Vec<f64> = (0..real.len()).filter(|&j| j != i).map(|j| d(p, &real[j])).collect();
        others.sort_by(f64::total_cmp);
        if syn.iter().any(|s| d(p, s) <= others[k - 1]) {
            covered += 1;
        }
    }
    covered as f64 / real.len() as f64
}

fn points(v: &[[f64; 2]]) -> Vec<Vec<f64>> {
    v.iter().map(|p| p.to_vec()).collect()
}

fn metric_sanity() -> Outcome {
    let corpus = dataset::sine_corpus(10, 600, 24, 5, 11).map_err(|e| e.to_string())?;
    let held = dataset::inverse_scale(&corpus.heldout, &corpus.scaler).unwrap();
    let cfg = MetricsConfig { repetitions: 3, ..MetricsConfig::default() };
    let mut notes = Vec::new();
    let mut ok = true;

    let same = EvalPair::with_scaler(held.clone(), held.clone(), corpus.scaler.clone()).unwrap();
    let j_same = metrics::jsd(&same, 50, &cfg).unwrap().mean;
    ok &= j_same < 1e-12;
    notes.push(format!("JSD(P,P) {j_same:.1e}"));

    let low = SequenceBatch::from_flat(40, 4, 1, (0..160).map(|i| -1.0 + 0.001 * i as f64).collect()).unwrap();
    let high = SequenceBatch::from_flat(40, 4, 1, (0..160).map(|i| 5.0 + 0.001 * i as f64).collect()).unwrap();
    let j_disjoint = metrics::jsd(&EvalPair::new(low, high).unwrap(), 50, &cfg).unwrap().mean;
    ok &= j_disjoint == 1.0;
    notes.push(format!("disjoint JSD {j_disjoint}"));

    let arithmetic = [(0.5, 0.0), (0.9, 0.4), (1.0, 0.5)]
        .iter()
        .all(|&(acc, want)| metrics::discriminative_score(acc) == want);
    ok &= arithmetic;
    notes.push(format!("LDS arithmetic exact: {arithmetic}"));

    let real = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0], [-1.0, 1.5], [2.5, -0.5]];
    let syn = [[0.4, 0.1], [2.9, 2.2], [-3.0, -3.0], [1.0, 1.9]];
    let want = brute_force_coverage(&real, &syn, 2);
    let got = metrics::coverage(&points(&real), &points(&syn), 2).unwrap();
    ok &= got == want;
    notes.push(format!("coverage fixture {got} vs oracle {want}"));

    let first: Vec<usize> = (0..300).collect();
    let second: Vec<usize> = (300..600).collect();
    let halves = EvalPair::with_scaler(held.select(&first), held.select(&second), corpus.scaler.clone()).unwrap();
    let lds = metrics::lds(&halves, &cfg, 12).unwrap();
    let prc = metrics::precision_recall_coverage(&halves, 5, &cfg.alpha_grid, &cfg).unwrap();
    ok &= lds.mean <= 0.15 && prc.coverage.mean >= 0.9;
    notes.push(format!(
        "real-vs-real LDS {:.3} ± {:.3} (tol 0.15), coverage {:.3} (tol 0.9)",
        lds.mean, lds.std, prc.coverage.mean
    ));
    check(ok, notes.join("; "))
}

// ------------------------------------------------------------ criteria 5 and 6

const DESK_SEQ_LEN: usize = 24;
const DESK_DIMS: usize = 5;
const DESK_STEPS: usize = 100;
const DESK_TRAIN: usize = 3200;
const DESK_EVAL: usize = 400;
const DESK_EPOCHS: usize = 40;
const DESK_BATCH: usize = 64;

fn desk_config(backbone: Backbone) -> DenoiserConfig {
    DenoiserConfig {
        backbone,
        seq_len: DESK_SEQ_LEN,
        feature_dim: DESK_DIMS,
        hidden_dim: 64,
        num_layers: 2,
        num_heads: 2,
        max_diffusion_steps: DESK_STEPS,
        ..DenoiserConfig::default()
    }
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        batch_size: DESK_BATCH,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

fn desk_metrics() -> MetricsConfig {
    MetricsConfig { repetitions: 3, ..MetricsConfig::default() }
}

struct DeskResult {
    lds: f64,
    jsd: f64,
    coverage: f64,
    final_loss: Option<f64>,
}

fn desk_corpus() -> Corpus {
    dataset::sine_corpus(DESK_TRAIN, DESK_EVAL, DESK_SEQ_LEN, DESK_DIMS, 100).unwrap()
}

fn desk_run(corpus: &Corpus, schedule: &NoiseSchedule, backbone: Backbone, train: bool) -> Result<DeskResult, String> {
    let err = |e: seqdiff::Error| e.to_string();
    let mut model = DenoiserModel::init(&desk_config(backbone), &mut rng::child(100, "init", 0)).map_err(err)?;
    let mut final_loss = None;
    if train {
        let history = diffusion::train(
            &mut model,
            &corpus.train,
            schedule,
            &desk_train_config(),
            &mut rng::child(100, "train", 0),
            |_| Ok(()),
        )
        .map_err(err)?;
        final_loss = history.epoch_losses.last().copied();
    }
    let samples = diffusion::sample(&model, schedule, DESK_EVAL, 256, CLIPPED, &mut rng::child(100, "sample", 0)).map_err(err)?;
    let real = dataset::inverse_scale(&corpus.heldout, &corpus.scaler).map_err(err)?;
    let syn = dataset::inverse_scale(&samples, &corpus.scaler).map_err(err)?;
    let pair = EvalPair::with_scaler(real, syn, corpus.scaler.clone()).map_err(err)?;
    let cfg = desk_metrics();
    let reports = metrics::evaluate(&pair, &cfg, &[MetricKind::Lds, MetricKind::Jsd, MetricKind::PrecisionRecallCoverage], 101)
        .map_err(err)?;
    let get = |name: &str| reports.iter().find(|r| r.metric == name).map(|r| r.mean).unwrap();
    Ok(DeskResult { lds: get("lds"), jsd: get("jsd"), coverage: get("coverage"), final_loss })
}

struct Desk {
    trained: Result<DeskResult, String>,
    untrained: Option<Result<DeskResult, String>>,
    gru: Option<Result<DeskResult, String>>,
}

fn desk_end_to_end(desk: &Desk) -> Outcome {
    let t = desk.trained.as_ref().map_err(|e| e.clone())?;
    let u = desk.untrained.as_ref().expect("baseline run").as_ref().map_err(|e| e.clone())?;
    let ok = t.lds <= 0.30 && t.jsd <= 0.10 && t.coverage >= 0.7 && u.lds - t.lds >= 0.15;
    check(
        ok,
        format!(
            "trained: LDS {:.3} (tol 0.30), JSD {:.4} (tol 0.10), coverage {:.3} (tol 0.7), final loss {:.4}; untrained LDS {:.3}, gap {:.3} (tol 0.15)",
            t.lds,
            t.jsd,
            t.coverage,
            t.final_loss.unwrap_or(f64::NAN),
            u.lds,
            u.lds - t.lds
        ),
    )
}

fn ablation_direction(desk: &Desk) -> Outcome {
    let t = desk.trained.as_ref().map_err(|e| e.clone())?;
    let g = desk.gru.as_ref().expect("gru run").as_ref().map_err(|e| e.clone())?;
    check(
        t.lds <= g.lds && t.jsd <= g.jsd,
        format!("transformer LDS {:.3} / JSD {:.4} vs GRU LDS {:.3} / JSD {:.4}", t.lds, t.jsd, g.lds, g.jsd),
    )
}

// ---------------------------------------------------------------- criterion 7

fn long_sequences() -> Outcome {
    let (n, d) = (384, 5);
    let corpus = dataset::sine_corpus(256, 16, n, d, 7).map_err(|e| e.to_string())?;
    let schedule = cosine_schedule(50, 0.008).unwrap();
    let cfg = DenoiserConfig {
        seq_len: n,
        feature_dim: d,
        hidden_dim: 32,
        num_layers: 1,
        num_heads: 2,
        max_diffusion_steps: 50,
        ..DenoiserConfig::default()
    };
    let mut model = DenoiserModel::init(&cfg, &mut rng::seeded(8)).map_err(|e| e.to_string())?;
    let train = TrainConfig { epochs: 10, batch_size: 16, learning_rate: 1e-3, ..TrainConfig::default() };
    let history = diffusion::train(&mut model, &corpus.train, &schedule, &train, &mut rng::seeded(9), |_| Ok(()))
        .map_err(|e| e.to_string())?;
    let samples = diffusion::sample(&model, &schedule, 8, 8, CLIPPED, &mut rng::seeded(10)).map_err(|e| e.to_string())?;
    let shape_ok = samples.len() == 8 && samples.seq_len() == n && samples.dims() == d;
    let finite = samples.values().iter().all(|v| v.is_finite());
    let orig = dataset::inverse_scale(&samples, &corpus.scaler).unwrap();
    // Per-feature training range widened by 20% of its width on each side.
    let sc = &corpus.scaler;
    let mut in_range = true;
    for lane in orig.values().lanes(ndarray::Axis(2)) {
        for (j, v) in lane.iter().enumerate() {
            let margin = 0.2 * (sc.max[j] - sc.min[j]);
            in_range &= *v >= sc.min[j] - margin && *v <= sc.max[j] + margin;
        }
    }
    // Clamping keeps the last step in range by construction, so also require a
    // non-degenerate spread.
    let spread = samples.values().std(0.0);
    check(
        shape_ok && finite && in_range && spread >= 0.1,
        format!(
            "N={n}, D={d}: loss {:.4} -> {:.4} over {} steps; samples shape [{}, {}, {}], finite {finite}, within training range ±20% {in_range}, scaled std {spread:.3} (tol 0.1), original-unit range [{:.3}, {:.3}]",
            history.epoch_losses.first().unwrap(),
            history.epoch_losses.last().unwrap(),
            history.step_losses.len(),
            samples.len(),
            samples.seq_len(),
            samples.dims(),
            orig.values().iter().copied().fold(f64::INFINITY, f64::min),
            orig.values().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

/// Loss log, sample CSV bytes and metric-report JSON of one small run.
fn small_run(seed: u64) -> (String, Vec<u8>, String, String) {
    let corpus = dataset::sine_corpus(128, 64, 12, 2, seed).unwrap();
    let schedule = cosine_schedule(20, 0.008).unwrap();
    let cfg = DenoiserConfig {
        seq_len: 12,
        feature_dim: 2,
        hidden_dim: 16,
        num_layers: 1,
        num_heads: 2,
        max_diffusion_steps: 20,
        dropout: 0.1,
        ..DenoiserConfig::default()
    };
    let mut model = DenoiserModel::init(&cfg, &mut rng::child(seed, "init", 0)).unwrap();
    let train = TrainConfig { epochs: 3, batch_size: 32, learning_rate: 1e-3, ..TrainConfig::default() };
    let mut log = String::from("epoch,mean_loss\n");
    diffusion::train(&mut model, &corpus.train, &schedule, &train, &mut rng::child(seed, "train", 0), |e| {
        log.push_str(&format!("{},{:?}\n", e.epoch, e.mean_loss));
        Ok(())
    })
    .unwrap();
    let samples = diffusion::sample(&model, &schedule, 64, 16, CLIPPED, &mut rng::child(seed, "sample", 0)).unwrap();
    let mut csv = Vec::new();
    dataset::write_sequences_csv(&mut csv, &dataset::inverse_scale(&samples, &corpus.scaler).unwrap()).unwrap();
    let real = dataset::inverse_scale(&corpus.heldout, &corpus.scaler).unwrap();
    let syn = dataset::inverse_scale(&samples, &corpus.scaler).unwrap();
    let pair = EvalPair::with_scaler(real, syn, corpus.scaler.clone()).unwrap();
    let mcfg = MetricsConfig {
        repetitions: 2,
        model: MetricModelConfig { hidden_dim: 16, num_layers: 1, epochs: 2, ..MetricModelConfig::default() },
        ..MetricsConfig::default()
    };
    let reports = metrics::evaluate(&pair, &mcfg, &MetricKind::ALL, seed).unwrap();
    let digest = checkpoint::model_digest(&model).unwrap();
    (log, csv, serde_json::to_string(&reports).unwrap(), digest)
}

fn determinism() -> Outcome {
    let a = small_run(42);
    let b = small_run(42);
    let c = small_run(43);
    let same = a == b;
    let differs = a.0 != c.0 && a.1 != c.1;
    check(
        same && differs,
        format!(
            "seed 42 twice: loss log {}, samples {}, reports {}, model digest {}; seed 43 differs: {differs}",
            if a.0 == b.0 { "identical" } else { "DIFFERENT" },
            if a.1 == b.1 { "identical" } else { "DIFFERENT" },
            if a.2 == b.2 { "identical" } else { "DIFFERENT" },
            if a.3 == b.3 { "identical" } else { "DIFFERENT" },
        ),
    )
}

// ---------------------------------------------------------------- harness

fn report(number: usize, title: &str, outcome: &Outcome, started: Instant) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("criterion {number} PASS  {title}: {detail} [{secs:.1}s]"),
        Err(detail) => println!("criterion {number} FAIL  {title}: {detail} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut all_ok = true;
    let mut ran = 0;

    let simple: [(usize, &str, fn() -> Outcome); 4] = [
        (1, "schedule oracle", schedule_oracle),
        (2, "forward-process moments", forward_moments),
        (3, "gradient correctness", gradient_check),
        (4, "metric sanity suite", metric_sanity),
    ];
    for (n, title, f) in simple {
        if selected(n) {
            let t = Instant::now();
            all_ok &= report(n, title, &f(), t);
            ran += 1;
        }
    }

    if selected(5) || selected(6) {
        let t = Instant::now();
        let corpus = desk_corpus();
        let schedule = cosine_schedule(DESK_STEPS, 0.008).unwrap();
        let desk = Desk {
            trained: desk_run(&corpus, &schedule, Backbone::Transformer, true),
            untrained: selected(5).then(|| desk_run(&corpus, &schedule, Backbone::Transformer, false)),
            gru: selected(6).then(|| desk_run(&corpus, &schedule, Backbone::Gru, true)),
        };
        if selected(5) {
            all_ok &= report(5, "desk-scale end-to-end (sine, D=5, N=24, T=100)", &desk_end_to_end(&desk), t);
            ran += 1;
        }
        if selected(6) {
            all_ok &= report(6, "ablation direction (transformer vs GRU)", &ablation_direction(&desk), t);
            ran += 1;
        }
    }

    let tail: [(usize, &str, fn() -> Outcome); 2] =
        [(7, "long-sequence capability", long_sequences), (8, "determinism", determinism)];
    for (n, title, f) in tail {
        if selected(n) {
            let t = Instant::now();
            all_ok &= report(n, title, &f(), t);
            ran += 1;
        }
    }

    println!("acceptance: {ran} criteria run, {}", if all_ok { "all passed" } else { "FAILURES above" });
    if !all_ok {
        std::process::exit(1);
    }
}
