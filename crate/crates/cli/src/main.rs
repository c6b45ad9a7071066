//! `seqdiff` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical failure (divergence, non-finite values).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use seqdiff::checkpoint::{self, CheckpointMeta};
use seqdiff::config::RunConfig;
use seqdiff::dataset::{self, SequenceSidecar, SIDECAR_VERSION};
use seqdiff::denoiser::DenoiserModel;
use seqdiff::diffusion;
use seqdiff::metrics::{self, EvalPair, MetricKind, TableRow};
use seqdiff::projection::{self, TsneConfig};
use seqdiff::{rng, Error, ErrorKind, Result, SequenceBatch};

/// Default root for run directories when neither `--out` nor the config sets one.
const OUTPUT_ROOT_ENV: &str = "SEQDIFF_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "seqdiff", version, about = "Train, sample, evaluate and project sequence diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser; writes checkpoints and a per-epoch loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Draw sequences from a checkpoint, in original units.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Must match the checkpoint's sequence length if given.
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        chunk_size: Option<usize>,
        /// Use the reverse update as written, without clamping x̂₀.
        #[arg(long)]
        no_clip: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score synthetic sequences against real ones.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        /// Run config whose `metrics` section and `seed` are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset of lds, lps, plus_five_steps, jsd, prc.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Row label in the summary table.
        #[arg(long, default_value = "synthetic")]
        label: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D PCA or t-SNE embedding of real and synthetic sequences.
    Project {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Sequences used from each side (the first ones in file order).
        #[arg(long, default_value_t = 1000)]
        max_per_side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pca,
    Tsne,
}

fn output_root(flag: Option<PathBuf>, config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| config.cloned())
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<root>/<command>-<UTC timestamp>-s<seed>`, adding a numeric
/// suffix if that already exists.
fn run_dir(root: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
    let base = format!("{command}-{stamp}-s{seed}");
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for attempt in 0.. {
        let name = if attempt == 0 { base.clone() } else { format!("{base}-{attempt}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("attempt counter is unbounded")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_batch_with_sidecar(path: &Path, batch: &SequenceBatch, sidecar: &SequenceSidecar) -> Result<()> {
    dataset::write_sequences_file(path, batch)?;
    dataset::write_sidecar(&dataset::sidecar_path(path), sidecar)
}

fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>, epochs: Option<usize>) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = epochs {
        config.train.epochs = e;
    }
    config.validate()?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let corpus = config.dataset.load(base_dir, config.seed)?;

    let dir = run_dir(&output_root(out, config.output_dir.as_ref()), "train", config.seed)?;
    write_json(&dir.join("config.json"), &config)?;
    let heldout = dataset::inverse_scale(&corpus.heldout, &corpus.scaler)?;
    write_batch_with_sidecar(
        &dir.join("heldout.csv"),
        &heldout,
        &SequenceSidecar {
            format_version: SIDECAR_VERSION,
            columns: corpus.columns.clone(),
            num_sequences: heldout.len(),
            seq_len: heldout.seq_len(),
            scaler: Some(corpus.scaler.clone()),
            window: match &config.dataset {
                seqdiff::config::DatasetSpec::Csv { window, .. } => Some(*window),
                _ => None,
            },
            seed: config.seed,
            source: "heldout".into(),
        },
    )?;

    let schedule = config.schedule.build()?;
    let mut model = DenoiserModel::init(&config.resolved_denoiser(), &mut rng::child(config.seed, "init", 0))?;
    let meta = |epoch: usize| CheckpointMeta {
        schedule: config.schedule.clone(),
        scaler: Some(corpus.scaler.clone()),
        columns: corpus.columns.clone(),
        epoch,
        seed: config.seed,
        run_config: Some(config.clone()),
    };
    let ckpt_dir = dir.join("checkpoints");
    let mut loss_log = String::from("epoch,mean_loss\n");
    let history = diffusion::train(
        &mut model,
        &corpus.train,
        &schedule,
        &config.train,
        &mut rng::child(config.seed, "train", 0),
        |end| {
            loss_log.push_str(&format!("{},{:?}\n", end.epoch, end.mean_loss));
            if end.checkpoint_due {
                fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                checkpoint::save(&ckpt_dir.join(format!("epoch-{:06}.ckpt", end.epoch)), end.model, &meta(end.epoch))?;
            }
            Ok(())
        },
    );
    // Keep the partial log even when training fails.
    write_text(&dir.join("loss.csv"), &loss_log)?;
    let history = history?;
    checkpoint::save(&dir.join("model.ckpt"), &model, &meta(history.epoch_losses.len()))?;
    println!("run directory: {}", dir.display());
    match history.epoch_losses.last() {
        Some(l) => println!("final loss: {l:?}"),
        None => println!("final loss: none (0 epochs)"),
    }
    Ok(())
}

fn cmd_sample(
    ckpt_path: &Path,
    count: usize,
    seed: u64,
    seq_len: Option<usize>,
    chunk_size: Option<usize>,
    no_clip: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    if count == 0 {
        return Err(Error::config("--count", "must be at least 1"));
    }
    let (model, header) = checkpoint::load(ckpt_path)?;
    if let Some(n) = seq_len {
        if n != header.denoiser.seq_len {
            return Err(Error::config(
                "--seq-len",
                format!("{n} does not match the checkpoint's sequence length {}", header.denoiser.seq_len),
            ));
        }
    }
    let chunk = chunk_size
        .or(header.run_config.as_ref().map(|c| c.sample.chunk_size))
        .unwrap_or(256);
    if chunk == 0 {
        return Err(Error::config("--chunk-size", "must be at least 1"));
    }
    let schedule = header.schedule.build()?;
    let mut sample_cfg = header.run_config.as_ref().map(|c| c.sample.clone()).unwrap_or_default();
    if no_clip {
        sample_cfg.clip_denoised = false;
    }
    let (lo, hi) = header.scaler.as_ref().map_or(dataset::DEFAULT_RANGE, |s| (s.lo, s.hi));
    let step = sample_cfg.reverse_step(lo, hi);
    let scaled = diffusion::sample(&model, &schedule, count, chunk, step, &mut rng::child(seed, "sample", 0))?;
    let samples = match &header.scaler {
        Some(s) => dataset::inverse_scale(&scaled, s)?,
        None => scaled,
    };
    let root = output_root(out, header.run_config.as_ref().and_then(|c| c.output_dir.as_ref()));
    let dir = run_dir(&root, "sample", seed)?;
    let path = dir.join("samples.csv");
    write_batch_with_sidecar(
        &path,
        &samples,
        &SequenceSidecar {
            format_version: SIDECAR_VERSION,
            columns: header.columns.clone(),
            num_sequences: samples.len(),
            seq_len: samples.seq_len(),
            scaler: header.scaler.clone(),
            window: None,
            seed,
            source: "samples".into(),
        },
    )?;
    println!("run directory: {}", dir.display());
    println!("samples: {}", path.display());
    Ok(())
}

/// Reads a sequence CSV; `role` names the input in error messages.
fn read_input(path: &Path, role: &str) -> Result<(SequenceBatch, Option<SequenceSidecar>)> {
    let batch = dataset::read_sequences_file(path).map_err(|e| match e {
        Error::Parse { row, column, reason } => Error::Parse { row, column, reason: format!("{role} CSV: {reason}") },
        other => other,
    })?;
    let side = dataset::sidecar_path(path);
    let sidecar = if side.exists() { Some(dataset::read_sidecar(&side)?) } else { None };
    Ok((batch, sidecar))
}

/// Names the first feature column one side has and the other lacks.
fn check_columns(real: &SequenceBatch, synthetic: &SequenceBatch) -> Result<()> {
    if real.dims() != synthetic.dims() {
        let (short, missing) = if synthetic.dims() < real.dims() {
            ("synthetic", synthetic.dims())
        } else {
            ("real", real.dims())
        };
        return Err(Error::Parse {
            row: 0,
            column: format!("feature_{missing}"),
            reason: format!("{short} CSV lacks this column ({} vs {} features)", real.dims(), synthetic.dims()),
        });
    }
    if real.seq_len() != synthetic.seq_len() {
        return Err(Error::Shape {
            expected: format!("sequences of {} steps", real.seq_len()),
            got: format!("{} steps in the synthetic CSV", synthetic.seq_len()),
        });
    }
    Ok(())
}

fn load_pair(real: &Path, synthetic: &Path) -> Result<EvalPair> {
    let (real_batch, sidecar) = read_input(real, "real")?;
    let (syn_batch, _) = read_input(synthetic, "synthetic")?;
    check_columns(&real_batch, &syn_batch)?;
    match sidecar.and_then(|s| s.scaler) {
        Some(scaler) => EvalPair::with_scaler(real_batch, syn_batch, scaler),
        None => EvalPair::new(real_batch, syn_batch),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    real: &Path,
    synthetic: &Path,
    config_path: Option<&Path>,
    metric_names: Option<Vec<String>>,
    seed: Option<u64>,
    repetitions: Option<usize>,
    label: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(r) = repetitions {
        config.metrics.repetitions = r;
    }
    config.metrics.validate()?;
    let kinds = match metric_names {
        Some(names) => names
            .iter()
            .map(|n| MetricKind::parse(n.trim()).ok_or_else(|| Error::config("--metrics", format!("unknown metric `{n}`"))))
            .collect::<Result<Vec<_>>>()?,
        None => MetricKind::ALL.to_vec(),
    };
    let pair = load_pair(real, synthetic)?;
    let reports = metrics::evaluate(&pair, &config.metrics, &kinds, config.seed)?;
    let table = metrics::render_table(&[TableRow { label: label.to_string(), reports: reports.clone() }]);
    let dir = run_dir(&output_root(out, config.output_dir.as_ref()), "evaluate", config.seed)?;
    write_json(&dir.join("metrics_config.json"), &config.metrics)?;
    write_json(&dir.join("reports.json"), &reports)?;
    write_text(&dir.join("summary.txt"), &table)?;
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_project(
    real: &Path,
    synthetic: &Path,
    method: Method,
    tsne: TsneConfig,
    max_per_side: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    if max_per_side == 0 {
        return Err(Error::config("--max-per-side", "must be at least 1"));
    }
    let pair = load_pair(real, synthetic)?;
    let r = pair.scaled_real().head(max_per_side);
    let s = pair.scaled_synthetic().head(max_per_side);
    let projection = match method {
        Method::Pca => projection::pca_project(&r, &s)?,
        Method::Tsne => projection::tsne_project(&r, &s, &tsne, &mut rng::child(seed, "tsne", 0))?,
    };
    let dir = run_dir(&output_root(out, None), "project", seed)?;
    let path = dir.join("projection.csv");
    projection::write_projection_files(&path, &projection, Some(seed))?;
    println!("run directory: {}", dir.display());
    println!("projection: {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out, epochs } => cmd_train(&config, seed, out, epochs),
        Command::Sample { checkpoint, count, seed, seq_len, chunk_size, no_clip, out } => {
            cmd_sample(&checkpoint, count, seed, seq_len, chunk_size, no_clip, out)
        }
        Command::Evaluate { real, synthetic, config, metrics, seed, repetitions, label, out } => {
            cmd_evaluate(&real, &synthetic, config.as_deref(), metrics, seed, repetitions, &label, out)
        }
        Command::Project { real, synthetic, method, perplexity, iterations, learning_rate, max_per_side, seed, out } => {
            let tsne = TsneConfig { perplexity, iterations, learning_rate };
            cmd_project(&real, &synthetic, method, tsne, max_per_side, seed, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
