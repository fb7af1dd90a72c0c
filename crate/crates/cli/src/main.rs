//! Batch harness for incremental spiking-network experiments.
//!
//! Subcommands: `train` (run a stream, checkpointing each step), `eval`
//! (score a checkpoint on a dataset file), `compare` (the variant analysis
//! grid), `analyze` (re-render metrics from a run directory), and
//! `aggregate` (mean ± std across run directories). Log verbosity is
//! controlled by `RUST_LOG` (e.g. `RUST_LOG=info`); there are no other
//! environment knobs.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use spikecil::checkpoint;
use spikecil::config::ExperimentConfig;
use spikecil::data::{load_raw_dataset, DataFormat};
use spikecil::metrics::aggregate;
use spikecil::report;
use spikecil::snn::{argmax_rows, mean_tensors};
use spikecil::tensor::select_rows;
use spikecil::train::{build_stream, continue_run, init_run, run_comparative, TrainingVariant};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "spikecil",
    about = "Class-incremental learning with expandable spiking networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over an incremental stream, writing metrics and a resumable
    /// checkpoint after every step.
    Train {
        /// Key-value config file (see `configs/`).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (checkpoint.bin, metrics.jsonl, metrics.csv,
        /// config.cfg).
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/checkpoint.bin` instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Score a trained checkpoint on a dataset file (labels must use the
    /// model's class ids).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset path; `.csv` is parsed as CSV, anything else as the
        /// flat-binary format.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the comparative variant grid (reference learner, all-data,
    /// standard, and the two pinned-block arms) and print the table.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render tables from a run directory's metrics.jsonl and verify the
    /// summary against the per-step records.
    Analyze {
        #[arg(long)]
        run: PathBuf,
    },
    /// Mean ± std of Avg/Last across several run directories (multi-seed
    /// reporting).
    Aggregate {
        /// Run directories, each containing metrics.jsonl.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => train(&config, seed, &out, resume),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::Compare { config } => compare(&config),
        Command::Analyze { run } => analyze(&run),
        Command::Aggregate { runs } => aggregate_runs(&runs),
    }
}

/// `println!` panics when stdout closes early (e.g. `spikecil ... | head`);
/// all normal output goes through here instead, treating a broken pipe as a
/// normal early exit the way line-oriented Unix tools do.
fn emit(text: &str) {
    use std::io::{ErrorKind, Write};
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() == ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write to stdout: {e}");
        std::process::exit(1);
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed_master = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(config: &Path, seed: Option<u64>, out: &Path, resume: bool) -> anyhow::Result<()> {
    let cfg = load_config(config, seed)?;
    std::fs::create_dir_all(out)?;
    let ckpt_path = out.join("checkpoint.bin");
    let stream = build_stream(&cfg)?;
    let mut handle = if resume {
        let ck = checkpoint::load(&ckpt_path)
            .with_context(|| format!("resuming from {}", ckpt_path.display()))?;
        ck.require_config(&cfg)?;
        let h = ck.into_handle();
        log::info!("resuming after step {}", h.steps_completed);
        h
    } else {
        init_run(&cfg, &stream)?
    };
    // Canonical config copy so the run directory is self-describing.
    std::fs::write(out.join("config.cfg"), cfg.to_kv_text())?;
    let fingerprint = cfg.fingerprint();
    let rec = continue_run(
        &mut handle,
        &stream,
        &cfg,
        TrainingVariant::Standard,
        None,
        &mut |h| checkpoint::save(h, fingerprint, &ckpt_path),
    )?;
    report::emit_report(&rec, out)?;
    emit(&report::render_table(&rec));
    emit(&format!("artifacts written to {}\n", out.display()));
    Ok(())
}

fn eval(ckpt: &Path, data: &Path) -> anyhow::Result<()> {
    let ck = checkpoint::load(ckpt)?;
    let format = match data.extension().and_then(|e| e.to_str()) {
        Some("csv") => DataFormat::Csv,
        _ => DataFormat::FlatBinary,
    };
    let ds = load_raw_dataset(data, format)?;
    if ds.dim() != ck.net.extractors[0].spec.input_dim {
        bail!(
            "dataset dimension {} does not match model input {}",
            ds.dim(),
            ck.net.extractors[0].spec.input_dim
        );
    }
    let classes = ck.net.classes;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(256) {
        let x = select_rows(ds.samples(), chunk);
        let avg = mean_tensors(&ck.net.logits_plain(&x)?);
        let preds = argmax_rows(&avg);
        for (j, &i) in chunk.iter().enumerate() {
            let y = ds.labels()[i];
            if y >= classes {
                bail!("label {y} outside the model's {classes} classes");
            }
            total[y] += 1;
            if preds[j] == y {
                correct[y] += 1;
            }
        }
    }
    use std::fmt::Write as _;
    let mut table = String::from("class  samples  accuracy%\n");
    for c in 0..classes {
        let acc = if total[c] == 0 {
            f64::NAN
        } else {
            100.0 * correct[c] as f64 / total[c] as f64
        };
        let _ = writeln!(table, "{c:>5}  {:>7}  {acc:>8.3}", total[c]);
    }
    let hits: usize = correct.iter().sum();
    let n: usize = total.iter().sum();
    let _ = writeln!(
        table,
        "overall {:.3}% on {n} samples ({} model classes, {} steps trained)",
        100.0 * hits as f64 / n.max(1) as f64,
        classes,
        ck.steps_completed
    );
    emit(&table);
    Ok(())
}

fn compare(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config, None)?;
    let rows = run_comparative(&cfg)?;
    emit(&report::render_comparison(&rows));
    Ok(())
}

fn analyze(run: &Path) -> anyhow::Result<()> {
    let rec = report::read_jsonl(&run.join("metrics.jsonl"))?;
    let recomputed = rec.recompute_avg();
    if (recomputed - rec.avg_incremental).abs() > 1e-9 {
        bail!(
            "accuracy matrix and summary disagree: {} vs {}",
            recomputed,
            rec.avg_incremental
        );
    }
    emit(&report::render_table(&rec));
    emit(&format!(
        "avg recomputed from matrix: {recomputed:.9}% (consistent)\n"
    ));
    Ok(())
}

fn aggregate_runs(runs: &[PathBuf]) -> anyhow::Result<()> {
    let mut records = Vec::with_capacity(runs.len());
    for dir in runs {
        records.push(report::read_jsonl(&dir.join("metrics.jsonl"))?);
    }
    let agg = aggregate(&records);
    emit(&format!(
        "{} runs: Avg {:.3} ± {:.3}%, Last {:.3} ± {:.3}%\n",
        agg.runs, agg.avg_mean, agg.avg_std, agg.last_mean, agg.last_std
    ));
    Ok(())
}
