use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use stackformer::config::RunConfig;
use stackformer::model::{checkpoint, IntegrationMode, Model};
use stackformer::tasks::{self, TaskKind};
use stackformer::trainer::{self, BoundaryActions, EvalReport};
use stackformer::verify::{self, Suite};
use stackformer::Error;

#[derive(Parser)]
#[command(name = "stackformer", version, about = "Stack-augmented transformer on formal-language tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed listed in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<IntegrationMode>,
    },
    /// Length-generalization accuracy of one or more checkpoints.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Task name; read from the run's config.toml when omitted.
        #[arg(long)]
        task: Option<String>,
        /// Comma-separated lengths or inclusive ranges, e.g. `41-100,200`.
        #[arg(long)]
        lengths: String,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        #[arg(long)]
        mode: Option<IntegrationMode>,
    },
    /// Write task samples as JSON lines.
    GenData {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value = "1-40")]
        lengths: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle, gradient, invariant, identity and task suites.
    Verify {
        /// oracle | grad | invariants | identity | tasks | all
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean push/pop/no-op probabilities per stack boundary, as CSV.
    InspectActions {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value = "1-40")]
        lengths: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<IntegrationMode>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out, mode } => cmd_train(&config, seed, out, mode),
        Command::Eval {
            checkpoints,
            task,
            lengths,
            samples,
            seed,
            out,
            mode,
        } => cmd_eval(&checkpoints, task, &lengths, samples, seed, &out, mode),
        Command::GenData {
            task,
            n,
            lengths,
            seed,
            out,
        } => cmd_gen_data(&task, n, &lengths, seed, out),
        Command::Verify { suite, seed, out } => cmd_verify(suite, seed, out),
        Command::InspectActions {
            checkpoint,
            task,
            n,
            lengths,
            seed,
            out,
            mode,
        } => cmd_inspect(&checkpoint, task, n, &lengths, seed, out, mode),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(
            Error::UnknownTask(_)
                | Error::InvalidConfig(_)
                | Error::UnsupportedLength { .. }
                | Error::Empty(_)
                | Error::StackDisabled
        )
    )
}

/// `41-100,200` → `[(41, 100), (200, 200)]`
fn parse_lengths(s: &str) -> stackformer::Result<Vec<(usize, usize)>> {
    let bad = || Error::InvalidConfig(format!("cannot parse length list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let v = part.parse().map_err(|_| bad())?;
                (v, v)
            }
        };
        if lo > hi || lo == 0 {
            return Err(bad());
        }
        out.push((lo, hi));
    }
    if out.is_empty() {
        return Err(Error::Empty("length list"));
    }
    Ok(out)
}

fn single_range(ranges: &[(usize, usize)]) -> stackformer::Result<(usize, usize)> {
    match ranges {
        [r] => Ok(*r),
        _ => Err(Error::InvalidConfig("expected a single length range".into())),
    }
}

fn write_csv<S: Serialize>(rows: &[S], out: Option<&Path>) -> anyhow::Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    steps_run: usize,
    stopped_early: bool,
    final_val_accuracy: Option<f64>,
    held_out_accuracy: f64,
    seconds: f64,
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    mode: Option<IntegrationMode>,
) -> anyhow::Result<ExitCode> {
    let mut cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(m) = mode {
        cfg.model.integration = m;
    }
    cfg.validate()?;
    let task = cfg.task_kind()?;
    let model_cfg = cfg.resolved_model()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.out_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let mut run_cfg = cfg.clone();
        run_cfg.seeds = vec![seed];
        run_cfg.out_dir = dir.clone();
        run_cfg.train.seed = seed;
        fs::write(dir.join("config.toml"), run_cfg.to_toml()?)?;

        let started = Instant::now();
        let mut model = Model::<f32>::new(model_cfg.clone(), seed)?;
        let mut log = BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?);
        let outcome = trainer::train(&mut model, task, &run_cfg.train, &mut |r| {
            serde_json::to_writer(&mut log, r)?;
            writeln!(log)?;
            if let Some(acc) = r.val_accuracy {
                log.flush()?;
                eprintln!(
                    "[seed {seed}] step {:>6}  lm {:.4}  H {:.4}  val {:.4}  {:.0}s",
                    r.step + 1,
                    r.lm,
                    r.stack_entropy,
                    acc,
                    started.elapsed().as_secs_f64()
                );
            }
            Ok(())
        })?;
        checkpoint::save(&model, dir.join("model.ckpt"))?;
        let report = trainer::evaluate_length_generalization(
            &model,
            task,
            &run_cfg.train.eval_lengths,
            run_cfg.train.eval_samples_per_length,
            seed.wrapping_add(1),
        )?;
        serde_json::to_writer(
            &mut log,
            &serde_json::json!({ "step": outcome.steps_run, "eval": report }),
        )?;
        writeln!(log)?;
        log.flush()?;
        fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
        write_csv(&report.per_length, Some(&dir.join("eval.csv")))?;
        if model.config.n_boundaries() > 0 {
            let (lo, hi) = run_cfg.train.train_lengths;
            let rows = trainer::collect_action_stats(&model, task, lo, hi, 256, seed)?;
            write_csv(&rows, Some(&dir.join("actions.csv")))?;
        }
        eprintln!(
            "[seed {seed}] done after {} steps; held-out accuracy {:.4}",
            outcome.steps_run, report.aggregate
        );
        summaries.push(SeedSummary {
            seed,
            steps_run: outcome.steps_run,
            stopped_early: outcome.stopped_early,
            final_val_accuracy: outcome.final_val_accuracy,
            held_out_accuracy: report.aggregate,
            seconds: started.elapsed().as_secs_f64(),
        });
        if cfg.target_accuracy.is_some_and(|t| report.aggregate >= t) {
            eprintln!("[seed {seed}] reached the target accuracy; skipping remaining seeds");
            break;
        }
    }
    let best = summaries
        .iter()
        .max_by(|a, b| a.held_out_accuracy.total_cmp(&b.held_out_accuracy))
        .map(|s| s.seed);
    let summary = serde_json::json!({ "task": task.name(), "runs": summaries, "best_seed": best });
    fs::write(cfg.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

/// Task from the flag, or from the `config.toml` written next to the
/// checkpoint by `train`.
fn resolve_task(task: Option<String>, checkpoint: &Path) -> anyhow::Result<TaskKind> {
    if let Some(t) = task {
        return Ok(t.parse::<TaskKind>()?);
    }
    let cfg_path = checkpoint.with_file_name("config.toml");
    if !cfg_path.exists() {
        return Err(Error::InvalidConfig(format!(
            "no --task given and no config.toml next to {}",
            checkpoint.display()
        ))
        .into());
    }
    Ok(RunConfig::load(&cfg_path)?.task_kind()?)
}

fn load_model(path: &Path, mode: Option<IntegrationMode>) -> anyhow::Result<Model<f32>> {
    let mut m = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(mode) = mode {
        m.config.integration = mode;
    }
    Ok(m)
}

#[derive(Serialize)]
struct EvalRow<'a> {
    checkpoint: &'a str,
    length: usize,
    samples: usize,
    accuracy: f64,
}

fn cmd_eval(
    checkpoints: &[PathBuf],
    task: Option<String>,
    lengths: &str,
    samples: usize,
    seed: u64,
    out: &Path,
    mode: Option<IntegrationMode>,
) -> anyhow::Result<ExitCode> {
    let ranges = parse_lengths(lengths)?;
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for ck in checkpoints {
        let task = resolve_task(task.clone(), ck)?;
        let model = load_model(ck, mode)?;
        let r = trainer::evaluate_length_generalization(&model, task, &ranges, samples, seed)?;
        eprintln!("{}: {:.4}", ck.display(), r.aggregate);
        reports.push((ck.display().to_string(), r));
    }
    fs::create_dir_all(out)?;
    let rows: Vec<EvalRow> = reports
        .iter()
        .flat_map(|(ck, r)| {
            r.per_length.iter().map(move |l| EvalRow {
                checkpoint: ck,
                length: l.length,
                samples: l.samples,
                accuracy: l.accuracy,
            })
        })
        .collect();
    write_csv(&rows, Some(&out.join("eval.csv")))?;
    let (best_ck, best) = reports
        .iter()
        .max_by(|a, b| a.1.aggregate.total_cmp(&b.1.aggregate))
        .expect("at least one checkpoint");
    write_csv(&best.per_length, Some(&out.join("best.csv")))?;
    let summary = serde_json::json!({
        "task": best.task,
        "lengths": ranges,
        "checkpoints": reports.iter().map(|(c, r)| serde_json::json!({"checkpoint": c, "accuracy": r.aggregate})).collect::<Vec<_>>(),
        "best": {"checkpoint": best_ck, "accuracy": best.aggregate},
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_data(task: &str, n: usize, lengths: &str, seed: u64, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let task: TaskKind = task.parse()?;
    let (lo, hi) = single_range(&parse_lengths(lengths)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = tasks::batch(task, lo, hi, n, &mut rng)?;
    let sink: Box<dyn Write> = match &out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for s in &samples {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(suite: Suite, seed: u64, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let summary = verify::run_suite(suite, seed)?;
    let text = serde_json::to_string_pretty(&summary)?;
    if let Some(p) = out {
        fs::write(p, &text)?;
    }
    println!("{text}");
    Ok(if summary.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_inspect(
    checkpoint: &Path,
    task: Option<String>,
    n: usize,
    lengths: &str,
    seed: u64,
    out: Option<PathBuf>,
    mode: Option<IntegrationMode>,
) -> anyhow::Result<ExitCode> {
    let task = resolve_task(task, checkpoint)?;
    let model = load_model(checkpoint, mode)?;
    let (lo, hi) = single_range(&parse_lengths(lengths)?)?;
    let rows: Vec<BoundaryActions> = trainer::collect_action_stats(&model, task, lo, hi, n, seed)?;
    if rows.is_empty() {
        bail!(Error::StackDisabled);
    }
    write_csv(&rows, out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}
