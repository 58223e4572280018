use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use transmat::metrics::{evaluate_classification, evaluate_lane_change, frame_accuracy};
use transmat::pipeline::{prepare_data, predict, Domain, ExperimentContext, ExperimentData, Predictions};
use transmat_cli::checkpoint::{load_model, save_model};
use transmat_cli::config::{help_text, read_config, RunConfig};
use transmat_cli::report::{emit_report, format_table};
use transmat_cli::runner::{load_data, run, SOURCE_FILE, TARGET_FILE};
use transmat_cli::seqfile::write_sequences;

/// Domain transfer with learned per-sample transformation matrices.
#[derive(Parser)]
#[command(name = "transmat", version, after_long_help = help_text())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seeds with this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with the domain files; synthetic data is used without it.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic clean/noisy sequence pair as a.seq and b.seq.
    GenToy(Common),
    /// Trains the base model on domain A and saves base.tmck.
    TrainBase(Common),
    /// Runs the transfer grid and writes results.csv, report.json and converted_samples.csv.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Base model checkpoint; trained from scratch per seed without it.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Grid points run at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluates a model checkpoint on the test sides of A and B.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Prints results.csv of a finished run as a table.
    Report { dir: PathBuf },
}

struct Loaded {
    cfg: RunConfig,
    out: PathBuf,
}

fn load(c: &Common) -> Result<Loaded> {
    let mut cfg = read_config(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    if let Some(s) = c.seed {
        cfg.experiment.seeds = vec![s];
    }
    if c.data.is_some() {
        cfg.data = c.data.clone();
    }
    let out = c.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    Ok(Loaded { cfg, out })
}

fn first_seed(cfg: &RunConfig) -> Result<u64> {
    match cfg.experiment.seeds.first() {
        Some(&s) => Ok(s),
        None => bail!("no seed configured"),
    }
}

fn domains(cfg: &RunConfig, seed: u64) -> Result<ExperimentData> {
    Ok(match &cfg.data {
        Some(dir) => load_data(&cfg.experiment, dir)?,
        None => prepare_data(&cfg.experiment, seed)?,
    })
}

fn describe(name: &str, p: &Predictions, test: &Domain, horizon_s: f64) -> Result<String> {
    Ok(match (p, test) {
        (Predictions::Classes(c), Domain::Images(d)) => {
            format!("{name}: accuracy {:.4}", evaluate_classification(c, &d.labels)?)
        }
        (Predictions::Maneuvers(p), Domain::Sequences(s)) => {
            let r = evaluate_lane_change(p, s, horizon_s)?;
            format!(
                "{name}: frequency {:.3} delay {:.3} miss {:.3} accuracy {:.4}",
                r.frequency,
                r.delay_s,
                r.miss,
                frame_accuracy(p, s)
            )
        }
        _ => bail!("model and data do not match"),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenToy(c) => {
            let l = load(&c)?;
            if !l.cfg.experiment.task.is_sequence() {
                bail!("gen-toy needs a sequence task");
            }
            let data = prepare_data(&l.cfg.experiment, first_seed(&l.cfg)?)?;
            ensure_dir(&l.out)?;
            for (file, d) in [(SOURCE_FILE, &data.a), (TARGET_FILE, &data.b)] {
                if let Domain::Sequences(s) = d {
                    write_sequences(&l.out.join(file), s)?;
                }
            }
        }
        Command::TrainBase(c) => {
            let l = load(&c)?;
            let seed = first_seed(&l.cfg)?;
            let data = domains(&l.cfg, seed)?;
            let ctx = ExperimentContext::new(&l.cfg.experiment, &data, seed, None)?;
            if let Some(log) = &ctx.base_log {
                eprintln!("base: best epoch {} of {}", log.best_epoch, log.val_loss.len());
            }
            ensure_dir(&l.out)?;
            save_model(&l.out.join("base.tmck"), &ctx.base)?;
        }
        Command::Transfer { common, base, jobs } => {
            let l = load(&common)?;
            let base = base.map(|p| load_model(&p)).transpose()?;
            let data = l.cfg.data.as_ref().map(|d| load_data(&l.cfg.experiment, d)).transpose()?;
            let report = run(&l.cfg.experiment, data.as_ref(), base.as_ref(), jobs)?;
            emit_report(&l.cfg, &report, &l.out)?;
            if !report.failures.is_empty() {
                for (point, e) in &report.failures {
                    eprintln!("failed: {point}: {e}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval { common, model } => {
            let l = load(&common)?;
            let seed = first_seed(&l.cfg)?;
            let data = domains(&l.cfg, seed)?;
            let m = load_model(&model)?;
            let ctx = ExperimentContext::new(&l.cfg.experiment, &data, seed, Some(m))?;
            let h = l.cfg.experiment.horizon_s();
            println!("{}", describe("A test", &predict(&ctx.base, &ctx.source_test)?, &ctx.source_test, h)?);
            println!("{}", describe("B test", &predict(&ctx.base, &ctx.target_test)?, &ctx.target_test, h)?);
        }
        Command::Report { dir } => {
            let path = dir.join("results.csv");
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            print!("{}", format_table(&bytes)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
