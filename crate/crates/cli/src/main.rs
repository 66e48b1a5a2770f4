//! `tquate`: preprocess, train, evaluate and inspect temporal KG models.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tquate::checkpoint::{read_header, Checkpoint};
use tquate::config::TrainConfig;
use tquate::data::{load_any, load_dataset, write_cache, FilterIndex, Split};
use tquate::eval::evaluate;
use tquate::exec::{with_threads, Exec};
use tquate::patterns::verify_patterns;
use tquate::train::{best_checkpoint_path, train};

/// Overrides `--threads` when the flag is absent.
const THREADS_ENV: &str = "TQUATE_THREADS";

#[derive(Parser)]
#[command(name = "tquate", version, about = "Temporal knowledge graph completion with quaternion embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset directory and write a binary cache.
    Preprocess {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model. Flags override the config file, which overrides defaults.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split with time-wise filtered ranking.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write `key = value` metrics here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-query ranks here.
        #[arg(long)]
        ranks: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the five relation-pattern identities numerically.
    VerifyPatterns {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print a checkpoint header.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Flat `key = value` file with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, visible_alias = "epochs")]
    max_epochs: Option<usize>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda_e: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    periodic_enabled: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    metrics_log: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        macro_rules! flag {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        flag!(dim, batch_size, max_epochs, learning_rate, lambda_e, lambda_t, p, periodic_enabled, seed, eval_every, threads);
        macro_rules! path_flag {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = Some(v.clone());
                }
            )*};
        }
        path_flag!(dataset, checkpoint, metrics_log);
        if self.threads.is_none() {
            if let Some(t) = env_threads()? {
                cfg.threads = t;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn threads(flag: Option<usize>) -> Result<usize> {
    Ok(match flag {
        Some(t) => t,
        None => env_threads()?.unwrap_or(0),
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if cfg.dataset.is_none() {
        bail!("no dataset given (use --dataset or a config file)");
    }
    let out = train(&cfg)?;
    for rec in out.history.iter().filter(|r| r.valid.is_some()) {
        println!("{}", rec.log_line());
    }
    if let Some(last) = out.history.last() {
        println!("final train loss {:.6} after {} epochs ({:.1} s)", last.train_loss, last.epoch, last.seconds);
    }
    if let Some((epoch, best)) = &out.best {
        println!("best valid epoch {epoch}: {best}");
    }
    if let Some(path) = &cfg.checkpoint {
        println!("checkpoint written to {}", path.display());
        if out.best.is_some() {
            println!("best checkpoint written to {}", best_checkpoint_path(path).display());
        }
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    split: Split,
    out: Option<&Path>,
    ranks: Option<&Path>,
    threads: usize,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (_, ds) = load_any(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    let p = &ck.params;
    if (p.num_entities(), p.num_relations(), p.num_timestamps()) != (ds.num_entities, ds.num_relations, ds.num_timestamps) {
        bail!(
            "checkpoint shape ({} entities, {} relations, {} timestamps) does not match dataset ({}, {}, {})",
            p.num_entities(),
            p.num_relations(),
            p.num_timestamps(),
            ds.num_entities,
            ds.num_relations,
            ds.num_timestamps
        );
    }
    let filter = FilterIndex::build(&ds);
    let facts = ds.split(split);
    let result = with_threads(threads, || evaluate(p, facts, &filter, Exec::for_threads(threads)));
    print!("{}", result.table(split.name()));
    if let Some(path) = out {
        std::fs::write(path, result.to_kv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = ranks {
        result
            .write_rank_dump(path, facts)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Preprocess { dataset, out } => {
            let (vocab, ds) = load_dataset(&dataset).with_context(|| format!("loading {}", dataset.display()))?;
            write_cache(&out, &vocab, &ds).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "entities {}  relations {}  timestamps {}  train {}  valid {}  test {}",
                ds.num_entities,
                ds.num_relations,
                ds.num_timestamps,
                ds.train.len(),
                ds.valid.len(),
                ds.test.len()
            );
        }
        Command::Train(args) => cmd_train(&args)?,
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
            ranks,
            threads: t,
        } => cmd_eval(&checkpoint, &dataset, split, out.as_deref(), ranks.as_deref(), threads(t)?)?,
        Command::VerifyPatterns {
            trials,
            dim,
            seed,
            threads: t,
        } => {
            if dim == 0 || trials == 0 {
                bail!("--dim and --trials must be positive");
            }
            let t = threads(t)?;
            let report = with_threads(t, || verify_patterns(trials, dim, seed, Exec::for_threads(t)));
            println!("{report}");
            if !report.all_passed() {
                eprintln!("pattern verification failed");
                return Ok(false);
            }
        }
        Command::Inspect { checkpoint } => {
            let header = read_header(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            println!("{header}");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(1)
        }
    }
}
