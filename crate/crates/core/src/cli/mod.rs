//! The `desmil` command line: `generate`, `split`, `train`, `evaluate`.

mod config;

pub use config::{parse_overrides, Config, DataConfig, ModelConfig, OutputConfig, SplitMode, TrainConfig, CONFIG_ENV};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::data::{
    generate_synthetic, load_interactions, ood_split, random_split, read_split_file, save_interactions,
    write_item_map, write_split_file, write_synthetic_truth, Dataset, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, histogram, write_curve_csv, write_histogram_csv, write_metrics_csv, DEFAULT_CUTOFFS};
use crate::trainer::{init_state, Checkpoint, Trainer};

/// Build identifier recorded in run manifests.
pub const BUILD_ID: &str = env!("DESMIL_BUILD_ID");

#[derive(Debug, Parser)]
#[command(name = "desmil", version, about = "Multi-interest recommender with HSIC sample re-weighting")]
pub struct Cli {
    /// Config file; falls back to the file named by DESMIL_CONFIG.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 runs fully serially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset: interactions, splits, and topic ground truth.
    Generate(Overrides),
    /// Assign users to train/valid/test (data.split_mode = ood | random).
    Split(Overrides),
    /// Train and write checkpoints, curves, the weight histogram, and a manifest.
    Train {
        /// Continue from this checkpoint (usually `<output>/last.ckpt`).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write validation and test metrics for a checkpoint.
    Evaluate {
        /// Defaults to `<output>/best.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// Config overrides as `--key value` or `--section.key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub rest: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            Error::Help
        }
        _ => Error::Config(e.to_string()),
    })?;
    cli.hoist_flags()?;
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

/// Removes `--flag value` (or `--flag=value`) from an override list.
fn take_flag(rest: &mut Vec<String>, flag: &str) -> Result<Option<String>> {
    let long = format!("--{flag}");
    let Some(i) = rest.iter().position(|a| *a == long || a.starts_with(&format!("{long}="))) else {
        return Ok(None);
    };
    let arg = rest.remove(i);
    match arg.split_once('=') {
        Some((_, v)) => Ok(Some(v.to_string())),
        None if i < rest.len() => Ok(Some(rest.remove(i))),
        None => Err(Error::Config(format!("`{long}` needs a value"))),
    }
}

impl Cli {
    /// Named flags written after the first override land in the override
    /// list; move them back to their fields.
    fn hoist_flags(&mut self) -> Result<()> {
        let (rest, path) = match &mut self.command {
            Command::Generate(o) | Command::Split(o) => (&mut o.rest, None),
            Command::Train { resume, overrides } => (&mut overrides.rest, Some(("resume", resume))),
            Command::Evaluate { checkpoint, overrides } => (&mut overrides.rest, Some(("checkpoint", checkpoint))),
        };
        if let Some((flag, slot)) = path {
            if let Some(v) = take_flag(rest, flag)? {
                *slot = Some(PathBuf::from(v));
            }
        }
        if let Some(v) = take_flag(rest, "config")? {
            self.config = Some(PathBuf::from(v));
        }
        if let Some(v) = take_flag(rest, "threads")? {
            self.threads = Some(v.parse().map_err(|_| Error::Config(format!("--threads takes a count, got `{v}`")))?);
        }
        Ok(())
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let rest = match &cli.command {
        Command::Generate(o) | Command::Split(o) => &o.rest,
        Command::Train { overrides, .. } | Command::Evaluate { overrides, .. } => &overrides.rest,
    };
    let cfg = load_config(cli.config.as_deref(), rest)?;
    match cli.command {
        Command::Generate(_) => cmd_generate(&cfg),
        Command::Split(_) => cmd_split(&cfg),
        Command::Train { resume, .. } => cmd_train(&cfg, resume.as_deref()),
        Command::Evaluate { checkpoint, .. } => {
            let path = checkpoint.unwrap_or_else(|| cfg.output.dir.join("best.ckpt"));
            cmd_evaluate(&cfg, &path)
        }
    }
}

pub fn load_config(path: Option<&Path>, rest: &[String]) -> Result<Config> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    Config::load(&text, &parse_overrides(rest)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_generate(cfg: &Config) -> Result<()> {
    let data = generate_synthetic(&cfg.synthetic)?;
    ensure_dir(&cfg.output.dir)?;
    save_interactions(&data.dataset, cfg.interactions_path())?;
    write_split_file(&data.dataset, cfg.splits_path())?;
    write_synthetic_truth(&data, cfg.output.dir.join("synthetic_truth.csv"))?;
    info!(
        "generated {} users over {} items into {}",
        data.dataset.num_users(),
        data.dataset.vocab,
        cfg.output.dir.display()
    );
    Ok(())
}

pub fn cmd_split(cfg: &Config) -> Result<()> {
    let dataset = load_interactions(cfg.interactions_path(), cfg.data.min_len)?;
    let split = match cfg.data.split_mode {
        SplitMode::Ood => ood_split(&dataset, cfg.train.seed)?,
        SplitMode::Random => random_split(&dataset, cfg.train.seed)?,
        SplitMode::File => {
            return Err(Error::Config("split needs data.split_mode = ood or random".into()));
        }
    };
    let path = cfg.splits_path();
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_split_file(&split, &path)?;
    info!(
        "split {} users: {} train, {} valid, {} test",
        split.num_users(),
        split.count(Split::Train),
        split.count(Split::Valid),
        split.count(Split::Test)
    );
    Ok(())
}

/// Loads interactions and assigns splits according to `data.split_mode`.
pub fn load_dataset(cfg: &Config) -> Result<Dataset> {
    let mut dataset = load_interactions(cfg.interactions_path(), cfg.data.min_len)?;
    match cfg.data.split_mode {
        SplitMode::File => {
            read_split_file(&mut dataset, cfg.splits_path())?;
            Ok(dataset)
        }
        SplitMode::Ood => ood_split(&dataset, cfg.train.seed),
        SplitMode::Random => random_split(&dataset, cfg.train.seed),
    }
}

fn manifest(cfg: &Config, vocab: usize) -> Result<String> {
    let mut effective = cfg.clone();
    effective.data.interactions = Some(cfg.interactions_path());
    effective.data.splits = Some(cfg.splits_path());
    let mut out = String::new();
    let _ = writeln!(out, "# desmil run manifest");
    let _ = writeln!(out, "build = \"{BUILD_ID}\"");
    let _ = writeln!(out, "seed = {}", cfg.train.seed);
    let _ = writeln!(out, "vocab = {vocab}");
    out.push('\n');
    out.push_str(&effective.to_text()?);
    Ok(out)
}

pub fn cmd_train(cfg: &Config, resume: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let hp = cfg.model.hyperparams(dataset.vocab);
    let opts = cfg.train.options();
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;

    let (state, best) = match resume {
        Some(path) => {
            let last = Checkpoint::load(path)?;
            check_hyperparams(&last, &hp)?;
            let best_path = dir.join("best.ckpt");
            let best = if best_path.exists() && best_path != path {
                let best = Checkpoint::load(&best_path)?;
                check_hyperparams(&best, &hp)?;
                Some(best.state)
            } else {
                None
            };
            (last.state, best)
        }
        None => (init_state(&hp, cfg.train.seed)?, None),
    };
    let trainer = Trainer::new(&dataset, &hp, &opts)?;
    let result = trainer.run(state, best, |last, best| {
        last.save(dir.join("last.ckpt"))?;
        best.save(dir.join("best.ckpt"))
    })?;

    result.best.save(dir.join("best.ckpt"))?;
    result.last.save(dir.join("last.ckpt"))?;
    let curve_path = dir.join("curve.csv");
    if resume.is_some() && curve_path.exists() {
        append_curve(&result.curve, &curve_path)?;
    } else {
        write_curve_csv(&result.curve, &curve_path)?;
    }
    let (lo, hi) = hp.weight_bounds;
    let bins = histogram(result.last.state.weights.values(), cfg.train.histogram_bins, lo, hi);
    write_histogram_csv(&bins, dir.join("weights_hist.csv"))?;
    write_item_map(&dataset, dir.join("item_map.csv"))?;
    crate::data::io::write_file(dir.join("manifest.toml"), &manifest(cfg, dataset.vocab)?)?;
    info!(
        "trained {} batches; best validation Recall@50 {:.4} at batch {}",
        result.last.state.q,
        result.best.state.meta.best_metric.unwrap_or(0.0),
        result.best.state.meta.best_q
    );
    Ok(())
}

fn append_curve(curve: &crate::eval::CurveLog, path: &Path) -> Result<()> {
    let tmp = path.with_extension("part");
    write_curve_csv(curve, &tmp)?;
    let new = fs::read_to_string(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let _ = fs::remove_file(&tmp);
    let mut text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.extend(new.lines().skip(1).map(|l| format!("{l}\n")));
    crate::data::io::write_file(path, &text)
}

fn check_hyperparams(ckpt: &Checkpoint, hp: &crate::model::Hyperparams) -> Result<()> {
    if &ckpt.hp != hp {
        return Err(Error::Config(format!(
            "checkpoint hyperparameters differ from the config:\n  checkpoint: {:?}\n  config:     {:?}",
            ckpt.hp, hp
        )));
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &Config, checkpoint: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = load_dataset(cfg)?;
    check_hyperparams(&ckpt, &cfg.model.hyperparams(dataset.vocab))?;
    let mut reports = Vec::new();
    for split in [Split::Valid, Split::Test] {
        if dataset.count(split) > 0 {
            reports.push(evaluate(&ckpt.state.params, &ckpt.hp, &dataset, split, &DEFAULT_CUTOFFS)?);
        }
    }
    if reports.is_empty() {
        return Err(Error::Data("no validation or test users to evaluate".into()));
    }
    ensure_dir(&cfg.output.dir)?;
    write_metrics_csv(&reports, cfg.output.dir.join("metrics.csv"))?;
    for r in &reports {
        info!("{}: Recall@20 {:.4}, Recall@50 {:.4}", r.split, r.recall(20), r.recall(50));
    }
    Ok(())
}
