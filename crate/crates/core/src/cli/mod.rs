//! Experiment runner behind the `mbae` binary.

pub mod config;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

pub use config::{Aggregate, ExperimentConfig, Variant};
use output::CurvePoint;

use crate::error::{Error, Result};
use crate::trainer::{RunRecord, Trainer};

#[derive(Debug, Parser)]
#[command(name = "mbae", version, about = "Model-based action exploration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured (variant, seed) pair and write curves.
    Run(RunArgs),
    /// Run the full variant grid over the configured seeds.
    Ablate(RunArgs),
    /// Plot aggregate CSVs into one SVG.
    Plot {
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Aggregate CSV files.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Greedy evaluation of a saved checkpoint.
    EvalCheckpoint {
        path: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        /// Refine the greedy mean by action optimization.
        #[arg(long)]
        optimize: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the configured seed list; repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` override in dotted-path form; repeatable.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Save each run's final trainer state next to its CSV.
    #[arg(long)]
    pub checkpoint: bool,
    /// Dynamics steps on the first episode's data before regular training.
    #[arg(long)]
    pub pretrain_dynamics: Option<usize>,
}

impl RunArgs {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config, &self.overrides)?;
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(n) = self.pretrain_dynamics {
            cfg.train.pretrain_dynamics_steps = n;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: usize,
    pub checkpoint: bool,
}

/// Files written by one experiment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub run_csvs: Vec<PathBuf>,
    pub aggregates: Vec<PathBuf>,
    pub plot: PathBuf,
}

pub fn run_csv_path(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(format!("{}_seed{seed}.csv", variant.name()))
}

pub fn aggregate_path(out: &Path, variant: Variant) -> PathBuf {
    out.join(format!("{}_aggregate.csv", variant.name()))
}

pub fn plot_path(out: &Path) -> PathBuf {
    out.join("learning_curves.svg")
}

fn run_one(cfg: &ExperimentConfig, variant: Variant, seed: u64, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    let mut train = variant.apply(&cfg.train);
    train.seed = seed;
    info!("start {variant} seed {seed}");
    let mut trainer = Trainer::new(train)?;
    let records = trainer.train()?;
    fs::write(run_csv_path(&cfg.out, variant, seed), output::records_csv(&records))?;
    if opts.checkpoint {
        trainer.save(&run_csv_path(&cfg.out, variant, seed).with_extension("ckpt"))?;
    }
    if let Some(last) = records.last() {
        info!("done {variant} seed {seed}: episode {} return {:.3}", last.episode, last.mean_return);
    }
    Ok(records)
}

/// Trains every (variant, seed) pair, writes one CSV per run, then one
/// aggregate CSV per variant and an overlay plot once all runs finished.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let jobs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<Vec<RunRecord>>>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.parallel.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = jobs.get(i) else { break };
                let r = run_one(cfg, variant, seed, opts).map_err(|e| Error::Run {
                    run: format!("{variant}/seed{seed}"),
                    source: Box::new(e),
                });
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("workers finished");
    let mut curves: Vec<(Variant, Vec<Vec<RunRecord>>)> = cfg.variants.iter().map(|&v| (v, Vec::new())).collect();
    for (&(variant, _), r) in jobs.iter().zip(results) {
        let records = r.expect("every job ran")?;
        curves
            .iter_mut()
            .find(|(v, _)| *v == variant)
            .expect("variant listed")
            .1
            .push(records);
    }
    let mut out = ExperimentOutput {
        run_csvs: jobs.iter().map(|&(v, s)| run_csv_path(&cfg.out, v, s)).collect(),
        ..ExperimentOutput::default()
    };
    let mut plotted: Vec<(String, Vec<CurvePoint>)> = Vec::new();
    for (variant, runs) in &curves {
        let points = output::aggregate(runs, cfg.aggregate);
        let path = aggregate_path(&cfg.out, *variant);
        fs::write(&path, output::aggregate_csv(&points, cfg.aggregate))?;
        out.aggregates.push(path);
        plotted.push((variant.name().to_string(), points));
    }
    out.plot = plot_path(&cfg.out);
    if plotted.iter().all(|(_, p)| !p.is_empty()) {
        fs::write(&out.plot, plot::render_svg(&plotted)?)?;
    }
    Ok(out)
}

/// [`run_experiment`] over every variant.
pub fn ablation_matrix(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    let cfg = ExperimentConfig {
        variants: Variant::ALL.to_vec(),
        ..cfg.clone()
    };
    run_experiment(&cfg, opts)
}

/// Reads aggregate CSVs and writes their overlay plot.
pub fn plot_curves(csv_paths: &[PathBuf], out_svg: &Path) -> Result<()> {
    if csv_paths.is_empty() {
        return Err(Error::Usage("no curves to plot".into()));
    }
    let mut curves = Vec::with_capacity(csv_paths.len());
    for p in csv_paths {
        let text = fs::read_to_string(p)?;
        let points = output::parse_aggregate(&text)?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches("_aggregate").to_string())
            .unwrap_or_default();
        curves.push((name, points));
    }
    fs::write(out_svg, plot::render_svg(&curves)?)?;
    Ok(())
}

/// Process exit status for an error: 2 for configuration and usage
/// problems, 3 for numeric failures, 1 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else if e.is_config() {
        2
    } else {
        1
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) | Command::Ablate(args) if args.parallel == 0 => {
            Err(Error::config("--parallel must be at least 1"))
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = run_experiment(
                &cfg,
                &RunOptions {
                    parallel: args.parallel,
                    checkpoint: args.checkpoint,
                },
            )?;
            info!("wrote {} run files to {}", out.run_csvs.len(), cfg.out.display());
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let out = ablation_matrix(
                &cfg,
                &RunOptions {
                    parallel: args.parallel,
                    checkpoint: args.checkpoint,
                },
            )?;
            info!("wrote {} run files to {}", out.run_csvs.len(), cfg.out.display());
            Ok(())
        }
        Command::Plot { out, csv } => plot_curves(&csv, &out),
        Command::EvalCheckpoint {
            path,
            episodes,
            optimize,
        } => {
            if episodes == 0 {
                return Err(Error::config("--episodes must be at least 1"));
            }
            let mut trainer = Trainer::load(&path)?;
            let (mean, std) = trainer.evaluate_episodes(episodes, optimize)?;
            println!("episode={} mean_return={mean} std_return={std}", trainer.episode());
            Ok(())
        }
    }
}

/// Entry point of the binary: parses arguments, sets up logging from
/// `MBAE_LOG` and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("MBAE_LOG", "info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
        let wrapped = Error::Run {
            run: "cacla/seed1".into(),
            source: Box::new(Error::Aborted {
                episode: 4,
                source: Box::new(Error::Numeric("nan".into())),
            }),
        };
        assert_eq!(exit_code(&wrapped), 3);
        assert!(wrapped.to_string().contains("cacla/seed1"));
        assert_eq!(exit_code(&Error::Format("x".into())), 1);
    }

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from([
            "mbae", "run", "--config", "c.toml", "--seed", "1", "--seed", "2", "--set", "train.episodes=3",
            "--parallel", "2",
        ])
        .unwrap();
        match cli.command {
            Command::Run(a) => {
                assert_eq!(a.seeds, vec![1, 2]);
                assert_eq!(a.overrides, vec!["train.episodes=3".to_string()]);
                assert_eq!(a.parallel, 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
