use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use modnet::harness::{
    self, append_finetune_rows, zeroshot_csv, Csv, ExperimentConfig, RunDir, FINETUNE_HEADER,
};
use modnet::sim::Split;
use modnet::trainer::iterations_to_threshold;
use modnet::universe::World;
use modnet::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "modnet", version, about = "Modular robot/task policies: training, zero-shot transfer and fine-tuning")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (defaults to the config's `output`, then `run`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 forces the deterministic single-threaded mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hold-one-out training: weights and loss curve per seed.
    Train,
    /// Zero-shot metric of the held-out world with both baselines.
    EvalZeroshot,
    /// Fine-tune the held-out world from composition, the wrong task module and scratch.
    Finetune,
    /// Bottleneck width x dropout sweep of the zero-shot metric.
    Ablate,
    /// Solve and save the training-world expert controllers.
    ExportExpert,
    /// Roll out a trained policy and write one CSV per condition.
    DumpTrajectory {
        /// World as `robot:task`; defaults to the held-out world.
        #[arg(long)]
        world: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure the thread pool: {e}")))?;
    }
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let config = ExperimentConfig::load(&path)?;
    let run = RunDir::new(cli.out.or_else(|| config.output.clone()).unwrap_or_else(|| "run".into()));
    let seeds = cli.seed.map_or_else(|| config.eval.seeds.clone(), |s| vec![s]);
    let hash = config.hash();

    match cli.command {
        Command::Train => {
            for &seed in &seeds {
                let grid = harness::train_to_dir(&config, seed, &run)?;
                let totals = grid.curve.totals();
                println!(
                    "seed {seed}: trained {} worlds, loss {} -> {}, weights {}",
                    grid.curve.worlds.len(),
                    totals.first().copied().map_or("-".into(), harness::fmt_float),
                    totals.last().copied().map_or("-".into(), harness::fmt_float),
                    run.weights(seed).display()
                );
            }
        }
        Command::EvalZeroshot => {
            let stores = seeds
                .iter()
                .map(|&s| harness::load_store(&run, s))
                .collect::<Result<Vec<_>>>()?;
            let reports = seeds
                .iter()
                .zip(&stores)
                .map(|(&s, store)| harness::run_zeroshot(&config, store, s))
                .collect::<Result<Vec<_>>>()?;
            for r in &reports {
                let [ours, random, wrong] = r.mean();
                println!(
                    "seed {}: ours {} random_network {} wrong_task_module {}",
                    r.seed,
                    harness::fmt_float(ours),
                    harness::fmt_float(random),
                    harness::fmt_float(wrong)
                );
            }
            harness::write_report(&zeroshot_csv(&reports), &run.zeroshot())?;
        }
        Command::Finetune => {
            let stores = seeds
                .iter()
                .map(|&s| harness::load_store(&run, s))
                .collect::<Result<Vec<_>>>()?;
            let mut csv = Csv::new(&FINETUNE_HEADER);
            let threshold = config.trainer.finetune.threshold;
            for (&seed, store) in seeds.iter().zip(&stores) {
                let curves = harness::finetune_from_composition(&config, store, seed)?;
                for c in &curves {
                    let hit = iterations_to_threshold(&c.metric, threshold);
                    println!(
                        "seed {seed}: {} reaches {} after {}",
                        c.variant.label(),
                        harness::fmt_float(threshold),
                        hit.map_or("never".into(), |i| format!("{i} iterations"))
                    );
                }
                append_finetune_rows(&mut csv, &hash, seed, &curves);
            }
            harness::write_report(&csv, &run.finetune())?;
        }
        Command::Ablate => {
            let config = ExperimentConfig {
                eval: harness::EvalSettings {
                    seeds: seeds.clone(),
                    ..config.eval.clone()
                },
                ..config
            };
            let cells = harness::ablate_regularization(&config)?;
            for c in &cells {
                println!(
                    "width {} rate {}: {} +- {}",
                    c.width,
                    harness::fmt_float(c.rate),
                    harness::fmt_float(c.mean),
                    harness::fmt_float(c.std)
                );
            }
            harness::write_ablation(&config, &cells, &run)?;
        }
        Command::ExportExpert => {
            for &seed in &seeds {
                let file = harness::export_experts(&config, seed, &run)?;
                println!("seed {seed}: {} blocks -> {}", file.blocks.len(), run.experts(seed).display());
            }
        }
        Command::DumpTrajectory { world, split } => {
            let world = match world {
                Some(w) => parse_world(&w)?,
                None => config.held_out(),
            };
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            for &seed in &seeds {
                let store = harness::load_store(&run, seed)?;
                for p in harness::dump_trajectories(&config, &store, &world, split, seed, &run)? {
                    println!("{}", p.display());
                }
            }
        }
    }
    Ok(())
}

fn parse_world(text: &str) -> Result<World> {
    match text.split_once(':') {
        Some((r, t)) if !r.is_empty() && !t.is_empty() => Ok(World::new(r, t)),
        _ => Err(Error::Config(format!("world {text:?} is not of the form robot:task"))),
    }
}
