use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iu_core::harness::plot::emit_plots;
use iu_core::harness::{evaluate_policy, load_checkpoint, rng_stream, run_training, ExperimentConfig, HarnessError};
use iu_core::reward::{resolve_task, CompiledTasks, Suite};

// training allocates and frees many mid-sized buffers per step, which the
// system allocator keeps handing back to the kernel
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "iu", version, about = "Train and evaluate multi-head IU agents in the playroom")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed, or every seed listed in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to runs/<config name>/seed<N>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one head of a checkpoint greedily.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        /// Defaults to the run's eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Seed for start layouts; defaults to the run's own seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Task suites.
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
    /// Render learning curves and trajectories of a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum TasksCommand {
    /// Print the canonical suite for an arena.
    List {
        #[arg(long)]
        blocks: usize,
        #[arg(long)]
        pad: bool,
    },
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), HarnessError> {
    let cfg = ExperimentConfig::from_file(config)?;
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let base = PathBuf::from("runs").join(stem);
    let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    for s in &seeds {
        let dir = match (&out, seed) {
            (Some(o), Some(_)) => o.clone(),
            (Some(o), None) => o.join(format!("seed{s}")),
            (None, _) => base.join(format!("seed{s}")),
        };
        eprintln!("training seed {s} into {}", dir.display());
        let run = run_training(&cfg, *s, &dir)?;
        let last = run.final_step();
        for r in run.at_step(last) {
            println!("{last}\t{}\t{:.4}\t{:.4}\t{:.4}", r.task, r.stats.mean, r.stats.min, r.stats.max);
        }
    }
    Ok(())
}

fn eval(checkpoint: &Path, task: &str, episodes: Option<usize>, seed: Option<u64>) -> Result<(), HarnessError> {
    let run = load_checkpoint(checkpoint)?;
    let want = resolve_task(task, run.config.epsilon)?;
    let index = run
        .tasks
        .iter()
        .position(|t| t.name() == want.name())
        .ok_or_else(|| HarnessError::Config(format!("checkpoint has no head for {}", want.name())))?;
    let rewards = CompiledTasks::new(&run.tasks, &run.config.arena)?;
    let episodes = episodes.unwrap_or(run.config.eval_episodes);
    // same start layouts as the run's own evaluations
    let mut rng = rng_stream(seed.unwrap_or(run.seed), 4);
    let stats = evaluate_policy(&run.actor, index, &run.config.arena, &rewards, episodes, &mut rng)?;
    println!("env_step,task,mean,min,max");
    println!("{},\"{}\",{},{},{}", run.env_step, want.name(), stats.mean, stats.min, stats.max);
    Ok(())
}

fn list_tasks(blocks: usize, pad: bool) -> Result<(), HarnessError> {
    let suite = Suite::for_blocks(blocks, pad).ok_or_else(|| {
        HarnessError::Config(format!(
            "no canonical suite for {blocks} blocks{}; use 2 blocks, or 3 with or without --pad",
            if pad { " with a pad" } else { "" }
        ))
    })?;
    for t in suite.tasks(iu_core::reward::DEFAULT_EPSILON)? {
        println!("{t}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Eval {
            checkpoint,
            task,
            episodes,
            seed,
        } => eval(&checkpoint, &task, episodes, seed),
        Command::Tasks {
            command: TasksCommand::List { blocks, pad },
        } => list_tasks(blocks, pad),
        Command::Plot { run } => emit_plots(&run).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
