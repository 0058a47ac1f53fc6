//! Training runs, evaluation and run-directory artefacts.
//!
//! A run directory holds:
//!
//! * `config.txt` - the full configuration, every key spelled out
//! * `evals.csv` - `env_step,task,mean,min,max`, one row per task per evaluation
//! * `diagnostics.csv` - `env_step,critic_loss,actor_objective`, averaged since the last evaluation
//! * `checkpoint.iuck` - networks at the latest evaluation point
//! * `trajectories/task_NN.csv` - one greedy episode per head from the final evaluation

pub mod config;
pub mod plot;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::explore::{behavior_action, BehaviorSchedule, ExploreError, OuNoise};
use crate::learner::{IuAgent, LearnerError, TrainOutcome};
use crate::nets::ActorNet;
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::NnError;
use crate::playroom::trajectory::{Trajectory, TrajectoryError};
use crate::playroom::{observe, reset, ArenaConfig, PlayroomError, WorldState};
use crate::replay::{ReplayError, Transition};
use crate::reward::{CompiledTasks, RewardError, TaskSpec};

pub use config::{ExperimentConfig, TaskSource};

pub const EVALS_FILE: &str = "evals.csv";
pub const EVALS_HEADER: &str = "env_step,task,mean,min,max";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.iuck";
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Playroom(#[from] PlayroomError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad run records:\n  {}", .0.join("\n  "))]
    Records(Vec<String>),
    #[error("plotting failed: {0}")]
    Plot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Io,
    Data,
}

impl ErrorCategory {
    /// Process exit status for this category.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Numeric => 3,
            ErrorCategory::Io => 4,
            ErrorCategory::Data => 5,
        }
    }
}

impl HarnessError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            HarnessError::Config(_) | HarnessError::Reward(_) | HarnessError::Playroom(_) | HarnessError::Explore(_) => {
                ErrorCategory::Config
            }
            HarnessError::Learner(LearnerError::Config(_)) => ErrorCategory::Config,
            HarnessError::Learner(_) | HarnessError::Nn(_) | HarnessError::Replay(_) => ErrorCategory::Numeric,
            HarnessError::Io { .. } | HarnessError::Plot(_) => ErrorCategory::Io,
            HarnessError::Checkpoint(CheckpointError::Io(_)) => ErrorCategory::Io,
            HarnessError::Checkpoint(_) | HarnessError::Trajectory(_) | HarnessError::Records(_) => ErrorCategory::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Seeded generator on its own stream, so the consumers of randomness do not
/// perturb one another.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_REPLAY: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_SCHEDULE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalStats {
    fn from_returns(returns: &[f64]) -> Self {
        let n = returns.len() as f64;
        Self {
            mean: returns.iter().sum::<f64>() / n,
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub env_step: usize,
    pub task: String,
    pub stats: EvalStats,
}

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        // task names contain commas
        format!(
            "{},\"{}\",{},{},{}",
            self.env_step, self.task, self.stats.mean, self.stats.min, self.stats.max
        )
    }
}

fn rollout(
    actor: &ActorNet<f64>,
    task: usize,
    arena: &ArenaConfig,
    rewards: &CompiledTasks,
    episodes: usize,
    rng: &mut ChaCha8Rng,
    mut record: Option<&mut Trajectory>,
) -> Result<EvalStats, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let mut states: Vec<WorldState> = (0..episodes)
        .map(|_| reset(arena, rng))
        .collect::<Result<_, _>>()?;
    if let Some(t) = record.as_deref_mut() {
        t.record(&states[0], [0.0, 0.0], rewards.evaluate(&states[0]));
    }
    let dim = arena.obs_dim();
    let mut totals = vec![0.0; episodes];
    let mut obs = Array2::<f64>::zeros((episodes, dim));
    for _ in 0..arena.episode_steps {
        for (row, s) in obs.rows_mut().into_iter().zip(&states) {
            row.into_iter().zip(observe(s, arena)).for_each(|(o, v)| *o = v);
        }
        let actions = actor.forward_head_batch(obs.view(), task)?;
        for (e, s) in states.iter_mut().enumerate() {
            let a = [actions[[e, 0]], actions[[e, 1]]];
            *s = s.step(arena, a)?;
            totals[e] += rewards.evaluate_one(s, task);
            if e == 0 {
                if let Some(t) = record.as_deref_mut() {
                    t.record(s, a, rewards.evaluate(s));
                }
            }
        }
    }
    let returns: Vec<f64> = totals.iter().map(|r| r / arena.episode_steps as f64).collect();
    Ok(EvalStats::from_returns(&returns))
}

/// Runs `episodes` fresh episodes following head `task` greedily. Episode
/// return is the mean per-step reward of that task.
pub fn evaluate_policy(
    actor: &ActorNet<f64>,
    task: usize,
    arena: &ArenaConfig,
    rewards: &CompiledTasks,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalStats, HarnessError> {
    rollout(actor, task, arena, rewards, episodes, rng, None)
}

/// Like [`evaluate_policy`], also recording the first episode.
pub fn evaluate_policy_recorded(
    actor: &ActorNet<f64>,
    task: usize,
    arena: &ArenaConfig,
    tasks: &[TaskSpec],
    rewards: &CompiledTasks,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(EvalStats, Trajectory), HarnessError> {
    let names = tasks.iter().map(|t| t.name().to_owned()).collect();
    let mut traj = Trajectory::new(arena.colors.clone(), arena.pad.is_some(), names);
    let stats = rollout(actor, task, arena, rewards, episodes, rng, Some(&mut traj))?;
    Ok((stats, traj))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub evals: Vec<EvalRecord>,
}

impl RunSummary {
    /// Records of one evaluation point, in head order.
    pub fn at_step(&self, env_step: usize) -> Vec<&EvalRecord> {
        self.evals.iter().filter(|r| r.env_step == env_step).collect()
    }

    pub fn final_step(&self) -> usize {
        self.evals.last().map_or(0, |r| r.env_step)
    }
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    dir: &'a Path,
    tasks: &'a [TaskSpec],
    rewards: &'a CompiledTasks,
}

impl RunContext<'_> {
    fn evaluate_all(&self, actor: &ActorNet<f64>, env_step: usize, dump: bool) -> Result<Vec<EvalRecord>, HarnessError> {
        let mut out = Vec::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.iter().enumerate() {
            // every evaluation and every head sees the same start layouts
            let mut rng = rng_stream(self.seed, STREAM_EVAL);
            let stats = if dump {
                let (stats, traj) = evaluate_policy_recorded(
                    actor,
                    i,
                    &self.cfg.arena,
                    self.tasks,
                    self.rewards,
                    self.cfg.eval_episodes,
                    &mut rng,
                )?;
                let dir = self.dir.join(TRAJECTORY_DIR);
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                traj.write_csv(&dir.join(format!("task_{i:02}.csv")))?;
                stats
            } else {
                evaluate_policy(actor, i, &self.cfg.arena, self.rewards, self.cfg.eval_episodes, &mut rng)?
            };
            out.push(EvalRecord {
                env_step,
                task: t.name().to_owned(),
                stats,
            });
        }
        Ok(out)
    }

    fn checkpoint(&self, agent: &IuAgent<f64>, env_step: usize) -> Result<(), HarnessError> {
        let mut ck = Checkpoint::new();
        ck.push_text("run.config", &self.cfg.to_string());
        ck.push_u64("run.seed", &[self.seed]);
        ck.push_u64("run.env_step", &[env_step as u64]);
        let names: Vec<&str> = self.tasks.iter().map(|t| t.name()).collect();
        ck.push_text("run.tasks", &names.join("\n"));
        agent.actor.save_into("actor", &mut ck);
        agent.actor_target.save_into("actor_target", &mut ck);
        agent.critic.save_into("critic", &mut ck);
        agent.critic_target.save_into("critic_target", &mut ck);
        // write then rename so a crash never leaves a torn checkpoint
        let tmp = self.dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        ck.save(&tmp)?;
        let dst = self.dir.join(CHECKPOINT_FILE);
        std::fs::rename(&tmp, &dst).map_err(io_err(&dst))
    }
}

/// Trains one seed of `cfg` into `out_dir`, evaluating every head at step 0,
/// at every multiple of `eval_every` and at the final step.
pub fn run_training(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    let (tasks, intentional) = cfg.validate()?;
    let rewards = CompiledTasks::new(&tasks, &cfg.arena)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let cfg_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_string()).map_err(io_err(&cfg_path))?;

    let mut init_rng = rng_stream(seed, STREAM_INIT);
    let mut env_rng = rng_stream(seed, STREAM_ENV);
    let mut noise_rng = rng_stream(seed, STREAM_NOISE);
    let mut replay_rng = rng_stream(seed, STREAM_REPLAY);
    let mut schedule_rng = rng_stream(seed, STREAM_SCHEDULE);

    let obs_dim = cfg.arena.obs_dim();
    let mut agent = IuAgent::<f64>::new(
        obs_dim,
        tasks.clone(),
        cfg.learner,
        cfg.replay_capacity,
        (cfg.actor_width, cfg.critic_width),
        &mut init_rng,
    )?;
    let mut noise = OuNoise::<f64>::new(2, cfg.explore)?;
    let mut schedule = BehaviorSchedule::new(cfg.behavior, intentional, tasks.len())?;

    let ctx = RunContext {
        cfg,
        seed,
        dir: out_dir,
        tasks: &tasks,
        rewards: &rewards,
    };
    let evals_path = out_dir.join(EVALS_FILE);
    let mut evals_out = BufWriter::new(File::create(&evals_path).map_err(io_err(&evals_path))?);
    writeln!(evals_out, "{EVALS_HEADER}").map_err(io_err(&evals_path))?;
    let diag_path = out_dir.join(DIAGNOSTICS_FILE);
    let mut diag_out = BufWriter::new(File::create(&diag_path).map_err(io_err(&diag_path))?);
    writeln!(diag_out, "env_step,critic_loss,actor_objective").map_err(io_err(&diag_path))?;

    let mut all = Vec::new();
    let mut emit = |records: Vec<EvalRecord>, out: &mut BufWriter<File>| -> Result<(), HarnessError> {
        for r in &records {
            writeln!(out, "{}", r.csv_row()).map_err(io_err(&evals_path))?;
        }
        out.flush().map_err(io_err(&evals_path))?;
        all.extend(records);
        Ok(())
    };

    let last = cfg.total_env_steps;
    emit(ctx.evaluate_all(&agent.actor, 0, last == 0)?, &mut evals_out)?;
    ctx.checkpoint(&agent, 0)?;

    let mut state = reset(&cfg.arena, &mut env_rng)?;
    let mut head = schedule.begin_episode(&mut schedule_rng);
    let mut reward_buf = vec![0.0; tasks.len()];
    let (mut loss_sum, mut obj_sum, mut n_updates) = (0.0, 0.0, 0usize);
    for t in 1..=last {
        if state.step_count >= cfg.arena.episode_steps {
            state = reset(&cfg.arena, &mut env_rng)?;
            noise.reset();
            head = schedule.begin_episode(&mut schedule_rng);
        }
        let obs = Array1::from(observe(&state, &cfg.arena));
        let action = behavior_action(&agent.actor, obs.view(), head, &mut noise, &mut noise_rng)?;
        let next = state.step(&cfg.arena, [action[0], action[1]])?;
        rewards.evaluate_into(&next, &mut reward_buf);
        agent.buffer.push(Transition {
            obs,
            action,
            rewards: Array1::from(reward_buf.clone()),
            next_obs: Array1::from(observe(&next, &cfg.arena)),
        })?;
        state = next;

        if agent.buffer.len() >= cfg.warmup {
            for _ in 0..cfg.learner.updates_per_step {
                if let TrainOutcome::Trained(d) = agent.train_step(&mut replay_rng)? {
                    loss_sum += d.critic_loss;
                    obj_sum += d.actor_objective;
                    n_updates += 1;
                }
            }
        }

        if t % cfg.eval_every == 0 || t == last {
            emit(ctx.evaluate_all(&agent.actor, t, t == last)?, &mut evals_out)?;
            ctx.checkpoint(&agent, t)?;
            if n_updates > 0 {
                let n = n_updates as f64;
                writeln!(diag_out, "{t},{},{}", loss_sum / n, obj_sum / n).map_err(io_err(&diag_path))?;
                diag_out.flush().map_err(io_err(&diag_path))?;
            }
            (loss_sum, obj_sum, n_updates) = (0.0, 0.0, 0);
        }
    }
    Ok(RunSummary {
        run_dir: out_dir.to_path_buf(),
        evals: all,
    })
}

/// Networks and metadata restored from a run checkpoint.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub env_step: usize,
    pub tasks: Vec<TaskSpec>,
    pub actor: ActorNet<f64>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedRun, HarnessError> {
    let ck = Checkpoint::load(path)?;
    let config = ExperimentConfig::parse(&ck.get_text("run.config")?)?;
    let tasks = config.resolve_tasks()?;
    let stored = ck.get_text("run.tasks")?;
    let names: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
    if stored != names.join("\n") {
        return Err(HarnessError::Records(vec![format!(
            "{}: stored task list does not match the embedded config",
            path.display()
        )]));
    }
    let actor = ActorNet::load_from("actor", &ck)?;
    if actor.n_tasks() != tasks.len() {
        return Err(HarnessError::Records(vec![format!(
            "{}: actor has {} heads for {} tasks",
            path.display(),
            actor.n_tasks(),
            tasks.len()
        )]));
    }
    let scalar = |name: &str| -> Result<u64, HarnessError> {
        ck.get_u64(name)?
            .first()
            .copied()
            .ok_or_else(|| HarnessError::Records(vec![format!("{}: empty `{name}`", path.display())]))
    };
    Ok(LoadedRun {
        seed: scalar("run.seed")?,
        env_step: scalar("run.env_step")? as usize,
        config,
        tasks,
        actor,
    })
}

/// Reads `evals.csv` back, checking the header, numeric fields and bounds.
pub fn read_evals(path: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Records(vec![format!("{shown}: {e}")]))?;
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut problems = Vec::new();
    match rd.headers() {
        Ok(h) if h.iter().collect::<Vec<_>>().join(",") == EVALS_HEADER => {}
        Ok(h) => problems.push(format!("{shown}: unexpected header `{}`", h.iter().collect::<Vec<_>>().join(","))),
        Err(e) => problems.push(format!("{shown}: {e}")),
    }
    let mut out = Vec::new();
    if problems.is_empty() {
        for (i, row) in rd.records().enumerate() {
            let line = i + 2;
            let row = match row {
                Ok(r) if r.len() == 5 => r,
                Ok(r) => {
                    problems.push(format!("{shown}:{line}: expected 5 fields, found {}", r.len()));
                    continue;
                }
                Err(e) => {
                    problems.push(format!("{shown}:{line}: {e}"));
                    continue;
                }
            };
            let step = row[0].parse::<usize>();
            let nums: Result<Vec<f64>, _> = (2..5).map(|k| row[k].parse::<f64>()).collect();
            match (step, nums) {
                (Ok(env_step), Ok(v)) => {
                    let stats = EvalStats {
                        mean: v[0],
                        min: v[1],
                        max: v[2],
                    };
                    let ordered = stats.min <= stats.mean && stats.mean <= stats.max;
                    let bounded = v.iter().all(|x| (0.0..=1.0).contains(x));
                    if !ordered || !bounded {
                        problems.push(format!("{shown}:{line}: returns out of order or outside [0, 1]"));
                    }
                    out.push(EvalRecord {
                        env_step,
                        task: row[1].to_owned(),
                        stats,
                    });
                }
                _ => problems.push(format!("{shown}:{line}: non-numeric field")),
            }
        }
    }
    if out.is_empty() && problems.is_empty() {
        problems.push(format!("{shown}: no records"));
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(HarnessError::Records(problems))
    }
}
