//! Flat `key = value` experiment configuration.
//!
//! `#` starts a comment. Unknown keys are errors. Keys and defaults:
//!
//! ```text
//! tasks.suite            suite18 | suite36 | suite6 | suite7 | suite43 | custom   (suite18)
//! tasks.custom           expressions separated by `;` (custom suite only)
//! tasks.file             task file, one expression per line (custom suite only)
//! tasks.epsilon          near/far threshold in metres                            (0.2)
//! behavior.mode          fixed | random_episode                                  (fixed)
//! behavior.intentional_task   head driving behaviour   (near(red,blue) or gather_to_pad)
//! explore.theta / explore.sigma / explore.dt                          (0.15 / 0.2 / 1)
//! learner.gamma / learner.lr_actor / learner.lr_critic / learner.tau
//! learner.batch / learner.updates_per_step / learner.warmup
//! learner.adam_beta1 / learner.adam_beta2 / learner.adam_eps
//! replay.capacity                                                             (200000)
//! net.actor_width / net.critic_width                                       (200 / 400)
//! arena.side / arena.object_diameter / arena.dt / arena.max_speed / arena.episode_steps
//! arena.blocks           comma-separated colours            (red,blue plus green if mentioned)
//! arena.pad              true | false                       (whether the tasks mention it)
//! run.total_env_steps / run.eval_every / run.eval_episodes      (300000 / 5000 / 10)
//! run.seeds              comma-separated                                     (0,1,2,3,4)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::explore::{BehaviorMode, OuConfig};
use crate::learner::LearnerConfig;
use crate::playroom::{ArenaConfig, Color};
use crate::replay::DEFAULT_CAPACITY;
use crate::reward::{self, load_task_file, resolve_task, Atom, Suite, TaskSpec, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    Suite(Suite),
    Custom(Vec<String>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arena: ArenaConfig,
    pub learner: LearnerConfig,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    pub explore: OuConfig,
    pub behavior: BehaviorMode,
    pub tasks: TaskSource,
    pub epsilon: f64,
    pub intentional: String,
    pub total_env_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub actor_width: usize,
    pub critic_width: usize,
    pub replay_capacity: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_suite(Suite::Suite18)
    }
}

fn arena_for(atoms: impl IntoIterator<Item = Atom>) -> ArenaConfig {
    let atoms: Vec<Atom> = atoms.into_iter().collect();
    // red and blue are always present
    let mut colors = vec![Color::Red, Color::Blue];
    if atoms.contains(&Atom::Green) {
        colors.push(Color::Green);
    }
    let mut arena = ArenaConfig {
        colors,
        ..ArenaConfig::default()
    };
    if atoms.contains(&Atom::Pad) {
        arena.pad = Some(arena.corner_pad());
    }
    arena
}

impl ExperimentConfig {
    pub fn for_suite(suite: Suite) -> Self {
        Self {
            arena: suite.arena(),
            learner: LearnerConfig::default(),
            warmup: 1000,
            explore: OuConfig::default(),
            behavior: BehaviorMode::Fixed,
            tasks: TaskSource::Suite(suite),
            epsilon: DEFAULT_EPSILON,
            intentional: suite.default_intentional().to_owned(),
            total_env_steps: 300_000,
            eval_every: 5000,
            eval_episodes: 10,
            seeds: vec![0, 1, 2, 3, 4],
            actor_width: 200,
            critic_width: 400,
            replay_capacity: DEFAULT_CAPACITY,
        }
    }

    /// Single custom task set in the red/blue arena, plus green and the pad if mentioned.
    pub fn for_tasks(tasks: &[&str]) -> Result<Self, HarnessError> {
        let specs = tasks
            .iter()
            .map(|t| resolve_task(t, DEFAULT_EPSILON))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cfg = Self::for_suite(Suite::Suite18);
        cfg.arena = arena_for(specs.iter().flat_map(|t| t.expr().atoms()));
        cfg.intentional = tasks.first().map(|t| t.to_string()).unwrap_or_default();
        cfg.tasks = TaskSource::Custom(tasks.iter().map(|t| t.to_string()).collect());
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let TaskSource::File(f) = &mut cfg.tasks {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut kv: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim().to_owned();
            if kv.insert(k.clone(), (v.trim().to_owned(), i + 1)).is_some() {
                return Err(HarnessError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        let mut take = |key: &str| kv.remove(key);

        let suite = take("tasks.suite");
        let custom = take("tasks.custom");
        let file = take("tasks.file");
        let mut cfg = match suite.as_ref().map(|(v, _)| v.as_str()) {
            None if custom.is_none() && file.is_none() => Self::for_suite(Suite::Suite18),
            Some("custom") | None => {
                let source = match (custom, file) {
                    (Some((c, _)), None) => TaskSource::Custom(
                        c.split(';').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
                    ),
                    (None, Some((f, _))) => TaskSource::File(PathBuf::from(f)),
                    _ => {
                        return Err(HarnessError::Config(
                            "custom suite needs exactly one of tasks.custom and tasks.file".into(),
                        ))
                    }
                };
                let mut cfg = Self::for_suite(Suite::Suite18);
                cfg.tasks = source;
                cfg.intentional = String::new();
                cfg
            }
            Some(name) => {
                if custom.is_some() || file.is_some() {
                    return Err(HarnessError::Config(
                        "tasks.custom and tasks.file require tasks.suite = custom".into(),
                    ));
                }
                Self::for_suite(name.parse::<Suite>()?)
            }
        };

        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some((v, line)) = take($key) {
                    $field = v.parse().map_err(|_| {
                        HarnessError::Config(format!("line {line}: bad value `{v}` for {}", $key))
                    })?;
                }
            };
        }
        set!("tasks.epsilon", cfg.epsilon);
        if let Some((v, _)) = take("behavior.intentional_task") {
            cfg.intentional = v;
        }
        if let Some((v, line)) = take("behavior.mode") {
            cfg.behavior = match v.as_str() {
                "fixed" => BehaviorMode::Fixed,
                "random_episode" => BehaviorMode::RandomEpisode,
                _ => return Err(HarnessError::Config(format!("line {line}: unknown behavior.mode `{v}`"))),
            };
        }
        set!("explore.theta", cfg.explore.theta);
        set!("explore.sigma", cfg.explore.sigma);
        set!("explore.dt", cfg.explore.dt);
        set!("learner.gamma", cfg.learner.gamma);
        set!("learner.lr_actor", cfg.learner.lr_actor);
        set!("learner.lr_critic", cfg.learner.lr_critic);
        set!("learner.tau", cfg.learner.tau);
        set!("learner.batch", cfg.learner.batch);
        set!("learner.updates_per_step", cfg.learner.updates_per_step);
        set!("learner.adam_beta1", cfg.learner.adam_beta1);
        set!("learner.adam_beta2", cfg.learner.adam_beta2);
        set!("learner.adam_eps", cfg.learner.adam_eps);
        set!("learner.warmup", cfg.warmup);
        set!("replay.capacity", cfg.replay_capacity);
        set!("net.actor_width", cfg.actor_width);
        set!("net.critic_width", cfg.critic_width);
        set!("run.total_env_steps", cfg.total_env_steps);
        set!("run.eval_every", cfg.eval_every);
        set!("run.eval_episodes", cfg.eval_episodes);
        if let Some((v, line)) = take("run.seeds") {
            cfg.seeds = v
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|_| HarnessError::Config(format!("line {line}: bad seed list `{v}`")))?;
        }

        // the arena defaults to the objects the tasks mention
        if !matches!(cfg.tasks, TaskSource::Suite(_)) {
            let tasks = cfg.resolve_tasks()?;
            cfg.arena = arena_for(tasks.iter().flat_map(|t| t.expr().atoms()));
            if cfg.intentional.is_empty() {
                cfg.intentional = tasks[0].name().to_owned();
            }
        }
        let mut pad = cfg.arena.pad.is_some();
        set!("arena.side", cfg.arena.side);
        set!("arena.object_diameter", cfg.arena.object_diameter);
        set!("arena.dt", cfg.arena.dt);
        set!("arena.max_speed", cfg.arena.max_speed);
        set!("arena.episode_steps", cfg.arena.episode_steps);
        set!("arena.pad", pad);
        if let Some((v, line)) = take("arena.blocks") {
            cfg.arena.colors = v
                .split(',')
                .map(|s| s.trim().parse::<Color>())
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Config(format!("line {line}: {e}")))?;
        }
        cfg.arena.pad = pad.then(|| cfg.arena.corner_pad());

        if let Some((k, (_, line))) = kv.into_iter().next() {
            return Err(HarnessError::Config(format!("line {line}: unknown key `{k}`")));
        }
        Ok(cfg)
    }

    /// Task list in head order.
    pub fn resolve_tasks(&self) -> Result<Vec<TaskSpec>, HarnessError> {
        let tasks = match &self.tasks {
            TaskSource::Suite(s) => s.tasks(self.epsilon)?,
            TaskSource::Custom(list) => {
                let text = list.join("\n");
                reward::suite::parse_task_list(&text, self.epsilon)
                    .map_err(|msg| HarnessError::Config(format!("tasks.custom: {msg}")))?
            }
            TaskSource::File(p) => load_task_file(p, self.epsilon)?,
        };
        Ok(tasks)
    }

    /// Head index of the intentional task.
    pub fn intentional_index(&self, tasks: &[TaskSpec]) -> Result<usize, HarnessError> {
        let want = resolve_task(&self.intentional, self.epsilon)?;
        tasks
            .iter()
            .position(|t| t.name() == want.name())
            .ok_or_else(|| HarnessError::Config(format!("intentional task {} is not in the task list", want.name())))
    }

    /// Checks everything that can be checked before stepping. Returns the
    /// resolved tasks and the intentional head.
    pub fn validate(&self) -> Result<(Vec<TaskSpec>, usize), HarnessError> {
        self.arena.validate()?;
        self.learner.validate()?;
        crate::explore::OuNoise::<f64>::new(2, self.explore)?;
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.eval_episodes == 0 {
            return bad("run.eval_episodes must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("run.eval_every must be positive");
        }
        if self.actor_width == 0 || self.critic_width == 0 {
            return bad("network widths must be positive");
        }
        if self.replay_capacity < self.learner.batch {
            return bad("replay.capacity must hold at least one batch");
        }
        if self.seeds.is_empty() {
            return bad("run.seeds must not be empty");
        }
        let tasks = self.resolve_tasks()?;
        for t in &tasks {
            t.check_resolvable(&self.arena)?;
        }
        let i = self.intentional_index(&tasks)?;
        Ok((tasks, i))
    }
}

impl fmt::Display for ExperimentConfig {
    /// Every key, in a form [`ExperimentConfig::parse`] reads back.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tasks {
            TaskSource::Suite(s) => writeln!(f, "tasks.suite = {s}")?,
            TaskSource::Custom(list) => {
                writeln!(f, "tasks.suite = custom")?;
                writeln!(f, "tasks.custom = {}", list.join("; "))?;
            }
            TaskSource::File(p) => {
                writeln!(f, "tasks.suite = custom")?;
                writeln!(f, "tasks.file = {}", p.display())?;
            }
        }
        writeln!(f, "tasks.epsilon = {}", self.epsilon)?;
        let mode = match self.behavior {
            BehaviorMode::Fixed => "fixed",
            BehaviorMode::RandomEpisode => "random_episode",
        };
        writeln!(f, "behavior.mode = {mode}")?;
        writeln!(f, "behavior.intentional_task = {}", self.intentional)?;
        writeln!(f, "explore.theta = {}", self.explore.theta)?;
        writeln!(f, "explore.sigma = {}", self.explore.sigma)?;
        writeln!(f, "explore.dt = {}", self.explore.dt)?;
        let l = &self.learner;
        writeln!(f, "learner.gamma = {}", l.gamma)?;
        writeln!(f, "learner.lr_actor = {}", l.lr_actor)?;
        writeln!(f, "learner.lr_critic = {}", l.lr_critic)?;
        writeln!(f, "learner.tau = {}", l.tau)?;
        writeln!(f, "learner.batch = {}", l.batch)?;
        writeln!(f, "learner.updates_per_step = {}", l.updates_per_step)?;
        writeln!(f, "learner.adam_beta1 = {}", l.adam_beta1)?;
        writeln!(f, "learner.adam_beta2 = {}", l.adam_beta2)?;
        writeln!(f, "learner.adam_eps = {}", l.adam_eps)?;
        writeln!(f, "learner.warmup = {}", self.warmup)?;
        writeln!(f, "replay.capacity = {}", self.replay_capacity)?;
        writeln!(f, "net.actor_width = {}", self.actor_width)?;
        writeln!(f, "net.critic_width = {}", self.critic_width)?;
        let a = &self.arena;
        writeln!(f, "arena.side = {}", a.side)?;
        writeln!(f, "arena.object_diameter = {}", a.object_diameter)?;
        writeln!(f, "arena.dt = {}", a.dt)?;
        writeln!(f, "arena.max_speed = {}", a.max_speed)?;
        writeln!(f, "arena.episode_steps = {}", a.episode_steps)?;
        let colors: Vec<&str> = a.colors.iter().map(|c| c.name()).collect();
        writeln!(f, "arena.blocks = {}", colors.join(","))?;
        writeln!(f, "arena.pad = {}", a.pad.is_some())?;
        writeln!(f, "run.total_env_steps = {}", self.total_env_steps)?;
        writeln!(f, "run.eval_every = {}", self.eval_every)?;
        writeln!(f, "run.eval_episodes = {}", self.eval_episodes)?;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(f, "run.seeds = {}", seeds.join(","))
    }
}
