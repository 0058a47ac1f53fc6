//! Multi-task deterministic policy gradient updates.
//!
//! Every task `i` has its own critic output `Q_i` and actor head `mu_i`. From a
//! replayed batch the learner forms the one-step TD errors
//!
//! ```text
//! delta[j][i] = r[j][i] + gamma * Q'_i(s'_j, mu'_i(s'_j)) - Q_i(s_j, a_j)
//! ```
//!
//! using the target networks for the bootstrap term and the stored action
//! `a_j` for every task. The critic descends `sum_i 0.5 * delta^2`, the actor
//! ascends `sum_i Q_i(s_j, mu_i(s_j))`; both sums over the batch are taken as
//! means so the step size does not depend on the batch size.

use ndarray::Array2;
use rand::Rng;

use crate::nets::{ActorNet, CriticCache, CriticNet, NetShape, TaskActions};
use crate::nn::NnError;
use crate::replay::{Batch, ReplayBuffer, ReplayError};
use crate::reward::TaskSpec;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error("reward vector has {found} components but the agent has {expected} tasks")]
    TaskCount { expected: usize, found: usize },
    #[error("non-finite {0}; update aborted")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Polyak rate for the target networks; `1.0` is a hard copy.
    pub tau: f64,
    pub batch: usize,
    /// Gradient steps per environment step.
    pub updates_per_step: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            tau: 1e-3,
            batch: 64,
            updates_per_step: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |msg: String| Err(LearnerError::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics<S> {
    /// Mean of `0.5 * delta^2` over batch and tasks, before the critic step.
    pub critic_loss: S,
    /// Batch mean of `sum_i Q_i(s, mu_i(s))`, before the actor step.
    pub actor_objective: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome<S> {
    Trained(Diagnostics<S>),
    /// Not enough transitions buffered; nothing was changed.
    Skipped { buffered: usize, needed: usize },
}

/// Actor, critic, their target copies, the replay buffer and the task list.
#[derive(Debug, Clone)]
pub struct IuAgent<S: Real> {
    pub actor: ActorNet<S>,
    pub actor_target: ActorNet<S>,
    pub critic: CriticNet<S>,
    pub critic_target: CriticNet<S>,
    pub buffer: ReplayBuffer<S>,
    config: LearnerConfig,
    tasks: Vec<TaskSpec>,
}

impl<S: Real> IuAgent<S> {
    /// Fresh agent with randomly initialised networks of the given widths.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        tasks: Vec<TaskSpec>,
        config: LearnerConfig,
        replay_capacity: usize,
        widths: (usize, usize),
        rng: &mut R,
    ) -> Result<Self, LearnerError> {
        let t = tasks.len();
        let actor = ActorNet::new(NetShape::actor(obs_dim, t).with_width(widths.0), rng)?;
        let critic = CriticNet::new(NetShape::critic(obs_dim, t).with_width(widths.1), rng)?;
        let buffer = ReplayBuffer::with_dims(replay_capacity, obs_dim, actor.shape().action_dim, t)?;
        Self::from_parts(actor, critic, buffer, config, tasks)
    }

    /// Assembles an agent whose target networks start as copies of the online ones.
    pub fn from_parts(
        actor: ActorNet<S>,
        critic: CriticNet<S>,
        buffer: ReplayBuffer<S>,
        config: LearnerConfig,
        tasks: Vec<TaskSpec>,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        let t = tasks.len();
        for found in [actor.n_tasks(), critic.n_tasks()] {
            if found != t {
                return Err(LearnerError::TaskCount { expected: t, found });
            }
        }
        if actor.shape().obs_dim != critic.shape().obs_dim || actor.shape().action_dim != critic.shape().action_dim {
            return Err(LearnerError::Config("actor and critic disagree on observation/action size".into()));
        }
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            buffer,
            config,
            tasks,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn check_batch(&self, batch: &Batch<S>) -> Result<(), LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        if batch.rewards.ncols() != self.n_tasks() {
            return Err(LearnerError::TaskCount {
                expected: self.n_tasks(),
                found: batch.rewards.ncols(),
            });
        }
        Ok(())
    }

    fn td_errors_with_cache(&self, batch: &Batch<S>) -> Result<(Array2<S>, CriticCache<S>), LearnerError> {
        self.check_batch(batch)?;
        let gamma = S::of(self.config.gamma);
        let next_actions = self.actor_target.forward_values(batch.next_obs.view())?;
        let q_next = self
            .critic_target
            .q_values(batch.next_obs.view(), TaskActions::PerTask(&next_actions))?;
        let (q, cache) = self
            .critic
            .forward_batch(batch.obs.view(), TaskActions::Shared(batch.actions.view()))?;
        let mut delta = q_next * gamma;
        delta += &batch.rewards;
        delta -= &q;
        Ok((delta, cache))
    }

    /// `batch x n_tasks` matrix of one-step TD errors.
    pub fn td_errors(&self, batch: &Batch<S>) -> Result<Array2<S>, LearnerError> {
        Ok(self.td_errors_with_cache(batch)?.0)
    }

    /// Accumulates the critic gradient of `(1/B) sum_j sum_i 0.5 * delta^2`
    /// (targets held fixed) without stepping. Returns the TD errors.
    pub fn accumulate_critic_grads(&mut self, batch: &Batch<S>) -> Result<Array2<S>, LearnerError> {
        let (delta, cache) = self.td_errors_with_cache(batch)?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(LearnerError::NonFinite("TD error"));
        }
        let scale = -S::one() / S::of(batch.len() as f64);
        let dq = &delta * scale;
        self.critic.backward(&cache, dq.view())?;
        Ok(delta)
    }

    /// One Adam step on the critic. Returns the mean of `0.5 * delta^2`.
    pub fn critic_update(&mut self, batch: &Batch<S>) -> Result<S, LearnerError> {
        let delta = match self.accumulate_critic_grads(batch) {
            Ok(d) => d,
            Err(e) => {
                self.critic.params_mut().zero_grads();
                return Err(e);
            }
        };
        let c = &self.config;
        self.critic
            .params_mut()
            .adam_step(S::of(c.lr_critic), S::of(c.adam_beta1), S::of(c.adam_beta2), S::of(c.adam_eps))
            .map_err(|_| LearnerError::NonFinite("critic gradient"))?;
        let half = S::of(0.5);
        Ok(delta.mapv(|d| half * d * d).mean().unwrap_or_else(S::zero))
    }

    /// Accumulates the actor gradient of `-(1/B) sum_j sum_i Q_i(s_j, mu_i(s_j))`
    /// without stepping. The critic's own gradients are not touched.
    /// Returns the batch mean of `sum_i Q_i`.
    pub fn accumulate_actor_grads(&mut self, batch: &Batch<S>) -> Result<S, LearnerError> {
        self.check_batch(batch)?;
        let b = S::of(batch.len() as f64);
        let (actions, actor_cache) = self.actor.forward_batch(batch.obs.view())?;
        let (q, critic_cache) = self
            .critic
            .forward_batch(batch.obs.view(), TaskActions::PerTask(&actions))?;
        let dq = Array2::from_elem(q.dim(), -S::one() / b);
        let head_grads = self.critic.action_grads(&critic_cache, dq.view())?;
        self.actor.backward(&actor_cache, &head_grads)?;
        Ok(q.sum() / b)
    }

    /// One Adam ascent step on the actor along the summed policy gradient.
    pub fn actor_update(&mut self, batch: &Batch<S>) -> Result<S, LearnerError> {
        let objective = match self.accumulate_actor_grads(batch) {
            Ok(o) => o,
            Err(e) => {
                self.actor.params_mut().zero_grads();
                return Err(e);
            }
        };
        let c = &self.config;
        self.actor
            .params_mut()
            .adam_step(S::of(c.lr_actor), S::of(c.adam_beta1), S::of(c.adam_beta2), S::of(c.adam_eps))
            .map_err(|_| LearnerError::NonFinite("actor gradient"))?;
        Ok(objective)
    }

    /// Moves both target networks a fraction `tau` towards the online ones.
    pub fn blend_targets(&mut self) -> Result<(), LearnerError> {
        let tau = S::of(self.config.tau);
        self.actor_target.params_mut().blend_from(self.actor.params(), tau)?;
        self.critic_target.params_mut().blend_from(self.critic.params(), tau)?;
        Ok(())
    }

    /// Sample a batch, update critic then actor, then blend the targets.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TrainOutcome<S>, LearnerError> {
        let needed = self.config.batch;
        if self.buffer.len() < needed {
            return Ok(TrainOutcome::Skipped {
                buffered: self.buffer.len(),
                needed,
            });
        }
        let batch = self.buffer.sample_batch(needed, rng)?;
        let critic_loss = self.critic_update(&batch)?;
        let actor_objective = self.actor_update(&batch)?;
        self.blend_targets()?;
        Ok(TrainOutcome::Trained(Diagnostics {
            critic_loss,
            actor_objective,
        }))
    }
}
