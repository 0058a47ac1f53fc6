//! Multi-head actor and critic networks.
//!
//! The actor runs every observation through a two-layer tanh trunk shared by
//! all tasks, then through one tanh head per task producing that task's
//! action. The critic embeds the observation with its own two-layer tanh
//! trunk; each task embeds the action with a private tanh layer of the same
//! width, adds it pointwise to the trunk output, squashes the sum with tanh
//! and reads out `Q` through a private linear layer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::nn::checkpoint::Checkpoint;
use crate::nn::{check_shape, Dense, ForwardCache, Init, LayerSpec, Mlp, NnError, ParamStore};
use crate::scalar::{tanh_inplace, Real};

pub const ACTION_DIM: usize = 2;
const FINAL_INIT: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub obs_dim: usize,
    pub n_tasks: usize,
    pub action_dim: usize,
    /// Width of every hidden layer (200 for the actor, 400 for the critic by default).
    pub width: usize,
}

impl NetShape {
    pub fn actor(obs_dim: usize, n_tasks: usize) -> Self {
        Self {
            obs_dim,
            n_tasks,
            action_dim: ACTION_DIM,
            width: 200,
        }
    }

    pub fn critic(obs_dim: usize, n_tasks: usize) -> Self {
        Self {
            width: 400,
            ..Self::actor(obs_dim, n_tasks)
        }
    }

    pub fn with_width(self, width: usize) -> Self {
        Self { width, ..self }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.obs_dim == 0 || self.n_tasks == 0 || self.action_dim == 0 || self.width == 0 {
            return Err(NnError::InvalidSpec(format!("all network dims must be positive: {self:?}")));
        }
        Ok(())
    }

    fn save_into(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.push_u64(
            &format!("{prefix}.shape"),
            &[self.obs_dim, self.n_tasks, self.action_dim, self.width].map(|x| x as u64),
        );
    }

    fn load_from(prefix: &str, ckpt: &Checkpoint) -> Result<Self, NnError> {
        let v = ckpt.get_u64(&format!("{prefix}.shape"))?;
        check_shape("network shape record", &[4], &[v.len()])?;
        Ok(Self {
            obs_dim: v[0] as usize,
            n_tasks: v[1] as usize,
            action_dim: v[2] as usize,
            width: v[3] as usize,
        })
    }
}

fn check_task(task: usize, n_tasks: usize) -> Result<(), NnError> {
    if task < n_tasks {
        Ok(())
    } else {
        Err(NnError::Shape {
            context: "task index",
            expected: vec![n_tasks],
            found: vec![task],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet<S> {
    shape: NetShape,
    params: ParamStore<S>,
    trunk: Mlp,
    heads: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct ActorCache<S> {
    trunk: ForwardCache<S>,
    heads: Vec<ForwardCache<S>>,
}

impl<S: Real> ActorNet<S> {
    fn layout(shape: &NetShape) -> Result<(Vec<(LayerSpec, Init)>, Mlp, Vec<Mlp>), NnError> {
        shape.validate()?;
        let w = shape.width;
        let mut layers = vec![
            (LayerSpec::tanh(shape.obs_dim, w), Init::FanIn),
            (LayerSpec::tanh(w, w), Init::FanIn),
        ];
        let trunk = Mlp::new(0, layers.iter().map(|l| l.0).collect())?;
        let mut heads = Vec::with_capacity(shape.n_tasks);
        for i in 0..shape.n_tasks {
            let spec = LayerSpec::tanh(w, shape.action_dim);
            heads.push(Mlp::new(2 + i, vec![spec])?);
            layers.push((spec, Init::Uniform(FINAL_INIT)));
        }
        Ok((layers, trunk, heads))
    }

    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self, NnError> {
        let (layers, trunk, heads) = Self::layout(&shape)?;
        Ok(Self {
            params: ParamStore::init(&layers, rng)?,
            shape,
            trunk,
            heads,
        })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(shape: NetShape) -> Result<Self, NnError> {
        let (layers, trunk, heads) = Self::layout(&shape)?;
        Ok(Self {
            params: zero_store(&layers),
            shape,
            trunk,
            heads,
        })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn n_tasks(&self) -> usize {
        self.shape.n_tasks
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    /// Index into [`ParamStore::layers`] of task `i`'s head layer.
    pub fn head_layer(&self, task: usize) -> usize {
        self.heads[task].layer_range().start
    }

    pub fn trunk_layers(&self) -> std::ops::Range<usize> {
        self.trunk.layer_range()
    }

    /// Every head's action for one observation, one row per task.
    pub fn forward(&self, obs: ArrayView1<S>) -> Result<Array2<S>, NnError> {
        let (outs, _) = self.forward_batch(obs.insert_axis(Axis(0)))?;
        let mut actions = Array2::zeros((self.shape.n_tasks, self.shape.action_dim));
        for (i, out) in outs.iter().enumerate() {
            actions.row_mut(i).assign(&out.row(0));
        }
        Ok(actions)
    }

    /// Action of a single head for one observation.
    pub fn forward_head(&self, obs: ArrayView1<S>, task: usize) -> Result<Array1<S>, NnError> {
        let out = self.forward_head_batch(obs.insert_axis(Axis(0)), task)?;
        Ok(out.row(0).to_owned())
    }

    /// Actions of head `task` for a batch of observations.
    pub fn forward_head_batch(&self, obs: ArrayView2<S>, task: usize) -> Result<Array2<S>, NnError> {
        check_task(task, self.shape.n_tasks)?;
        let h = self.trunk.forward_values(&self.params, obs)?;
        self.heads[task].forward_values(&self.params, h.view())
    }

    /// Every head's actions for a batch, keeping nothing for a backward pass.
    pub fn forward_values(&self, obs: ArrayView2<S>) -> Result<Vec<Array2<S>>, NnError> {
        let h = self.trunk.forward_values(&self.params, obs)?;
        self.heads.iter().map(|head| head.forward_values(&self.params, h.view())).collect()
    }

    /// Batched forward through every head; returns one `batch x action_dim`
    /// matrix per task.
    pub fn forward_batch(&self, obs: ArrayView2<S>) -> Result<(Vec<Array2<S>>, ActorCache<S>), NnError> {
        let (h, trunk) = self.trunk.forward(&self.params, obs)?;
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (a, c) = head.forward(&self.params, h.view())?;
            outs.push(a);
            heads.push(c);
        }
        Ok((outs, ActorCache { trunk, heads }))
    }

    /// Accumulates parameter gradients of `sum_i <head_grads[i], mu_i(obs)>`.
    pub fn backward(&mut self, cache: &ActorCache<S>, head_grads: &[Array2<S>]) -> Result<(), NnError> {
        check_shape("actor head gradients", &[self.heads.len()], &[head_grads.len()])?;
        let mut trunk_grad: Option<Array2<S>> = None;
        for ((head, c), g) in self.heads.iter().zip(&cache.heads).zip(head_grads) {
            let gh = head.backward(&mut self.params, c, g.view())?;
            match trunk_grad.as_mut() {
                Some(acc) => *acc += &gh,
                None => trunk_grad = Some(gh),
            }
        }
        let trunk_grad = trunk_grad.expect("at least one head");
        self.trunk.backward(&mut self.params, &cache.trunk, trunk_grad.view())?;
        Ok(())
    }

    pub fn save_into(&self, prefix: &str, ckpt: &mut Checkpoint) {
        self.shape.save_into(prefix, ckpt);
        self.params.save_into(prefix, ckpt);
    }

    pub fn load_from(prefix: &str, ckpt: &Checkpoint) -> Result<Self, NnError> {
        let shape = NetShape::load_from(prefix, ckpt)?;
        let (layers, trunk, heads) = Self::layout(&shape)?;
        let params = ParamStore::load_from(prefix, ckpt)?;
        check_params(&layers, &params)?;
        Ok(Self {
            shape,
            params,
            trunk,
            heads,
        })
    }
}

fn zero_store<S: Real>(layers: &[(LayerSpec, Init)]) -> ParamStore<S> {
    ParamStore::from_layers(
        layers
            .iter()
            .map(|(spec, _)| Dense::zeros(spec.in_dim, spec.out_dim))
            .collect(),
    )
}

fn check_params<S: Real>(layers: &[(LayerSpec, Init)], params: &ParamStore<S>) -> Result<(), NnError> {
    check_shape("checkpoint layer count", &[layers.len()], &[params.num_layers()])?;
    for ((spec, _), l) in layers.iter().zip(params.layers()) {
        check_shape(
            "checkpoint layer",
            &[spec.out_dim, spec.in_dim],
            &[l.out_dim(), l.in_dim()],
        )?;
    }
    Ok(())
}

/// Actions fed to the critic's per-task branches.
#[derive(Debug, Clone, Copy)]
pub enum TaskActions<'a, S> {
    /// The same action batch for every task (replayed actions).
    Shared(ArrayView2<'a, S>),
    /// One action batch per task (each head's own policy output).
    PerTask(&'a [Array2<S>]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet<S> {
    shape: NetShape,
    params: ParamStore<S>,
    trunk: Mlp,
    branches: Vec<Mlp>,
    heads: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct CriticCache<S> {
    tasks: Vec<usize>,
    trunk: ForwardCache<S>,
    junctions: Vec<Junction<S>>,
}

/// Per-task activations of one batch.
#[derive(Debug, Clone)]
struct Junction<S> {
    actions: Array2<S>,
    /// tanh of the action branch
    branch: Array2<S>,
    /// tanh of trunk plus branch; input of the linear head
    joint: Array2<S>,
}

impl<S> CriticCache<S> {
    pub fn tasks(&self) -> &[usize] {
        &self.tasks
    }
}

impl<S: Real> CriticNet<S> {
    fn layout(shape: &NetShape) -> Result<(Vec<(LayerSpec, Init)>, Mlp, Vec<Mlp>, Vec<Mlp>), NnError> {
        shape.validate()?;
        let (w, t) = (shape.width, shape.n_tasks);
        let mut layers = vec![
            (LayerSpec::tanh(shape.obs_dim, w), Init::FanIn),
            (LayerSpec::tanh(w, w), Init::FanIn),
        ];
        let trunk = Mlp::new(0, layers.iter().map(|l| l.0).collect())?;
        let mut branches = Vec::with_capacity(t);
        for i in 0..t {
            let spec = LayerSpec::tanh(shape.action_dim, w);
            branches.push(Mlp::new(2 + i, vec![spec])?);
            layers.push((spec, Init::FanIn));
        }
        let mut heads = Vec::with_capacity(t);
        for i in 0..t {
            let spec = LayerSpec::linear(w, 1);
            heads.push(Mlp::new(2 + t + i, vec![spec])?);
            layers.push((spec, Init::Uniform(FINAL_INIT)));
        }
        Ok((layers, trunk, branches, heads))
    }

    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self, NnError> {
        let (layers, trunk, branches, heads) = Self::layout(&shape)?;
        Ok(Self {
            params: ParamStore::init(&layers, rng)?,
            shape,
            trunk,
            branches,
            heads,
        })
    }

    pub fn zeros(shape: NetShape) -> Result<Self, NnError> {
        let (layers, trunk, branches, heads) = Self::layout(&shape)?;
        Ok(Self {
            params: zero_store(&layers),
            shape,
            trunk,
            branches,
            heads,
        })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn n_tasks(&self) -> usize {
        self.shape.n_tasks
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn branch_layer(&self, task: usize) -> usize {
        self.branches[task].layer_range().start
    }

    pub fn head_layer(&self, task: usize) -> usize {
        self.heads[task].layer_range().start
    }

    pub fn trunk_layers(&self) -> std::ops::Range<usize> {
        self.trunk.layer_range()
    }

    /// `Q_task(obs, action)` for a single sample.
    pub fn forward(&self, obs: ArrayView1<S>, action: ArrayView1<S>, task: usize) -> Result<S, NnError> {
        check_task(task, self.shape.n_tasks)?;
        let (q, _) = self.forward_tasks(
            obs.insert_axis(Axis(0)),
            TaskActions::Shared(action.insert_axis(Axis(0))),
            &[task],
        )?;
        Ok(q[[0, 0]])
    }

    /// Every task's `Q_i(obs, actions[i])` with a single trunk evaluation.
    pub fn forward_all(&self, obs: ArrayView1<S>, actions: ArrayView2<S>) -> Result<Array1<S>, NnError> {
        check_shape(
            "per-task actions",
            &[self.shape.n_tasks, self.shape.action_dim],
            actions.shape(),
        )?;
        let per_task: Vec<Array2<S>> = actions
            .outer_iter()
            .map(|a| a.insert_axis(Axis(0)).to_owned())
            .collect();
        let (q, _) = self.forward_batch(obs.insert_axis(Axis(0)), TaskActions::PerTask(&per_task))?;
        Ok(q.row(0).to_owned())
    }

    /// Batched `Q` for all tasks; returns a `batch x n_tasks` matrix.
    pub fn forward_batch(
        &self,
        obs: ArrayView2<S>,
        actions: TaskActions<'_, S>,
    ) -> Result<(Array2<S>, CriticCache<S>), NnError> {
        let tasks: Vec<usize> = (0..self.shape.n_tasks).collect();
        self.forward_tasks(obs, actions, &tasks)
    }

    /// Batched `Q` for a subset of tasks, columns in the order of `tasks`.
    ///
    /// With [`TaskActions::PerTask`] the action batches are indexed by position in `tasks`.
    pub fn forward_tasks(
        &self,
        obs: ArrayView2<S>,
        actions: TaskActions<'_, S>,
        tasks: &[usize],
    ) -> Result<(Array2<S>, CriticCache<S>), NnError> {
        let batch = obs.nrows();
        for &t in tasks {
            check_task(t, self.shape.n_tasks)?;
        }
        match actions {
            TaskActions::Shared(a) => {
                check_shape("critic actions", &[batch, self.shape.action_dim], a.shape())?
            }
            TaskActions::PerTask(a) => {
                check_shape("critic action sets", &[tasks.len()], &[a.len()])?;
                for m in a {
                    check_shape("critic actions", &[batch, self.shape.action_dim], m.shape())?;
                }
            }
        }
        let (h, trunk) = self.trunk.forward(&self.params, obs)?;
        let mut q = Array2::zeros((batch, tasks.len()));
        let mut junctions = Vec::with_capacity(tasks.len());
        for (k, &t) in tasks.iter().enumerate() {
            let a = match actions {
                TaskActions::Shared(a) => a,
                TaskActions::PerTask(a) => a[k].view(),
            };
            let j = self.junction(h.view(), a, t);
            q.column_mut(k).assign(&self.head_values(&j.joint, t));
            junctions.push(j);
        }
        Ok((
            q,
            CriticCache {
                tasks: tasks.to_vec(),
                trunk,
                junctions,
            },
        ))
    }

    /// Like [`Self::forward_batch`] for all tasks, keeping nothing for a backward pass.
    pub fn q_values(&self, obs: ArrayView2<S>, actions: TaskActions<'_, S>) -> Result<Array2<S>, NnError> {
        let (batch, t) = (obs.nrows(), self.shape.n_tasks);
        match actions {
            TaskActions::Shared(a) => check_shape("critic actions", &[batch, self.shape.action_dim], a.shape())?,
            TaskActions::PerTask(a) => {
                check_shape("critic action sets", &[t], &[a.len()])?;
                for m in a {
                    check_shape("critic actions", &[batch, self.shape.action_dim], m.shape())?;
                }
            }
        }
        let h = self.trunk.forward_values(&self.params, obs)?;
        let mut q = Array2::zeros((batch, t));
        for k in 0..t {
            let a = match actions {
                TaskActions::Shared(a) => a,
                TaskActions::PerTask(a) => a[k].view(),
            };
            let j = self.junction(h.view(), a, k);
            q.column_mut(k).assign(&self.head_values(&j.joint, k));
        }
        Ok(q)
    }

    /// Branch and junction activations of task `t`. Written out directly
    /// since the branch has only `action_dim` inputs.
    fn junction(&self, h: ArrayView2<S>, a: ArrayView2<S>, t: usize) -> Junction<S> {
        let layer = &self.params.layers()[self.branch_layer(t)];
        let mut branch = Array2::zeros(h.raw_dim());
        branch.assign(&layer.bias.broadcast(h.raw_dim()).expect("bias spans the width"));
        for (i, col) in a.columns().into_iter().enumerate() {
            let w = layer.weight.column(i).to_owned();
            for (mut row, &ai) in branch.outer_iter_mut().zip(col) {
                row.scaled_add(ai, &w);
            }
        }
        tanh_inplace(&mut branch);
        let mut joint = &branch + &h;
        tanh_inplace(&mut joint);
        Junction {
            actions: a.to_owned(),
            branch,
            joint,
        }
    }

    fn head_values(&self, joint: &Array2<S>, t: usize) -> Array1<S> {
        let head = &self.params.layers()[self.head_layer(t)];
        joint.dot(&head.weight.row(0)) + head.bias[0]
    }

    /// Accumulates parameter gradients of `sum_{j,k} dq[j,k] * Q[j,k]` and
    /// returns the action gradients for each task column.
    pub fn backward(&mut self, cache: &CriticCache<S>, dq: ArrayView2<S>) -> Result<Vec<Array2<S>>, NnError> {
        self.check_dq(cache, &dq)?;
        let mut trunk_grad: Option<Array2<S>> = None;
        let mut action_grads = Vec::with_capacity(cache.tasks.len());
        for (k, &t) in cache.tasks.iter().enumerate() {
            let (hl, bl) = (self.head_layer(t), self.branch_layer(t));
            let (layers, grads) = self.params.layers_and_grads();
            let j = &cache.junctions[k];
            let g = dq.column(k);
            let head_grad = &mut grads[hl];
            head_grad.weight.row_mut(0).scaled_add(S::one(), &j.joint.t().dot(&g));
            head_grad.bias[0] += g.sum();
            let dz = joint_grad(&layers[hl], j, g);
            let du = branch_grad(j, &dz);
            let branch_grad = &mut grads[bl];
            branch_grad.bias += &du.sum_axis(Axis(0));
            for (i, a) in j.actions.columns().into_iter().enumerate() {
                branch_grad.weight.column_mut(i).scaled_add(S::one(), &du.t().dot(&a));
            }
            action_grads.push(du.dot(&layers[bl].weight));
            match trunk_grad.as_mut() {
                Some(acc) => *acc += &dz,
                None => trunk_grad = Some(dz),
            }
        }
        if let Some(g) = trunk_grad {
            self.trunk.backward(&mut self.params, &cache.trunk, g.view())?;
        }
        Ok(action_grads)
    }

    /// Gradients of `sum_{j,k} dq[j,k] * Q[j,k]` with respect to each task's
    /// action input. Parameter gradients are left untouched.
    pub fn action_grads(&self, cache: &CriticCache<S>, dq: ArrayView2<S>) -> Result<Vec<Array2<S>>, NnError> {
        self.check_dq(cache, &dq)?;
        let layers = self.params.layers();
        Ok(cache
            .tasks
            .iter()
            .zip(&cache.junctions)
            .enumerate()
            .map(|(k, (&t, j))| {
                let dz = joint_grad(&layers[self.head_layer(t)], j, dq.column(k));
                branch_grad(j, &dz).dot(&layers[self.branch_layer(t)].weight)
            })
            .collect())
    }

    fn check_dq(&self, cache: &CriticCache<S>, dq: &ArrayView2<S>) -> Result<(), NnError> {
        self.trunk.check_fresh(&self.params, &cache.trunk)?;
        let batch = cache.trunk.input().nrows();
        check_shape("critic output gradient", &[batch, cache.tasks.len()], dq.shape())
    }

    pub fn save_into(&self, prefix: &str, ckpt: &mut Checkpoint) {
        self.shape.save_into(prefix, ckpt);
        self.params.save_into(prefix, ckpt);
    }

    pub fn load_from(prefix: &str, ckpt: &Checkpoint) -> Result<Self, NnError> {
        let shape = NetShape::load_from(prefix, ckpt)?;
        let (layers, trunk, branches, heads) = Self::layout(&shape)?;
        let params = ParamStore::load_from(prefix, ckpt)?;
        check_params(&layers, &params)?;
        Ok(Self {
            shape,
            params,
            trunk,
            branches,
            heads,
        })
    }
}

/// Gradient at the junction pre-activation: `g_j * v * (1 - z^2)`.
fn joint_grad<S: Real>(head: &Dense<S>, j: &Junction<S>, g: ArrayView1<S>) -> Array2<S> {
    let v = head.weight.row(0);
    let mut dz = Array2::zeros(j.joint.raw_dim());
    for ((mut row, z), &gj) in dz.outer_iter_mut().zip(j.joint.outer_iter()).zip(g) {
        row.zip_mut_with(&v, |d, &v| *d = gj * v);
        row.zip_mut_with(&z, |d, &z| *d *= S::one() - z * z);
    }
    dz
}

/// Gradient at the branch pre-activation.
fn branch_grad<S: Real>(j: &Junction<S>, dz: &Array2<S>) -> Array2<S> {
    let mut du = dz.clone();
    du.zip_mut_with(&j.branch, |d, &u| *d *= S::one() - u * u);
    du
}
